from .datasets import Dataset, DatasetSpec, load_raw_dataset, make_dataset, save_raw_dataset
from .episodes import Episode, sample_episode
from .training import TrainConfig, TrainingDiverged, WeightRecord, build_zoo, evaluate, fit, train_base
from .checkpoint import (
    CheckpointError,
    ZooManifest,
    load_checkpoint,
    load_manifest,
    load_zoo,
    read_blob,
    save_checkpoint,
    validate_manifest,
    write_blob,
    write_zoo,
)
