from .encoder import (
    CondConfig,
    CondEncoder,
    DatasetSampler,
    condition_fn,
    embed_many,
    embed_support,
    load_cond,
    save_cond,
)
from .joint import train_cond_joint

__all__ = ["CondConfig", "CondEncoder", "DatasetSampler", "condition_fn", "embed_many", "embed_support",
           "load_cond", "save_cond", "train_cond_joint"]
