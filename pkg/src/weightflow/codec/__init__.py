from .flat import (
    ChunkedCode,
    FlatCode,
    chunk,
    devectorize,
    make_layout,
    unchunk,
    vectorize,
    vectors_to_params,
)
from .vae import (
    BETA_FEWSHOT,
    BETA_RETRIEVAL,
    SIGMA_IN,
    SIGMA_LAT,
    VaeConfig,
    VaeModel,
    VaeTrainConfig,
    kl_to_standard,
    reconstruct,
    train_vae,
    vae_decode,
    vae_encode,
    vae_loss,
    vae_loss_terms,
)
from .base import Codec, FlatCodec, VaeCodec, WeightSpace, load_codec, make_codec, save_codec
