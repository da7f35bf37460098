from .coupling import brute_force_coupling, independent_coupling, ot_coupling, pair_cost
from .field import FieldConfig, FieldNet, time_embed, time_embed_lipschitz
from .integrate import DEFAULT_NFE, cut_step, integrate, integrate_tensor, nfe
from .path import LINEAR, PathSample, ProbPath, get_path, path_sample, sample_t
from .prior import PriorSpec, head_index, head_stats, pad_donor, sample_prior, sample_prior_raw
from .train import CfmConfig, CfmCurve, cfm_loss, generate, load_field, save_field, train_cfm

__all__ = [
    "CfmConfig", "CfmCurve", "DEFAULT_NFE", "FieldConfig", "FieldNet", "LINEAR", "PathSample", "PriorSpec",
    "ProbPath", "brute_force_coupling", "cfm_loss", "cut_step", "generate", "get_path", "head_index",
    "head_stats", "independent_coupling", "integrate", "integrate_tensor", "load_field", "nfe",
    "ot_coupling", "pad_donor", "pair_cost", "path_sample", "sample_prior", "sample_prior_raw", "sample_t",
    "save_field", "time_embed", "time_embed_lipschitz", "train_cfm",
]
