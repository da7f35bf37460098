from .common import accuracies, eval_weights, generate_codes
from .fewshot import Backbone, HeadZoo, build_head_zoo, fit_probe, head_accuracy, head_arch, run_fewshot, \
    train_backbone, union_dataset
from .finetune import FinetuneConfig, StopgradConfig, finetune_meta_ood, generated_ce
from .init_study import FT_DEFAULT, accuracy_after, run_init_study
from .report import EvalReport, topk_mean, write_svg_chart
from .retrieval import run_retrieval
from .unconditional import run_unconditional
