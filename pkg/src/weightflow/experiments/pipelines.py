"""Config-driven construction of datasets, zoos, codecs, and fields.

Every builder derives its random stream from ``seeds.master`` plus a fixed
name path, so a (config, seed) pair always produces the same objects.
"""

from __future__ import annotations

import numpy as np

from .. import nn
from ..codec.base import WeightSpace, make_codec
from ..codec.vae import VaeConfig, VaeTrainConfig
from ..conditioner.encoder import CondConfig, CondEncoder, DatasetSampler
from ..conditioner.joint import train_cond_joint
from ..config import RunConfig
from ..flow.field import FieldConfig, FieldNet
from ..flow.prior import PriorSpec, sample_prior
from ..flow.train import CfmConfig, train_cfm
from ..graph.gnn import GnnConfig
from ..rng import derive
from ..zoo.datasets import DatasetSpec, make_dataset
from ..zoo.training import TrainConfig, build_zoo
from .fewshot import build_head_zoo, head_arch, train_backbone
from .finetune import FinetuneConfig, StopgradConfig
from .init_study import FT_DEFAULT


def primary_dataset(cfg: RunConfig):
    return make_dataset(DatasetSpec(**cfg.dataset.model_dump()))


# held-out datasets draw from seeds well past the in-distribution ones
OOD_SEED_OFFSET = 7


def family_dataset(cfg: RunConfig, family: str, index: int, name: str | None = None):
    """Dataset of ``family`` sharing the primary dataset's shape and noise; seed offset by ``index``."""
    d = cfg.dataset.model_dump()
    d.update(name=name or family, family=family, seed=cfg.dataset.seed + index)
    return make_dataset(DatasetSpec(**d))


def family_datasets(cfg: RunConfig, families, first_index: int = 0) -> list:
    """One dataset per entry; repeated families get index-suffixed names."""
    unique = len(set(families)) == len(families)
    return [family_dataset(cfg, fam, first_index + i, None if unique else f"{fam}{first_index + i}")
            for i, fam in enumerate(families)]


def base_arch(cfg: RunConfig, ds) -> list:
    return nn.mlp_arch(ds.input_dim, cfg.zoo.hidden, ds.num_classes)


def zoo_train_config(cfg: RunConfig, epochs: int | None = None) -> TrainConfig:
    z = cfg.zoo
    return TrainConfig(epochs=epochs or z.epochs, batch_size=z.batch_size, lr=z.lr, optimizer=z.optimizer,
                       weight_decay=z.weight_decay, init=z.init)


def build_primary_zoo(cfg: RunConfig, ds=None) -> list:
    ds = ds or primary_dataset(cfg)
    return build_zoo(ds, base_arch(cfg, ds), zoo_train_config(cfg), cfg.zoo.n_models, cfg.zoo.save_epochs,
                     cfg.seeds.master)


def vae_config(cfg: RunConfig, beta: float | None = None) -> VaeConfig:
    c = cfg.codec
    return VaeConfig(latent_dim=c.latent_dim, hidden=tuple(c.hidden), beta=c.beta if beta is None else beta,
                     sigma_in=c.sigma_in, sigma_lat=c.sigma_lat)


def vae_train_config(cfg: RunConfig, lr: float | None = None) -> VaeTrainConfig:
    c = cfg.codec
    return VaeTrainConfig(steps=c.steps, batch_size=c.batch_size, lr=lr or c.lr, weight_decay=c.weight_decay)


def fit_codec(cfg: RunConfig, records, tag: str = "primary", kind: str | None = None):
    """Build and fit the configured codec on ``records``; returns (codec, curve or None)."""
    kind = kind or cfg.codec.kind
    space = WeightSpace.for_arch(records[0].arch)
    gnn = GnnConfig(cfg.codec.gnn_hidden, cfg.codec.gnn_rounds)
    codec = make_codec(kind, space, derive(cfg.seeds.master, "codec", tag, kind), vae_config(cfg),
                       chunk_size=cfg.codec.chunk_size, gnn_cfg=gnn)
    curve = codec.fit(space.to_vectors(records), derive(cfg.seeds.master, "codec-fit", tag, kind),
                      vae_train_config(cfg))
    return codec, curve


def prior_spec(cfg: RunConfig) -> PriorSpec:
    return PriorSpec(cfg.flow.prior, mode=cfg.flow.prior_mode)


def prior_fn(spec: PriorSpec, codec):
    return lambda rng, n: sample_prior(spec, codec, rng, n)


def cfm_config(cfg: RunConfig, steps: int | None = None, lr: float | None = None) -> CfmConfig:
    f = cfg.flow
    return CfmConfig(steps=steps or f.steps, batch_size=f.batch_size, lr=lr or f.lr, weight_decay=f.weight_decay,
                     coupling=f.coupling, path=f.path)


def new_field(cfg: RunConfig, dim: int, cond_dim: int, tag: str) -> FieldNet:
    fc = FieldConfig(dim, cond_dim=cond_dim, temb_dim=cfg.flow.temb_dim, hidden=tuple(cfg.flow.hidden))
    return FieldNet(fc, derive(cfg.seeds.master, "field", tag))


def train_unconditional(cfg: RunConfig, codec, records, tag: str = "primary"):
    """Fit an unconditional field on the codes of ``records``; returns (field, curve)."""
    prior = prior_spec(cfg)
    field = new_field(cfg, codec.code_dim, 0, tag)
    rng = derive(cfg.seeds.master, "cfm", tag)
    if cfg.flow.cotrain_codec:
        if not hasattr(codec, "encode_tensor"):
            raise ValueError(f"codec {codec.kind!r} cannot be co-trained")
        raw = codec.space.to_vectors(records)
        curve = train_cfm(field, raw, cfm_config(cfg), rng, prior_fn(prior, codec), encode_fn=codec.encode_tensor,
                          extra_params=codec.model.encoder.parameters())
    else:
        curve = train_cfm(field, codec.encode_records(records), cfm_config(cfg), rng, prior_fn(prior, codec))
    return field, curve


def cond_config(cfg: RunConfig, input_dim: int, max_classes: int) -> CondConfig:
    c = cfg.conditioner
    return CondConfig(input_dim=input_dim, feat_hidden=c.feat_hidden, feat_dim=c.feat_dim, max_classes=max_classes,
                      proj_hidden=c.proj_hidden, out_dim=c.out_dim)


class RetrievalBundle:
    def __init__(self, datasets, records, tags):
        self.datasets = datasets
        self.records = records
        self.tags = np.asarray(tags)
        self.arch = records[0].arch


def retrieval_zoo(cfg: RunConfig) -> RetrievalBundle:
    r = cfg.experiment.retrieval
    datasets = family_datasets(cfg, r.families)
    records, tags = [], []
    for i, ds in enumerate(datasets):
        recs = build_zoo(ds, base_arch(cfg, ds), zoo_train_config(cfg), r.n_models, [cfg.zoo.epochs],
                         cfg.seeds.master)
        records += recs
        tags += [i] * len(recs)
    return RetrievalBundle(datasets, records, tags)


def train_retrieval_models(cfg: RunConfig, bundle: RetrievalBundle, codec):
    """Jointly train the condition encoder and a conditional field; returns (enc, field, curve)."""
    ds0 = bundle.datasets[0]
    enc = CondEncoder(cond_config(cfg, ds0.input_dim, max(d.num_classes for d in bundle.datasets)),
                      derive(cfg.seeds.master, "cond", "retrieval"))
    field = new_field(cfg, codec.code_dim, enc.out_dim, "retrieval")
    sampler = DatasetSampler(bundle.datasets, cfg.conditioner.shots)
    curve = train_cond_joint(enc, field, codec.encode_records(bundle.records), bundle.tags, sampler.sample,
                             cfm_config(cfg), derive(cfg.seeds.master, "cfm", "retrieval"),
                             prior_fn(prior_spec(cfg), codec), freeze=cfg.conditioner.freeze)
    return enc, field, curve


def init_study_zoo(cfg: RunConfig, ds=None) -> list:
    s = cfg.experiment.init_study
    ds = ds or primary_dataset(cfg)
    return build_zoo(ds, base_arch(cfg, ds), zoo_train_config(cfg, epochs=s.epochs), s.n_models, s.save_epochs,
                     cfg.seeds.master)


def init_study_ft_config(cfg: RunConfig) -> TrainConfig:
    s = cfg.experiment.init_study
    return TrainConfig(epochs=max(s.finetune_epochs), batch_size=s.ft_batch_size, lr=s.ft_lr,
                       optimizer=s.ft_optimizer, schedule=FT_DEFAULT.schedule)


class FewshotBundle:
    def __init__(self, datasets, ood, backbone, heads):
        self.datasets = datasets
        self.ood = ood
        self.backbone = backbone
        self.heads = heads


def fewshot_zoo(cfg: RunConfig) -> FewshotBundle:
    f = cfg.experiment.fewshot
    datasets = family_datasets(cfg, f.families)
    ood = family_datasets(cfg, f.ood_families, OOD_SEED_OFFSET)
    backbone = train_backbone(datasets, f.backbone_hidden, zoo_train_config(cfg), cfg.seeds.master)
    heads = build_head_zoo(backbone, datasets, f.train_episodes, f.way, f.shot, f.queries, cfg.seeds.master)
    return FewshotBundle(datasets, ood, backbone, heads)


def fewshot_codec(cfg: RunConfig, bundle: FewshotBundle):
    f = cfg.experiment.fewshot
    space = WeightSpace.for_arch(head_arch(bundle.backbone.feat_dim, f.way))
    codec = make_codec(f.codec, space, derive(cfg.seeds.master, "codec", "fewshot"), vae_config(cfg, beta=f.beta))
    codec.fit(bundle.heads.heads, derive(cfg.seeds.master, "codec-fit", "fewshot"), vae_train_config(cfg, f.codec_lr))
    return codec


def train_fewshot_models(cfg: RunConfig, bundle: FewshotBundle, codec):
    f = cfg.experiment.fewshot
    ds0 = bundle.datasets[0]
    enc = CondEncoder(cond_config(cfg, ds0.input_dim, f.way), derive(cfg.seeds.master, "cond", "fewshot"))
    field = new_field(cfg, codec.code_dim, enc.out_dim, "fewshot")
    supports = bundle.heads.supports
    codes = codec.encode(bundle.heads.heads)
    curve = train_cond_joint(enc, field, codes, bundle.heads.tags, lambda tag, rng: supports[int(tag)],
                             cfm_config(cfg, steps=f.flow_steps, lr=f.flow_lr),
                             derive(cfg.seeds.master, "cfm", "fewshot"), prior_fn(PriorSpec(), codec),
                             freeze=cfg.conditioner.freeze)
    return enc, field, curve


def finetune_configs(cfg: RunConfig) -> tuple:
    f = cfg.experiment.finetune
    return (StopgradConfig(f.t_cut, f.solver_steps, cfg.flow.method),
            FinetuneConfig(steps=f.steps, lr=f.lr, lr_min=f.lr_min, batch_size=f.batch_size, samples=f.samples))


def finetune_dataset(cfg: RunConfig):
    return family_dataset(cfg, cfg.experiment.finetune.family, OOD_SEED_OFFSET)


def init_study_datasets(cfg: RunConfig) -> list:
    """Primary dataset first, then the held-out families."""
    return [primary_dataset(cfg)] + family_datasets(cfg, cfg.experiment.init_study.ood_families, OOD_SEED_OFFSET)
