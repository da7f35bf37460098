"""Run configuration: JSON file plus dotted ``key=value`` overrides.

Every section rejects unknown keys. Defaults are the desk-scale settings the
test suite exercises: AdamW with weight decay 2e-6, NFE 100, and VAE beta
1e-2 for whole-network codecs but 1e-6 for few-shot head codecs.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .codec.vae import BETA_FEWSHOT, BETA_RETRIEVAL, SIGMA_IN, SIGMA_LAT


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DatasetSection(Section):
    name: str = "sinusoid"
    family: Literal["sinusoid", "blob", "checker", "bars"] = "sinusoid"
    image_shape: List[int] = [8, 8, 1]
    num_classes: int = Field(4, ge=2)
    noise_std: float = Field(0.3, ge=0)
    n_train: int = Field(512, gt=0)
    n_val: int = Field(256, gt=0)
    seed: int = 0


class ZooSection(Section):
    n_models: int = Field(50, ge=1)
    hidden: List[int] = [16]
    epochs: int = Field(30, ge=1)
    save_epochs: List[int] = [30]
    batch_size: int = Field(32, ge=1)
    lr: float = Field(3e-3, gt=0)
    optimizer: Literal["adamw", "sgd"] = "adamw"
    weight_decay: float = Field(0.0, ge=0)
    init: Literal["normal", "uniform"] = "normal"

    @model_validator(mode="after")
    def _epochs(self):
        if not self.save_epochs or min(self.save_epochs) < 0 or max(self.save_epochs) > self.epochs:
            raise ValueError(f"save_epochs must lie in [0, {self.epochs}]")
        return self


class CodecSection(Section):
    kind: Literal["flat", "chunk", "vae", "graph"] = "vae"
    latent_dim: int = Field(64, ge=1)
    hidden: List[int] = [256]
    beta: float = Field(BETA_RETRIEVAL, ge=0)
    sigma_in: float = Field(SIGMA_IN, ge=0)
    sigma_lat: float = Field(SIGMA_LAT, ge=0)
    steps: int = Field(3000, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(2e-6, ge=0)
    chunk_size: int = Field(256, ge=1)
    gnn_hidden: int = Field(16, ge=1)
    gnn_rounds: int = Field(2, ge=1)


class FlowSection(Section):
    path: Literal["linear"] = "linear"
    coupling: Literal["ot", "independent"] = "ot"
    prior: Literal["gaussian", "kaiming"] = "gaussian"
    prior_mode: Literal["uniform", "normal"] = "uniform"
    nfe: int = Field(100, ge=1)
    method: Literal["euler", "midpoint", "rk4"] = "euler"
    steps: int = Field(3000, ge=1)
    batch_size: int = Field(64, ge=1, le=256)
    lr: float = Field(3e-3, gt=0)
    weight_decay: float = Field(2e-6, ge=0)
    hidden: List[int] = [512, 512]
    temb_dim: int = Field(128, ge=2)
    cotrain_codec: bool = False

    @field_validator("temb_dim")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("temb_dim must be even")
        return v


class ConditionerSection(Section):
    out_dim: int = Field(64, ge=1)
    feat_hidden: int = Field(64, ge=1)
    feat_dim: int = Field(32, ge=1)
    proj_hidden: int = Field(128, ge=1)
    shots: int = Field(5, ge=1)
    freeze: bool = False


class RetrievalSection(Section):
    families: List[Literal["sinusoid", "blob", "checker", "bars"]] = ["sinusoid", "checker"]
    n_models: int = Field(25, ge=1)
    samples: int = Field(20, ge=1)
    top_k: int = Field(5, ge=1)
    min_gap: float = 0.20


class InitStudySection(Section):
    n_models: int = Field(10, ge=1)
    epochs: int = Field(25, ge=1)
    save_epochs: List[int] = [21, 22, 23, 24, 25]
    finetune_epochs: List[int] = [0, 1, 5, 25]
    samples: int = Field(5, ge=1)
    ft_optimizer: Literal["sgd", "adamw"] = "sgd"
    ft_lr: float = Field(0.01, gt=0)
    ft_batch_size: int = Field(32, ge=1)
    ood_families: List[Literal["sinusoid", "blob", "checker", "bars"]] = ["bars"]
    min_chance_margin: float = 0.30


class FewshotSection(Section):
    families: List[Literal["sinusoid", "blob", "checker", "bars"]] = ["sinusoid", "blob", "checker"]
    ood_families: List[Literal["sinusoid", "blob", "checker", "bars"]] = ["bars"]
    way: int = Field(4, ge=2)
    shot: int = Field(5, ge=1)
    queries: int = Field(15, ge=1)
    backbone_hidden: int = Field(32, ge=1)
    train_episodes: int = Field(600, ge=1)
    test_episodes: int = Field(10, ge=1)
    samples: int = Field(50, ge=1)
    top_k: int = Field(3, ge=1)
    select: Literal["query", "support"] = "query"
    codec: Literal["flat", "vae"] = "flat"
    beta: float = Field(BETA_FEWSHOT, ge=0)
    codec_lr: float = Field(1e-2, gt=0)
    flow_steps: int = Field(3000, ge=1)
    flow_lr: float = Field(1e-3, gt=0)
    max_probe_gap: float = 0.05
    min_ood_margin: float = 0.10


class FinetuneSection(Section):
    family: Literal["sinusoid", "blob", "checker", "bars"] = "bars"
    t_cut: float = Field(0.4, ge=0, le=1)
    solver_steps: int = Field(20, ge=1)
    steps: int = Field(200, ge=1)
    lr: float = Field(3e-3, gt=0)
    lr_min: float = Field(1.5e-4, ge=0)
    batch_size: int = Field(128, ge=1)
    samples: int = Field(4, ge=1)
    eval_samples: int = Field(20, ge=1)
    min_gain: float = 0.10


class ExperimentSection(Section):
    samples: int = Field(20, ge=1)
    top_k: int = Field(5, ge=1)
    retrieval: RetrievalSection = RetrievalSection()
    init_study: InitStudySection = InitStudySection()
    fewshot: FewshotSection = FewshotSection()
    finetune: FinetuneSection = FinetuneSection()


class SeedsSection(Section):
    master: int = 0


class RunConfig(Section):
    dataset: DatasetSection
    zoo: ZooSection = ZooSection()
    codec: CodecSection = CodecSection()
    flow: FlowSection = FlowSection()
    conditioner: ConditionerSection = ConditionerSection()
    experiment: ExperimentSection = ExperimentSection()
    seeds: SeedsSection = SeedsSection()
    out_dir: str = "runs/default"

    def resolved_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override key {key!r}: {p!r} is not a section")
    node[parts[-1]] = _parse_value(value.strip())


def _describe(exc: ValidationError) -> str:
    err = exc.errors()[0]
    key = ".".join(str(p) for p in err["loc"]) or "<root>"
    if err["type"] == "extra_forbidden":
        return f"unknown key {key!r}"
    if err["type"] == "missing":
        return f"missing required section or key {key!r}"
    return f"invalid value for {key!r}: {err['msg']}"


def build_config(raw: dict, overrides=()) -> RunConfig:
    raw = json.loads(json.dumps(raw))
    for item in overrides:
        apply_override(raw, item)
    env_out = os.environ.get("WEIGHTFLOW_OUT")
    if env_out:
        raw["out_dir"] = env_out
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def load_config(path, overrides=()) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {str(p)!r} does not exist")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error in {p} at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return build_config(raw, overrides)


def default_config(out_dir: Optional[str] = None) -> RunConfig:
    raw = {"dataset": {}}
    if out_dir is not None:
        raw["out_dir"] = out_dir
    return build_config(raw)
