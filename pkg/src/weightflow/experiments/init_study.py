"""Generated weights as initialization, against random (Kaiming) initialization."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .. import nn
from ..flow.prior import PriorSpec
from ..rng import derive
from ..zoo.training import TrainConfig, evaluate, fit
from .common import generate_codes
from .report import EvalReport

FT_DEFAULT = TrainConfig(epochs=25, batch_size=32, lr=0.01, optimizer="sgd", schedule="constant")


def accuracy_after(arch, params: dict, ds, epochs: Sequence[int], cfg: TrainConfig, rng) -> dict:
    """Val accuracy after each epoch count in ``epochs`` of one fine-tuning run."""
    want = sorted(set(int(e) for e in epochs))
    out = {}
    if 0 in want:
        out[0] = evaluate(arch, params, ds)
    last = want[-1]
    if last > 0:
        fit(arch, params, ds.x_train, ds.y_train, cfg, rng, epochs=last,
            on_epoch=lambda e, p: out.__setitem__(e, evaluate(arch, p, ds)) if e in want else None)
    return out


def run_init_study(datasets, arch, codec, field, seed: int, epochs: Sequence[int] = (0, 1, 5, 25),
                   n_samples: int = 5, ft: TrainConfig = FT_DEFAULT, prior: PriorSpec | None = None,
                   init_mode: str = "uniform", nfe: int = 100) -> EvalReport:
    """Fine-tune ``n_samples`` generated and random inits on each dataset.

    The first dataset is the one the zoo was trained on; the rest are held out.
    """
    start = time.perf_counter()
    prior = prior or PriorSpec()
    epochs = sorted(set(int(e) for e in epochs))
    codes = generate_codes(field, codec, prior, derive(seed, "init-x0"), n_samples, nfe=nfe)
    generated = codec.decode_params(codes)
    rows, summary, curves = [], {}, {}
    for d_i, ds in enumerate(datasets):
        arms = {"generated": [], "random": []}
        for s in range(n_samples):
            rand = nn.init_params(arch, derive(seed, "init-random", s), init_mode)
            for arm, p in (("generated", generated[s]), ("random", rand)):
                accs = accuracy_after(arch, {k: v.copy() for k, v in p.items()}, ds, epochs, ft,
                                      derive(seed, "init-ft", ds.name, s))
                arms[arm].append([accs[e] for e in epochs])
                rows += [{"dataset": ds.name, "held_out": d_i > 0, "arm": arm, "sample": s, "epoch": e,
                          "accuracy": accs[e]} for e in epochs]
        means = {arm: np.mean(v, axis=0) for arm, v in arms.items()}
        summary[ds.name] = {arm: {str(e): float(m) for e, m in zip(epochs, means[arm])} for arm in arms}
        summary[ds.name]["held_out"] = d_i > 0
        curves[f"init_{ds.name}"] = {"x": epochs, "xlabel": "fine-tune epochs", "ylabel": "val accuracy",
                                     "series": {arm: means[arm].tolist() for arm in arms}}
    return EvalReport("init_study", rows=rows, summary=summary,
                      baselines={"chance": 1.0 / datasets[0].num_classes}, seeds={"seed": seed},
                      curves=curves, wall_time=time.perf_counter() - start)
