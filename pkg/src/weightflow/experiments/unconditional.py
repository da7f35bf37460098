"""Unconditional generation: sample codes, decode, compare with the zoo."""

from __future__ import annotations

import time

import numpy as np

from ..flow.prior import PriorSpec
from .common import accuracies, generate_codes
from .report import EvalReport


def run_unconditional(records, ds, codec, field, prior: PriorSpec, rng: np.random.Generator,
                      n_samples: int = 20, nfe: int = 100, method: str = "euler") -> EvalReport:
    if not records:
        raise ValueError("unconditional evaluation needs the zoo records")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    start = time.perf_counter()
    arch = records[0].arch
    codes = generate_codes(field, codec, prior, rng, n_samples, nfe=nfe, method=method)
    accs = accuracies(arch, codec, codes, ds)
    zoo_accs = [r.meta["val_acc"] for r in records]
    return EvalReport(
        "unconditional",
        rows=[{"sample": i, "accuracy": a} for i, a in enumerate(accs)],
        summary={"best": max(accs), "mean": float(np.mean(accs)), "n_samples": n_samples, "nfe": nfe},
        baselines={"zoo_best": max(zoo_accs), "zoo_mean": float(np.mean(zoo_accs)), "zoo_size": len(records)},
        wall_time=time.perf_counter() - start,
    )
