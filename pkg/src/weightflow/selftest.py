"""Fast built-in sanity checks run by ``weightflow selftest``."""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from . import nn
from .codec.flat import chunk, devectorize, unchunk, vectorize
from .flow.coupling import brute_force_coupling, ot_coupling, pair_cost
from .flow.integrate import integrate
from .graph.convert import graph_to_weights, mlp_to_graph
from .rng import derive
from .zoo.checkpoint import load_checkpoint, save_checkpoint
from .zoo.training import WeightRecord, f32_round


def _grad_check():
    rng = derive(0, "selftest", "grad")
    arch = nn.mlp_arch(5, [4], 3)
    params = nn.init_params(arch, rng)
    rep = nn.grad_check(arch, params, rng.standard_normal((6, 5)), rng.integers(0, 3, 6))
    return rep.max_rel_err < 1e-4, f"max rel err {rep.max_rel_err:.2e}"


def _flat_round_trip():
    rng = derive(0, "selftest", "flat")
    arch = nn.mlp_arch(6, [5, 4], 3)
    params = nn.init_params(arch, rng)
    code = vectorize(params, arch, d=200)
    back = devectorize(unchunk(chunk(code, 16)))
    ok = all(np.array_equal(params[k], back[k]) for k in params)
    return ok, f"{len(params)} tensors, d=200"


def _graph_round_trip():
    rng = derive(0, "selftest", "graph")
    arch = nn.mlp_arch(4, [3], 2, flatten=False)
    params = nn.init_params(arch, rng)
    back = graph_to_weights(mlp_to_graph(arch, params), arch)
    ok = all(np.array_equal(params[k], back[k]) for k in params)
    return ok, "mlp 4-3-2"


def _checkpoint_round_trip():
    rng = derive(0, "selftest", "ckpt")
    arch = nn.mlp_arch(4, [3], 2)
    rec = WeightRecord(arch, f32_round(nn.init_params(arch, rng)), {"dataset": "selftest", "epoch": 0, "seed": 0})
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "rec.wck"
        save_checkpoint(rec, path)
        back = load_checkpoint(path)
    ok = all(np.array_equal(rec.params[k], back.params[k]) for k in rec.params)
    return ok, "weights blob"


def _ot_oracle():
    rng = derive(0, "selftest", "ot")
    worst = 0.0
    for _ in range(20):
        x0, x1 = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
        _, best = brute_force_coupling(x0, x1)
        worst = max(worst, pair_cost(x0, x1, ot_coupling(x0, x1)) - best)
    return worst < 1e-9, f"20 batches of 6, worst excess {worst:.1e}"


def _integrator_orders():
    x0 = np.ones((1, 1))
    notes, ok = [], True
    for method, order, n in (("euler", 1, 50), ("midpoint", 2, 50), ("rk4", 4, 10)):
        err = [abs(integrate(lambda x, t, y: x, x0, steps=s, method=method)[0, 0] - np.e) for s in (n, 2 * n)]
        ratio = err[0] / err[1]
        ok &= 2 ** order / 1.5 <= ratio <= 2 ** order * 1.5
        notes.append(f"{method} {ratio:.2f}")
    return ok, ", ".join(notes)


CHECKS = (
    ("grad check", _grad_check),
    ("flat/chunk round trip", _flat_round_trip),
    ("graph round trip", _graph_round_trip),
    ("checkpoint round trip", _checkpoint_round_trip),
    ("OT oracle", _ot_oracle),
    ("integrator orders", _integrator_orders),
)


def run_selftest() -> list:
    """[(name, passed, detail)] for every check; exceptions count as failures."""
    out = []
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out


def format_table(results) -> str:
    width = max(len(n) for n, _, _ in results)
    lines = [f"{'check':<{width}}  result  detail"]
    lines += [f"{n:<{width}}  {'PASS' if ok else 'FAIL':<6}  {d}" for n, ok, d in results]
    return "\n".join(lines)
