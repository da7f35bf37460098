"""Evaluation reports: JSON and CSV emission plus optional SVG charts."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def topk_mean(values, k: int) -> float:
    """Mean of the ``k`` largest values."""
    v = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    if k < 1 or v.size < k:
        raise ValueError(f"top-{k} needs at least {k} values, got {v.size}")
    return float(v[:k].mean())


def _plain(x):
    """JSON-safe copy: numpy scalars/arrays to Python, floats rounded to 12 digits."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(round(float(x), 12))
    return x


@dataclass
class EvalReport:
    experiment: str
    rows: list = field(default_factory=list)  # one dict per sample / cell
    summary: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)  # name -> {"x": [...], "series": {label: [...]}}
    wall_time: float = 0.0  # informational only; kept out of the written artifacts

    def __post_init__(self):
        for row in self.rows:
            acc = row.get("accuracy")
            if acc is not None and not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} outside [0, 1]")

    def to_dict(self) -> dict:
        return _plain({"experiment": self.experiment, "summary": self.summary, "baselines": self.baselines,
                       "seeds": self.seeds, "rows": self.rows, "curves": self.curves})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        keys = sorted({k for r in self.rows for k in r})
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in _plain(self.rows):
            w.writerow(r)
        return buf.getvalue()

    def write(self, out_dir, charts: bool = True) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "report.csv"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.to_csv())
        if charts:
            for name, curve in sorted(self.curves.items()):
                p = out / f"{name}.svg"
                write_svg_chart(p, curve, title=f"{self.experiment}: {name}")
                paths.append(p)
        return paths

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(d["experiment"], d["rows"], d["summary"], d["baselines"], d["seeds"], d.get("curves", {}))


def write_svg_chart(path, curve: dict, title: str = "") -> None:
    """Deterministic SVG line chart (fixed hash salt, no date metadata)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "weightflow"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = curve["x"]
    for label, ys in sorted(curve["series"].items()):
        ax.plot(x, ys, marker="o", label=label)
    ax.set_xlabel(curve.get("xlabel", ""))
    ax.set_ylabel(curve.get("ylabel", ""))
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
