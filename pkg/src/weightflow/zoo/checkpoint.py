"""Binary checkpoint container and the zoo manifest.

Layout: 8-byte magic ``WFLOWCK1``, u64 little-endian header length, UTF-8
JSON header (sorted keys), then little-endian f32 blobs in header order.
The header holds ``kind``, ``version``, ``arch``, ``meta``, free-form
``config`` and the tensor table ``[{name, shape, offset}]`` (offsets in
bytes from the start of the blob section).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nn.layers import LayerSpec, param_layout
from .training import WeightRecord

MAGIC = b"WFLOWCK1"
VERSION = 1
MANIFEST_VERSION = 1
KINDS = ("weights", "vae", "cfm", "cond", "graph")


class CheckpointError(ValueError):
    pass


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_blob(path, kind: str, tensors: list, arch=None, meta=None, config=None) -> None:
    """Write ``tensors`` (list of (name, array)) under a header of ``kind``."""
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    table, chunks, offset = [], [], 0
    for name, arr in tensors:
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
        if not np.all(np.isfinite(a)):
            raise CheckpointError(f"tensor {name} is not finite")
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = {
        "version": VERSION,
        "kind": kind,
        "arch": [s.to_dict() for s in arch] if arch is not None else None,
        "meta": meta or {},
        "config": config or {},
        "tensors": table,
    }
    hb = _dumps(header)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(hb)))
        f.write(hb)
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


def read_blob(path, expect_kind: str | None = None) -> tuple:
    """Return ``(header, {name: float64 array})``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    if len(raw) < 16:
        raise CheckpointError(f"truncated blob in {path}: header length missing")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointError(f"truncated blob in {path}: header cut short")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header in {path}: {exc}") from exc
    if header.get("version") != VERSION:
        raise CheckpointError(f"version mismatch in {path}: file {header.get('version')}, reader {VERSION}")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise CheckpointError(f"{path} holds kind {header.get('kind')!r}, expected {expect_kind!r}")
    body = raw[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        start = int(entry["offset"])
        end = start + 4 * count
        if end > len(body):
            raise CheckpointError(f"truncated blob in {path}: tensor {entry['name']} needs bytes {start}..{end}")
        tensors[entry["name"]] = np.frombuffer(body[start:end], dtype="<f4").astype(np.float64).reshape(shape)
    return header, tensors


def arch_from_header(header: dict) -> list:
    return [LayerSpec.from_dict(d) for d in header["arch"] or []]


def save_checkpoint(rec: WeightRecord, path) -> None:
    write_blob(path, "weights", rec.ordered(), arch=rec.arch, meta=rec.meta)


def load_checkpoint(path) -> WeightRecord:
    header, tensors = read_blob(path, "weights")
    arch = arch_from_header(header)
    layout = param_layout(arch)
    if [n for n, _ in layout] != list(tensors):
        raise CheckpointError(f"shape/manifest disagreement in {path}: tensor names do not match arch")
    for name, shape in layout:
        if tuple(shape) != tensors[name].shape:
            raise CheckpointError(
                f"shape/manifest disagreement in {path}: {name} stored {tensors[name].shape}, arch {tuple(shape)}")
    return WeightRecord(arch, tensors, header["meta"])


# -- manifest -------------------------------------------------------------------
@dataclass
class ZooManifest:
    entries: list = field(default_factory=list)  # dicts: path, dataset, epoch, seed, val_acc
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return {"version": self.version, "entries": self.entries}


def record_entry(rec: WeightRecord, rel_path: str) -> dict:
    m = rec.meta
    return {"path": rel_path, "dataset": m.get("dataset"), "epoch": m.get("epoch"),
            "seed": m.get("seed"), "val_acc": m.get("val_acc")}


def write_zoo(records: list, zoo_dir) -> ZooManifest:
    """Save every record under ``zoo_dir`` and write ``manifest.json``."""
    zoo_dir = Path(zoo_dir)
    entries = []
    for rec in records:
        m = rec.meta
        rel = f"{m['dataset']}/seed{int(m['seed']):04d}_ep{int(m['epoch']):03d}.wck"
        save_checkpoint(rec, zoo_dir / rel)
        entries.append(record_entry(rec, rel))
    manifest = ZooManifest(entries)
    write_manifest(manifest, zoo_dir / "manifest.json")
    return manifest


def write_manifest(manifest: ZooManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), sort_keys=True, indent=1) + "\n")


def load_manifest(path) -> ZooManifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"manifest {path} is not valid JSON: {exc}") from exc
    if d.get("version") != MANIFEST_VERSION:
        raise CheckpointError(f"version mismatch in manifest {path}")
    return ZooManifest(list(d["entries"]), d["version"])


def validate_manifest(path) -> list:
    """Return a list of problems (empty when every entry exists and round-trips)."""
    path = Path(path)
    manifest = load_manifest(path)
    problems = []
    for e in manifest.entries:
        f = path.parent / e["path"]
        if not f.exists():
            problems.append(f"missing entry {e['path']}")
            continue
        try:
            rec = load_checkpoint(f)
        except CheckpointError as exc:
            problems.append(f"unreadable entry {e['path']}: {exc}")
            continue
        for key in ("dataset", "epoch", "seed", "val_acc"):
            if rec.meta.get(key) != e.get(key):
                problems.append(f"entry {e['path']} meta {key} disagrees with manifest")
    return problems


def load_zoo(zoo_dir, dataset: str | None = None) -> list:
    zoo_dir = Path(zoo_dir)
    manifest = load_manifest(zoo_dir / "manifest.json")
    return [load_checkpoint(zoo_dir / e["path"]) for e in manifest.entries
            if dataset is None or e["dataset"] == dataset]
