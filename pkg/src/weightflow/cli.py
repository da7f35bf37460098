"""Command-line entry point.

Every verb reads the run config, consumes artifacts from ``out_dir`` and
writes its own back there, so partial pipelines resume from files:

    out_dir/config.resolved.json
    out_dir/zoo/       trained (and generated) weight checkpoints
    out_dir/codec/     fitted codecs
    out_dir/flow/      flow fields and condition encoders
    out_dir/reports/   EvalReport JSON/CSV/SVG per verb

Failures print one ``ERROR <code>: <message>`` line and exit 1.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .codec.base import load_codec, save_codec
from .conditioner.encoder import load_cond, save_cond
from .config import ConfigError, RunConfig, build_config, load_config
from .experiments import pipelines as P
from .experiments.common import eval_weights, generate_codes
from .experiments.fewshot import Backbone, run_fewshot
from .experiments.finetune import finetune_meta_ood
from .experiments.init_study import run_init_study
from .experiments.report import EvalReport
from .experiments.retrieval import run_retrieval
from .experiments.unconditional import run_unconditional
from .flow.train import load_field, save_field
from .nn.tensor import NonFiniteError
from .rng import derive
from .selftest import format_table, run_selftest
from .zoo.checkpoint import CheckpointError, load_checkpoint, load_zoo, save_checkpoint, write_zoo
from .zoo.training import TrainingDiverged, WeightRecord

VERBS = ("zoo-build", "vae-train", "graph-train", "cfm-train", "sample", "eval", "retrieve", "fewshot",
         "init-study", "finetune-ood", "selftest")


class MissingArtifact(RuntimeError):
    pass


class Layout:
    """Paths inside ``out_dir``."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.zoo = self.root / "zoo"
        self.codec = self.root / "codec"
        self.flow = self.root / "flow"
        self.reports = self.root / "reports"

    def codec_file(self, name: str) -> Path:
        return self.codec / f"{name}.wck"

    def flow_file(self, name: str) -> Path:
        return self.flow / f"{name}.wck"


def _require(path: Path, made_by: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing prerequisite artifact {path} (run '{made_by}' first)")
    return path


def _primary_zoo(lay: Layout) -> list:
    _require(lay.zoo / "manifest.json", "zoo-build")
    return load_zoo(lay.zoo)


def _primary_codec(cfg: RunConfig, lay: Layout):
    made_by = "graph-train" if cfg.codec.kind == "graph" else "vae-train"
    return load_codec(_require(lay.codec_file(cfg.codec.kind), made_by))


def _primary_field(lay: Layout):
    return load_field(_require(lay.flow_file("field"), "cfm-train"))[0]


def _loss_report(name: str, curve, seed: int) -> EvalReport:
    loss = list(curve.loss) if curve is not None else []
    curves = {}
    if loss:
        curves[f"{name}_loss"] = {"x": list(range(len(loss))), "xlabel": "step", "ylabel": "loss",
                                  "series": {"loss": loss}}
    return EvalReport(name, summary={"final_loss": loss[-1] if loss else None, "steps": len(loss)},
                      seeds={"master": seed}, curves=curves)


def cmd_zoo_build(cfg: RunConfig, lay: Layout, args) -> None:
    records = P.build_primary_zoo(cfg)
    write_zoo(records, lay.zoo)
    accs = [r.meta["val_acc"] for r in records]
    rows = [{"dataset": r.meta["dataset"], "seed": r.meta["seed"], "epoch": r.meta["epoch"],
             "accuracy": r.meta["val_acc"]} for r in records]
    EvalReport("zoo", rows=rows, summary={"mean": float(np.mean(accs)), "best": float(np.max(accs)),
                                          "n_models": len(records)},
               seeds={"master": cfg.seeds.master}).write(lay.reports / "zoo")
    print(f"zoo: {len(records)} checkpoints, mean val acc {np.mean(accs):.4f}")


def _train_codec(cfg: RunConfig, lay: Layout, kind: str) -> None:
    records = _primary_zoo(lay)
    codec, curve = P.fit_codec(cfg, records, kind=kind)
    save_codec(codec, lay.codec_file(kind))
    _loss_report(f"codec_{kind}", curve, cfg.seeds.master).write(lay.reports / f"codec_{kind}")
    print(f"codec: {kind}, code dim {codec.code_dim}")


def cmd_vae_train(cfg: RunConfig, lay: Layout, args) -> None:
    if cfg.codec.kind == "graph":
        raise ConfigError("codec.kind 'graph' is trained by 'graph-train'")
    _train_codec(cfg, lay, cfg.codec.kind)


def cmd_graph_train(cfg: RunConfig, lay: Layout, args) -> None:
    _train_codec(cfg, lay, "graph")


def cmd_cfm_train(cfg: RunConfig, lay: Layout, args) -> None:
    records = _primary_zoo(lay)
    codec = _primary_codec(cfg, lay)
    field, curve = P.train_unconditional(cfg, codec, records)
    save_field(field, lay.flow_file("field"), meta={"codec": cfg.codec.kind})
    if cfg.flow.cotrain_codec:
        save_codec(codec, lay.codec_file(cfg.codec.kind))
    _loss_report("cfm", curve, cfg.seeds.master).write(lay.reports / "cfm")
    print(f"field: {curve.loss[-1]:.4f} final loss after {len(curve.loss)} steps")


def cmd_sample(cfg: RunConfig, lay: Layout, args) -> None:
    codec = _primary_codec(cfg, lay)
    field = _primary_field(lay)
    ds = P.primary_dataset(cfg)
    nfe = args.nfe or cfg.flow.nfe
    count = args.count or cfg.experiment.samples
    out = lay.zoo / "generated"
    rows = []
    for i in range(count):
        start = time.perf_counter()
        code = generate_codes(field, codec, P.prior_spec(cfg), derive(cfg.seeds.master, "sample", i), 1, nfe=nfe,
                              method=cfg.flow.method)
        elapsed = time.perf_counter() - start
        params = codec.decode_params(code)[0]
        acc = eval_weights(codec.space.arch, params, ds)
        rec = WeightRecord(codec.space.arch, params, {"dataset": ds.name, "epoch": 0, "seed": i, "val_acc": acc,
                                                      "generated": True, "nfe": nfe})
        save_checkpoint(rec, out / f"sample_{i:04d}.wck")
        rows.append({"sample": i, "accuracy": acc, "nfe": nfe})
        print(f"sample {i}: nfe {nfe}, wall {elapsed:.3f}s, val acc {acc:.4f}")
    accs = [r["accuracy"] for r in rows]
    EvalReport("sample", rows=rows, summary={"best": max(accs), "mean": float(np.mean(accs)), "count": count,
                                             "nfe": nfe, "method": cfg.flow.method},
               seeds={"master": cfg.seeds.master}).write(lay.reports / "sample")


def cmd_eval(cfg: RunConfig, lay: Layout, args) -> None:
    ds = P.primary_dataset(cfg)
    records = _primary_zoo(lay)
    gen_dir = lay.zoo / "generated"
    generated = [load_checkpoint(p) for p in sorted(gen_dir.glob("sample_*.wck"))] if gen_dir.exists() else []
    rows = []
    for source, recs in (("zoo", records), ("generated", generated)):
        for i, rec in enumerate(recs):
            rows.append({"source": source, "index": i, "accuracy": eval_weights(rec.arch, rec, ds)})
    summary = {}
    for source in ("zoo", "generated"):
        accs = [r["accuracy"] for r in rows if r["source"] == source]
        if accs:
            summary[source] = {"best": max(accs), "mean": float(np.mean(accs)), "count": len(accs)}
    EvalReport("eval", rows=rows, summary=summary, seeds={"master": cfg.seeds.master}).write(lay.reports / "eval")
    for source, s in sorted(summary.items()):
        print(f"{source}: best {s['best']:.4f}, mean {s['mean']:.4f} over {s['count']}")
    if lay.flow_file("field").exists():
        rep = run_unconditional(records, ds, _primary_codec(cfg, lay), _primary_field(lay), P.prior_spec(cfg),
                                derive(cfg.seeds.master, "unconditional"), n_samples=cfg.experiment.samples,
                                nfe=cfg.flow.nfe, method=cfg.flow.method)
        rep.write(lay.reports / "unconditional")
        print(f"unconditional: best generated {rep.summary['best']:.4f} vs zoo best "
              f"{rep.baselines['zoo_best']:.4f}, nfe {cfg.flow.nfe}")


def cmd_retrieve(cfg: RunConfig, lay: Layout, args) -> None:
    r = cfg.experiment.retrieval
    bundle = P.retrieval_zoo(cfg)
    write_zoo(bundle.records, lay.zoo / "retrieval")
    codec, _ = P.fit_codec(cfg, bundle.records, tag="retrieval")
    save_codec(codec, lay.codec_file("retrieval"))
    enc, field, _ = P.train_retrieval_models(cfg, bundle, codec)
    save_field(field, lay.flow_file("retrieval_field"))
    save_cond(enc, lay.flow_file("retrieval_cond"))
    codec = load_codec(lay.codec_file("retrieval"))
    field, enc = load_field(lay.flow_file("retrieval_field"))[0], load_cond(lay.flow_file("retrieval_cond"))
    kw = dict(n_samples=r.samples, k=r.top_k, shots=cfg.conditioner.shots, prior=P.prior_spec(cfg),
              nfe=cfg.flow.nfe)
    rep = run_retrieval(bundle.datasets, bundle.arch, codec, field, enc, cfg.seeds.master, **kw)
    rep.write(lay.reports / "retrieval")
    zeroed = run_retrieval(bundle.datasets, bundle.arch, codec, field, enc, cfg.seeds.master, zero_condition=True,
                           **kw)
    zeroed.write(lay.reports / "retrieval_zeroed")
    print(f"retrieval: gap {rep.summary['gap']:.4f} (zeroed condition {zeroed.summary['gap']:.4f}), "
          f"nfe {cfg.flow.nfe}, wall {rep.wall_time:.1f}s")


def cmd_init_study(cfg: RunConfig, lay: Layout, args) -> None:
    s = cfg.experiment.init_study
    datasets = P.init_study_datasets(cfg)
    records = P.init_study_zoo(cfg, datasets[0])
    write_zoo(records, lay.zoo / "init_study")
    codec, _ = P.fit_codec(cfg, records, tag="init_study")
    save_codec(codec, lay.codec_file("init_study"))
    field, _ = P.train_unconditional(cfg, codec, records, tag="init_study")
    save_field(field, lay.flow_file("init_study_field"))
    codec = load_codec(lay.codec_file("init_study"))
    field = load_field(lay.flow_file("init_study_field"))[0]
    rep = run_init_study(datasets, records[0].arch, codec, field, cfg.seeds.master, epochs=s.finetune_epochs,
                         n_samples=s.samples, ft=P.init_study_ft_config(cfg), prior=P.prior_spec(cfg),
                         init_mode=cfg.flow.prior_mode, nfe=cfg.flow.nfe)
    rep.write(lay.reports / "init_study")
    for name, arms in rep.summary.items():
        line = ", ".join(f"{arm} " + "/".join(f"{v:.3f}" for v in arms[arm].values())
                         for arm in ("generated", "random"))
        print(f"init study {name}: {line}")


def cmd_fewshot(cfg: RunConfig, lay: Layout, args) -> None:
    f = cfg.experiment.fewshot
    bundle = P.fewshot_zoo(cfg)
    save_checkpoint(bundle.backbone.record, lay.zoo / "fewshot" / "backbone.wck")
    codec = P.fewshot_codec(cfg, bundle)
    save_codec(codec, lay.codec_file("fewshot"))
    enc, field, _ = P.train_fewshot_models(cfg, bundle, codec)
    save_field(field, lay.flow_file("fewshot_field"))
    save_cond(enc, lay.flow_file("fewshot_cond"))
    backbone = Backbone(load_checkpoint(lay.zoo / "fewshot" / "backbone.wck"))
    codec = load_codec(lay.codec_file("fewshot"))
    field, enc = load_field(lay.flow_file("fewshot_field"))[0], load_cond(lay.flow_file("fewshot_cond"))
    rep = run_fewshot(backbone, enc, field, codec, bundle.datasets, bundle.ood, cfg.seeds.master, way=f.way,
                      shot=f.shot, queries=f.queries, n_episodes=f.test_episodes, n_samples=f.samples, k=f.top_k,
                      select=f.select, nfe=cfg.flow.nfe)
    rep.write(lay.reports / "fewshot")
    for group in ("in_distribution", "ood"):
        s = rep.summary[group]
        print(f"fewshot {group}: top-{f.top_k} {s['topk_mean']:.4f}, probe {s['probe_mean']:.4f}")


def cmd_finetune_ood(cfg: RunConfig, lay: Layout, args) -> None:
    f = cfg.experiment.finetune
    codec = _primary_codec(cfg, lay)
    field = _primary_field(lay)
    sg, hp = P.finetune_configs(cfg)
    tuned, rep = finetune_meta_ood(field, codec, codec.space.arch, P.finetune_dataset(cfg), sg, hp,
                                   cfg.seeds.master, prior=P.prior_spec(cfg), eval_samples=f.eval_samples,
                                   k=cfg.experiment.top_k, nfe=cfg.flow.nfe)
    save_field(tuned, lay.flow_file("field_finetuned"), meta={"t_cut": sg.t_cut})
    rep.write(lay.reports / "finetune_ood")
    s = rep.summary
    print(f"finetune {s['dataset']}: {s['static_mean']:.4f} -> {s['finetuned_mean']:.4f} "
          f"(t_cut {sg.t_cut}, wall {rep.wall_time:.1f}s)")


COMMANDS = {
    "zoo-build": cmd_zoo_build,
    "vae-train": cmd_vae_train,
    "graph-train": cmd_graph_train,
    "cfm-train": cmd_cfm_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "fewshot": cmd_fewshot,
    "init-study": cmd_init_study,
    "finetune-ood": cmd_finetune_ood,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults apply when omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. seeds.master=7; repeatable")
    parser = argparse.ArgumentParser(prog="weightflow", description="Generate neural-network weights with flow matching.")
    sub = parser.add_subparsers(dest="verb", metavar="verb")
    sub.required = True
    for verb in VERBS:
        p = sub.add_parser(verb, parents=[common])
        if verb == "sample":
            p.add_argument("--count", type=int, default=None)
            p.add_argument("--nfe", type=int, default=None)
    return parser


def _error(code: str, msg) -> int:
    text = " ".join(str(msg).split())
    print(f"ERROR {code}: {text}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "selftest":
        results = run_selftest()
        print(format_table(results))
        return 0 if all(ok for _, ok, _ in results) else 1
    if getattr(args, "nfe", None) is not None and args.nfe < 1:
        return _error("config", "--nfe must be >= 1")
    if getattr(args, "count", None) is not None and args.count < 1:
        return _error("config", "--count must be >= 1")
    try:
        cfg = load_config(args.config, args.overrides) if args.config else build_config({"dataset": {}}, args.overrides)
        lay = Layout(cfg.out_dir)
        lay.root.mkdir(parents=True, exist_ok=True)
        (lay.root / "config.resolved.json").write_text(cfg.resolved_json() + "\n")
        start = time.perf_counter()
        COMMANDS[args.verb](cfg, lay, args)
        print(f"{args.verb}: done in {time.perf_counter() - start:.1f}s")
        return 0
    except ConfigError as exc:
        return _error("config", exc)
    except MissingArtifact as exc:
        return _error("missing-artifact", exc)
    except CheckpointError as exc:
        return _error("checkpoint", exc)
    except (TrainingDiverged, NonFiniteError) as exc:
        return _error("diverged", exc)
    except (ValueError, OSError) as exc:
        return _error("runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
