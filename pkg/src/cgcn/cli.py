"""Command-line entry point: ``cgcn <command> [<subcommand>] [options]``.

Exit status is 0 on success, 1 on any error or failed check, 2 on usage errors.
BLAS threads default to 1 (override with CGCN_THREADS) so runs are bit-reproducible.
"""

from __future__ import annotations

import os

_THREADS = os.environ.get("CGCN_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .centrality import MODES, assemble_centrality_set, highlight  # noqa: E402
from .config import STREAMS, dump_config, load_config  # noqa: E402
from .dataio import load_dataset, parse_sequence, resolve_template  # noqa: E402
from .errors import CgcnError  # noqa: E402
from .experiment import (  # noqa: E402
    ablation_markdown,
    ablation_table,
    build_models,
    eval_dataset,
    load_models,
    prepare,
    run_extra,
    save_models,
    train,
)
from .gradcheck import LAYERS, THRESHOLD, run_gradcheck  # noqa: E402
from .graph import graph_to_dict, load_template  # noqa: E402
from .synth import ARCHETYPES, synth_generate  # noqa: E402
from .training import evaluate  # noqa: E402


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=1))
    else:
        print(text)


def _streams(value: str) -> list[str]:
    parts = [p for p in value.replace(",", " ").split() if p]
    bad = [p for p in parts if p not in STREAMS]
    if bad or not parts or len(set(parts)) != len(parts):
        raise argparse.ArgumentTypeError(f"streams must be distinct letters from {','.join(STREAMS)}")
    return parts


def _names(allowed):
    def parse(value: str) -> list[str]:
        parts = [p for p in value.replace(",", " ").split() if p]
        bad = [p for p in parts if p not in allowed]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown names {bad}; choose from {', '.join(allowed)}")
        return parts

    return parse


def _write_matrix_csv(path: Path, m: np.ndarray) -> None:
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for row in m:
            w.writerow([repr(float(v)) for v in row])


# commands


def cmd_graph_validate(args) -> int:
    g = load_template(args.template)
    info = {
        "template": g.template_id,
        "joints": g.joint_count,
        "edges": len(g.edges),
        "dims": g.dims,
        "tree": g.is_tree,
        "graph": graph_to_dict(g),
    }
    _emit(args, info, f"{g.template_id}: {g.joint_count} joints, {len(g.edges)} bones, "
                      f"{'tree' if g.is_tree else 'forest'}, {g.dims}-D: valid")
    return 0


def cmd_centrality_compute(args) -> int:
    seq = parse_sequence(args.sequence)
    graph = resolve_template(seq.template, Path(args.sequence).parent)
    out = assemble_centrality_set(graph, seq.frames, args.mode)
    sets = out if isinstance(out, list) else [out]
    result = {
        "template": seq.template,
        "mode": args.mode,
        "seed": args.seed,
        "sets": [s.to_dict() for s in sets],
    }
    if args.highlight:
        result["highlight"] = [highlight(s, graph, args.highlight) for s in sets]
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "centrality.json").write_text(json.dumps(result, indent=1) + "\n")
        if args.csv:
            for s in sets:
                suffix = "" if s.frame_index is None else f"_t{s.frame_index:04d}"
                for name in ("J", "B", "W", "A"):
                    _write_matrix_csv(out_dir / f"{name}{suffix}.csv", s.matrix(name))
    summary = {"template": seq.template, "mode": args.mode, "sets": len(sets), "out": str(out_dir) if out_dir else None}
    if args.highlight:
        summary["highlight"] = result["highlight"]
    if args.json and not out_dir:
        summary = result
    lines = [f"{len(sets)} centrality set(s), mode {args.mode}" + (f", written to {out_dir}" if out_dir else "")]
    if args.highlight:
        h = result["highlight"][0]
        lines.append("top joints (J): " + ", ".join(f"{e['joint']}:{e['value']:.4f}" for e in h["J"]))
        lines.append("top bones (B): " + ", ".join(f"{e['bone']}:{e['value']:.4f}" for e in h["B"]))
        lines.append("top pairs (W): " + ", ".join(f"{e['pair']}:{e['value']:.4f}" for e in h["W"]))
    _emit(args, summary, "\n".join(lines))
    return 0


def cmd_synth_generate(args) -> int:
    out = synth_generate(args.out, args.classes, args.per_class, args.joints, args.frames, args.seed)
    n = len(args.classes) * args.per_class
    _emit(args, {"out": str(out), "sequences": n, "classes": list(args.classes), "seed": args.seed},
          f"wrote {n} sequences and manifest.csv to {out}")
    return 0


def _load_cfg(args):
    cfg = load_config(args.config)
    over = {"seed": args.seed, "epochs": getattr(args, "epochs", None)}
    if getattr(args, "streams", None):
        over["streams"] = tuple(args.streams)
    if getattr(args, "stop_top1", None) is not None:
        over["stop_top1"] = args.stop_top1
    if getattr(args, "mode", None):
        over["mode"] = args.mode
    return cfg.with_overrides(**over)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(load_dataset(args.data), cfg)
    eval_data = eval_dataset(load_dataset(args.eval_data), cfg.to_dict()) if args.eval_data else None
    models = build_models(prep)
    extra = run_extra(cfg, prep.num_classes)
    ckpt = out / "checkpoints"

    def on_epoch(epoch, row):
        if not args.quiet:
            print(f"epoch {row.epoch:4d}  loss {row.loss:.4f}  top1 {row.top1:.4f}  top5 {row.top5:.4f}  "
                  f"{row.seconds:.1f}s", file=sys.stderr, flush=True)
        if args.checkpoint_every and row.epoch % args.checkpoint_every == 0:
            save_models(models, ckpt / f"epoch_{row.epoch:04d}", {**extra, "epoch": row.epoch})

    report = train(prep, models, eval_data, cfg.stop_top1, on_epoch)
    save_models(models, ckpt, {**extra, "epoch": len(report.rows)})
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json", {"config": cfg.to_dict(), "num_classes": prep.num_classes,
                                            "centrality_inputs": prep.centrality_id})
    report.write_timing(out / "timing.csv")
    dump_config(cfg, out / "config.yaml")
    (out / "centrality.json").write_text(json.dumps(prep.centrality.to_dict()) + "\n")
    last = report.rows[-1]
    payload = {"epochs": len(report.rows), "loss": last.loss, "top1": last.top1, "top5": last.top5,
               "streams": list(models), "out": str(out), "config_hash": report.config_hash}
    _emit(args, payload, f"trained {','.join(models)} for {len(report.rows)} epochs: "
                         f"loss {last.loss:.4f}, top-1 {last.top1:.4f}, top-5 {last.top5:.4f}; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    models, run = load_models(Path(args.checkpoints), args.streams)
    data = eval_dataset(load_dataset(args.data), run.get("config", {}))
    metrics = evaluate(models, data, args.topk)
    payload = {"streams": list(models), "samples": len(data), **metrics}
    _emit(args, payload, f"{'+'.join(models)} on {len(data)} samples: "
                         + ", ".join(f"{k} {v:.4f}" for k, v in metrics.items()))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(load_dataset(args.data), cfg)
    rows, _ = ablation_table(prep, out / "checkpoints")
    md = ablation_markdown(rows)
    (out / "ablation.md").write_text(md)
    with (out / "ablation.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "streams", "top1"])
        for r in rows:
            w.writerow([r.method, "+".join(r.streams), repr(r.top1)])
    payload = {
        "config": cfg.to_dict(),
        "rows": [{"method": r.method, "streams": list(r.streams), "top1": r.top1} for r in rows],
    }
    (out / "ablation.json").write_text(json.dumps(payload, indent=1) + "\n")
    _emit(args, payload, md.rstrip())
    return 0


def cmd_gradcheck(args) -> int:
    layers = args.layers or list(LAYERS)
    reports = run_gradcheck(layers, args.shapes, args.seed, args.negate or ())
    ok = all(r.passed for r in reports)
    payload = {
        "threshold": THRESHOLD,
        "passed": ok,
        "layers": [{"layer": r.layer, "max_rel_error": r.max_rel_error, "passed": r.passed} for r in reports],
    }
    lines = [f"{r.layer:<16} {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}" for r in reports]
    lines.append("all layers pass" if ok else f"gradient check failed (threshold {THRESHOLD:g})")
    _emit(args, payload, "\n".join(lines))
    return 0 if ok else 1


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: config or 0)")
    common.add_argument("--json", action="store_true", help="print machine-readable JSON")

    p = argparse.ArgumentParser(prog="cgcn", description="Centrality graph convolutional networks on skeleton sequences.")
    p.add_argument("--version", action="version", version=f"cgcn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="skeleton graph templates").add_subparsers(dest="action", required=True)
    gv = g.add_parser("validate", parents=[common], help="check a template for a valid acyclic skeleton")
    gv.add_argument("template", help="built-in id (ntu25, openpose18) or path to a template JSON")
    gv.set_defaults(func=cmd_graph_validate)

    c = sub.add_parser("centrality", help="centrality matrices").add_subparsers(dest="action", required=True)
    cc = c.add_parser("compute", parents=[common], help="J, B, W and normalized adjacency for one sequence")
    cc.add_argument("sequence", help="sequence JSON file")
    cc.add_argument("--mode", choices=MODES, default="sequence_mean")
    cc.add_argument("--out", help="directory for centrality.json (and CSV heatmaps)")
    cc.add_argument("--csv", action="store_true", help="also write one CSV per matrix")
    cc.add_argument("--highlight", type=int, default=0, metavar="K", help="list the top-K joints, bones and pairs")
    cc.set_defaults(func=cmd_centrality_compute)

    s = sub.add_parser("synth", help="synthetic datasets").add_subparsers(dest="action", required=True)
    sg = s.add_parser("generate", parents=[common], help="write archetype sequences and a manifest")
    sg.add_argument("--out", required=True)
    sg.add_argument("--per-class", type=int, default=20)
    sg.add_argument("--joints", type=int, default=25)
    sg.add_argument("--frames", type=int, default=32)
    sg.add_argument("--classes", type=_names(ARCHETYPES), default=list(ARCHETYPES),
                    help=f"comma-separated subset of {','.join(ARCHETYPES)}")
    sg.set_defaults(func=cmd_synth_generate)

    t = sub.add_parser("train", parents=[common], help="train stream models")
    t.add_argument("--data", required=True, help="manifest CSV or dataset directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="YAML run configuration, or a plan name (desk, paper)")
    t.add_argument("--streams", type=_streams, help="subset of J,B,W,A")
    t.add_argument("--mode", choices=("four-stream", "single"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--stop-top1", type=float, help="stop once fused top-1 reaches this value")
    t.add_argument("--eval-data", help="manifest for per-epoch evaluation (default: training set)")
    t.add_argument("--checkpoint-every", type=int, default=0, metavar="K")
    t.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="fused top-k accuracy of saved checkpoints")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoints", required=True, help="directory of <stream>.json checkpoints")
    e.add_argument("--streams", type=_streams, help="subset of the saved streams (default: all)")
    e.add_argument("--topk", type=lambda v: [int(k) for k in v.split(",")], default=[1, 5])
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common], help="train and evaluate the five stream subsets")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.add_argument("--mode", choices=("four-stream", "single"))
    a.add_argument("--epochs", type=int)
    a.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of every backward pass")
    gc.add_argument("--layers", type=_names(LAYERS), help=f"comma-separated subset of {','.join(LAYERS)}")
    gc.add_argument("--negate", type=_names(LAYERS), help="flip the analytic gradient sign (negative control)")
    gc.add_argument("--shapes", type=int, default=5, help="random shapes per layer")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.func is cmd_gradcheck or args.func is cmd_synth_generate:
        args.seed = 0 if args.seed is None else args.seed
    try:
        return args.func(args)
    except (CgcnError, ValueError, OSError, KeyError) as exc:
        print(f"cgcn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
