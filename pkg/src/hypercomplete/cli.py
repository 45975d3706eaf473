"""Command line entry point: ``hypercomplete complete|eval|toy-train|selftest``.

Exit codes: 0 success, 1 usage/config, 2 I/O, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import metrics
from .checkpoint import CheckpointError, load_into, read_checkpoint
from .cloudio import FORMATS, CloudFormatError, load_cloud, save_cloud
from .config import ConfigError, ModelConfig, RunConfig
from .model import HyperComplete
from .nn import Rng
from .tensor import no_grad

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("hypercomplete")

# fields that determine parameter shapes; a checkpoint must agree on all of them
SHAPE_FIELDS = ("n_points", "n_hyper", "n_anchors", "channels", "grid_points", "encoder_depth",
                "decoder_depth", "state_size", "conv_width", "edge_hidden", "heads", "mlp_ratio",
                "deform_width", "deform_blocks")


class UsageError(Exception):
    pass


def _run_config(args) -> RunConfig:
    run = cfgmod.load(args.config) if args.config else RunConfig()
    if getattr(args, "preset", None):
        grid = cfgmod.PRESETS[args.preset]["grid_points"]
        run = dataclasses.replace(run, model=dataclasses.replace(run.model, grid_points=grid))
    if args.seed is not None:
        run = dataclasses.replace(run, model=dataclasses.replace(run.model, seed=args.seed))
    return run


def _model_for(run: RunConfig, checkpoint: str | None, explicit_config: bool) -> tuple[HyperComplete, ModelConfig]:
    cfg = run.model
    if not checkpoint:
        log.warning("no checkpoint given; using seeded initial weights (seed %d)", cfg.seed)
        return HyperComplete(cfg), cfg
    ck_cfg, tensors = read_checkpoint(checkpoint)
    if explicit_config:
        diff = [f for f in SHAPE_FIELDS if getattr(ck_cfg, f) != getattr(cfg, f)]
        if diff:
            detail = ", ".join(f"{f}: checkpoint {getattr(ck_cfg, f)} vs config {getattr(cfg, f)}"
                               for f in diff)
            raise CheckpointError(f"HCPT1 checkpoint {checkpoint} does not match the run config ({detail})")
    else:
        cfg = dataclasses.replace(ck_cfg, seed=cfg.seed, fps_start=cfg.fps_start, order=cfg.order)
    model = HyperComplete(dataclasses.replace(cfg, zero_init_heads=False))
    load_into(model, tensors, source=str(checkpoint))
    return model, cfg


def cmd_complete(args) -> int:
    run = _run_config(args)
    in_path = Path(args.input)
    if not in_path.exists():
        print(f"error: input file not found: {in_path}", file=sys.stderr)
        return EXIT_IO
    partial = load_cloud(in_path)
    model, cfg = _model_for(run, args.checkpoint, bool(args.config) or bool(args.preset))
    if args.random_start:
        start = int(Rng(cfg.seed).integers(0, len(partial)))
        model.cfg = model.generator.cfg = dataclasses.replace(cfg, fps_start=start)
    t0 = time.perf_counter()
    with no_grad():
        out = model(partial)
    points = out.points.data
    if not np.all(np.isfinite(points)):
        print("error: non-finite coordinates in the completed cloud", file=sys.stderr)
        return EXIT_NUMERIC
    if args.concat_input:
        points = np.concatenate([points, partial], axis=0)
    save_cloud(args.output, points)
    if args.emit_hyperpoints:
        out_path = Path(args.output)
        hyper_path = out_path.with_name(out_path.stem + ".hyper" + out_path.suffix)
        save_cloud(hyper_path, out.centers.data)
        print(f"hyperpoints: {len(out.centers.data)} -> {hyper_path}")
    print(f"input points: {len(partial)}")
    print(f"output points: {len(points)}")
    print(f"wall time: {time.perf_counter() - t0:.3f} s")
    return EXIT_OK


def _index_dir(root: Path) -> dict[str, Path]:
    found = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.suffix.lower() in FORMATS:
            found[p.relative_to(root).with_suffix("").as_posix()] = p
    return found


def run_eval(pred_dir: str | Path, gt_dir: str | Path, phi: float, partial_dir=None,
             reference_dir=None) -> metrics.EvalReport:
    preds, gts = _index_dir(Path(pred_dir)), _index_dir(Path(gt_dir))
    partials = _index_dir(Path(partial_dir)) if partial_dir else {}
    report = metrics.EvalReport(phi=phi)
    for sid in sorted(set(preds) | set(gts)):
        if sid not in preds or sid not in gts:
            report.skipped.append(sid)
            continue
        category = sid.rsplit("/", 1)[0] if "/" in sid else "all"
        partial = load_cloud(partials[sid]) if sid in partials else None
        report.rows.append(metrics.evaluate_pair(sid, load_cloud(preds[sid]), load_cloud(gts[sid]),
                                                 phi, partial, category))
    if reference_dir:
        refs = [load_cloud(p) for p in _index_dir(Path(reference_dir)).values()]
        outs = [load_cloud(preds[r.shape_id]) for r in report.rows]
        if outs:
            report.mmd = metrics.mmd(outs, refs)
    return report


def cmd_eval(args) -> int:
    for d in (args.pred_dir, args.gt_dir):
        if not Path(d).is_dir():
            print(f"error: directory not found: {d}", file=sys.stderr)
            return EXIT_IO
    report = run_eval(args.pred_dir, args.gt_dir, args.phi, args.partial_dir, args.reference_dir)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval.csv")
    report.write_json(out / "eval.json")
    summary = report.summary()["overall"]
    print(f"shapes: {len(report.rows)}  skipped: {len(report.skipped)}")
    if report.rows:
        print(f"cd_l1 {summary['cd_l1']:.6g}  cd_l2 {summary['cd_l2']:.6g}  f_score {summary['f_score']:.4f}")
    if report.skipped:
        print(f"warning: {len(report.skipped)} shapes without a matching pair", file=sys.stderr)
    return EXIT_OK


def load_pairs(shapes_dir: str | Path) -> list[tuple[np.ndarray, np.ndarray]]:
    root = Path(shapes_dir)
    partial, complete = _index_dir(root / "partial"), _index_dir(root / "complete")
    ids = sorted(set(partial) & set(complete))
    if not ids:
        raise FileNotFoundError(f"no matching partial/complete pairs under {root}")
    return [(load_cloud(partial[i]), load_cloud(complete[i])) for i in ids]


def cmd_toy_train(args) -> int:
    from .train import DivergenceError, save_run, toy_train

    run = _run_config(args)
    overrides = {k: v for k, v in (("steps", args.steps), ("lr", args.lr)) if v is not None}
    if overrides:
        run = dataclasses.replace(run, **overrides)
    pairs = load_pairs(args.shapes_dir)
    try:
        model, hist = toy_train(run, pairs)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out_dir = args.out_dir or run.output_dir or "toy-run"
    ckpt = save_run(out_dir, model, run, hist)
    print(f"pairs: {len(pairs)}  steps: {len(hist.losses)}")
    print(f"cd_l2 collapse baseline {hist.baseline_cd_l2:.6g} -> final {hist.final_cd_l2:.6g} "
          f"({hist.reduction:.1%} reduction)")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import format_table, run_selftest

    results = run_selftest(corrupt_scan=args.corrupt_scan, include_params=not args.skip_params)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypercomplete", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value run configuration file")
        p.add_argument("--seed", type=int, help="overrides the configured seed")

    p = sub.add_parser("complete", help="complete one partial cloud")
    common(p)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    p.add_argument("--emit-hyperpoints", action="store_true")
    p.add_argument("--concat-input", action="store_true",
                   help="append the input points to the completed cloud")
    p.add_argument("--random-start", action="store_true", help="seeded random FPS start point")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--phi", type=float, default=0.01, help="F-score distance threshold")
    p.add_argument("--out-dir")
    p.add_argument("--partial-dir", help="inputs, enables the fidelity metric")
    p.add_argument("--reference-dir", help="reference shapes, enables MMD")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("toy-train", help="train on partial/ and complete/ pairs")
    common(p)
    p.add_argument("shapes_dir")
    p.add_argument("--out-dir")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--corrupt-scan", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--skip-params", action="store_true", help="skip the default-size parameter count")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, CloudFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
