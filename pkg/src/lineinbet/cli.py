"""Command-line entry point: vectorize | synth | train | inbetween | eval.

Configuration precedence is command line > JSON config file > built-in defaults.
Set LINEINBET_LOG (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("lineinbet")

ENV_LOG = "LINEINBET_LOG"


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _merge_dataclass(cls, defaults, *layers):
    """Build a dataclass instance from defaults overlaid by dicts, later layers winning."""
    names = {f.name for f in dataclasses.fields(cls)}
    merged = dataclasses.asdict(defaults)
    for layer in layers:
        for key, val in (layer or {}).items():
            if key not in names:
                raise CLIError(f"unknown {cls.__name__} field: {key!r}")
            if val is not None:
                merged[key] = tuple(val) if isinstance(merged[key], tuple) else val
    return cls(**merged)


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CLIError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CLIError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CLIError(f"config file {path} must hold a JSON object")
    return data


def _split_gaps(text: str) -> tuple[int, ...]:
    try:
        gaps = tuple(int(g) for g in text.split(",") if g.strip())
    except ValueError as exc:
        raise CLIError(f"--gaps must be comma-separated integers, got {text!r}") from exc
    if not gaps or min(gaps) < 0:
        raise CLIError("--gaps needs at least one non-negative integer")
    return gaps


# ---------------------------------------------------------------- commands


def cmd_vectorize(args) -> None:
    from .geom import load_image, save_graph
    from .vectorize import geometrize

    if args.tol < 0:
        raise CLIError("--tol must be non-negative")
    g = geometrize(load_image(args.inp), tol=args.tol)
    save_graph(g, args.out)
    log.info("vectorized %s: %d vertices, %d edges", args.inp, g.num_vertices, len(g.edges))


def cmd_synth(args) -> None:
    from .synth import SynthConfig, generate_dataset

    file_cfg = _read_config(args.config)
    cli = {"n_figures": args.figures, "n_motions": args.motions, "frames_per_seq": args.frames,
           "canvas": args.canvas, "seed": args.seed, "amplitude": args.amplitude}
    cfg = _merge_dataclass(SynthConfig, SynthConfig(), file_cfg.get("synth", file_cfg), cli)
    if min(cfg.n_figures, cfg.n_motions, cfg.frames_per_seq) < 1 or cfg.canvas < 16:
        raise CLIError("figures, motions and frames must be >= 1 and canvas >= 16")
    manifest = generate_dataset(cfg, args.out)
    log.info("wrote %d sequences to %s", len(manifest["sequences"]), args.out)


def _train_configs(args):
    from .learn import TrainConfig
    from .model import ModelConfig

    file_cfg = _read_config(args.config)
    model_file = file_cfg.get("model", {})
    train_file = file_cfg.get("train", {})
    model_cli = {"channels": args.channels, "n_layers": args.layers, "spectral_dim": args.spectral_dim,
                 "theta": args.theta}
    train_cli = {"learning_rate": args.lr, "epochs_total": args.epochs, "epochs_phase1": args.phase1_epochs,
                 "pairs_per_epoch": args.pairs_per_epoch, "seed": args.seed}
    try:
        mcfg = _merge_dataclass(ModelConfig, ModelConfig(), model_file, model_cli).validate()
        tcfg = _merge_dataclass(TrainConfig, TrainConfig(), train_file, train_cli).validate()
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid config: {exc}") from exc
    return mcfg, tcfg


def cmd_train(args) -> None:
    from .learn import train, write_loss_log
    from .model import ModelParams, save_params
    from .synth import Dataset

    mcfg, tcfg = _train_configs(args)
    dataset = Dataset.open(args.data)
    init_seed = tcfg.seed if args.init_seed is None else args.init_seed
    params = ModelParams.init(mcfg, seed=init_seed)
    result = train(dataset, tcfg, params)
    save_params(result.params, args.out)
    if args.log:
        write_loss_log(result.log, args.log)
    log.info("trained %d optimizer steps, saved %s", len(result.log), args.out)


def cmd_inbetween(args) -> None:
    from .geom import load_graph, load_image, rasterize, save_graph, save_image
    from .model import load_params
    from .pipeline import inbetween

    if not 0 < args.t < 1:
        raise CLIError("--t must lie in (0, 1)")
    params = load_params(args.params)
    g0, g1 = load_graph(args.g0), load_graph(args.g1)
    i0, i1 = load_image(args.i0), load_image(args.i1)
    res = inbetween(g0, g1, i0, i1, params, t=args.t)
    save_graph(res.graph, args.out_graph)
    if args.out_png:
        save_image(rasterize(res.graph, 2), args.out_png)
    log.info("inbetween: %d matched pairs, %d output vertices", len(res.matching.pairs), res.graph.num_vertices)


def cmd_eval(args) -> None:
    from .evaluation import evaluate
    from .model import load_params
    from .synth import Dataset

    gaps = _split_gaps(args.gaps)
    if args.d == "auto":
        d = None
    else:
        try:
            d = float(args.d)
        except ValueError as exc:
            raise CLIError(f"--d must be 'auto' or a positive number, got {args.d!r}") from exc
        if d <= 0:
            raise CLIError("--d must be positive")
    params = load_params(args.params)
    report = evaluate(params, Dataset.open(args.data), gaps=gaps, t=args.t, d=d, splits=tuple(args.splits.split(",")))
    report.write_csv(args.out)
    for g, v in report.table().items():
        log.info("gap %d: CD %.4f x1e-5 (d=%g)", g, v, report.d)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lineinbet", description="Vertex-graph inbetweening of line drawings.")
    sub = p.add_subparsers(dest="command", metavar="{vectorize,synth,train,inbetween,eval}", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("vectorize", help="raster line drawing -> graph JSON")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tol", type=float, default=1.5)
    s.set_defaults(func=cmd_vectorize)

    s = sub.add_parser("synth", help="generate a synthetic articulated-figure dataset")
    s.add_argument("--figures", type=int)
    s.add_argument("--motions", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--canvas", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--amplitude", type=float)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train model parameters on a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.add_argument("--lr", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--phase1-epochs", type=int)
    s.add_argument("--pairs-per-epoch", type=int)
    s.add_argument("--channels", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--spectral-dim", type=int)
    s.add_argument("--theta", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--init-seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("inbetween", help="synthesize the intermediate graph of two key frames")
    for flag in ("--g0", "--g1", "--i0", "--i1", "--params", "--out-graph"):
        s.add_argument(flag, required=True)
    s.add_argument("--t", type=float, default=0.5)
    s.add_argument("--out-png")
    s.set_defaults(func=cmd_inbetween)

    s = sub.add_parser("eval", help="chamfer-distance evaluation over frame gaps")
    s.add_argument("--data", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--gaps", default="1,5,9")
    s.add_argument("--d", default="auto")
    s.add_argument("--t", type=float, default=0.5)
    s.add_argument("--splits", default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def _setup_logging() -> None:
    level = os.environ.get(ENV_LOG, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CLIError as exc:
        print(f"lineinbet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"lineinbet {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
