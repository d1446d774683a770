"""Command line: gen-data, train, sample, eval, export-plots.

Exit codes: 0 ok, 1 I/O, 2 usage, 3 numeric failure. Failures print one JSON
line ``{"error", "module", "exit_code", ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import data as D
from . import metrics as M
from .config import NEVER, PRESETS, TrainConfig, preset
from .errors import ConfigError, CtsynthError, TrainingAbort
from .rng import stream

log = logging.getLogger("ctsynth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would print usage and exit on its own
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctsynth", description="Continuous-time synthesis of regular and irregular time series.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a dataset directory")
    g.add_argument("source", choices=["sines", "csv"])
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=1000, help="number of sines samples")
    g.add_argument("--dim", type=int, default=5)
    g.add_argument("--length", type=int, default=24, help="window length")
    g.add_argument("--path", help="input CSV for source=csv")
    g.add_argument("--stride", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--irregular", type=float, default=0.0, help="drop rate, e.g. 0.3")

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="flat JSON file with TrainConfig fields")
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--seed", type=int)
    t.add_argument("--k-ae", type=int, dest="K_AE")
    t.add_argument("--k-joint", type=int, dest="K_JOINT")
    t.add_argument("--p-mle", type=int, dest="P_MLE")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--no-mle", action="store_true", help="never run the MLE sub-step")
    t.add_argument("--irregular", type=float, dest="irregular_rate", help="drop rate applied to regular data")

    s = sub.add_parser("sample", help="draw synthetic series from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--grid", type=int, help="M evenly spaced times in [0, 1]")
    s.add_argument("--times", help="comma-separated times in [0, 1]")
    s.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="discriminative and predictive scores as JSON")
    e.add_argument("--real", required=True)
    e.add_argument("--fake", required=True)
    e.add_argument("--irregular", type=float, default=0.0, help="drop rate applied to regular inputs")
    e.add_argument("--mode", choices=M.MODES)
    e.add_argument("--steps", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)

    x = sub.add_parser("export-plots", help="KDE curve and embedding CSVs")
    x.add_argument("--real", required=True)
    x.add_argument("--fake", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--grid", type=int, default=512)
    return p


def parse(argv):
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError("missing command; see --help")
    return args


def resolve_config(args) -> TrainConfig:
    cfg = preset(args.preset) if args.preset else TrainConfig()
    if args.config:
        cfg = TrainConfig.load(args.config, base=cfg)
    overrides = {k: getattr(args, k) for k in ("seed", "K_AE", "K_JOINT", "P_MLE", "batch_size", "irregular_rate")
                 if getattr(args, k) is not None}
    if args.no_mle:
        overrides.update(mle=False, P_MLE=NEVER)
    return TrainConfig.from_dict(overrides, base=cfg)


def _maybe_drop(ds: D.Dataset, rate: float, seed: int) -> D.Dataset:
    if rate > 0 and not ds.irregular:
        return D.drop_random(ds, rate, stream(seed, "drop"))
    return ds


def _gen_data(args) -> int:
    if args.source == "sines":
        ds = D.gen_sines(args.n, stream(args.seed, "data"), dim=args.dim, length=args.length)
    else:
        if not args.path:
            raise UsageError("gen-data csv needs --path")
        ds = D.load_csv(args.path, window=args.length, stride=args.stride)
    ds = _maybe_drop(ds, args.irregular, args.seed)
    D.save_dataset(ds, args.out)
    log.info("wrote %d samples to %s", len(ds), args.out)
    return 0


def _train(args) -> int:
    from .trainer import Trainer

    cfg = resolve_config(args)
    log.info("config %s", cfg.to_json())
    ds = _maybe_drop(D.load_dataset(args.data), cfg.irregular_rate, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    for stale in ("metrics.csv", "trace.log"):
        if os.path.exists(os.path.join(args.out, stale)):
            os.remove(os.path.join(args.out, stale))
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json())
    tr = Trainer(cfg, ds, out_dir=args.out)
    tr.train()
    log.info("finished %d iterations; checkpoint in %s", tr.iteration, os.path.join(args.out, "checkpoint"))
    return 0


def _sample(args) -> int:
    from .trainer import Trainer

    tr = Trainer.load(args.checkpoint)
    times = None
    if args.times:
        try:
            times = np.array([float(v) for v in args.times.split(",")])
        except ValueError:
            raise UsageError(f"bad --times list {args.times!r}") from None
    elif args.grid:
        times = np.linspace(0.0, 1.0, args.grid)
    ds = tr.sample(args.n, times=times, seed=args.seed)
    D.save_dataset(ds, args.out)
    log.info("wrote %d samples to %s", len(ds), args.out)
    return 0


def _eval(args) -> int:
    real = _maybe_drop(D.load_dataset(args.real), args.irregular, args.seed)
    fake = _maybe_drop(D.load_dataset(args.fake), args.irregular, args.seed + 1)
    report = M.evaluate(real, fake, seed=args.seed, mode=args.mode, steps=args.steps)
    print(report.to_json())
    return 0


def _export(args) -> int:
    real = D.load_dataset(args.real)
    fake = D.load_dataset(args.fake)
    os.makedirs(args.out, exist_ok=True)
    rv = np.concatenate([s.values.ravel() for s in real.samples])
    fv = np.concatenate([s.values.ravel() for s in fake.samples])
    grid, dr = M.kde_export(np.concatenate([rv, fv]), args.grid)
    _, dr = M.kde_export(rv, grid)
    _, df = M.kde_export(fv, grid)
    M.write_kde(os.path.join(args.out, "kde.csv"), grid, dr, df)
    M.embedding_export(real, fake, os.path.join(args.out, "embedding.csv"))
    return 0


COMMANDS = {"gen-data": _gen_data, "train": _train, "sample": _sample, "eval": _eval, "export-plots": _export}


def _fail(message: str, module: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": message, "module": module, "exit_code": code, **extra}) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args = parse(argv)
    except UsageError as exc:
        return _fail(str(exc), "cli-io", 2)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    resolved = {k: v for k, v in vars(args).items() if k != "verbose"}
    log.info("resolved arguments %s", json.dumps(resolved, sort_keys=True))
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(str(exc), "cli-io", 2)
    except TrainingAbort as exc:
        return _fail(str(exc), exc.module, exc.exit_code, iteration=exc.iteration, substep=exc.substep)
    except ConfigError as exc:
        return _fail(str(exc), exc.module, 2)
    except CtsynthError as exc:
        return _fail(str(exc), exc.module, exc.exit_code)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(str(exc), "io", 1)
    except (ValueError, FloatingPointError) as exc:
        return _fail(str(exc), "numeric", 3)


def main() -> None:
    sys.exit(run())
