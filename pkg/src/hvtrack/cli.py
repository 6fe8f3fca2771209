"""Command-line entry points.

    hvtrack config                     print the default config file
    hvtrack build-hv  --kitti-root ... --category Car --interval 5 --split test --out cache/
    hvtrack synth     --out cache/ --n-tracklets 8
    hvtrack train     --data cache/ --out model.pt
    hvtrack track     --checkpoint model.pt --data cache/ --report out/report.txt
    hvtrack eval      --runs out/runs.tsv --report out/report.txt
    hvtrack plot      --report out/report.txt --out out/plots
    hvtrack stats     --data cache/ --interval 5

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
The cache directory defaults to ``[paths] cache_dir`` and can be overridden
with the HVTRACK_CACHE environment variable.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

from .dataset import CATEGORIES, SPLITS, IngestionError, build_hv, load_cache, load_kitti_tracklets, motion_stats
from .dataset import write_kitti_index, write_synth_index
from .evaluation import evaluate, format_report, plot_report, write_report
from .model import ConfigError, ModelConfig, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_dataset
from .tracker import RecordError, TrackConfig, read_runs, run_tracklet, write_runs
from .training import TrainConfig, TrainingError, format_loss_log, train

log = logging.getLogger("hvtrack")

CACHE_ENV = "HVTRACK_CACHE"
SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synth": SynthConfig, "track": TrackConfig}
PATHS = {"kitti_root": "", "cache_dir": "cache", "checkpoint": "model.pt", "report_dir": "report"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- config file


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format_value(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse_value(text: str, default, key: str):
    t = text.strip()
    try:
        if isinstance(default, bool):
            if t.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(t)
            return t.lower() in ("true", "yes", "1")
        if isinstance(default, int):
            return int(t)
        if isinstance(default, float) or default is None:
            return None if t.lower() == "none" else float(t)
        if isinstance(default, tuple):
            parts = [p for p in t.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in parts)
        return t
    except ValueError as e:
        raise UsageError(f"bad value for {key}: {text!r}") from e


def default_config_text() -> str:
    cp = configparser.ConfigParser()
    for name, cls in SECTIONS.items():
        cp[name] = {f.name: _format_value(getattr(cls(), f.name)) for f in dataclasses.fields(cls)}
    cp["paths"] = dict(PATHS)
    lines = ["# hvtrack configuration; every hyperparameter with its default", ""]
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)


def load_config(path: str | None) -> dict:
    """Read an INI file into the four config objects plus a paths dict."""
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as e:
            raise UsageError(f"cannot parse {path}: {e}") from e
    unknown = set(cp.sections()) - set(SECTIONS) - {"paths"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    out = {}
    for name, cls in SECTIONS.items():
        defaults = cls()
        fields = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        if cp.has_section(name):
            for key, text in cp[name].items():
                if key not in fields:
                    raise UsageError(f"unknown key [{name}] {key}")
                kw[key] = _parse_value(text, getattr(defaults, key), f"[{name}] {key}")
        try:
            out[name] = cls(**kw)
        except (ValueError, TypeError) as e:
            raise UsageError(f"invalid [{name}] section: {e}") from e
    paths = dict(PATHS)
    if cp.has_section("paths"):
        extra = set(cp["paths"]) - set(PATHS)
        if extra:
            raise UsageError(f"unknown key(s) in [paths]: {sorted(extra)}")
        paths.update(cp["paths"])
    if os.environ.get(CACHE_ENV):
        paths["cache_dir"] = os.environ[CACHE_ENV]
    out["paths"] = paths
    return out


# --------------------------------------------------------------------------- commands


def _cmd_config(args, cfg):
    text = default_config_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")


def _cmd_build_hv(args, cfg):
    root = args.kitti_root or cfg["paths"]["kitti_root"]
    if not root:
        raise UsageError("--kitti-root is required (or [paths] kitti_root)")
    out = args.out or cfg["paths"]["cache_dir"]
    src = load_kitti_tracklets(root, args.category, args.split)
    hv = build_hv(src, args.interval)
    n_src, n_hv = sum(len(t) for t in src), sum(len(t) for t in hv)
    write_kitti_index(out, hv, root, args.category, args.split, args.interval)
    print(f"tracklets: {len(src)} -> {len(hv)}")
    print(f"frames: {n_src} -> {n_hv} ({'conserved' if n_src == n_hv else 'NOT conserved'})")
    print(f"index: {Path(out) / 'index.jsonl'}")
    if n_src != n_hv:
        raise RuntimeError("frame count changed while building HV tracklets")


def _cmd_synth(args, cfg):
    sc = cfg["synth"]
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    if args.n_frames is not None:
        sc = dataclasses.replace(sc, n_frames=args.n_frames)
    out = args.out or cfg["paths"]["cache_dir"]
    data = generate_dataset(sc, args.n_tracklets)
    write_synth_index(out, data, extra={"synth": {k: _format_value(v) for k, v in dataclasses.asdict(sc).items()}})
    print(f"tracklets: {len(data)}")
    print(f"frames: {sum(len(t) for t in data)}")
    print(f"index: {Path(out) / 'index.jsonl'}")


def _data_dir(args, cfg) -> str:
    return args.data or cfg["paths"]["cache_dir"]


def _cmd_train(args, cfg):
    mc, tc = cfg["model"], cfg["train"]
    if args.seed is not None:
        tc = dataclasses.replace(tc, seed=args.seed)
    if args.steps is not None:
        tc = dataclasses.replace(tc, steps=args.steps)
    tcfg = cfg["track"]
    header, data = load_cache(_data_dir(args, cfg))
    tcfg = dataclasses.replace(tcfg, interval=int(header.get("interval", 1)))
    out = Path(args.out or cfg["paths"]["checkpoint"])
    t0 = time.perf_counter()
    model, history = train(mc, tc, data, tcfg)
    save_checkpoint(out, model, meta={"train": dataclasses.asdict(tc), "data": str(_data_dir(args, cfg)),
                                      "steps": len(history)})
    loss_log = Path(args.loss_log) if args.loss_log else out.with_suffix(".loss.tsv")
    loss_log.write_text(format_loss_log(history))
    print(f"steps: {len(history)}")
    print(f"loss: {history[0]['total']:.4f} -> {history[-1]['total']:.4f}")
    print(f"seconds: {time.perf_counter() - t0:.1f}")
    print(f"checkpoint: {out}")
    print(f"loss log: {loss_log}")


def _cmd_track(args, cfg):
    header, data = load_cache(_data_dir(args, cfg))
    built = int(header.get("interval", 1))
    interval = args.interval or built
    if interval != built:
        if built != 1:
            raise UsageError(f"cache was built at interval {built}; cannot re-sample it at interval {interval}")
        data = build_hv(data, interval)
    tcfg = dataclasses.replace(cfg["track"], interval=interval)
    if args.seed is not None:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    ckpt = args.checkpoint or cfg["paths"]["checkpoint"]
    model, _ = load_checkpoint(ckpt, k_test=args.k_test)
    runs = []
    for t in data:
        runs.append(run_tracklet(t, model, tcfg))
        log.info("%s: %d frames", t.name, len(t))
    report = Path(args.report or Path(cfg["paths"]["report_dir"]) / "report.txt")
    runs_path = Path(args.runs) if args.runs else report.with_name("runs.tsv")
    write_runs(runs_path, runs)
    rep = evaluate(runs)
    write_report(report, rep)
    n_in = sum(len(t) for t in data)
    n_skipped = sum(r.skipped_frames for r in runs if r.skipped is not None)
    print(f"k_test: {args.k_test}  interval: {interval}")
    print(f"frames: {rep.n_frames} of {n_in} ({n_skipped} in skipped tracklets)")
    print(f"success: {rep.success:.2f}  precision: {rep.precision:.2f}  fps: {rep.fps:.1f}")
    print(f"runs: {runs_path}")
    print(f"report: {report}")


def _cmd_eval(args, cfg):
    rep = evaluate(read_runs(args.runs))
    if args.report:
        write_report(args.report, rep)
        print(f"success: {rep.success:.2f}  precision: {rep.precision:.2f}")
        print(f"report: {args.report}")
    else:
        print(format_report(rep), end="")


def _cmd_plot(args, cfg):
    for p in plot_report(args.report, args.out):
        print(p)


def _cmd_stats(args, cfg):
    _, data = load_cache(_data_dir(args, cfg))
    st = motion_stats(data, args.interval)
    for k, v in st.items():
        label = k if isinstance(k, str) else f"{k * 100:g}%"
        print(f"{label}\t{v:.3f}")


# --------------------------------------------------------------------------- parser


def _k_test(text: str) -> int:
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 1 <= k <= 8:
        raise argparse.ArgumentTypeError("k-test must be between 1 and 8")
    return k


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hvtrack", description="Point-cloud single object tracking over frame intervals.")
    p.add_argument("--config", help="INI config file (see `hvtrack config`)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("config", help="print the default config")
    s.add_argument("--out", help="write to this file instead of stdout")
    s.set_defaults(func=_cmd_config)

    s = sub.add_parser("build-hv", help="index KITTI tracklets sampled at a frame interval")
    s.add_argument("--kitti-root")
    s.add_argument("--category", required=True, choices=CATEGORIES)
    s.add_argument("--interval", type=_positive, default=1)
    s.add_argument("--split", choices=tuple(SPLITS), default="test")
    s.add_argument("--out", help="cache directory")
    s.set_defaults(func=_cmd_build_hv)

    s = sub.add_parser("synth", help="generate synthetic tracklets into a cache directory")
    s.add_argument("--out", help="cache directory")
    s.add_argument("--n-tracklets", type=_positive, default=8)
    s.add_argument("--n-frames", type=_positive)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("train", help="train a model on a cache")
    s.add_argument("--data", help="cache directory")
    s.add_argument("--out", help="checkpoint path")
    s.add_argument("--loss-log", help="default: <checkpoint>.loss.tsv")
    s.add_argument("--steps", type=_positive)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("track", help="one-pass tracking over a cache")
    s.add_argument("--checkpoint")
    s.add_argument("--data", help="cache directory")
    s.add_argument("--interval", type=_positive, help="default: the cache's interval")
    s.add_argument("--k-test", type=_k_test, default=6, help="memory size at test time (1-8, default 6)")
    s.add_argument("--report", help="report path (default: <report_dir>/report.txt)")
    s.add_argument("--runs", help="run records path (default: runs.tsv next to the report)")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_cmd_track)

    s = sub.add_parser("eval", help="recompute metrics from run records")
    s.add_argument("--runs", required=True)
    s.add_argument("--report")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("plot", help="plot the curves of a report")
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_plot)

    s = sub.add_parser("stats", help="xy motion quantiles at a frame interval")
    s.add_argument("--data", help="cache directory")
    s.add_argument("--interval", type=_positive, default=1)
    s.set_defaults(func=_cmd_stats)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (UsageError, ConfigError) as e:
        parser.print_usage(sys.stderr)
        print(f"hvtrack: error: {e}", file=sys.stderr)
        return 2
    except (IngestionError, RecordError, TrainingError, FileNotFoundError, OSError, ValueError, RuntimeError) as e:
        print(f"hvtrack: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
