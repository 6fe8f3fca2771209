"""One-pass-evaluation Success / Precision."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import center_distance, iou3d
from .tracker import TrackRun

IOU_THRESHOLDS = np.linspace(0.0, 1.0, 21)
DIST_THRESHOLDS = np.linspace(0.0, 2.0, 21)


def success_curve(ious, thresholds=IOU_THRESHOLDS) -> np.ndarray:
    ious = np.asarray(ious, dtype=float)
    if ious.size == 0:
        raise ValueError("success needs at least one frame")
    return (ious[None, :] > np.asarray(thresholds)[:, None]).mean(axis=1)


def precision_curve(dists, thresholds=DIST_THRESHOLDS) -> np.ndarray:
    dists = np.asarray(dists, dtype=float)
    if dists.size == 0:
        raise ValueError("precision needs at least one frame")
    return (dists[None, :] < np.asarray(thresholds)[:, None]).mean(axis=1)


def success_score(ious, thresholds=IOU_THRESHOLDS) -> float:
    """Mean over IoU thresholds of the fraction of frames with IoU > threshold, in percent."""
    return float(success_curve(ious, thresholds).mean() * 100.0)


def precision_score(dists, thresholds=DIST_THRESHOLDS) -> float:
    """Mean over distance thresholds of the fraction of frames closer than the threshold, in percent."""
    return float(precision_curve(dists, thresholds).mean() * 100.0)


@dataclass
class RunScore:
    name: str
    category: str
    ious: np.ndarray
    dists: np.ndarray
    success: float
    precision: float
    wall_time: float

    @property
    def n_frames(self) -> int:
        return len(self.ious)


@dataclass
class OPEReport:
    success: float
    precision: float
    runs: list[RunScore]
    frames_per_category: dict[str, int]
    category_scores: dict[str, tuple[float, float]]
    fps: float
    skipped: list[tuple[str, str, int]] = field(default_factory=list)
    success_rates: np.ndarray | None = None    # pooled curve over IOU_THRESHOLDS
    precision_rates: np.ndarray | None = None  # pooled curve over DIST_THRESHOLDS

    @property
    def n_frames(self) -> int:
        return sum(r.n_frames for r in self.runs)


def _weighted(scores: Sequence[float], weights: Sequence[int]) -> float:
    w = np.asarray(weights, dtype=float)
    return float(np.dot(np.asarray(scores, dtype=float), w) / w.sum())


def score_run(run: TrackRun) -> RunScore:
    ious = np.array([iou3d(p, g) for p, g in zip(run.pred_boxes, run.gt_boxes)])
    dists = np.array([center_distance(p, g) for p, g in zip(run.pred_boxes, run.gt_boxes)])
    return RunScore(run.name, run.category, ious, dists, success_score(ious), precision_score(dists),
                    float(sum(run.times)))


def evaluate(runs: Sequence[TrackRun]) -> OPEReport:
    """Score every run; aggregates are frame-count weighted means of per-run scores."""
    skipped = [(r.name, r.category, r.skipped_frames) for r in runs if r.skipped is not None]
    scored = [score_run(r) for r in runs if r.skipped is None and len(r) > 0]
    if not scored:
        raise ValueError("no tracked runs to evaluate")
    n = [s.n_frames for s in scored]
    by_cat: dict[str, list[RunScore]] = defaultdict(list)
    for s in scored:
        by_cat[s.category].append(s)
    cat_scores = {
        c: (_weighted([s.success for s in v], [s.n_frames for s in v]),
            _weighted([s.precision for s in v], [s.n_frames for s in v]))
        for c, v in sorted(by_cat.items())
    }
    total_time = sum(s.wall_time for s in scored)
    all_ious = np.concatenate([s.ious for s in scored])
    all_dists = np.concatenate([s.dists for s in scored])
    return OPEReport(
        success=_weighted([s.success for s in scored], n),
        precision=_weighted([s.precision for s in scored], n),
        runs=scored,
        frames_per_category={c: sum(s.n_frames for s in v) for c, v in sorted(by_cat.items())},
        category_scores=cat_scores,
        fps=sum(n) / total_time if total_time > 0 else float("inf"),
        skipped=skipped,
        success_rates=success_curve(all_ious),
        precision_rates=precision_curve(all_dists),
    )


# --------------------------------------------------------------------------- report text
#
# key: value lines, then the threshold curves and a per-tracklet table:
#   [success_curve]      <threshold>\t<rate>
#   [precision_curve]    <threshold>\t<rate>
#   [categories]         <category>\t<frames>\t<success>\t<precision>
#   [tracklets]          <name>\t<category>\t<frames>\t<success>\t<precision>
#   [skipped]            <name>\t<category>\t<frames>


def format_report(rep: OPEReport) -> str:
    out = [
        "# hvtrack OPE report v1",
        f"success: {rep.success:.2f}",
        f"precision: {rep.precision:.2f}",
        f"frames: {rep.n_frames}",
        f"tracklets: {len(rep.runs)}",
        f"skipped: {len(rep.skipped)}",
        f"fps: {rep.fps:.2f}",
        "",
        "[success_curve]",
    ]
    out += [f"{t:.2f}\t{v:.6f}" for t, v in zip(IOU_THRESHOLDS, rep.success_rates)]
    out += ["", "[precision_curve]"]
    out += [f"{t:.2f}\t{v:.6f}" for t, v in zip(DIST_THRESHOLDS, rep.precision_rates)]
    out += ["", "[categories]"]
    out += [f"{c}\t{rep.frames_per_category[c]}\t{s:.2f}\t{p:.2f}" for c, (s, p) in rep.category_scores.items()]
    out += ["", "[tracklets]"]
    out += [f"{r.name}\t{r.category}\t{r.n_frames}\t{r.success:.2f}\t{r.precision:.2f}" for r in rep.runs]
    out += ["", "[skipped]"]
    out += [f"{name}\t{cat}\t{n}" for name, cat, n in rep.skipped]
    return "\n".join(out) + "\n"


def write_report(path, rep: OPEReport):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_report(rep))


def parse_report(text: str) -> dict:
    """Inverse of :func:`format_report`, enough for plotting."""
    info: dict = {"sections": defaultdict(list)}
    section = None
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            continue
        if section is None:
            key, _, val = line.partition(":")
            info[key.strip()] = float(val)
        else:
            info["sections"][section].append(line.split("\t"))
    return info


def plot_report(report_path, out_dir) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    info = parse_report(Path(report_path).read_text())
    sec = info["sections"]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, xlabel, ylabel, fname in [
        ("success_curve", "IoU threshold", "success rate", "success.png"),
        ("precision_curve", "center distance threshold (m)", "precision rate", "precision.png"),
    ]:
        xs = [float(r[0]) for r in sec[key]]
        ys = [float(r[1]) for r in sec[key]]
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(xs, ys, marker="o", ms=3)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_dir / fname, dpi=100)
        plt.close(fig)
        paths.append(out_dir / fname)
    cats = sec["categories"]
    fig, ax = plt.subplots(figsize=(5, 4))
    x = np.arange(len(cats))
    ax.bar(x - 0.2, [float(r[2]) for r in cats], 0.4, label="Success")
    ax.bar(x + 0.2, [float(r[3]) for r in cats], 0.4, label="Precision")
    ax.set_xticks(x, [r[0] for r in cats])
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "categories.png", dpi=100)
    plt.close(fig)
    paths.append(out_dir / "categories.png")
    return paths
