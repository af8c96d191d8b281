"""Score histograms and FAR/FRR curves for inspecting score files."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import STREAM_LABELS, STREAMS, read_scores  # noqa: E402
from .protocol import TRIAL_TYPES, TrialType  # noqa: E402

log = logging.getLogger(__name__)

TYPE_LABELS = {
    TrialType.T1: "T1 target bona fide",
    TrialType.T2: "T2 non-target bona fide",
    TrialType.T3: "T3 target spoof",
    TrialType.T4: "T4 non-target spoof",
}


def far_frr_curve(positive, negative):
    """FAR and FRR at every distinct score, accepting when score >= t."""
    pos = np.sort(np.asarray(positive, dtype=np.float64))
    neg = np.sort(np.asarray(negative, dtype=np.float64))
    thresholds = np.unique(np.concatenate([pos, neg]))
    far = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size
    return thresholds, far, frr


def _histogram(by_type: dict, stream: str, path: Path, source: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    values = [v for v in by_type.values() if v]
    lo = min(min(v) for v in values)
    hi = max(max(v) for v in values)
    bins = np.linspace(lo, hi if hi > lo else lo + 1.0, 41)
    for t in TRIAL_TYPES:
        if not by_type[t]:
            log.warning("%s: no %s trials, omitted from %s histogram", source, t.value, stream)
            continue
        ax.hist(by_type[t], bins=bins, histtype="step", density=True, label=TYPE_LABELS[t])
    ax.set_xlabel(f"{STREAM_LABELS[stream]} score")
    ax.set_ylabel("density")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def _curves(by_type: dict, stream: str, path: Path, source: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = by_type[TrialType.T1]
    drawn = False
    for neg_type, style in ((TrialType.T2, "-"), (TrialType.T3, "--")):
        neg = by_type[neg_type]
        if not pos or not neg:
            log.warning("%s: %s curve against %s omitted (no trials)", source, stream, neg_type.value)
            continue
        t, far, frr = far_frr_curve(pos, neg)
        ax.plot(t, far, style, label=f"FAR vs {neg_type.value}")
        ax.plot(t, frr, style, label=f"FRR ({TrialType.T1.value} vs {neg_type.value})")
        drawn = True
    ax.set_xlabel(f"{STREAM_LABELS[stream]} threshold")
    ax.set_ylabel("error rate")
    if drawn:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def emit_plots(score_files: Sequence, out_dir) -> list:
    """Write a histogram and a FAR/FRR curve per score stream for each file.

    Output names are ``<stem>_<stream>_hist.png`` and ``<stem>_<stream>_far_frr.png``
    where ``stem`` is the score file's parent directory names joined with
    underscores, so runs with the standard layout do not collide.
    Returns the written paths in a fixed order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for score_file in score_files:
        score_file = Path(score_file)
        records = read_scores(score_file)
        if not records:
            raise ValueError(f"{score_file}: no score records")
        stem = _stem(score_file)
        for stream in STREAMS:
            by_type = {t: [] for t in TRIAL_TYPES}
            for r in records:
                by_type[r.trial.trial_type].append(r.stream(stream))
            hist = out_dir / f"{stem}_{stream}_hist.png"
            curve = out_dir / f"{stem}_{stream}_far_frr.png"
            _histogram(by_type, stream, hist, str(score_file))
            _curves(by_type, stream, curve, str(score_file))
            written += [hist, curve]
    return written


def _stem(score_file: Path) -> str:
    parts = [p for p in score_file.parent.parts[-2:] if p not in ("", ".", "/")]
    parts.append(score_file.stem)
    return "_".join(parts)
