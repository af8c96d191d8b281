"""Score extraction, EER metrics and the summary report table."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .backend import EmbeddingTriple, stack_embeddings
from .protocol import TRIAL_TYPES, TrialPair, TrialType

log = logging.getLogger(__name__)

STREAMS = ("full", "asv", "cm")
METRICS = ("sasv_eer", "sv_eer", "spf_eer")
# positive type, negative types
SUBSETS = {
    "sv_eer": (TrialType.T1, (TrialType.T2,)),
    "spf_eer": (TrialType.T1, (TrialType.T3,)),
    "sasv_eer": (TrialType.T1, (TrialType.T2, TrialType.T3)),
}


def compute_eer(positive_scores, negative_scores):
    """Equal error rate by a sweep over every distinct score.

    A trial is accepted when score >= t. At each candidate t, FAR is the
    fraction of accepted negatives and FRR the fraction of rejected
    positives. The operating point minimises |FAR - FRR| and the EER is
    (FAR + FRR) / 2 there. When two thresholds tie (one on each side of the
    crossing) their EER values are averaged and the lower threshold returned.

    Returns (eer in [0, 1], threshold).
    """
    pos = np.sort(np.asarray(positive_scores, dtype=np.float64))
    neg = np.sort(np.asarray(negative_scores, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise ValueError("compute_eer needs non-empty positive and negative score lists")
    thresholds = np.unique(np.concatenate([pos, neg]))
    n_accepted = neg.size - np.searchsorted(neg, thresholds, side="left")
    n_rejected = np.searchsorted(pos, thresholds, side="left")
    # |FAR - FRR| scaled by n_pos * n_neg, in integers so that ties are exact
    gap = np.abs(n_accepted * pos.size - n_rejected * neg.size)
    best = np.flatnonzero(gap == gap.min())
    far = n_accepted[best] / neg.size
    frr = n_rejected[best] / pos.size
    eer = float(np.mean((far + frr) / 2))
    return eer, float(thresholds[best[0]])


@dataclass(frozen=True)
class ScoreRecord:
    trial: TrialPair
    full_score: float
    asv_score: float
    cm_score: float

    def stream(self, name: str) -> float:
        return {"full": self.full_score, "asv": self.asv_score, "cm": self.cm_score}[name]

    def to_line(self) -> str:
        t = self.trial
        return (f"{t.enrol_id} {t.test_id} {t.trial_type.value} "
                f"{self.full_score!r} {self.asv_score!r} {self.cm_score!r}")


@dataclass
class EvalReport:
    """EERs in percent keyed by (stream, metric), plus trial counts per type."""

    values: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, stream: str, metric: str) -> float:
        return self.values[(stream, metric)]

    def flat(self, prefix: str = "") -> dict:
        return {f"{prefix}{s}.{m}": self.values[(s, m)] for s in STREAMS for m in METRICS}

    @classmethod
    def mean(cls, reports: Sequence["EvalReport"]) -> "EvalReport":
        if not reports:
            raise ValueError("cannot average zero reports")
        values = {k: math.fsum(r.values[k] for r in reports) / len(reports) for k in reports[0].values}
        return cls(values, dict(reports[0].counts))


def evaluate(records: Sequence[ScoreRecord]) -> EvalReport:
    by_type = {t: [] for t in TRIAL_TYPES}
    for r in records:
        by_type[r.trial.trial_type].append(r)
    missing = [t.value for t in (TrialType.T1, TrialType.T2, TrialType.T3) if not by_type[t]]
    if missing:
        raise ValueError(f"evaluation needs trials of types {missing}")
    if by_type[TrialType.T4]:
        log.info("dropping %d type-T4 trials from assessment", len(by_type[TrialType.T4]))
    values = {}
    for stream in STREAMS:
        scores = {t: [r.stream(stream) for r in by_type[t]] for t in TRIAL_TYPES}
        for metric, (pos, negs) in SUBSETS.items():
            neg = [s for t in negs for s in scores[t]]
            values[(stream, metric)] = 100.0 * compute_eer(scores[pos], neg)[0]
    return EvalReport(values, {t.value: len(by_type[t]) for t in TRIAL_TYPES})


@torch.no_grad()
def embed_utterances(bundle, bank, ids, chunk: int = 512):
    """ASV embeddings, CM embeddings and bona fide logits for ``ids``."""
    ids = list(ids)
    asv, cm, bf = [], [], []
    for start in range(0, len(ids), chunk):
        sig = bank.batch(ids[start:start + chunk])
        asv.append(bundle.asv(sig))
        e_cm, logits = bundle.cm(sig)
        cm.append(e_cm)
        bf.append(logits[:, 0])
    if not ids:
        return {}
    asv, cm, bf = torch.cat(asv), torch.cat(cm), torch.cat(bf)
    return {u: (asv[i], cm[i], bf[i]) for i, u in enumerate(ids)}


@torch.no_grad()
def score_trials(bundle, trials: Sequence[TrialPair], bank, cache=None) -> list:
    """Score each trial with the full system and both sub-systems, order kept.

    The CM score is the bona fide logit of the test utterance alone.
    """
    ids = sorted({t.enrol_id for t in trials} | {t.test_id for t in trials})
    missing = [i for i in ids if i not in bank]
    if missing:
        raise KeyError(f"unknown utterance id {missing[0]}")
    emb = cache if cache is not None else embed_utterances(bundle, bank, ids)
    if not trials:
        return []
    enr = torch.stack([emb[t.enrol_id][0] for t in trials])
    tst = torch.stack([emb[t.test_id][0] for t in trials])
    cm_e = torch.stack([emb[t.test_id][1] for t in trials])
    cm_s = torch.stack([emb[t.test_id][2] for t in trials])
    full = bundle.backend(stack_embeddings(EmbeddingTriple(enr, tst, cm_e)))
    asv = torch.nn.functional.cosine_similarity(enr, tst, dim=-1).clamp(-1.0, 1.0)
    return [
        ScoreRecord(t, float(f), float(a), float(c))
        for t, f, a, c in zip(trials, full.tolist(), asv.tolist(), cm_s.tolist())
    ]


def write_scores(records: Sequence[ScoreRecord], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(r.to_line() + "\n" for r in records), encoding="utf-8", newline="\n")


def read_scores(path) -> list:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        try:
            trial = TrialPair(fields[0], fields[1], TrialType(fields[2]))
            records.append(ScoreRecord(trial, float(fields[3]), float(fields[4]), float(fields[5])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return records


CONDITION_LABELS = {"base": "Base", "base_aux": "Base+Aux", "base_aux_bf": "Base+Aux(bona fide)"}
MODE_LABELS = {"fixed": "Fixed", "joint": "Joint"}
STREAM_LABELS = {"full": "Full", "asv": "ASV", "cm": "CM"}
METRIC_LABELS = {"sasv_eer": "SASV-EER", "sv_eer": "SV-EER", "spf_eer": "SPF-EER"}
MISSING = "—"


def report_table(reports: dict) -> str:
    """Render {(mode, condition): EvalReport} as a text table.

    Rows follow condition order base, base_aux, base_aux_bf and within each,
    fixed before joint; only rows present in ``reports`` are printed. Any
    metric absent from a report prints as an em dash.
    """
    conditions = [c for c in CONDITION_LABELS if any(k[1] == c for k in reports)]
    conditions += sorted({k[1] for k in reports} - set(conditions))
    columns = [f"{STREAM_LABELS[s]}:{METRIC_LABELS[m]}" for s in STREAMS for m in METRICS]
    header = ["condition", "mode"] + columns
    rows = []
    for cond in conditions:
        for mode in sorted({k[0] for k in reports if k[1] == cond}, key=lambda m: (m != "fixed", m)):
            report = reports[(mode, cond)]
            cells = []
            for s in STREAMS:
                for m in METRICS:
                    v = None if report is None else report.values.get((s, m))
                    cells.append(MISSING if v is None else f"{v:.2f}")
            rows.append([cond, mode] + cells)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict:
    """Inverse of :func:`report_table`; missing cells come back as None."""
    lines = [l for l in text.splitlines() if l.strip()]
    header = lines[0].split()
    keys = []
    for col in header[2:]:
        stream, metric = col.split(":")
        keys.append(({v: k for k, v in STREAM_LABELS.items()}[stream],
                     {v: k for k, v in METRIC_LABELS.items()}[metric]))
    out = {}
    for line in lines[1:]:
        cells = line.split()
        out[(cells[1], cells[0])] = {
            k: None if c == MISSING else float(c) for k, c in zip(keys, cells[2:])
        }
    return out


def write_sidecar(reports: dict, path) -> None:
    """Flat ``mode.condition.stream.metric = value`` lines, sorted by key."""
    flat = {}
    for (mode, cond), report in reports.items():
        if report is not None:
            flat.update(report.flat(f"{mode}.{cond}."))
    Path(path).write_text("".join(f"{k} = {flat[k]!r}\n" for k in sorted(flat)), encoding="utf-8", newline="\n")


def read_sidecar(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, value = line.split(" = ")
            out[key] = float(value)
    return out
