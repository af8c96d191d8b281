"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 4 to 9 share two end-to-end ``reproduce-all`` runs with the shipped
desk configuration, so the whole file takes several minutes on one core.
"""

import os
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from conftest import finite_difference_error
from scipy.stats import chisquare

from sasv.backend import Backend, BackendConfig, oc_softmax_loss
from sasv.encoders import AttentiveStatsPool, angular_prototypical_loss, cm_pretrain_loss
from sasv.evaluation import compute_eer, read_sidecar
from sasv.protocol import FIXED_PROFILE, JOINT_PROFILE, TRIAL_TYPES, TrialIndex, TrialType, sample_batch
from sasv.synthgen import CorpusSpec, generate_corpus

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.conf"
SEEDS = (1, 2, 3, 4, 5)
CONDITIONS = ("base", "base_aux", "base_aux_bf")


def reproduce_all(out: Path) -> float:
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "sasv", "reproduce-all", "--config", str(DESK_CONFIG), "--out", str(out)],
        capture_output=True, text=True,
    )
    elapsed = time.perf_counter() - start
    assert proc.returncode == 0, proc.stderr
    return elapsed


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("reproduce_a")
    return out, reproduce_all(out)


@pytest.fixture(scope="module")
def second_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("reproduce_b")
    return out, reproduce_all(out)


def run_report(out: Path, experiment: str, seed: int) -> dict:
    return read_sidecar(out / "runs" / experiment / str(seed) / "report.txt")


# -- 1 ------------------------------------------------------------------------

def exhaustive_eer(pos, neg) -> float:
    """All thresholds, integer arithmetic; minimal-gap EERs averaged."""
    n_pos, n_neg = len(pos), len(neg)
    best, picked = None, []
    for t in sorted(set(pos) | set(neg)):
        accepted = sum(1 for s in neg if s >= t)
        rejected = sum(1 for s in pos if s < t)
        gap = abs(accepted * n_pos - rejected * n_neg)
        point = (accepted * n_pos + rejected * n_neg) / (2 * n_pos * n_neg)
        if best is None or gap < best:
            best, picked = gap, [point]
        elif gap == best:
            picked.append(point)
    return sum(picked) / len(picked)


def test_criterion_1_eer_oracle(criterion):
    rng = random.Random(20240601)
    worst, spent = 0.0, 0.0
    for _ in range(1000):
        n_pos, n_neg = rng.randint(1, 50), rng.randint(1, 50)
        if rng.random() < 0.3:
            pos = [rng.randint(0, 8) / 8 for _ in range(n_pos)]
            neg = [rng.randint(0, 8) / 8 for _ in range(n_neg)]
        else:
            shift = rng.uniform(-1, 2)
            pos = [rng.gauss(shift, 1) for _ in range(n_pos)]
            neg = [rng.gauss(0, 1) for _ in range(n_neg)]
        start = time.perf_counter()
        eer = compute_eer(pos, neg)[0]
        spent += time.perf_counter() - start
        worst = max(worst, abs(eer - exhaustive_eer(pos, neg)))
    ok = worst <= 1e-12 and spent < 10.0
    criterion(1, "EER oracle equivalence", ok, f"max |diff| {worst:.1e} over 1000 instances, {spent:.2f}s")


# -- 2 ------------------------------------------------------------------------

def _pool_case(g):
    t, f, a = (int(torch.randint(lo, hi, (1,), generator=g)) for lo, hi in ((1, 9), (1, 6), (1, 5)))
    pool = AttentiveStatsPool(f, a).double()
    frames = torch.randn(t, f, dtype=torch.float64, generator=g).requires_grad_()
    weights = torch.randn(2 * f, dtype=torch.float64, generator=g)
    return lambda: (pool(frames) * weights).sum(), [frames, *pool.parameters()]


def _oc_case(g):
    n = int(torch.randint(1, 10, (1,), generator=g))
    s = (torch.rand(n, dtype=torch.float64, generator=g) * 2 - 1).requires_grad_()
    target = torch.rand(n, generator=g) < 0.5
    alpha = float(torch.rand((), generator=g) * 30 + 1)
    m_neg = float(torch.rand((), generator=g) * 0.8 - 0.4)
    m_pos = m_neg + float(torch.rand((), generator=g) * 0.5 + 0.05)
    return lambda: oc_softmax_loss(s, target, alpha, m_pos, m_neg), [s]


def _wce_case(g):
    n = int(torch.randint(1, 12, (1,), generator=g))
    logits = (3 * torch.randn(n, 2, dtype=torch.float64, generator=g)).requires_grad_()
    labels = torch.randint(0, 2, (n,), generator=g)
    weights = (torch.rand(2, dtype=torch.float64, generator=g) * 9 + 0.1).tolist()
    return lambda: cm_pretrain_loss(logits, labels, weights), [logits]


def _ap_case(g):
    n, d = int(torch.randint(2, 7, (1,), generator=g)), int(torch.randint(2, 6, (1,), generator=g))
    emb = torch.randn(n, 2, d, dtype=torch.float64, generator=g).requires_grad_()
    w = (torch.rand((), dtype=torch.float64, generator=g) * 15 + 0.5).requires_grad_()
    b = torch.randn((), dtype=torch.float64, generator=g).requires_grad_()
    return lambda: angular_prototypical_loss(emb, w, b), [emb, w, b]


def _backend_case(g):
    pick = lambda lo, hi: int(torch.randint(lo, hi, (1,), generator=g))  # noqa: E731
    cfg = BackendConfig(embed_dim=pick(4, 10), channels=(pick(2, 5), pick(2, 5), pick(2, 4)),
                        pooled_length=pick(2, 5), hidden=pick(3, 7), out_dim=pick(2, 6))
    backend = Backend(cfg).double()
    x = torch.randn(4, 3, cfg.embed_dim, dtype=torch.float64, generator=g).requires_grad_()
    target = torch.tensor([True, False, True, False])
    return lambda: oc_softmax_loss(backend(x), target, cfg.alpha, cfg.m_pos, cfg.m_neg), [x, *backend.parameters()]


def test_criterion_2_gradients(criterion):
    cases = {"oc_softmax": _oc_case, "attentive_pool": _pool_case, "weighted_ce": _wce_case,
             "angular_prototypical": _ap_case, "backend_path": _backend_case}
    start = time.perf_counter()
    worst = {}
    for k, (name, make) in enumerate(cases.items()):
        errors = []
        for config in range(20):
            torch.manual_seed(1000 * k + config)
            fn, tensors = make(torch.Generator().manual_seed(1000 * k + config))
            errors.append(finite_difference_error(fn, tensors))
        worst[name] = max(errors)
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(2, "gradient correctness", ok, f"worst relative error: {detail}; 20 configs each, {elapsed:.1f}s")


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_protocol_fidelity(criterion):
    corpus = generate_corpus(CorpusSpec("base", 20, 258, 2280, 6, seed=21, attack_set="A"))
    index = TrialIndex.from_utterances(corpus.utterances)
    rng = np.random.default_rng(3)
    details, ok = [], True
    for name, profile, exact in (("fixed", FIXED_PROFILE, (10, 5, 5, 0)), ("joint", JOINT_PROFILE, (5, 5, 5, 5))):
        totals = dict.fromkeys(TRIAL_TYPES, 0)
        split_ok = True
        for _ in range(10_000):
            batch = sample_batch(index, profile, 20, rng)
            counts = [sum(p.trial_type is t for p in batch) for t in TRIAL_TYPES]
            split_ok &= tuple(counts) == exact
            for t, c in zip(TRIAL_TYPES, counts):
                totals[t] += c
        active = [t for t in TRIAL_TYPES if profile.weights[t] > 0]
        observed = [totals[t] for t in active]
        expected = [profile.weights[t] * 200_000 for t in active]
        p_value = chisquare(observed, expected).pvalue
        no_t4 = name == "joint" or totals[TrialType.T4] == 0
        ok &= split_ok and p_value > 0.001 and no_t4
        details.append(f"{name}: split {'/'.join(map(str, exact))} {'exact' if split_ok else 'violated'}, "
                       f"chi-square p={p_value:.3f}, T4={totals[TrialType.T4]}")
    criterion(3, "protocol fidelity", ok, "; ".join(details))


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_freeze_contract(criterion, first_run):
    out, _ = first_run
    pre = {part: (out / "pretrained" / f"{part}.ckpt").read_bytes() for part in ("asv", "cm")}
    mismatches = []
    for cond in CONDITIONS:
        for seed in SEEDS:
            bundle = out / "runs" / f"fixed_{cond}" / str(seed) / "bundle"
            for part in ("asv", "cm"):
                if (bundle / f"{part}.ckpt").read_bytes() != pre[part]:
                    mismatches.append(f"{cond}/{seed}/{part}")
    criterion(4, "freeze contract", not mismatches,
              f"{len(CONDITIONS) * len(SEEDS) * 2 - len(mismatches)}/30 fixed-mode sub-system checkpoints byte-identical"
              + (f"; differ: {mismatches}" if mismatches else ""))


# -- 5 ------------------------------------------------------------------------

def test_criterion_5_fixed_cm_speaker_blindness(criterion, first_run):
    out, _ = first_run
    values = [run_report(out, "fixed_base", s)["cm.sv_eer"] for s in SEEDS]
    mean = float(np.mean(values))
    criterion(5, "fixed CM SV-EER in [45, 55]", 45.0 <= mean <= 55.0, f"5-seed mean {mean:.2f}%")


# -- 6 ------------------------------------------------------------------------

def test_criterion_6_joint_asv_spoof_trend(criterion, first_run):
    out, _ = first_run
    pairs = [(run_report(out, "fixed_base", s)["asv.spf_eer"], run_report(out, "joint_base", s)["asv.spf_eer"])
             for s in SEEDS]
    wins = sum(joint < fixed for fixed, joint in pairs)
    detail = ", ".join(f"s{s}: {f:.2f}->{j:.2f}" for s, (f, j) in zip(SEEDS, pairs))
    criterion(6, "joint ASV SPF-EER < fixed in >= 4/5 seeds (base)", wins >= 4, f"{wins}/5 seeds; {detail}")


# -- 7 ------------------------------------------------------------------------

def test_criterion_7_tandem_trend_aux_bonafide(criterion, first_run):
    out, _ = first_run
    kv = read_sidecar(out / "report.kv")
    fixed = kv["fixed.base_aux_bf.full.sasv_eer"]
    joint = kv["joint.base_aux_bf.full.sasv_eer"]
    reduction = 100.0 * (fixed - joint) / fixed
    criterion(7, "joint full SASV-EER < fixed (base_aux_bf)", joint < fixed,
              f"fixed {fixed:.2f}% -> joint {joint:.2f}%, {reduction:.1f}% relative reduction")


# -- 8 ------------------------------------------------------------------------

def test_criterion_8_determinism(criterion, first_run, second_run):
    a, _ = first_run
    b, _ = second_run
    files = sorted(p.relative_to(a) for p in a.glob("runs/*/*/scores.txt"))
    files += [Path("report.txt"), Path("report.kv")]
    differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    ok = len(files) == 32 and not differ
    criterion(8, "reproduce-all determinism", ok,
              f"{len(files) - len(differ)}/{len(files)} score files and summary tables byte-identical")


# -- 9 ------------------------------------------------------------------------

def test_criterion_9_budget(criterion, first_run):
    _, elapsed = first_run
    cores = os.cpu_count()
    criterion(9, "reproduce-all under 30 minutes", elapsed < 30 * 60,
              f"{elapsed / 60:.1f} min on {cores} CPU core{'s' if cores != 1 else ''}")
