"""Pre-training of the sub-systems and fixed or joint SASV training."""

from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import checkpoint
from .backend import Backend, BackendConfig, EmbeddingTriple, oc_softmax_loss, stack_embeddings
from .bundle import ModelBundle, save_asv, save_backend, save_bundle, save_cm
from .config import ExperimentConfig, PretrainConfig, TrainConfig, save_config
from .encoders import ASVEncoder, CMEncoder, EncoderConfig, asv_pretrain_loss, cm_pretrain_loss
from .evaluation import EvalReport, embed_utterances, evaluate, score_trials, write_scores
from .protocol import (
    FIXED_PROFILE,
    JOINT_PROFILE,
    TrialIndex,
    TrialType,
    build_eval_trials,
    parse_protocol,
    sample_batch,
    write_protocol,
)
from .synthgen import Corpus, SignalBank, generate_corpus, load_corpus

log = logging.getLogger(__name__)


class OptimisationMode(enum.Enum):
    FIXED = "fixed"
    JOINT = "joint"

    @property
    def profile(self):
        return FIXED_PROFILE if self is OptimisationMode.FIXED else JOINT_PROFILE


class TrainingCondition(enum.Enum):
    BASE_ONLY = "base"
    BASE_PLUS_AUX = "base_aux"
    BASE_PLUS_AUX_BONAFIDE = "base_aux_bf"

    @property
    def uses_aux(self) -> bool:
        return self is not TrainingCondition.BASE_ONLY


class TrainingError(RuntimeError):
    pass


@dataclass
class ExperimentData:
    base: Corpus
    dev: Corpus
    eval: Corpus
    dev_trials: list
    eval_trials: list
    aux: Optional[Corpus] = None
    pretrain: Optional[Corpus] = None
    bank: SignalBank = field(init=False)

    def __post_init__(self):
        corpora = [c for c in (self.pretrain, self.base, self.aux, self.dev, self.eval) if c is not None]
        self.bank = SignalBank(corpora)


def generate_data(cfg: ExperimentConfig, data_dir) -> ExperimentData:
    """Generate every corpus plus dev/eval protocols and write them to ``data_dir``."""
    data_dir = Path(data_dir)
    corpora = {k: generate_corpus(spec, cfg.signal) for k, spec in cfg.corpora.items()}
    for corpus in corpora.values():
        corpus.save(data_dir)
    per_dev = {t: cfg.dev_trials_per_type for t in TrialType}
    per_eval = {t: cfg.eval_trials_per_type for t in TrialType}
    dev_trials = build_eval_trials(corpora["dev"].utterances, per_dev, np.random.default_rng([cfg.protocol_seed, 0]))
    eval_trials = build_eval_trials(corpora["eval"].utterances, per_eval, np.random.default_rng([cfg.protocol_seed, 1]))
    write_protocol(dev_trials, data_dir / "dev.trials")
    write_protocol(eval_trials, data_dir / "eval.trials")
    return ExperimentData(corpora["base"], corpora["dev"], corpora["eval"], dev_trials, eval_trials,
                          corpora["aux"], corpora["pretrain"])


def load_data(cfg: ExperimentConfig, data_dir) -> ExperimentData:
    data_dir = Path(data_dir)
    if not (data_dir / "eval.trials").exists():
        raise FileNotFoundError(f"missing generated data in {data_dir}; run generate-data first")
    corpora = {k: load_corpus(data_dir, spec.name) for k, spec in cfg.corpora.items()}
    return ExperimentData(corpora["base"], corpora["dev"], corpora["eval"],
                          parse_protocol(data_dir / "dev.trials"), parse_protocol(data_dir / "eval.trials"),
                          corpora["aux"], corpora["pretrain"])


def training_index(data: ExperimentData, condition: TrainingCondition, aux_enrolment: bool = True) -> TrialIndex:
    """Trial pools for a training condition.

    Auxiliary spoofed utterances enter only under BASE_PLUS_AUX; auxiliary
    bona fide utterances act as enrolment only when ``aux_enrolment`` is set.
    """
    utterances = list(data.base.utterances)
    if condition.uses_aux:
        if data.aux is None:
            raise TrainingError(f"condition {condition.value} needs the auxiliary corpus")
        utterances += data.aux.utterances
    aux_names = set() if data.aux is None else {u.id for u in data.aux.utterances}
    spoof_filter = None
    if condition is TrainingCondition.BASE_PLUS_AUX_BONAFIDE:
        spoof_filter = lambda u: u.id not in aux_names  # noqa: E731
    enrol_filter = None if aux_enrolment else (lambda u: u.id not in aux_names)
    return TrialIndex.from_utterances(utterances, enrol_filter=enrol_filter, spoof_filter=spoof_filter)


def _seed_all(seed: int) -> None:
    torch.manual_seed(seed)


def pretrain_asv(corpus: Corpus, encoder_cfg: EncoderConfig, cfg: PretrainConfig, seed: int | None = None) -> ASVEncoder:
    """Softmax + angular prototypical training on bona fide utterances."""
    seed = cfg.seed if seed is None else seed
    by_speaker: dict = {}
    for row, u in enumerate(corpus.utterances):
        if not u.is_spoofed:
            by_speaker.setdefault(u.speaker_id, []).append(row)
    speakers = sorted(by_speaker)
    if len(speakers) < 2:
        raise TrainingError("ASV pre-training needs at least 2 speakers")
    thin = [s for s in speakers if len(by_speaker[s]) < 2]
    if thin:
        raise TrainingError(f"speaker {thin[0]} has fewer than 2 bona fide utterances")
    _seed_all(seed)
    asv = ASVEncoder(encoder_cfg, n_speakers=len(speakers))
    if cfg.asv_epochs == 0:
        return asv
    rng = np.random.default_rng([seed, 101])
    n = min(cfg.asv_speakers_per_batch, len(speakers))
    signals = torch.from_numpy(corpus.signals)
    opt = torch.optim.Adam(asv.parameters(), lr=cfg.asv_learning_rate)
    for epoch in range(cfg.asv_epochs):
        total = 0.0
        for _ in range(cfg.asv_batches_per_epoch):
            picked = rng.choice(len(speakers), size=n, replace=False)
            rows = [rng.choice(by_speaker[speakers[k]], size=2, replace=False) for k in picked]
            sig = signals[np.concatenate(rows)]
            emb = asv(sig).reshape(n, 2, -1)
            loss = asv_pretrain_loss(emb, torch.as_tensor(picked), asv)
            opt.zero_grad()
            loss.backward()
            opt.step()
            asv.angleproto.clamp_()
            total += loss.item()
        log.info("asv pretrain epoch %d loss %.4f", epoch + 1, total / cfg.asv_batches_per_epoch)
    return asv


def inverse_frequency_weights(labels) -> tuple:
    labels = np.asarray(labels)
    counts = np.array([(labels == 0).sum(), (labels == 1).sum()], dtype=np.float64)
    return tuple(float(w) for w in len(labels) / (2.0 * counts))


def pretrain_cm(corpus: Corpus, encoder_cfg: EncoderConfig, cfg: PretrainConfig, seed: int | None = None) -> CMEncoder:
    """Weighted cross-entropy training of the bona fide/spoof classifier."""
    seed = cfg.seed if seed is None else seed
    labels = np.array([int(u.is_spoofed) for u in corpus.utterances])
    if labels.sum() == 0:
        raise TrainingError("CM pre-training needs spoofed utterances")
    if labels.sum() == len(labels):
        raise TrainingError("CM pre-training needs bona fide utterances")
    _seed_all(seed + 1)
    cm = CMEncoder(encoder_cfg)
    if cfg.cm_epochs == 0:
        return cm
    weights = cfg.cm_class_weights or inverse_frequency_weights(labels)
    rng = np.random.default_rng([seed, 102])
    signals = torch.from_numpy(corpus.signals)
    y = torch.from_numpy(labels)
    opt = torch.optim.Adam(cm.parameters(), lr=cfg.cm_learning_rate)
    for epoch in range(cfg.cm_epochs):
        total = 0.0
        for _ in range(cfg.cm_batches_per_epoch):
            rows = rng.choice(len(labels), size=min(cfg.cm_batch_size, len(labels)), replace=False)
            _, logits = cm(signals[rows])
            loss = cm_pretrain_loss(logits, y[rows], weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        log.info("cm pretrain epoch %d loss %.4f", epoch + 1, total / cfg.cm_batches_per_epoch)
    return cm


def select_model(per_epoch) -> int:
    """1-based epoch with the lowest dev full-system SASV-EER; earliest wins ties."""
    values = [r.get("full", "sasv_eer") if isinstance(r, EvalReport) else float(r) for r in per_epoch]
    if not values:
        raise ValueError("no epochs to select from")
    return int(np.argmin(values)) + 1


@dataclass
class TrainResult:
    bundle: ModelBundle
    dev_reports: list
    selected_epoch: int
    first_grad_norms: dict = field(default_factory=dict)
    sampled: list = field(default_factory=list)


def _group_grad_norm(module: torch.nn.Module) -> float:
    sq = [p.grad.pow(2).sum().item() for p in module.parameters() if p.grad is not None]
    return math.sqrt(sum(sq))


def _batch_targets(batch) -> torch.Tensor:
    return torch.tensor([t.trial_type is TrialType.T1 for t in batch])


def train_sasv(
    asv: ASVEncoder,
    cm: CMEncoder,
    mode: OptimisationMode,
    condition: TrainingCondition,
    data: ExperimentData,
    cfg: ExperimentConfig,
    seed: int,
    run_dir=None,
    record_trials: bool = False,
) -> TrainResult:
    """Train the backend (FIXED) or all three components (JOINT).

    The inputs ``asv`` and ``cm`` are never modified. Each epoch ends with a
    dev evaluation; the returned bundle is the epoch chosen by
    :func:`select_model`.
    """
    tc: TrainConfig = cfg.train
    index = training_index(data, condition, tc.aux_enrolment)
    rng = np.random.default_rng([seed, 201])
    _seed_all(seed)
    backend = Backend(cfg.backend)
    asv = copy.deepcopy(asv)
    cm = copy.deepcopy(cm)
    joint = mode is OptimisationMode.JOINT
    for p in list(asv.parameters()) + list(cm.parameters()):
        p.requires_grad_(joint)
    groups = [{"params": list(backend.parameters())}]
    if joint:
        groups.append({
            "params": list(asv.parameters()) + list(cm.parameters()),
            "lr": tc.learning_rate * tc.encoder_lr_scale,
        })
    opt = torch.optim.Adam(groups, lr=tc.learning_rate, betas=tuple(tc.betas), weight_decay=tc.weight_decay)
    bc: BackendConfig = cfg.backend

    n_test = sum(len(v) for v in index.bonafide_by_speaker.values()) + sum(len(v) for v in index.spoof_by_speaker.values())
    batches = tc.batches_per_epoch or math.ceil(n_test / tc.batch_size)
    dev_ids = sorted({t.enrol_id for t in data.dev_trials} | {t.test_id for t in data.dev_trials})

    frozen_cache = None
    if not joint:
        train_ids = sorted(
            {u for pools in (index.enrol_by_speaker, index.bonafide_by_speaker, index.spoof_by_speaker)
             for v in pools.values() for u in v} | set(dev_ids)
        )
        frozen_cache = embed_utterances(ModelBundle(asv, cm, backend), data.bank, train_ids)

    reports, states = [], []
    grad_norms: dict = {}
    sampled: list = []
    run_dir = Path(run_dir) if run_dir is not None else None
    for epoch in range(1, tc.epochs + 1):
        total = 0.0
        for step in range(batches):
            batch = sample_batch(index, mode.profile, tc.batch_size, rng)
            if record_trials:
                sampled.extend(batch)
            if joint:
                ids = sorted({t.enrol_id for t in batch} | {t.test_id for t in batch})
                pos = {u: i for i, u in enumerate(ids)}
                sig = data.bank.batch(ids)
                e_asv = asv(sig)
                tests = sorted({t.test_id for t in batch})
                tpos = {u: i for i, u in enumerate(tests)}
                e_cm, _ = cm(data.bank.batch(tests))
                enr = e_asv[[pos[t.enrol_id] for t in batch]]
                tst = e_asv[[pos[t.test_id] for t in batch]]
                cmt = e_cm[[tpos[t.test_id] for t in batch]]
            else:
                enr = torch.stack([frozen_cache[t.enrol_id][0] for t in batch])
                tst = torch.stack([frozen_cache[t.test_id][0] for t in batch])
                cmt = torch.stack([frozen_cache[t.test_id][1] for t in batch])
            scores = backend(stack_embeddings(EmbeddingTriple(enr, tst, cmt)))
            loss = oc_softmax_loss(scores, _batch_targets(batch), bc.alpha, bc.m_pos, bc.m_neg)
            opt.zero_grad()
            loss.backward()
            if epoch == 1 and step == 0:
                grad_norms = {"backend": _group_grad_norm(backend)}
                if joint:
                    grad_norms.update(asv=_group_grad_norm(asv), cm=_group_grad_norm(cm))
            opt.step()
            backend.project_w_()
            total += loss.item()

        bundle = ModelBundle(asv, cm, backend)
        if joint:
            cache = embed_utterances(bundle, data.bank, dev_ids)
        else:
            cache = frozen_cache
        report = evaluate(score_trials(bundle, data.dev_trials, data.bank, cache=cache))
        reports.append(report)
        log.info("%s/%s seed %d epoch %d loss %.4f dev SASV-EER %.2f%%", mode.value, condition.value,
                 seed, epoch, total / batches, report.get("full", "sasv_eer"))
        states.append({
            "backend": copy.deepcopy(backend.state_dict()),
            **({"asv": copy.deepcopy(asv.state_dict()), "cm": copy.deepcopy(cm.state_dict())} if joint else {}),
        })
        if run_dir is not None and tc.checkpoint_every and epoch % tc.checkpoint_every == 0:
            ep_dir = run_dir / "epochs" / f"epoch{epoch:03d}"
            save_backend(backend, ep_dir / "backend.ckpt")
            if joint:
                save_asv(asv, ep_dir / "asv.ckpt")
                save_cm(cm, ep_dir / "cm.ckpt")

    if not reports:
        return TrainResult(ModelBundle(asv, cm, backend), [], 0, grad_norms, sampled)
    best = select_model(reports)
    state = states[best - 1]
    backend.load_state_dict(state["backend"])
    if joint:
        asv.load_state_dict(state["asv"])
        cm.load_state_dict(state["cm"])
    for p in list(asv.parameters()) + list(cm.parameters()):
        p.requires_grad_(True)
    return TrainResult(ModelBundle(asv, cm, backend).eval(), reports, best, grad_norms, sampled)


def experiment_name(mode: OptimisationMode, condition: TrainingCondition) -> str:
    return f"{mode.value}_{condition.value}"


def write_report_kv(report: EvalReport, path) -> None:
    lines = [f"{k} = {v!r}\n" for k, v in report.flat().items()]
    lines += [f"count.{k} = {v}\n" for k, v in report.counts.items()]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def run_seed(
    mode: OptimisationMode,
    condition: TrainingCondition,
    cfg: ExperimentConfig,
    data: ExperimentData,
    asv: ASVEncoder,
    cm: CMEncoder,
    seed: int,
    run_dir,
) -> EvalReport:
    """Train one seed, persist its artefacts and return its eval report."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.txt")
    result = train_sasv(asv, cm, mode, condition, data, cfg, seed, run_dir=run_dir)
    with open(run_dir / "dev_reports.txt", "w", encoding="utf-8", newline="\n") as fh:
        for epoch, rep in enumerate(result.dev_reports, start=1):
            fh.write(" ".join([f"epoch={epoch}"] + [f"{k}={v!r}" for k, v in rep.flat().items()]) + "\n")
        fh.write(f"selected_epoch={result.selected_epoch}\n")
    save_bundle(result.bundle, run_dir / "bundle", {
        "mode": mode.value, "condition": condition.value, "seed": seed,
        "selected_epoch": result.selected_epoch,
    })
    return evaluate_bundle(result.bundle, data, run_dir)


def evaluate_bundle(bundle: ModelBundle, data: ExperimentData, run_dir) -> EvalReport:
    run_dir = Path(run_dir)
    records = score_trials(bundle, data.eval_trials, data.bank)
    write_scores(records, run_dir / "scores.txt")
    report = evaluate(records)
    write_report_kv(report, run_dir / "report.txt")
    return report


def run_experiment(
    mode: OptimisationMode,
    condition: TrainingCondition,
    cfg: ExperimentConfig,
    data: ExperimentData,
    asv: ASVEncoder,
    cm: CMEncoder,
    out_dir,
    seeds: Sequence[int] | None = None,
) -> EvalReport:
    """Average the eval reports of one run per seed.

    Per-seed artefacts go to ``out_dir/<experiment>/<seed>/`` and the average
    to ``out_dir/<experiment>/summary.txt``. A failing seed aborts the
    experiment; finished seeds stay on disk.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    exp_dir = Path(out_dir) / experiment_name(mode, condition)
    reports = []
    for seed in sorted(seeds):
        try:
            reports.append(run_seed(mode, condition, cfg, data, asv, cm, seed, exp_dir / str(seed)))
        except Exception as exc:
            raise TrainingError(f"{experiment_name(mode, condition)} seed {seed} failed: {exc}") from exc
    summary = EvalReport.mean(reports)
    write_report_kv(summary, exp_dir / "summary.txt")
    return summary


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    return EvalReport.mean(reports)


def subsystem_digests(asv: ASVEncoder, cm: CMEncoder) -> tuple:
    return checkpoint.digest(asv), checkpoint.digest(cm)
