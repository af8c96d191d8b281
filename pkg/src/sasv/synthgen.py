"""Deterministic synthetic corpora of bona fide and spoofed utterances.

Every signal is white Gaussian excitation shaped in the frequency domain by a
spectral envelope:

* bona fide: the speaker's band resonances, jittered per utterance;
* spoofed: the target speaker's resonances blended toward an attack
  signature with weight ``1 - quality``, plus an attack-specific artefact
  bump above the speaker bands whose height grows as quality falls;
* domain shift: a colouring filter applied to the envelope (a spectral tilt
  plus a flat noise floor), so shifted and unshifted renderings of the same
  excitation differ by a fixed linear filter.

Signals are peak-normalised to 0.95.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

log = logging.getLogger(__name__)

PEAK = 0.95


@dataclass(frozen=True)
class SignalModel:
    """Shape parameters shared by every corpus in an experiment."""

    n_bands: int = 16
    band_low: float = 0.01  # band centres as fractions of the Nyquist bin
    band_high: float = 0.7
    envelope_floor: float = 0.05
    resonance_low: float = 0.1
    resonance_high: float = 1.0
    min_speaker_distance: float = 0.5
    session_jitter: float = 0.15
    artefact_min: float = 0.1
    artefact_max: float = 0.6
    artefact_low: float = 0.75  # artefact centres, as fractions of Nyquist
    artefact_high: float = 0.95
    artefact_width: float = 0.04
    tilt: float = 1.5
    noise_floor: float = 0.3


@dataclass(frozen=True)
class CorpusSpec:
    name: str
    n_speakers: int
    n_bonafide: int
    n_spoofed: int
    n_attacks: int
    domain_shift: float = 0.0
    attack_quality_range: tuple = (0.0, 1.0)
    signal_length: int = 1600
    seed: int = 0
    attack_seed: Optional[int] = None
    attack_set: str = "A"

    def __post_init__(self):
        for name in ("n_speakers", "n_bonafide", "signal_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_spoofed < 0 or self.n_attacks < 0:
            raise ValueError("spoof and attack counts must be non-negative")
        if self.n_spoofed and not self.n_attacks:
            raise ValueError("spoofed utterances need at least one attack")
        if self.n_speakers < 2:
            raise ValueError("at least 2 speakers are needed for non-target trials")
        if self.n_bonafide < self.n_speakers:
            raise ValueError("every speaker needs a bona fide utterance")
        if self.n_spoofed and self.n_spoofed < self.n_speakers:
            raise ValueError("every speaker needs a spoofed utterance")
        lo, hi = self.attack_quality_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"attack_quality_range {self.attack_quality_range} not within [0, 1]")
        if self.domain_shift < 0:
            raise ValueError("domain_shift must be >= 0")
        if any(c.isspace() for c in self.name + self.attack_set) or not self.name:
            raise ValueError("corpus and attack-set names must be non-empty without whitespace")

    @property
    def domain_id(self) -> str:
        return "clean" if self.domain_shift == 0 else f"{self.name}-shift{self.domain_shift:g}"

    def scaled(self, factor: float) -> "CorpusSpec":
        """Divide utterance counts by ``factor`` (speaker and attack counts kept)."""
        return replace(
            self,
            n_bonafide=max(self.n_speakers, int(round(self.n_bonafide / factor))),
            n_spoofed=int(round(self.n_spoofed / factor)),
        )


@dataclass(frozen=True)
class SpeakerLatent:
    speaker_id: str
    resonance: np.ndarray


@dataclass(frozen=True)
class AttackSignature:
    attack_id: str
    resonance: np.ndarray
    artefact_centre: float


@dataclass
class Utterance:
    id: str
    speaker_id: str
    signal: np.ndarray
    is_spoofed: bool = False
    attack_id: Optional[str] = None
    domain_id: str = "clean"
    quality: Optional[float] = None
    # speaker-feature projection: band resonances before session jitter
    resonance: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.is_spoofed != (self.attack_id is not None):
            raise ValueError(f"{self.id}: is_spoofed must match presence of attack_id")


def band_matrix(model: SignalModel, n_bins: int) -> np.ndarray:
    """Gaussian band responses, shape (n_bands, n_bins)."""
    centres = np.linspace(model.band_low, model.band_high, model.n_bands) * (n_bins - 1)
    width = (centres[1] - centres[0]) / 2 if model.n_bands > 1 else n_bins / 4
    bins = np.arange(n_bins)
    return np.exp(-0.5 * ((bins[None, :] - centres[:, None]) / width) ** 2)


def domain_filter(envelope: np.ndarray, shift: float, model: SignalModel) -> np.ndarray:
    """Return the frequency response that maps the clean envelope to the shifted one."""
    if shift == 0:
        return np.ones_like(envelope)
    f = np.linspace(0.0, 1.0, envelope.shape[-1])
    tilted = envelope * np.exp(shift * model.tilt * (f - 0.5))
    return (tilted + shift * model.noise_floor) / envelope


def spoof_artefact(attack: AttackSignature, quality: float, n_bins: int, model: SignalModel) -> np.ndarray:
    """Additive envelope term of an attack; zero speaker-band content by design."""
    height = model.artefact_min + (model.artefact_max - model.artefact_min) * (1.0 - quality)
    f = np.linspace(0.0, 1.0, n_bins)
    return height * np.exp(-0.5 * ((f - attack.artefact_centre) / model.artefact_width) ** 2)


def speaker_projection(
    latent: SpeakerLatent, attack: Optional[AttackSignature] = None, quality: float = 1.0
) -> np.ndarray:
    """Band resonances a rendering carries: the speaker's, blended toward the attack."""
    if attack is None:
        return latent.resonance.copy()
    return quality * latent.resonance + (1.0 - quality) * attack.resonance


def synth_utterance(
    latent: SpeakerLatent,
    attack: Optional[AttackSignature],
    quality: float,
    domain_shift: float,
    rng: np.random.Generator,
    *,
    utt_id: str = "utt",
    signal_length: int = 1600,
    model: SignalModel = SignalModel(),
    domain_id: str = "clean",
) -> Utterance:
    if not 0.0 <= quality <= 1.0:
        raise ValueError(f"quality must lie in [0, 1], got {quality}")
    n_bins = signal_length // 2 + 1
    bands = band_matrix(model, n_bins)
    projection = speaker_projection(latent, attack, quality)
    # draw order is fixed so equal rng states give equal excitation
    jitter = np.exp(model.session_jitter * rng.standard_normal(model.n_bands))
    excitation = rng.standard_normal(n_bins) + 1j * rng.standard_normal(n_bins)
    envelope = (projection * jitter) @ bands + model.envelope_floor
    if attack is not None:
        envelope = envelope + spoof_artefact(attack, quality, n_bins, model)
    envelope = envelope * domain_filter(envelope, domain_shift, model)
    signal = np.fft.irfft(excitation * envelope, n=signal_length)
    signal = signal * (PEAK / np.max(np.abs(signal)))
    return Utterance(
        id=utt_id,
        speaker_id=latent.speaker_id,
        signal=signal.astype(np.float32),
        is_spoofed=attack is not None,
        attack_id=None if attack is None else attack.attack_id,
        domain_id=domain_id,
        quality=None if attack is None else float(quality),
        resonance=projection,
    )


def _draw_resonances(n: int, model: SignalModel, rng: np.random.Generator, what: str) -> np.ndarray:
    out: list = []
    for _ in range(1000 * n):
        if len(out) == n:
            break
        r = rng.uniform(model.resonance_low, model.resonance_high, model.n_bands)
        if all(np.linalg.norm(r - o) > model.min_speaker_distance for o in out):
            out.append(r)
    if len(out) < n:
        raise ValueError(f"could not place {n} {what} resonances {model.min_speaker_distance} apart")
    return np.stack(out)


def speaker_latents(spec: CorpusSpec, model: SignalModel = SignalModel()) -> list:
    rng = np.random.default_rng([spec.seed, 1])
    res = _draw_resonances(spec.n_speakers, model, rng, "speaker")
    return [SpeakerLatent(f"{spec.name}_s{i:03d}", r) for i, r in enumerate(res)]


def attack_signatures(spec: CorpusSpec, model: SignalModel = SignalModel()) -> list:
    seed = spec.seed if spec.attack_seed is None else spec.attack_seed
    rng = np.random.default_rng([seed, 2])
    res = rng.uniform(model.resonance_low, model.resonance_high, (spec.n_attacks, model.n_bands))
    centres = rng.uniform(model.artefact_low, model.artefact_high, spec.n_attacks)
    return [
        AttackSignature(f"{spec.attack_set}{k + 1:02d}", res[k], float(centres[k]))
        for k in range(spec.n_attacks)
    ]


class Corpus:
    """Utterances of one synthetic corpus with their signals stacked row-wise."""

    def __init__(self, spec: CorpusSpec, utterances: list, signals: np.ndarray, latents=None, attacks=None):
        self.spec = spec
        self.utterances = utterances
        self.signals = signals
        self.latents = latents or []
        self.attacks = attacks or []
        self._row = {u.id: i for i, u in enumerate(utterances)}

    def __len__(self):
        return len(self.utterances)

    def __getitem__(self, utt_id: str) -> Utterance:
        return self.utterances[self._row[utt_id]]

    def __contains__(self, utt_id) -> bool:
        return utt_id in self._row

    def row(self, utt_id: str) -> int:
        return self._row[utt_id]

    @property
    def speakers(self) -> list:
        return sorted({u.speaker_id for u in self.utterances})

    def bonafide(self) -> list:
        return [u for u in self.utterances if not u.is_spoofed]

    def spoofed(self) -> list:
        return [u for u in self.utterances if u.is_spoofed]

    def counts(self) -> dict:
        return {
            "speakers": len(self.speakers),
            "bonafide": sum(not u.is_spoofed for u in self.utterances),
            "spoofed": sum(u.is_spoofed for u in self.utterances),
            "attacks": len({u.attack_id for u in self.utterances if u.is_spoofed}),
        }

    def save(self, directory) -> None:
        save_corpus(self, directory)


def generate_corpus(spec: CorpusSpec, model: SignalModel = SignalModel()) -> Corpus:
    """Build the corpus described by ``spec``; equal inputs give identical bytes.

    Speakers receive bona fide and spoofed utterances round-robin, so per-speaker
    counts differ by at most one; attacks are likewise assigned round-robin over
    the spoofed utterances. Each utterance draws from its own seeded generator.
    """
    latents = speaker_latents(spec, model)
    attacks = attack_signatures(spec, model)
    quality_rng = np.random.default_rng([spec.seed, 3])
    lo, hi = spec.attack_quality_range
    qualities = quality_rng.uniform(lo, hi, spec.n_spoofed)
    utterances = []
    for i in range(spec.n_bonafide):
        latent = latents[i % spec.n_speakers]
        utterances.append(synth_utterance(
            latent, None, 1.0, spec.domain_shift, np.random.default_rng([spec.seed, 4, i]),
            utt_id=f"{latent.speaker_id}_b{i:05d}", signal_length=spec.signal_length,
            model=model, domain_id=spec.domain_id,
        ))
    for i in range(spec.n_spoofed):
        latent = latents[i % spec.n_speakers]
        attack = attacks[i % spec.n_attacks]
        utterances.append(synth_utterance(
            latent, attack, float(qualities[i]), spec.domain_shift,
            np.random.default_rng([spec.seed, 5, i]),
            utt_id=f"{latent.speaker_id}_{attack.attack_id}_{i:05d}", signal_length=spec.signal_length,
            model=model, domain_id=spec.domain_id,
        ))
    signals = np.stack([u.signal for u in utterances])
    for u, row in zip(utterances, signals):
        u.signal = row
    corpus = Corpus(spec, utterances, signals, latents, attacks)
    log.info("generated corpus %s: %s", spec.name, corpus.counts())
    return corpus


def save_corpus(corpus: Corpus, directory) -> None:
    """Write ``<name>.meta``, ``<name>.f32`` and ``<name>.spec`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = corpus.spec.name
    lines = [
        f"{u.id} {u.speaker_id} {int(u.is_spoofed)} {u.attack_id or '-'} {u.domain_id}\n"
        for u in corpus.utterances
    ]
    (directory / f"{name}.meta").write_text("".join(lines), encoding="utf-8", newline="\n")
    corpus.signals.astype("<f4").tofile(directory / f"{name}.f32")
    spec = asdict(corpus.spec)
    spec["attack_quality_range"] = ",".join(repr(float(v)) for v in spec["attack_quality_range"])
    (directory / f"{name}.spec").write_text(
        "".join(f"{k} = {v}\n" for k, v in spec.items()), encoding="utf-8", newline="\n"
    )


def _parse_spec(text: str) -> CorpusSpec:
    raw = dict(line.split(" = ", 1) for line in text.splitlines() if line.strip())
    types = {f.name: f.type for f in CorpusSpec.__dataclass_fields__.values()}
    kwargs = {}
    for key, value in raw.items():
        if key == "attack_quality_range":
            kwargs[key] = tuple(float(v) for v in value.split(","))
        elif key == "attack_seed":
            kwargs[key] = None if value == "None" else int(value)
        elif types[key] in ("int", int):
            kwargs[key] = int(value)
        elif types[key] in ("float", float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return CorpusSpec(**kwargs)


def load_corpus(directory, name: str) -> Corpus:
    directory = Path(directory)
    spec = _parse_spec((directory / f"{name}.spec").read_text(encoding="utf-8"))
    signals = np.fromfile(directory / f"{name}.f32", dtype="<f4").astype(np.float32)
    meta = (directory / f"{name}.meta").read_text(encoding="utf-8").splitlines()
    if signals.size != len(meta) * spec.signal_length:
        raise ValueError(f"{name}: signal file size does not match {len(meta)} utterances")
    signals = signals.reshape(len(meta), spec.signal_length)
    utterances = []
    for row, line in enumerate(meta):
        utt_id, spk, spoofed, attack, domain = line.split()
        utterances.append(Utterance(
            utt_id, spk, signals[row], spoofed == "1", None if attack == "-" else attack, domain
        ))
    return Corpus(spec, utterances, signals)


class SignalBank:
    """Id-addressable signals pooled from several corpora."""

    def __init__(self, corpora):
        self.corpora = {c.spec.name: c for c in corpora}
        self._where = {}
        rows = []
        offset = 0
        for c in corpora:
            for u in c.utterances:
                if u.id in self._where:
                    raise ValueError(f"duplicate utterance id {u.id}")
                self._where[u.id] = offset + c.row(u.id)
            rows.append(c.signals)
            offset += len(c)
        self.signals = torch.from_numpy(np.concatenate(rows)) if rows else torch.empty(0)
        self.utterance = {u.id: u for c in corpora for u in c.utterances}

    def __contains__(self, utt_id) -> bool:
        return utt_id in self._where

    def rows(self, ids) -> list:
        missing = [i for i in ids if i not in self._where]
        if missing:
            raise KeyError(f"unknown utterance id {missing[0]}")
        return [self._where[i] for i in ids]

    def batch(self, ids):
        return self.signals[self.rows(ids)]
