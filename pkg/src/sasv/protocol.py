"""Trial types, per-batch trial sampling and protocol files.

A trial pairs a bona fide enrolment utterance of the claimed speaker with a
test utterance. The test utterance decides the trial type:

    T1  bona fide, target speaker
    T2  bona fide, non-target speaker
    T3  spoofed, target speaker
    T4  spoofed, non-target speaker
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class TrialType(enum.Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"

    @property
    def is_target(self) -> bool:
        return self in (TrialType.T1, TrialType.T3)

    @property
    def is_spoofed(self) -> bool:
        return self in (TrialType.T3, TrialType.T4)


TRIAL_TYPES = (TrialType.T1, TrialType.T2, TrialType.T3, TrialType.T4)


class ProtocolError(ValueError):
    """Raised for malformed protocol files."""


class SamplingError(ValueError):
    """Raised when a trial pool cannot satisfy a proportion profile."""


def classify_trial(same_speaker: bool, test_is_spoofed: bool) -> TrialType:
    if test_is_spoofed:
        return TrialType.T3 if same_speaker else TrialType.T4
    return TrialType.T1 if same_speaker else TrialType.T2


@dataclass(frozen=True)
class TrialPair:
    enrol_id: str
    test_id: str
    trial_type: TrialType

    def to_line(self) -> str:
        return f"{self.enrol_id} {self.test_id} {self.trial_type.value}"


@dataclass(frozen=True)
class ProportionProfile:
    weights: dict

    def __post_init__(self):
        missing = [t for t in TRIAL_TYPES if t not in self.weights]
        if missing:
            raise ValueError(f"profile lacks weights for {missing}")
        for t, w in self.weights.items():
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"weight for {t.value} outside [0, 1]: {w}")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"profile weights sum to {total}, expected 1")

    def counts(self, batch_size: int) -> dict:
        """Per-type counts for one batch by largest-remainder rounding.

        Each type first gets floor(weight * batch_size). The leftover slots go
        to the largest fractional remainders; equal remainders are resolved in
        T1..T4 order. Zero-weight types never receive a slot.
        """
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        quotas = {t: self.weights[t] * batch_size for t in TRIAL_TYPES}
        counts = {t: int(math.floor(q + 1e-9)) for t, q in quotas.items()}
        leftover = batch_size - sum(counts.values())
        order = sorted(
            (t for t in TRIAL_TYPES if self.weights[t] > 0),
            key=lambda t: (-(quotas[t] - counts[t]), TRIAL_TYPES.index(t)),
        )
        for t in order[:leftover]:
            counts[t] += 1
        return counts


FIXED_PROFILE = ProportionProfile(
    {TrialType.T1: 0.50, TrialType.T2: 0.25, TrialType.T3: 0.25, TrialType.T4: 0.0}
)
JOINT_PROFILE = ProportionProfile(
    {TrialType.T1: 0.25, TrialType.T2: 0.25, TrialType.T3: 0.25, TrialType.T4: 0.25}
)


@dataclass
class TrialIndex:
    """Candidate pools for building trials of each type.

    ``enrol_by_speaker`` lists the bona fide utterances usable as enrolment,
    ``bonafide_by_speaker`` the bona fide test candidates and
    ``spoof_by_speaker`` the spoofed test candidates, keyed by the targeted
    speaker.
    """

    enrol_by_speaker: dict = field(default_factory=dict)
    bonafide_by_speaker: dict = field(default_factory=dict)
    spoof_by_speaker: dict = field(default_factory=dict)

    @classmethod
    def from_utterances(
        cls,
        utterances: Iterable,
        *,
        enrol_filter=None,
        bonafide_filter=None,
        spoof_filter=None,
    ) -> "TrialIndex":
        index = cls()
        for utt in utterances:
            spk = utt.speaker_id
            if utt.is_spoofed:
                if spoof_filter is None or spoof_filter(utt):
                    index.spoof_by_speaker.setdefault(spk, []).append(utt.id)
                continue
            if bonafide_filter is None or bonafide_filter(utt):
                index.bonafide_by_speaker.setdefault(spk, []).append(utt.id)
            if enrol_filter is None or enrol_filter(utt):
                index.enrol_by_speaker.setdefault(spk, []).append(utt.id)
        for pools in (index.enrol_by_speaker, index.bonafide_by_speaker, index.spoof_by_speaker):
            for spk in pools:
                pools[spk].sort()
        return index

    def enrol_speakers(self, trial_type: TrialType) -> list:
        """Speakers that can act as the claimed identity for a trial type."""
        cache = self.__dict__.setdefault("_eligible_cache", {})
        if trial_type not in cache:
            cache[trial_type] = [s for s in sorted(self.enrol_by_speaker) if self._eligible(s, trial_type)]
        return cache[trial_type]

    def _eligible(self, spk: str, trial_type: TrialType) -> bool:
        if trial_type is TrialType.T1:
            enrol = set(self.enrol_by_speaker[spk])
            test = set(self.bonafide_by_speaker.get(spk, ()))
            return bool(enrol and test) and len(enrol | test) >= 2
        if trial_type is TrialType.T3:
            return bool(self.spoof_by_speaker.get(spk))
        source = self.bonafide_by_speaker if trial_type is TrialType.T2 else self.spoof_by_speaker
        return any(v and s != spk for s, v in source.items())

    def _draw(self, trial_type: TrialType, rng: np.random.Generator) -> TrialPair:
        speakers = self.enrol_speakers(trial_type)
        spk = speakers[rng.integers(len(speakers))]
        enrol_pool = self.enrol_by_speaker[spk]
        enrol = enrol_pool[rng.integers(len(enrol_pool))]
        if trial_type is TrialType.T1:
            pool = [u for u in self.bonafide_by_speaker[spk] if u != enrol]
            if not pool:
                # enrolment coincided with the only test candidate
                pool = self.bonafide_by_speaker[spk]
                enrol_pool = [u for u in enrol_pool if u != pool[0]]
                enrol = enrol_pool[rng.integers(len(enrol_pool))]
        elif trial_type is TrialType.T3:
            pool = self.spoof_by_speaker[spk]
        else:
            source = self.bonafide_by_speaker if trial_type is TrialType.T2 else self.spoof_by_speaker
            cache = self.__dict__.setdefault("_sources", {})
            if trial_type not in cache:
                cache[trial_type] = sorted(s for s, v in source.items() if v)
            candidates = cache[trial_type]
            if spk in candidates:
                k = int(rng.integers(len(candidates) - 1))
                if k >= candidates.index(spk):
                    k += 1
            else:
                k = int(rng.integers(len(candidates)))
            pool = source[candidates[k]]
        test = pool[rng.integers(len(pool))]
        return TrialPair(enrol, test, trial_type)


def sample_batch(
    index: TrialIndex,
    profile: ProportionProfile,
    batch_size: int,
    rng: np.random.Generator | int,
    max_redraws: int = 20,
) -> list:
    """Draw one batch whose type counts follow ``profile`` exactly.

    Pairs are kept unique within the batch where the pools allow it; after
    ``max_redraws`` failed attempts a duplicate is accepted with a warning.
    Trials are returned grouped by type in T1..T4 order.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    counts = profile.counts(batch_size)
    for t in TRIAL_TYPES:
        if counts[t] and not index.enrol_speakers(t):
            raise SamplingError(f"no candidate trials for type {t.value}")
    batch: list = []
    seen: set = set()
    for t in TRIAL_TYPES:
        for _ in range(counts[t]):
            for _attempt in range(max_redraws):
                pair = index._draw(t, rng)
                if (pair.enrol_id, pair.test_id) not in seen:
                    break
            else:
                log.warning("pool for %s too small for a unique batch; duplicate kept", t.value)
            seen.add((pair.enrol_id, pair.test_id))
            batch.append(pair)
    return batch


def parse_protocol(path) -> list:
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ProtocolError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
            try:
                trial_type = TrialType(fields[2])
            except ValueError:
                raise ProtocolError(f"{path}:{lineno}: unknown trial type {fields[2]!r}") from None
            trials.append(TrialPair(fields[0], fields[1], trial_type))
    return trials


def write_protocol(trials: Sequence[TrialPair], path) -> None:
    Path(path).write_text("".join(t.to_line() + "\n" for t in trials), encoding="utf-8", newline="\n")


def build_eval_trials(
    utterances: Sequence,
    per_type: dict,
    rng: np.random.Generator | int,
) -> list:
    """Enumerate an evaluation protocol with ``per_type[t]`` unique trials per type."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    index = TrialIndex.from_utterances(utterances)
    trials = []
    for t in TRIAL_TYPES:
        n = per_type.get(t, 0)
        if n and not index.enrol_speakers(t):
            raise SamplingError(f"no candidate trials for type {t.value}")
        seen: set = set()
        attempts = 0
        while len(seen) < n:
            pair = index._draw(t, rng)
            attempts += 1
            key = (pair.enrol_id, pair.test_id)
            if key in seen:
                if attempts > 50 * n:
                    raise SamplingError(f"cannot draw {n} unique {t.value} trials")
                continue
            seen.add(key)
            trials.append(pair)
    return trials
