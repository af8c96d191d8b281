"""Experiment configuration as flat ``section.key = value`` text.

Lines are ``dotted.key = value``; ``#`` starts a comment line. Tuples and
lists are comma separated, ``none`` is None and booleans are true/false.
Keys absent from a file keep their defaults.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .backend import BackendConfig
from .encoders import EncoderConfig
from .synthgen import CorpusSpec, SignalModel


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    asv_epochs: int = 60
    asv_batches_per_epoch: int = 50
    asv_speakers_per_batch: int = 16
    asv_learning_rate: float = 1e-3
    cm_epochs: int = 20
    cm_batches_per_epoch: int = 50
    cm_batch_size: int = 32
    cm_learning_rate: float = 1e-3
    # None: inverse class frequency of the training corpus
    cm_class_weights: typing.Optional[tuple] = None
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 5e-5
    # joint mode: sub-system learning rate = learning_rate * encoder_lr_scale
    encoder_lr_scale: float = 1.0
    batch_size: int = 20
    n_seeds: int = 5
    batches_per_epoch: int = 0  # 0: one pass over the training test utterances
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    checkpoint_every: int = 1  # epochs between per-epoch checkpoints; 0 disables
    aux_enrolment: bool = True


def _corpus(name, n_spk, n_bf, n_sp, n_att, seed, **kw):
    return CorpusSpec(name, n_spk, n_bf, n_sp, n_att, seed=seed, **kw)


@dataclass(frozen=True)
class ExperimentConfig:
    signal: SignalModel = SignalModel()
    # Training-partition sizes are a tenth of the full-scale corpora
    pretrain_corpus: CorpusSpec = _corpus("pre", 200, 2000, 0, 0, 11)
    base_corpus: CorpusSpec = _corpus("base", 20, 258, 2280, 6, 21, attack_set="A")
    aux_corpus: CorpusSpec = _corpus("aux", 40, 320, 2560, 8, 31, domain_shift=0.5, attack_set="X")
    dev_corpus: CorpusSpec = _corpus("dev", 10, 200, 600, 6, 41, attack_seed=21, attack_set="A")
    eval_corpus: CorpusSpec = _corpus("eval", 20, 400, 1200, 6, 51, attack_set="E")
    dev_trials_per_type: int = 300
    eval_trials_per_type: int = 1000
    protocol_seed: int = 7
    encoder: EncoderConfig = EncoderConfig()
    backend: BackendConfig = BackendConfig()
    pretrain: PretrainConfig = PretrainConfig()
    train: TrainConfig = TrainConfig()
    seeds: tuple = (1, 2, 3, 4, 5)
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seed list contains duplicates")
        if self.encoder.embed_dim != self.backend.embed_dim:
            raise ConfigError("encoder.embed_dim and backend.embed_dim must match")

    @property
    def corpora(self) -> dict:
        return {
            "pretrain": self.pretrain_corpus, "base": self.base_corpus, "aux": self.aux_corpus,
            "dev": self.dev_corpus, "eval": self.eval_corpus,
        }


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flatten(obj, prefix: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = _format(value)
    return out


def _coerce(text: str, hint, current):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if text.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
        origin = typing.get_origin(hint)
    if hint is bool:
        if text.lower() not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {text!r}")
        return text.lower() == "true"
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is tuple or origin is tuple:
        items = [t for t in text.split(",") if t.strip()]
        sample = current[0] if current else None
        if isinstance(sample, int) and not isinstance(sample, bool):
            return tuple(int(t) for t in items)
        if isinstance(sample, str):
            return tuple(t.strip() for t in items)
        return tuple(float(t) if any(ch in t for ch in ".eE") else int(t) for t in items)
    if hint is str:
        return text
    raise ConfigError(f"unsupported field type {hint!r}")


def _apply(obj, items: dict, prefix: str = ""):
    hints = typing.get_type_hints(type(obj))
    changes = {}
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            sub = {k: v for k, v in items.items() if k.startswith(key + ".")}
            if sub:
                changes[f.name] = _apply(value, sub, key + ".")
        elif key in items:
            try:
                changes[f.name] = _coerce(items[key], hints[f.name], value)
            except (ValueError, StopIteration) as exc:
                raise ConfigError(f"{key}: {exc}") from None
    return dataclasses.replace(obj, **changes) if changes else obj


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    known = set(flatten(base))
    items = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        items[key] = value
    try:
        return _apply(base, items)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten(cfg).items())


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dump_config(cfg), encoding="utf-8", newline="\n")
