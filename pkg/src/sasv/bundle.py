"""A trained SASV system: ASV encoder, CM encoder and backend."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from . import checkpoint
from .backend import Backend, BackendConfig
from .encoders import ASVEncoder, CMEncoder, EncoderConfig


@dataclass
class ModelBundle:
    asv: ASVEncoder
    cm: CMEncoder
    backend: Backend

    def eval(self) -> "ModelBundle":
        for m in (self.asv, self.cm, self.backend):
            m.eval()
        return self


def save_asv(asv: ASVEncoder, path) -> bytes:
    return checkpoint.save(asv, path, "asv", {"encoder": asdict(asv.cfg), "n_speakers": asv.n_speakers})


def save_cm(cm: CMEncoder, path) -> bytes:
    return checkpoint.save(cm, path, "cm", {"encoder": asdict(cm.cfg)})


def save_backend(backend: Backend, path) -> bytes:
    meta = asdict(backend.cfg)
    meta["channels"] = list(meta["channels"])
    return checkpoint.save(backend, path, "backend", {"backend": meta})


def _load(path, kind):
    found, meta, state = checkpoint.load(path)
    if found != kind:
        raise checkpoint.CheckpointError(f"{path}: expected a {kind} checkpoint, found {found}")
    return meta, state


def load_asv(path) -> ASVEncoder:
    meta, state = _load(path, "asv")
    asv = ASVEncoder(EncoderConfig(**meta["encoder"]), meta["n_speakers"])
    asv.load_state_dict(state)
    return asv


def load_cm(path) -> CMEncoder:
    meta, state = _load(path, "cm")
    cm = CMEncoder(EncoderConfig(**meta["encoder"]))
    cm.load_state_dict(state)
    return cm


def load_backend(path) -> Backend:
    meta, state = _load(path, "backend")
    cfg = meta["backend"]
    cfg["channels"] = tuple(cfg["channels"])
    backend = Backend(BackendConfig(**cfg))
    backend.load_state_dict(state)
    return backend


def save_bundle(bundle: ModelBundle, directory, manifest: dict | None = None) -> None:
    """Write asv.ckpt, cm.ckpt, backend.ckpt and manifest.json into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_asv(bundle.asv, directory / "asv.ckpt")
    save_cm(bundle.cm, directory / "cm.ckpt")
    save_backend(bundle.backend, directory / "backend.ckpt")
    doc = {"asv": "asv.ckpt", "cm": "cm.ckpt", "backend": "backend.ckpt", "hyperparameters": manifest or {}}
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def load_bundle(directory) -> ModelBundle:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing model bundle: {manifest_path}")
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    return ModelBundle(
        load_asv(directory / doc["asv"]),
        load_cm(directory / doc["cm"]),
        load_backend(directory / doc["backend"]),
    )
