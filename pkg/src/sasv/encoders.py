"""Small trainable ASV and CM sub-systems and their pre-training losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

POOL_EPS = 1e-6


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 32
    channels: int = 32
    first_kernel: int = 32
    first_stride: int = 8
    kernel: int = 3
    stride: int = 2
    attention_dim: int = 16
    cm_hidden: int = 32
    leak: float = 0.2

    @property
    def min_length(self) -> int:
        """Shortest signal that still yields one output frame."""
        n = 1
        for _ in range(2):
            n = (n - 1) * self.stride + self.kernel
        return (n - 1) * self.first_stride + self.first_kernel


def weighted_stats(frames: torch.Tensor, scores: torch.Tensor, eps: float = POOL_EPS) -> torch.Tensor:
    """Attention-weighted mean and standard deviation over the frame axis.

    frames: (..., T, F); scores: (..., T) unnormalised attention logits.
    Returns (..., 2F): [mean ; sqrt(var + eps)].
    """
    if frames.shape[-2] == 0:
        raise ValueError("cannot pool zero frames")
    alpha = torch.softmax(scores, dim=-1).unsqueeze(-1)
    mean = (alpha * frames).sum(dim=-2)
    var = (alpha * frames * frames).sum(dim=-2) - mean * mean
    std = torch.sqrt(var.clamp(min=0.0) + eps)
    return torch.cat([mean, std], dim=-1)


class AttentiveStatsPool(nn.Module):
    """Scores each frame with v . tanh(W h_t + b) and pools weighted statistics."""

    def __init__(self, in_dim: int, attention_dim: int, eps: float = POOL_EPS):
        super().__init__()
        self.proj = nn.Linear(in_dim, attention_dim)
        self.score = nn.Linear(attention_dim, 1, bias=False)
        self.eps = eps

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        scores = self.score(torch.tanh(self.proj(frames))).squeeze(-1)
        return weighted_stats(frames, scores, self.eps)


def attentive_stats_pool(frames: torch.Tensor, pool: AttentiveStatsPool) -> torch.Tensor:
    """Pool a (T, F) or (B, T, F) frame matrix into 2F statistics."""
    return pool(frames)


class FrameEncoder(nn.Module):
    """Three strided 1-D convolutions over the raw waveform."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        c = cfg.channels
        self.convs = nn.ModuleList([
            nn.Conv1d(1, c, cfg.first_kernel, stride=cfg.first_stride),
            nn.Conv1d(c, c, cfg.kernel, stride=cfg.stride),
            nn.Conv1d(c, c, cfg.kernel, stride=cfg.stride),
        ])
        self.leak = cfg.leak
        self.min_length = cfg.min_length

    def forward(self, signal: torch.Tensor) -> torch.Tensor:
        """(B, L) waveforms -> (B, T, C) frames."""
        if signal.shape[-1] < self.min_length:
            raise ValueError(f"signal of {signal.shape[-1]} samples is shorter than {self.min_length}")
        x = signal - signal.mean(dim=-1, keepdim=True)
        x = x / (x.std(dim=-1, keepdim=True) + 1e-5)
        x = x.unsqueeze(1)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), self.leak)
        return x.transpose(1, 2)


class AngularPrototypical(nn.Module):
    """Learnable scale and bias of the angular prototypical objective."""

    def __init__(self, init_w: float = 10.0, init_b: float = 0.0, min_w: float = 1e-3):
        super().__init__()
        self.w = nn.Parameter(torch.tensor(init_w))
        self.b = nn.Parameter(torch.tensor(init_b))
        self.min_w = min_w

    def clamp_(self) -> None:
        with torch.no_grad():
            self.w.clamp_(min=self.min_w)


class ASVEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig = EncoderConfig(), n_speakers: int = 2):
        super().__init__()
        self.cfg = cfg
        self.frames = FrameEncoder(cfg)
        self.pool = AttentiveStatsPool(cfg.channels, cfg.attention_dim)
        self.embed = nn.Linear(2 * cfg.channels, cfg.embed_dim)
        # pre-training only
        self.head = nn.Linear(cfg.embed_dim, n_speakers)
        self.angleproto = AngularPrototypical()

    @property
    def n_speakers(self) -> int:
        return self.head.out_features

    def forward(self, signal: torch.Tensor) -> torch.Tensor:
        e = self.embed(self.pool(self.frames(signal)))
        return F.normalize(e, dim=-1)


class CMEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.frames = FrameEncoder(cfg)
        self.pool = AttentiveStatsPool(cfg.channels, cfg.attention_dim)
        self.hidden = nn.Linear(2 * cfg.channels, cfg.cm_hidden)
        self.logits = nn.Linear(cfg.cm_hidden, 2)
        self.embed = nn.Linear(cfg.cm_hidden, cfg.embed_dim)
        self.leak = cfg.leak

    def forward(self, signal: torch.Tensor):
        """Returns (e_cm, logits); logits[..., 0] is the bona fide score."""
        h = F.leaky_relu(self.hidden(self.pool(self.frames(signal))), self.leak)
        return self.embed(h), self.logits(h)


def asv_embed(signal: torch.Tensor, asv: ASVEncoder) -> torch.Tensor:
    return asv(signal)


def cm_forward(signal: torch.Tensor, cm: CMEncoder):
    return cm(signal)


def angular_prototypical_loss(embeddings: torch.Tensor, w: torch.Tensor, b: torch.Tensor, min_w: float = 1e-3):
    """embeddings: (N, 2, D); column 0 queries, column 1 prototypes."""
    if embeddings.dim() != 3 or embeddings.shape[1] != 2:
        raise ValueError("embeddings must be arranged as (speakers, 2, dim)")
    n = embeddings.shape[0]
    if n < 2:
        raise ValueError("angular prototypical loss needs at least 2 speakers")
    query = F.normalize(embeddings[:, 0], dim=-1)
    proto = F.normalize(embeddings[:, 1], dim=-1)
    logits = torch.clamp(w, min=min_w) * query @ proto.T + b
    return F.cross_entropy(logits, torch.arange(n, device=embeddings.device))


def asv_pretrain_loss(embeddings: torch.Tensor, speaker_labels: torch.Tensor, asv: ASVEncoder) -> torch.Tensor:
    """Softmax speaker classification plus angular prototypical, equally weighted.

    embeddings: (N, 2, D) with two utterances of speaker ``speaker_labels[i]``
    in row i.
    """
    if embeddings.dim() != 3 or embeddings.shape[1] != 2:
        raise ValueError("embeddings must be arranged as (speakers, 2, dim)")
    n = embeddings.shape[0]
    flat = embeddings.reshape(2 * n, -1)
    ce = F.cross_entropy(asv.head(flat), speaker_labels.repeat_interleave(2))
    ap = angular_prototypical_loss(embeddings, asv.angleproto.w, asv.angleproto.b, asv.angleproto.min_w)
    return ce + ap


def cm_pretrain_loss(logits: torch.Tensor, spoof_labels: torch.Tensor, class_weights) -> torch.Tensor:
    """Batch mean of class_weight[y] * -log softmax(logits)[y]; label 0 is bona fide."""
    class_weights = torch.as_tensor(class_weights, dtype=logits.dtype, device=logits.device)
    if torch.any(class_weights <= 0):
        raise ValueError("class weights must be positive")
    nll = -F.log_softmax(logits, dim=-1).gather(-1, spoof_labels.long().unsqueeze(-1)).squeeze(-1)
    return (class_weights[spoof_labels.long()] * nll).mean()
