"""Backend classifier over stacked (ASV enrolment, ASV test, CM test) embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

STACK_ORDER = ("e_asv_enr", "e_asv_tst", "e_cm_tst")


@dataclass(frozen=True)
class BackendConfig:
    embed_dim: int = 32
    channels: tuple = (16, 16, 8)
    kernel: int = 3
    pooled_length: int = 8
    hidden: int = 32
    out_dim: int = 32
    alpha: float = 20.0
    m_pos: float = 0.9
    m_neg: float = 0.2

    def __post_init__(self):
        check_oc_params(self.alpha, self.m_pos, self.m_neg)


def check_oc_params(alpha, m_pos, m_neg) -> None:
    if not alpha > 0:
        raise ValueError(f"OC-softmax scale must be positive, got {alpha}")
    if not m_pos > m_neg:
        raise ValueError(f"need m_pos > m_neg, got {m_pos} <= {m_neg}")


@dataclass(frozen=True)
class EmbeddingTriple:
    e_asv_enr: torch.Tensor
    e_asv_tst: torch.Tensor
    e_cm_tst: torch.Tensor


def stack_embeddings(t: EmbeddingTriple) -> torch.Tensor:
    """Stack into (..., 3, D) with rows (e_asv_enr, e_asv_tst, e_cm_tst)."""
    shapes = {t.e_asv_enr.shape, t.e_asv_tst.shape, t.e_cm_tst.shape}
    if len(shapes) != 1:
        raise ValueError(f"embedding shapes differ: {[tuple(s) for s in shapes]}")
    return torch.stack([t.e_asv_enr, t.e_asv_tst, t.e_cm_tst], dim=-2)


class Backend(nn.Module):
    def __init__(self, cfg: BackendConfig = BackendConfig()):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3 = cfg.channels
        pad = cfg.kernel // 2
        self.convs = nn.ModuleList([
            nn.Conv1d(3, c1, cfg.kernel, padding=pad),
            nn.Conv1d(c1, c2, cfg.kernel, padding=pad),
            nn.Conv1d(c2, c3, cfg.kernel, padding=pad),
        ])
        self.pool = nn.AdaptiveAvgPool1d(cfg.pooled_length)
        self.fc1 = nn.Linear(c3 * cfg.pooled_length, cfg.hidden)
        self.fc2 = nn.Linear(cfg.hidden, cfg.out_dim)
        self.w = nn.Parameter(F.normalize(torch.randn(cfg.out_dim), dim=0))

    def represent(self, stacked: torch.Tensor) -> torch.Tensor:
        """(B, 3, D) -> (B, out_dim), the vector compared against ``w``."""
        x = stacked
        for conv in self.convs:
            x = F.relu(conv(x))
        x = self.pool(x).flatten(1)
        return self.fc2(F.relu(self.fc1(x)))

    def forward(self, stacked: torch.Tensor) -> torch.Tensor:
        if stacked.dim() == 2:
            return self.forward(stacked.unsqueeze(0)).squeeze(0)
        if stacked.shape[-2] != 3 or stacked.shape[-1] != self.cfg.embed_dim:
            raise ValueError(f"expected (B, 3, {self.cfg.embed_dim}) input, got {tuple(stacked.shape)}")
        return oc_score(self.represent(stacked), self.w)

    def project_w_(self) -> None:
        with torch.no_grad():
            self.w.div_(self.w.norm())


def oc_score(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """Cosine between each row of ``x`` and the class direction ``w``."""
    return F.normalize(x, dim=-1, eps=1e-12) @ F.normalize(w, dim=0)


def backend_score(stacked: torch.Tensor, backend: Backend) -> torch.Tensor:
    return backend(stacked)


def oc_softmax_loss(score, is_target_bonafide, alpha: float = 20.0, m_pos: float = 0.9, m_neg: float = 0.2):
    """One-class softmax loss, averaged over the batch.

    Positives pay softplus(alpha * (m_pos - s)), negatives softplus(alpha * (s - m_neg)).
    """
    check_oc_params(alpha, m_pos, m_neg)
    score = torch.as_tensor(score)
    target = torch.as_tensor(is_target_bonafide, dtype=torch.bool, device=score.device)
    margin_gap = torch.where(target, m_pos - score, score - m_neg)
    return F.softplus(alpha * margin_gap).mean()
