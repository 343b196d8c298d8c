"""Grounding, correspondence and classification objectives and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .config import LossConfig


@dataclass
class LossBreakdown:
    l_vg_o: torch.Tensor
    l_vg_i: torch.Tensor
    l_cor: torch.Tensor
    l_cls_q: torch.Tensor
    l_cls_o: torch.Tensor
    total: torch.Tensor
    hard_negatives: list = field(default_factory=list)

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_vg_o", "l_vg_i", "l_cor", "l_cls_q", "l_cls_o", "total")}


def loss_vg(scores: torch.Tensor, positive_index: int | torch.Tensor) -> torch.Tensor:
    """Softmax loss, -log softmax(scores)[positive]; batched when scores is (B, M)."""
    m = scores.shape[-1]
    pos = torch.as_tensor(positive_index, dtype=torch.long)
    if bool((pos < 0).any()) or bool((pos >= m).any()):
        raise ValueError(f"positive index {pos.tolist()} outside [0, {m})")
    logp = torch.log_softmax(scores, dim=-1)
    if scores.dim() == 1:
        return -logp[pos]
    return -logp.gather(-1, pos[:, None]).squeeze(-1)


def loss_cls(logits: torch.Tensor, label: int | torch.Tensor) -> torch.Tensor:
    """Cross entropy; averages over a leading batch dimension."""
    c = logits.shape[-1]
    lab = torch.as_tensor(label, dtype=torch.long)
    if bool((lab < 0).any()) or bool((lab >= c).any()):
        raise ValueError(f"label {lab.tolist()} outside [0, {c})")
    if logits.dim() == 1:
        return F.cross_entropy(logits[None], lab[None])
    return F.cross_entropy(logits, lab)


def similarity(F_O: torch.Tensor, F_I: torch.Tensor) -> torch.Tensor:
    """s[..., a, b] = <F_O[a], F_I[b]> over L2-normalized rows; zero rows stay zero."""
    return F.normalize(F_O, dim=-1) @ F.normalize(F_I, dim=-1).transpose(-1, -2)


@torch.no_grad()
def _mine(sim: torch.Tensor, eligible: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched hard-negative indices; sim: (B, M, M), eligible: (B, M)."""
    m = sim.shape[-1]
    eye = torch.eye(m, dtype=torch.bool)
    # i: hardest 2D negative for each 3D anchor (row-wise), j: hardest 3D negative for each 2D anchor
    blocked = eye[None] | ~eligible[:, None, :]
    neg_i = sim.masked_fill(blocked, float("-inf")).argmax(dim=-1)
    blocked_t = eye[None] | ~eligible[:, :, None]
    neg_j = sim.masked_fill(blocked_t, float("-inf")).argmax(dim=-2)
    return neg_i, neg_j


def mine_hard_negatives(
    F_O: torch.Tensor, F_I: torch.Tensor, eligible: torch.Tensor | None = None
) -> list[tuple[int, int, int]]:
    """Within-scene hard negatives (m, i, j) for one sample; ties go to the lowest index."""
    m = F_O.shape[0]
    if eligible is None:
        eligible = torch.ones(m, dtype=torch.bool)
    idx = eligible.nonzero().flatten().tolist()
    if len(idx) < 2:
        return []
    sim = similarity(F_O.detach(), F_I.detach())
    neg_i, neg_j = _mine(sim[None], eligible[None])
    return [(mm, int(neg_i[0, mm]), int(neg_j[0, mm])) for mm in idx]


def correspondence_terms(
    F_O: torch.Tensor,
    F_I: torch.Tensor,
    eligible: torch.Tensor,
    alpha: float,
    negatives: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
    """Per-sample two-hinge triplet sums over eligible anchors; batched (B, M, d).

    ``negatives`` may pin the mined indices (used by finite-difference checks so
    a perturbation cannot flip the argmax).
    """
    sim = similarity(F_O, F_I)
    if negatives is None:
        negatives = _mine(sim.detach(), eligible)
    neg_i, neg_j = negatives
    pos = sim.diagonal(dim1=-2, dim2=-1)
    s_i = sim.gather(-1, neg_i[..., None]).squeeze(-1)
    s_j = sim.gather(-2, neg_j[:, None, :]).squeeze(-2)
    hinge = torch.relu(alpha - pos + s_i) + torch.relu(alpha - pos + s_j)
    active = eligible & (eligible.sum(dim=-1, keepdim=True) >= 2)
    per_sample = (hinge * active).sum(dim=-1)
    return per_sample, negatives


def loss_correspondence(
    F_O: torch.Tensor, F_I: torch.Tensor, eligible: torch.Tensor | None = None, cfg: LossConfig | None = None
) -> torch.Tensor:
    """Object correspondence loss for one scene (M, d) or a batch (B, M, d), averaged over the batch."""
    cfg = cfg or LossConfig()
    single = F_O.dim() == 2
    if single:
        F_O, F_I = F_O[None], F_I[None]
        eligible = None if eligible is None else eligible[None]
    if eligible is None:
        eligible = torch.ones(F_O.shape[:2], dtype=torch.bool)
    per_sample, _ = correspondence_terms(F_O, F_I, eligible, cfg.alpha)
    return per_sample[0] if single else per_sample.mean()


def total_loss(parts: dict[str, torch.Tensor], cfg: LossConfig, hard_negatives: list | None = None) -> LossBreakdown:
    """Weighted sum; disabled components are reported (and counted) as exactly 0."""
    ref = parts["l_vg_o"]
    zero = torch.zeros((), dtype=ref.dtype)
    vg_i = parts.get("l_vg_i", zero) if cfg.vg_i else zero
    cor = parts.get("l_cor", zero) if cfg.cor else zero
    cls_q = parts.get("l_cls_q", zero) if cfg.cls else zero
    cls_o = parts.get("l_cls_o", zero) if cfg.cls else zero
    total = ref + vg_i + cor * cfg.w_cor + (cls_o + cls_q) * cfg.w_cls
    return LossBreakdown(ref, vg_i, cor, cls_q, cls_o, total, hard_negatives or [])
