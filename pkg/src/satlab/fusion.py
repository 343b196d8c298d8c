"""Masked multi-modal fusion transformer and its grounding/classification heads."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .embeddings import LN_EPS, Block


class MaskMode(str, enum.Enum):
    SAT = "SAT"
    MASK_A = "MASK_A"
    MASK_B = "MASK_B"
    INFERENCE = "INFERENCE"
    FULL = "FULL"


@dataclass
class AttentionMask:
    mode: MaskMode
    allow: np.ndarray  # S x S bool, allow[q, k]: position q may attend to key k
    layout: dict[str, tuple[int, int] | None]

    @property
    def size(self) -> int:
        return self.allow.shape[0]


def build_mask(
    mode: MaskMode | str,
    K: int,
    M: int,
    pad_mask: np.ndarray | None = None,
    proposal_pad: np.ndarray | None = None,
    semantics_pad: np.ndarray | None = None,
) -> AttentionMask:
    """Allow-matrix over ``[Q_0..Q_K, O_1..O_M, (I_1..I_M)]``.

    Padding flags are True for padded positions; padded keys are disallowed in
    every row.
    """
    mode = MaskMode(mode)
    if K < 1 or M < 1:
        raise ValueError("build_mask needs K >= 1 and M >= 1")
    text = (0, K + 1)
    props = (K + 1, K + 1 + M)
    with_sem = mode is not MaskMode.INFERENCE
    sem = (K + 1 + M, K + 1 + 2 * M) if with_sem else None
    s = K + 1 + (2 * M if with_sem else M)

    key_ok = np.ones(s, dtype=bool)
    if pad_mask is not None:
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.shape != (K + 1,):
            raise ValueError(f"pad_mask must have K+1={K + 1} entries")
        key_ok[text[0] : text[1]] = ~pad_mask
    if proposal_pad is not None:
        key_ok[props[0] : props[1]] = ~np.asarray(proposal_pad, dtype=bool)
    if semantics_pad is not None and sem is not None:
        key_ok[sem[0] : sem[1]] = ~np.asarray(semantics_pad, dtype=bool)

    main = np.zeros(s, dtype=bool)
    main[: props[1]] = True
    allow = np.zeros((s, s), dtype=bool)
    if mode in (MaskMode.MASK_A, MaskMode.FULL, MaskMode.INFERENCE):
        allow[:, :] = key_ok[None, :]
    elif mode is MaskMode.SAT:
        allow[: props[1], :] = (key_ok & main)[None, :]
        allow[props[1] :, :] = key_ok[None, :]
    elif mode is MaskMode.MASK_B:
        allow[: props[1], :] = (key_ok & main)[None, :]
        allow[props[1] :, :] = (key_ok & ~main)[None, :]
    empty = ~allow.any(axis=1)
    allow[empty, empty.nonzero()[0]] = True  # fully padded groups fall back to self-attention
    return AttentionMask(mode, allow, {"text": text, "proposals": props, "semantics": sem})


def attention_plan(allow: torch.Tensor, bounds: list[tuple[int, int]]):
    """Split a batched (B, S, S) allow tensor into per-group key lists and sub-masks."""
    plan = []
    for lo, hi in bounds:
        rows = allow[:, lo:hi]
        keys = [j for j, (klo, khi) in enumerate(bounds) if bool(rows[:, :, klo:khi].any())]
        cols = torch.cat([rows[:, :, bounds[j][0] : bounds[j][1]] for j in keys], dim=2)
        plan.append((keys, cols))
    return plan


@dataclass
class FusedFeatures:
    F_Q: torch.Tensor
    F_O: torch.Tensor
    F_I: torch.Tensor | None = None
    weights: list | None = None


class FusionTransformer(nn.Module):
    """Stack of pre-LN blocks over text, proposal and (optionally) 2D semantics tokens.

    Text and proposal tokens form one group and semantics tokens another; each
    group gets its own projections so that a group whose keys are masked from
    another is computed identically whether or not that other group exists.
    """

    def __init__(self, d: int, heads: int, layers: int, dropout: float = 0.0, type_embeddings: bool = True):
        super().__init__()
        self.blocks = nn.ModuleList(Block(d, heads, dropout) for _ in range(layers))
        self.ln = nn.LayerNorm(d, eps=LN_EPS)
        self.type_embeddings = type_embeddings
        self.types = nn.Parameter(torch.zeros(3, d))
        if type_embeddings:
            nn.init.normal_(self.types, std=0.02)

    def forward(
        self,
        Q: torch.Tensor,
        O: torch.Tensor,
        I: torch.Tensor | None,
        mask: torch.Tensor,
        mode: MaskMode,
        keep_weights: bool = False,
    ) -> FusedFeatures:
        """``mask`` is the batched allow tensor (B, S, S) built from per-sample AttentionMasks."""
        mode = MaskMode(mode)
        if Q.dim() == 2:
            Q, O = Q[None], O[None]
            I = None if I is None else I[None]
            mask = mask[None]
        kq, m = Q.shape[1], O.shape[1]
        if (I is None) != (mode is MaskMode.INFERENCE):
            raise ValueError(f"semantics tokens must be absent exactly in INFERENCE mode (mode={mode.value})")
        if I is not None and I.shape[1] != m:
            raise ValueError(f"I has {I.shape[1]} tokens, expected M={m}")
        s = kq + m + (m if I is not None else 0)
        if mask.shape[-2:] != (s, s):
            raise ValueError(f"mask of size {tuple(mask.shape[-2:])} does not match token layout ({s})")
        if self.type_embeddings:
            Q = Q + self.types[0]
            O = O + self.types[1]
            I = None if I is None else I + self.types[2]
        xs = [torch.cat([Q, O], dim=1)]
        bounds = [(0, kq + m)]
        if I is not None:
            xs.append(I)
            bounds.append((kq + m, s))
        plan = attention_plan(mask, bounds)
        weights = [] if keep_weights else None
        for blk in self.blocks:
            xs, w = blk(xs, plan, keep_weights)
            if keep_weights:
                weights.append((plan, w))
        xs = [self.ln(x) for x in xs]
        return FusedFeatures(xs[0][:, :kq], xs[0][:, kq:], xs[1] if I is not None else None, weights)


class GroundingHead(nn.Module):
    """Two affine layers d -> d -> 1 with a GELU between, applied row-wise."""

    def __init__(self, d: int):
        super().__init__()
        self.fc1 = nn.Linear(d, d)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(d, 1)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(feats))).squeeze(-1)


def grounding_scores(F: torch.Tensor, head: GroundingHead, pad: torch.Tensor | None = None) -> torch.Tensor:
    """One score per proposal; padded proposals get -inf."""
    scores = head(F)
    if pad is not None:
        scores = scores.masked_fill(pad, float("-inf"))
    return scores


grounding_scores_2d = grounding_scores


def predict(scores: torch.Tensor) -> torch.Tensor:
    # torch.argmax returns the first maximal index
    return scores.argmax(dim=-1)


def classify(feature: torch.Tensor, classifier: nn.Linear) -> torch.Tensor:
    return classifier(feature)
