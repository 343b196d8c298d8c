"""The 3D grounding transformer: embeddings, masked fusion and heads in one module."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, SemanticsFlags
from .embeddings import PointNetEncoder, ProposalEmbedding, SemanticsEmbedding, TextEncoder
from .fusion import FusedFeatures, FusionTransformer, GroundingHead, MaskMode, build_mask, grounding_scores


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, K) long
    text_pad: torch.Tensor  # (B, K+1) bool, True = padding (column 0 is the sentinel)
    points: torch.Tensor  # (B, M, P, 6)
    offsets: torch.Tensor  # (B, M, 4)
    prop_pad: torch.Tensor  # (B, M) bool
    x_roi: torch.Tensor  # (B, M, R)
    x_cls: torch.Tensor  # (B, M, C)
    x_geo: torch.Tensor  # (B, M, 10)
    sem_pad: torch.Tensor  # (B, M) bool, True = no 2D record for this proposal
    target: torch.Tensor  # (B,) positive proposal index
    target_cls: torch.Tensor  # (B,)
    prop_cls: torch.Tensor  # (B, M), -100 where unknown
    cor_eligible: torch.Tensor  # (B, M) bool
    vg_i_ok: torch.Tensor  # (B,) bool
    query_ids: list[str]
    boxes: list | None = None  # per-sample proposal Box3D lists
    gt_boxes: list | None = None  # per-sample ground-truth target box

    def __len__(self) -> int:
        return self.tokens.shape[0]


@dataclass
class ModelOutput:
    fused: FusedFeatures
    S_O: torch.Tensor
    S_I: torch.Tensor | None
    logits_q: torch.Tensor
    logits_o: torch.Tensor
    I_in: torch.Tensor | None
    O_in: torch.Tensor
    Q_in: torch.Tensor


class GroundingModel(nn.Module):
    def __init__(self, cfg: ModelConfig, flags: SemanticsFlags | None = None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        # dropout is off in double precision so that mode stays exactly reproducible and differentiable
        drop = 0.0 if cfg.precision == "double" else cfg.dropout
        self.point_encoder = PointNetEncoder(cfg.hidden, cfg.p)
        self.proposal_embed = ProposalEmbedding(cfg.p, cfg.d)
        self.semantics_embed = SemanticsEmbedding(cfg.roi_dim, cfg.num_classes, cfg.d, flags)
        self.text = TextEncoder(cfg.vocab_size, cfg.d, cfg.heads, cfg.text_layers, cfg.k_max, drop)
        self.fusion = FusionTransformer(cfg.d, cfg.heads, cfg.fusion_layers, drop, cfg.type_embeddings)
        self.ground_3d = GroundingHead(cfg.d)
        self.ground_2d = GroundingHead(cfg.d)
        self.cls_query = nn.Linear(cfg.d, cfg.num_classes)
        self.cls_object = nn.Linear(cfg.d, cfg.num_classes)
        self.aligned_proj = nn.Linear(2 * cfg.d, cfg.d)

    @property
    def flags(self) -> SemanticsFlags:
        return self.semantics_embed.flags

    def embed(self, batch: Batch, with_semantics: bool):
        Q = self.text(batch.tokens, batch.text_pad[:, 1:])
        O = self.proposal_embed(self.point_encoder(batch.points), batch.offsets)
        I = self.semantics_embed(batch.x_roi, batch.x_cls, batch.x_geo) if with_semantics else None
        return Q, O, I

    def forward(
        self,
        batch: Batch,
        mask_mode: MaskMode | str,
        aligned: bool = False,
        keep_weights: bool = False,
        I_override: torch.Tensor | None = None,
    ) -> ModelOutput:
        mask_mode = MaskMode(mask_mode)
        with_sem = aligned or mask_mode is not MaskMode.INFERENCE
        Q, O, I = self.embed(batch, with_sem)
        if I_override is not None:
            I = I_override
        O_in = O
        if aligned:
            O = self.aligned_proj(torch.cat([O, I], dim=-1))
            I_tokens = None
            mask_mode = MaskMode.INFERENCE
        else:
            I_tokens = I if mask_mode is not MaskMode.INFERENCE else None
        mask = batch_mask(batch, mask_mode)
        fused = self.fusion(Q, O, I_tokens, mask, mask_mode, keep_weights)
        S_O = grounding_scores(fused.F_O, self.ground_3d, batch.prop_pad)
        S_I = None
        if fused.F_I is not None:
            S_I = grounding_scores(fused.F_I, self.ground_2d, batch.prop_pad | batch.sem_pad)
        return ModelOutput(
            fused=fused,
            S_O=S_O,
            S_I=S_I,
            logits_q=self.cls_query(fused.F_Q[:, 0]),
            logits_o=self.cls_object(fused.F_O),
            I_in=I,
            O_in=O_in,
            Q_in=Q,
        )


def batch_mask(batch: Batch, mode: MaskMode) -> torch.Tensor:
    k = batch.text_pad.shape[1] - 1
    m = batch.prop_pad.shape[1]
    masks = [
        build_mask(
            mode,
            k,
            m,
            pad_mask=batch.text_pad[b].numpy(),
            proposal_pad=batch.prop_pad[b].numpy(),
            semantics_pad=(batch.sem_pad[b] | batch.prop_pad[b]).numpy(),
        ).allow
        for b in range(len(batch))
    ]
    return torch.from_numpy(np.stack(masks))


def param_digest(model: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
