"""Modality embeddings: point-set proposals, 2D semantics and text."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch
from torch import nn

from .config import ConfigError, ModelConfig, SemanticsFlags

LN_EPS = 1e-5


# below this spread, rounding in the centroid dominates the shape
DEGENERATE_RADIUS = 1e-12


def normalize_segment(segment: np.ndarray, scene_centroid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Center xyz at zero and scale to unit max radius; colors are left untouched.

    Returns the normalized segment and the 4-vector ``(center - scene_centroid, r)``
    where ``r`` is the pre-scaling max radius. Segments whose radius is below
    ``DEGENERATE_RADIUS`` count as a single point and get ``r = 1``.
    """
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 2 or seg.shape[0] == 0:
        raise ValueError("normalize_segment needs a non-empty P x 6 segment")
    if scene_centroid is None:
        scene_centroid = np.zeros(3)
    center = seg[:, :3].mean(axis=0)
    xyz = seg[:, :3] - center
    r = float(np.sqrt((xyz**2).sum(axis=1)).max())
    if r < DEGENERATE_RADIUS:
        r = 1.0
    out = seg.copy()
    out[:, :3] = xyz / r
    return out, np.concatenate([center - scene_centroid, [r]])


def resample_segment(segment: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed-size subsample (with replacement only when the segment is too small)."""
    p = len(segment)
    idx = rng.choice(p, size=n, replace=p < n)
    return segment[np.sort(idx)]


def sample_frame(records: Sequence, rng: np.random.Generator):
    """Uniformly pick one of a proposal's per-frame 2D records."""
    if not records:
        raise ValueError("sample_frame needs at least one record")
    return records[int(rng.integers(len(records)))]


class PointNetEncoder(nn.Module):
    """Shared per-point MLP, max pool over points, then a post-pool MLP."""

    def __init__(self, hidden: int, out_dim: int, in_dim: int = 6):
        super().__init__()
        self.point_mlp = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU()
        )
        self.post = nn.Sequential(nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, out_dim))

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        # points: (..., P, 6)
        feats = self.point_mlp(points)
        pooled = feats.max(dim=-2).values
        return self.post(pooled)


class ProposalEmbedding(nn.Module):
    """O = LN(W1 x_pc) + LN(W2 x_offset)."""

    def __init__(self, p: int, d: int):
        super().__init__()
        self.w1 = nn.Linear(p, d, bias=False)
        self.w2 = nn.Linear(4, d, bias=False)
        self.ln1 = nn.LayerNorm(d, eps=LN_EPS)
        self.ln2 = nn.LayerNorm(d, eps=LN_EPS)

    def forward(self, x_pc: torch.Tensor, x_offset: torch.Tensor) -> torch.Tensor:
        if x_pc.shape[-1] != self.w1.in_features or x_offset.shape[-1] != 4:
            raise ValueError(f"shape mismatch: x_pc {tuple(x_pc.shape)}, x_offset {tuple(x_offset.shape)}")
        return self.ln1(self.w1(x_pc)) + self.ln2(self.w2(x_offset))


class SemanticsEmbedding(nn.Module):
    """I = LN(W3 x_roi + W4 x_cls) + LN(W5 x_geo), with disabled parts omitted."""

    def __init__(self, roi_dim: int, num_classes: int, d: int, flags: SemanticsFlags | None = None):
        super().__init__()
        self.flags = flags or SemanticsFlags()
        self.w3 = nn.Linear(roi_dim, d, bias=False)
        self.w4 = nn.Linear(num_classes, d, bias=False)
        self.w5 = nn.Linear(10, d, bias=False)
        self.ln_a = nn.LayerNorm(d, eps=LN_EPS)
        self.ln_b = nn.LayerNorm(d, eps=LN_EPS)

    def forward(self, x_roi: torch.Tensor, x_cls: torch.Tensor, x_geo: torch.Tensor) -> torch.Tensor:
        f = self.flags
        if not f.any():
            raise ConfigError("2D semantics enabled with roi, cls and geo all disabled")
        out = None
        if f.roi or f.cls:
            inner = None
            if f.roi:
                inner = self.w3(x_roi)
            if f.cls:
                inner = self.w4(x_cls) if inner is None else inner + self.w4(x_cls)
            out = self.ln_a(inner)
        if f.geo:
            geo = self.ln_b(self.w5(x_geo))
            out = geo if out is None else out + geo
        return out


def neg_inf(dtype: torch.dtype) -> float:
    # true -inf in double precision, a large finite constant in single
    return float("-inf") if dtype == torch.float64 else -1e9


class Attention(nn.Module):
    """Multi-head attention over token groups.

    ``xs`` is a list of group tensors ``(B, S_g, d)``; ``plan[g]`` names the key
    groups visible to queries of group ``g`` and an allow tensor
    ``(B, S_g, sum S_keys)``. Key groups a query group may never see are left
    out of its computation entirely, so their values cannot influence it.
    """

    def __init__(self, d: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.dh = d // heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.drop = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, s, _ = x.shape
        return x.view(b, s, self.heads, self.dh).transpose(1, 2)

    def forward(self, xs, plan, keep_weights: bool = False):
        qs = [self._split(self.q(x)) for x in xs]
        ks = [self._split(self.k(x)) for x in xs]
        vs = [self._split(self.v(x)) for x in xs]
        outs, weights = [], []
        for g, (keys, allow) in enumerate(plan):
            k = ks[keys[0]] if len(keys) == 1 else torch.cat([ks[j] for j in keys], dim=2)
            v = vs[keys[0]] if len(keys) == 1 else torch.cat([vs[j] for j in keys], dim=2)
            logits = qs[g] @ k.transpose(-1, -2) / (self.dh**0.5)
            logits = logits.masked_fill(~allow[:, None], neg_inf(logits.dtype))
            w = torch.softmax(logits, dim=-1)
            if keep_weights:
                weights.append(w)
            ctx = self.drop(w) @ v
            b, _, s, _ = ctx.shape
            outs.append(self.o(ctx.transpose(1, 2).reshape(b, s, self.heads * self.dh)))
        return outs, weights


class Block(nn.Module):
    """Pre-LayerNorm transformer block with a GELU feed-forward."""

    def __init__(self, d: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.ln1 = nn.LayerNorm(d, eps=LN_EPS)
        self.attn = Attention(d, heads, dropout)
        self.ln2 = nn.LayerNorm(d, eps=LN_EPS)
        self.ff = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))
        self.drop = nn.Dropout(dropout)

    def forward(self, xs, plan, keep_weights: bool = False):
        att, w = self.attn([self.ln1(x) for x in xs], plan, keep_weights)
        xs = [x + self.drop(a) for x, a in zip(xs, att)]
        xs = [x + self.drop(self.ff(self.ln2(x))) for x in xs]
        return xs, w


class TextEncoder(nn.Module):
    """From-scratch text transformer; row 0 of the output is the learned sentinel Q_0."""

    def __init__(self, vocab_size: int, d: int, heads: int, layers: int, k_max: int, dropout: float = 0.0):
        super().__init__()
        self.vocab_size = vocab_size
        self.k_max = k_max
        self.tok = nn.Embedding(vocab_size, d)
        self.sentinel = nn.Parameter(torch.empty(d))
        self.pos = nn.Embedding(k_max + 1, d)
        self.blocks = nn.ModuleList(Block(d, heads, dropout) for _ in range(layers))
        self.ln = nn.LayerNorm(d, eps=LN_EPS)
        nn.init.normal_(self.tok.weight, std=0.02)
        nn.init.normal_(self.sentinel, std=0.02)
        nn.init.normal_(self.pos.weight, std=0.02)

    def forward(self, tokens: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        """tokens: (B, K) ints; pad: (B, K) bool, True marks padding. Returns (B, K+1, d)."""
        if tokens.dim() == 1:
            tokens = tokens[None]
            pad = None if pad is None else pad[None]
        b, k = tokens.shape
        if k > self.k_max:
            raise ValueError(f"query length {k} exceeds k_max={self.k_max}")
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.vocab_size):
            raise ValueError(f"token ids must lie in [0, {self.vocab_size})")
        if pad is None:
            pad = torch.zeros(b, k, dtype=torch.bool)
        lengths = (~pad).sum(dim=1)
        if bool((pad != (torch.arange(k)[None] >= lengths[:, None])).any()):
            raise ValueError("text padding must be a suffix of each row")
        # Rows are encoded in groups of equal true length with the padding cut
        # off, so trailing pads never enter any reduction and the real rows are
        # bit-identical to an unpadded forward. Padded output rows are zero.
        out = None
        for n in lengths.unique().tolist():
            rows = (lengths == n).nonzero().flatten()
            y = self._encode(tokens[rows, :n])
            if out is None:
                out = y.new_zeros(b, k + 1, y.shape[-1])
            out[rows, : n + 1] = y
        return out

    def _encode(self, tokens: torch.Tensor) -> torch.Tensor:
        b, k = tokens.shape
        x = torch.cat([self.sentinel.expand(b, 1, -1), self.tok(tokens)], dim=1)
        x = x + self.pos.weight[: k + 1]
        allow = torch.ones(b, k + 1, k + 1, dtype=torch.bool)
        xs = [x]
        for blk in self.blocks:
            xs, _ = blk(xs, [([0], allow)])
        return self.ln(xs[0])


def build_embeddings(cfg: ModelConfig, flags: SemanticsFlags | None = None) -> nn.ModuleDict:
    return nn.ModuleDict(
        {
            "points": PointNetEncoder(cfg.hidden, cfg.p),
            "proposal": ProposalEmbedding(cfg.p, cfg.d),
            "semantics": SemanticsEmbedding(cfg.roi_dim, cfg.num_classes, cfg.d, flags),
            "text": TextEncoder(cfg.vocab_size, cfg.d, cfg.heads, cfg.text_layers, cfg.k_max, cfg.dropout),
        }
    )
