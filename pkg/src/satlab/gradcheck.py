"""Central finite-difference verification of every loss component on a tiny double-precision model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .config import LossConfig, ModelConfig, SemanticsFlags
from .fusion import MaskMode
from .model import Batch, GroundingModel

H = 1e-5
TOLERANCE = 1e-4
# below this magnitude both gradients count as zero; finite-difference noise is ~1e-10 at h=1e-5
REL_FLOOR = 1e-6

TINY = ModelConfig(
    d=8, heads=2, text_layers=1, fusion_layers=1, hidden=8, p=8, points=8, k_max=2, m_max=2,
    num_classes=4, roi_dim=6, vocab_size=10, dropout=0.0, type_embeddings=True, precision="double",
)


@dataclass
class CheckResult:
    component: str
    max_rel_error: float
    worst_parameter: str
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def tiny_batch(seed: int, cfg: ModelConfig = TINY, batch: int = 2) -> Batch:
    g = torch.Generator().manual_seed(seed)
    k, m, c = cfg.k_max, cfg.m_max, cfg.num_classes
    dt = torch.float64

    def rnd(*shape):
        return torch.randn(*shape, generator=g, dtype=dt)

    cls = torch.randint(0, c, (batch, m), generator=g)
    return Batch(
        tokens=torch.randint(2, cfg.vocab_size, (batch, k), generator=g),
        text_pad=torch.zeros(batch, k + 1, dtype=torch.bool),
        points=rnd(batch, m, cfg.points, 6),
        offsets=rnd(batch, m, 4),
        prop_pad=torch.zeros(batch, m, dtype=torch.bool),
        x_roi=rnd(batch, m, cfg.roi_dim).abs(),
        x_cls=torch.nn.functional.one_hot(cls, c).to(dt),
        x_geo=rnd(batch, m, 10),
        sem_pad=torch.zeros(batch, m, dtype=torch.bool),
        target=torch.randint(0, m, (batch,), generator=g),
        target_cls=torch.randint(0, c, (batch,), generator=g),
        prop_cls=cls,
        cor_eligible=torch.ones(batch, m, dtype=torch.bool),
        vg_i_ok=torch.ones(batch, dtype=torch.bool),
        query_ids=[f"q{i}" for i in range(batch)],
    )


def tiny_model(seed: int, cfg: ModelConfig = TINY) -> GroundingModel:
    torch.manual_seed(seed)
    model = GroundingModel(cfg, SemanticsFlags()).to(torch.float64)
    model.eval()
    with torch.no_grad():
        # move LayerNorm gains and zero biases off their exact init values
        for p in model.parameters():
            p.add_(1e-3 * torch.randn(p.shape, dtype=p.dtype))
    return model


def check_function(
    name: str,
    fn: Callable[[], torch.Tensor],
    params: list[tuple[str, torch.Tensor]],
    n_samples: int,
    rng: np.random.Generator,
    h: float = H,
    analytic_hook: Callable[[list[torch.Tensor]], list[torch.Tensor]] | None = None,
) -> CheckResult:
    """Compare autograd against central differences at ``n_samples`` random scalar entries of ``params``."""
    tensors = [t for _, t in params]
    grads = torch.autograd.grad(fn(), tensors, allow_unused=True)
    used = [(n, t, g) for (n, t), g in zip(params, grads) if g is not None]
    if analytic_hook is not None:
        used = [(n, t, g2) for (n, t, _), g2 in zip(used, analytic_hook([g for _, _, g in used]))]
    sizes = np.array([t.numel() for _, t, _ in used])
    picks = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, worst_name = 0.0, ""
    for flat in sorted(picks):
        ti = int(np.searchsorted(offsets, flat, side="right") - 1)
        pname, t, g = used[ti]
        idx = int(flat - offsets[ti])
        view = t.data.view(-1)
        orig = view[idx].item()
        with torch.no_grad():
            view[idx] = orig + h
            fp = fn().item()
            view[idx] = orig - h
            fm = fn().item()
            view[idx] = orig
        numeric = (fp - fm) / (2 * h)
        err = rel_error(g.reshape(-1)[idx].item(), numeric)
        if err > worst or not worst_name:
            worst, worst_name = err, f"{pname}[{idx}]"
    return CheckResult(name, worst, worst_name, len(picks))


def run_all(seed: int = 0, n_samples: int = 50, corrupt: bool = False) -> list[CheckResult]:
    """Finite-difference suites for l_vg_o, l_vg_i, l_cor, l_cls and the end-to-end total.

    Hard negatives are mined once at the unperturbed point and pinned, so a
    perturbation cannot switch the argmax under the difference quotient.
    ``corrupt`` scales one analytic gradient to prove the harness can fail.
    """
    from .training import compute_losses

    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        model = tiny_model(seed)
        batch = tiny_batch(seed + 1)
        cfg = LossConfig()
        params = list(model.named_parameters())
        with torch.no_grad():
            pinned = compute_losses(model(batch, MaskMode.SAT), batch, cfg).hard_negatives

        def parts():
            return compute_losses(model(batch, MaskMode.SAT), batch, cfg, negatives=pinned)

        suites = {
            "l_vg_o": lambda: parts().l_vg_o,
            "l_vg_i": lambda: parts().l_vg_i,
            "l_cor": lambda: parts().l_cor,
            "l_cls": lambda: parts().l_cls_q + parts().l_cls_o,
            "end_to_end": lambda: parts().total,
        }
        hook = None
        if corrupt:
            def hook(gs):
                return [g * 1.01 for g in gs]
        rng = np.random.default_rng(seed)
        results = []
        for name, fn in suites.items():
            results.append(check_function(name, fn, params, n_samples, rng, analytic_hook=hook if name == "l_vg_o" else None))
        return results
    finally:
        torch.set_default_dtype(prev)
