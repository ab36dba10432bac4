"""Differentiable discrepancy and regularization losses.

All functions take torch tensors and return a scalar tensor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ArgumentError

MEDIAN_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


class VacuousLossWarning(UserWarning):
    """A class-conditional loss had no class with weight on both sides."""


@dataclass(frozen=True)
class KernelBank:
    """RBF bandwidths (in squared-distance units) plus an optional linear kernel.

    ``bandwidths=None`` means the median heuristic: bandwidths are
    ``MEDIAN_MULTIPLIERS`` times the median pairwise squared distance of the
    joint batch, treated as a constant (no gradient).
    """

    bandwidths: tuple | None = None
    linear: bool = False

    def __post_init__(self):
        if self.bandwidths is not None:
            if not self.bandwidths and not self.linear:
                raise ArgumentError("kernel bank is empty")
            for g in self.bandwidths:
                if not (g > 0 and g < float("inf")):
                    raise ArgumentError(f"bandwidth must be finite and positive, got {g}")

    def resolve(self, joint: torch.Tensor) -> list[float]:
        if self.bandwidths is not None:
            return list(self.bandwidths)
        with torch.no_grad():
            d2 = torch.cdist(joint, joint).pow(2)
            n = joint.shape[0]
            iu = torch.triu_indices(n, n, offset=1)
            pairs = d2[iu[0], iu[1]]
            median = pairs.quantile(0.5).item() if pairs.numel() else 0.0
        if not median > 0:
            median = 1.0
        return [m * median for m in MEDIAN_MULTIPLIERS]


DEFAULT_BANK = KernelBank()
LINEAR = KernelBank(bandwidths=(), linear=True)


def _sq_dist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # explicit difference keeps gradients exact at coincident rows
    return (a[:, None, :] - b[None, :, :]).pow(2).sum(-1)


def kernel_matrix(a, b, gammas, linear=False) -> torch.Tensor:
    d2 = _sq_dist(a, b)
    k = torch.zeros_like(d2)
    for g in gammas:
        k = k + torch.exp(-d2 / g)
    if linear:
        k = k + a @ b.T
    return k


def _check_pair(zs, zt, min_rows=1):
    if zs.ndim != 2 or zt.ndim != 2:
        raise ArgumentError("features must be 2-D (N, D)")
    if zs.shape[1] != zt.shape[1]:
        raise ArgumentError(f"feature dims differ: {zs.shape[1]} vs {zt.shape[1]}")
    if zs.shape[0] < min_rows or zt.shape[0] < min_rows:
        raise ArgumentError(f"need at least {min_rows} rows per batch")


def mmd(zs: torch.Tensor, zt: torch.Tensor, kernels: KernelBank = DEFAULT_BANK) -> torch.Tensor:
    """Biased (V-statistic) squared MMD summed over a kernel bank."""
    _check_pair(zs, zt)
    gammas = kernels.resolve(torch.cat([zs, zt]))
    kss = kernel_matrix(zs, zs, gammas, kernels.linear).mean()
    ktt = kernel_matrix(zt, zt, gammas, kernels.linear).mean()
    kst = kernel_matrix(zs, zt, gammas, kernels.linear).mean()
    return kss + ktt - 2 * kst


def _cov(z):
    zc = z - z.mean(0, keepdim=True)
    return zc.T @ zc / (z.shape[0] - 1)


def coral(zs: torch.Tensor, zt: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius distance of unbiased covariances over ``4 D^2``."""
    _check_pair(zs, zt, min_rows=2)
    d = zs.shape[1]
    return (_cov(zs) - _cov(zt)).pow(2).sum() / (4 * d * d)


def homm(zs: torch.Tensor, zt: torch.Tensor, order: int = 3) -> torch.Tensor:
    """Squared distance of order-``p`` moment tensors of centered features.

    ``||M_s - M_t||^2`` is expanded through inner products,
    ``<M_a, M_b> = mean_ij (a_i . b_j)^p``, so the ``D^p`` tensors never
    need to be formed.
    """
    if order not in (2, 3):
        raise ArgumentError(f"unsupported moment order {order}")
    _check_pair(zs, zt)
    a = zs - zs.mean(0, keepdim=True)
    b = zt - zt.mean(0, keepdim=True)
    ss = (a @ a.T).pow(order).mean()
    tt = (b @ b.T).pow(order).mean()
    st = (a @ b.T).pow(order).mean()
    return (ss + tt - 2 * st) / zs.shape[1] ** order


def lmmd(
    zs: torch.Tensor,
    ys: torch.Tensor,
    zt: torch.Tensor,
    pt: torch.Tensor,
    kernels: KernelBank = DEFAULT_BANK,
) -> torch.Tensor:
    """Class-conditional MMD with one-hot source and soft target weights.

    Classes without weight on either side are skipped; the result is the
    mean over contributing classes (0 and a warning when none contribute).
    """
    _check_pair(zs, zt)
    if pt.ndim != 2 or pt.shape[0] != zt.shape[0]:
        raise ArgumentError("pt must be (Nt, K)")
    num_classes = pt.shape[1]
    if ys.numel() and (int(ys.min()) < 0 or int(ys.max()) >= num_classes):
        raise ArgumentError("source labels outside [0, K)")
    ws_all = F.one_hot(ys.long(), num_classes).to(zs.dtype)
    gammas = kernels.resolve(torch.cat([zs, zt]))
    kss = kernel_matrix(zs, zs, gammas, kernels.linear)
    ktt = kernel_matrix(zt, zt, gammas, kernels.linear)
    kst = kernel_matrix(zs, zt, gammas, kernels.linear)
    total, used = zs.new_zeros(()), 0
    for k in range(num_classes):
        ws, wt = ws_all[:, k], pt[:, k]
        s_mass, t_mass = ws.sum(), wt.sum()
        if s_mass.item() <= 0 or t_mass.item() <= 1e-12:
            continue
        ws, wt = ws / s_mass, wt / t_mass
        total = total + ws @ kss @ ws + wt @ ktt @ wt - 2 * ws @ kst @ wt
        used += 1
    if used == 0:
        warnings.warn("lmmd: no class carries weight in both domains", VacuousLossWarning, stacklevel=2)
        return total
    return total / used


def conditional_entropy(probs: torch.Tensor) -> torch.Tensor:
    """Mean Shannon entropy of probability rows, with 0 log 0 = 0."""
    if probs.numel() and probs.min().item() < 0:
        raise ArgumentError("probabilities must be non-negative")
    logp = torch.log(probs.clamp_min(torch.finfo(probs.dtype).tiny))
    return -(probs * logp).sum(1).mean()


def entropy_from_logits(logits: torch.Tensor) -> torch.Tensor:
    return -(F.softmax(logits, 1) * F.log_softmax(logits, 1)).sum(1).mean()


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lambd):
        ctx.lambd = lambd
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.lambd * grad, None


def gradient_reversal(x: torch.Tensor, lambd: float = 1.0) -> torch.Tensor:
    """Identity forward; gradient multiplied by ``-lambd`` backward."""
    if lambd < 0:
        raise ArgumentError("lambda must be >= 0")
    return _GradientReversal.apply(x, float(lambd))


def _unit(d: torch.Tensor) -> torch.Tensor:
    flat = d.reshape(d.shape[0], -1)
    return (flat / (flat.norm(dim=1, keepdim=True) + 1e-12)).reshape_as(d)


def _kl(p_logits, q_logits):
    p = F.softmax(p_logits, 1)
    return (p * (F.log_softmax(p_logits, 1) - F.log_softmax(q_logits, 1))).sum(1).mean()


def vat_loss(
    model,
    x: torch.Tensor,
    radius: float = 1.0,
    xi: float = 1e-2,
    power_iters: int = 1,
    generator: torch.Generator | None = None,
    direction: torch.Tensor | None = None,
    detach_clean: bool = True,
) -> torch.Tensor:
    """KL(p(x) || p(x + r_adv)) for the worst-case perturbation of norm ``radius``.

    ``model`` maps inputs to logits.  The direction comes from
    ``power_iters`` rounds of power iteration started from a random vector,
    unless ``direction`` is given.
    """
    if power_iters < 1:
        raise ArgumentError("power_iters must be >= 1")
    if radius < 0 or xi <= 0:
        raise ArgumentError("radius must be >= 0 and xi > 0")
    clean = model(x)
    target = clean.detach() if detach_clean else clean
    if radius == 0:
        return clean.sum() * 0.0
    if direction is None:
        d = _unit(torch.randn(x.shape, generator=generator, dtype=x.dtype, device=x.device))
        for _ in range(power_iters):
            d = d.detach().requires_grad_(True)
            dist = _kl(clean.detach(), model(x.detach() + xi * d))
            (grad,) = torch.autograd.grad(dist, d)
            d = _unit(grad)
        direction = d
    r_adv = radius * _unit(direction).detach()
    return _kl(target, model(x + r_adv))


def domain_discriminator_loss(d_src: torch.Tensor, d_tgt: torch.Tensor, logits: bool = False) -> torch.Tensor:
    """Binary cross-entropy with source labelled 1 and target 0.

    Inputs are probabilities in (0, 1), or raw logits when ``logits=True``.
    """
    d_src, d_tgt = d_src.reshape(-1), d_tgt.reshape(-1)
    if logits:
        scores = torch.cat([d_src, d_tgt])
        labels = torch.cat([torch.ones_like(d_src), torch.zeros_like(d_tgt)])
        return F.binary_cross_entropy_with_logits(scores, labels)
    for v in (d_src, d_tgt):
        if v.numel() and (v.min().item() <= 0 or v.max().item() >= 1):
            raise ArgumentError("discriminator outputs must lie strictly in (0, 1)")
    n = d_src.numel() + d_tgt.numel()
    return -(torch.log(d_src).sum() + torch.log1p(-d_tgt).sum()) / n
