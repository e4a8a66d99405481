"""Cosine basis machinery over a bounded box search space.

Provides the truncated multi-index lattice, the normalized product-cosine
basis F_k, its spatial gradient, the per-index normalizers h_k and the
frequency weights used by the spectral coverage metric.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned search box [0, L_1] x ... x [0, L_v]."""

    lengths: tuple[float, ...]

    def __post_init__(self):
        lengths = tuple(float(L) for L in self.lengths)
        if len(lengths) < 1:
            raise ValueError("domain needs at least one axis")
        if any(not np.isfinite(L) or L <= 0.0 for L in lengths):
            raise ValueError(f"all box lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    def clamp(self, points: np.ndarray) -> np.ndarray:
        """Coordinate-wise projection onto the box (keeps basis terms defined
        if a trajectory transiently exits)."""
        return np.clip(points, 0.0, np.asarray(self.lengths))


@dataclass(frozen=True)
class FourierIndexSet:
    """All multi-indices k in {0..k_max}^v in lexicographic order.

    The all-zeros index is always first; the ordering is total and stable so
    coefficient vectors can be exchanged between agents by position alone.
    """

    dim: int
    k_max: int
    indices: np.ndarray  # (count, dim) int array

    @classmethod
    def build(cls, dim: int, k_max: int) -> "FourierIndexSet":
        if k_max < 0:
            raise ValueError("k_max must be non-negative")
        idx = np.array(list(itertools.product(range(k_max + 1), repeat=dim)), dtype=int)
        return cls(dim=dim, k_max=k_max, indices=idx)

    @property
    def count(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class BasisContext:
    """Precomputed basis constants shared (read-only) by all agents."""

    domain: BoxDomain
    index_set: FourierIndexSet
    h: np.ndarray       # (count,) normalizers, all > 0
    lam: np.ndarray     # (count,) frequency weights, lam[0] == 1

    @property
    def count(self) -> int:
        return self.index_set.count

    @property
    def dim(self) -> int:
        return self.domain.dim


def build_context(domain: BoxDomain, k_max: int) -> BasisContext:
    """Precompute h_k and the frequency weights for a truncated index set.

    h_k = sqrt(prod_i a_i) with a_i = L_i for k_i = 0 and L_i / 2 otherwise,
    which makes the basis orthonormal on the box.  The weights decay as
    (1 + ||k||^2)^(-(v+1)/2) so low frequencies dominate the metric.
    """
    index_set = FourierIndexSet.build(domain.dim, k_max)
    ks = index_set.indices
    L = np.asarray(domain.lengths)
    a = np.where(ks == 0, L, L / 2.0)
    h = np.sqrt(np.prod(a, axis=1))
    k_norm_sq = np.sum(ks.astype(float) ** 2, axis=1)
    lam = (1.0 + k_norm_sq) ** (-(domain.dim + 1) / 2.0)
    return BasisContext(domain=domain, index_set=index_set, h=h, lam=lam)


def _check_points(ctx: BasisContext, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != ctx.dim:
        raise ValueError(
            f"points have dimension {points.shape[1]}, domain has {ctx.dim}"
        )
    return ctx.domain.clamp(points)


def eval_all(ctx: BasisContext, points: np.ndarray) -> np.ndarray:
    """Evaluate every basis function at every point.

    points: (P, v) or (v,).  Returns (P, count).
    """
    pts = _check_points(ctx, points)
    ks = ctx.index_set.indices
    L = np.asarray(ctx.domain.lengths)
    # args[p, k, i] = k_i * pi * x_i / L_i
    args = pts[:, None, :] * (ks[None, :, :] * np.pi / L)
    return np.prod(np.cos(args), axis=2) / ctx.h


def grad_all(ctx: BasisContext, points: np.ndarray) -> np.ndarray:
    """Gradient of every basis function at every point: (P, count, v)."""
    pts = _check_points(ctx, points)
    ks = ctx.index_set.indices
    L = np.asarray(ctx.domain.lengths)
    freq = ks * np.pi / L                      # (count, v)
    args = pts[:, None, :] * freq[None, :, :]  # (P, count, v)
    cos = np.cos(args)
    sin = np.sin(args)
    grad = np.empty_like(args)
    for axis in range(ctx.dim):
        others = np.prod(np.delete(cos, axis, axis=2), axis=2)
        grad[:, :, axis] = -freq[:, axis] * sin[:, :, axis] * others
    return grad / ctx.h[None, :, None]


def basis_eval(ctx: BasisContext, k: int | np.ndarray, s: np.ndarray) -> float:
    """Single basis function F_k at a single point. k may be a flat index or
    a multi-index row matching the context ordering."""
    ki = _resolve_index(ctx, k)
    return float(eval_all(ctx, s)[0, ki])


def basis_grad(ctx: BasisContext, k: int | np.ndarray, s: np.ndarray) -> np.ndarray:
    """Spatial gradient of F_k at a single point, shape (v,)."""
    ki = _resolve_index(ctx, k)
    return grad_all(ctx, s)[0, ki]


def _resolve_index(ctx: BasisContext, k) -> int:
    if np.isscalar(k):
        return int(k)
    k = np.asarray(k, dtype=int)
    if k.shape != (ctx.dim,):
        raise ValueError(f"multi-index must have shape ({ctx.dim},)")
    matches = np.nonzero((ctx.index_set.indices == k).all(axis=1))[0]
    if matches.size == 0:
        raise ValueError(f"multi-index {k.tolist()} outside the truncated set")
    return int(matches[0])
