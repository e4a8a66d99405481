"""Target spatial distributions: construction, normalization, masking,
expected-information maps for bearing sensing, and spectral decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basis import BasisContext, BoxDomain, eval_all
from .estimation import SensorModel, TargetBelief

# Coefficient vectors are plain arrays ordered like the context's index set.
CoefficientVector = np.ndarray

_SUM_TOL = 1e-9
_EID_DIST_FLOOR = 1e-12


@dataclass(frozen=True)
class SpatialField:
    """Non-negative density sampled on a regular cell-centered grid."""

    domain: BoxDomain
    values: np.ndarray  # shape = resolution per axis, C order

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != self.domain.dim:
            raise ValueError(
                f"values must have {self.domain.dim} axes, got {values.ndim}"
            )
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(
            np.prod([L / r for L, r in zip(self.domain.lengths, self.resolution)])
        )

    def cell_centers(self) -> np.ndarray:
        """All cell centers, shape (prod(resolution), v), C order."""
        axes = [
            (np.arange(r) + 0.5) * (L / r)
            for L, r in zip(self.domain.lengths, self.resolution)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def riemann_sum(self) -> float:
        return float(self.values.sum() * self.cell_volume)


def normalize(field: SpatialField) -> SpatialField:
    total = field.riemann_sum()
    if total <= 0:
        raise ValueError("cannot normalize an all-zero field")
    return SpatialField(domain=field.domain, values=field.values / total)


def uniform_field(domain: BoxDomain, resolution=100) -> SpatialField:
    res = _resolve_resolution(domain, resolution)
    values = np.ones(res)
    return normalize(SpatialField(domain=domain, values=values))


def gaussian_mixture(
    domain: BoxDomain,
    means: Sequence[Sequence[float]],
    covariances: Sequence[Sequence[Sequence[float]]],
    weights: Sequence[float],
    resolution=100,
) -> SpatialField:
    """Normalized Gaussian-mixture density sampled on the grid."""
    means = [np.asarray(m, dtype=float) for m in means]
    covs = [np.asarray(c, dtype=float) for c in covariances]
    weights = np.asarray(weights, dtype=float)
    if len(means) < 1 or len(means) != len(covs) or len(means) != weights.size:
        raise ValueError("means, covariances and weights must align, >= 1 component")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")

    res = _resolve_resolution(domain, resolution)
    centers = SpatialField(domain=domain, values=np.zeros(res)).cell_centers()
    vals = np.zeros(centers.shape[0])
    for w, mean, cov in zip(weights, means, covs):
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError(f"degenerate covariance {cov.tolist()}") from None
        diff = centers - mean
        sol = np.linalg.solve(chol, diff.T)
        quad = np.sum(sol**2, axis=0)
        norm = (2.0 * np.pi) ** (domain.dim / 2.0) * np.prod(np.diag(chol))
        vals += w * np.exp(-0.5 * quad) / norm
    field = SpatialField(domain=domain, values=vals.reshape(res))
    return normalize(field)


def apply_mask(
    field: SpatialField, inside: Callable[[np.ndarray], np.ndarray] | np.ndarray
) -> SpatialField:
    """Zero the density outside a region and renormalize.

    inside: boolean array shaped like the grid, or a predicate mapping
    (G, v) points to booleans.
    """
    if callable(inside):
        mask = np.asarray(inside(field.cell_centers()), dtype=bool).reshape(
            field.resolution
        )
    else:
        mask = np.asarray(inside, dtype=bool)
        if mask.shape != field.resolution:
            raise ValueError("mask shape must match the field resolution")
    masked = np.where(mask, field.values, 0.0)
    if masked.sum() <= 0:
        raise ValueError("mask removes all mass from the field")
    return normalize(SpatialField(domain=field.domain, values=masked))


def decompose(field: SpatialField, ctx: BasisContext) -> CoefficientVector:
    """Basis coefficients of the density by midpoint quadrature on its grid."""
    if field.domain.lengths != ctx.domain.lengths:
        raise ValueError("field and basis context live on different domains")
    B = eval_all(ctx, field.cell_centers())
    return (field.values.ravel() @ B) * field.cell_volume


def reconstruct(
    ctx: BasisContext, coefficients: CoefficientVector, points: np.ndarray
) -> np.ndarray:
    """Pointwise sum of coefficient-weighted basis functions."""
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (ctx.count,):
        raise ValueError("coefficient length does not match the index set")
    return eval_all(ctx, points) @ coefficients


def eid(
    beliefs: Sequence[TargetBelief],
    sensor: SensorModel,
    domain: BoxDomain,
    resolution=100,
    n_samples: int = 100,
    rng: np.random.Generator | None = None,
    range_floor: float = 0.02,
) -> SpatialField:
    """Expected-information density for bearing sensing of uncertain targets.

    At each grid point the Fisher information of the bearing measurement is
    averaged over position samples drawn from each target belief, and the
    determinant taken; per-target maps are summed, then normalized once.
    Samples falling outside the box are redrawn (bounded retries), any
    remainder drawn uniformly over the box so that a flat belief degrades
    gracefully to a uniform position prior.

    range_floor softens the bearing kernel below that range: the raw 1/d^2
    information blows up as the vantage point approaches a sampled target
    position (the belief-averaged information is even log-divergent), which
    would leave the map dominated by sampling speckle.
    """
    if len(beliefs) == 0:
        raise ValueError("need at least one target belief")
    if rng is None:
        rng = np.random.default_rng(0)
    res = _resolve_resolution(domain, resolution)
    grid = SpatialField(domain=domain, values=np.zeros(res)).cell_centers()
    total = np.zeros(grid.shape[0])
    for belief in beliefs:
        samples = _sample_in_box(belief, domain, n_samples, rng)
        total += bearing_information_determinant(
            grid, samples, sensor.variance, range_floor
        )
    field = SpatialField(domain=domain, values=total.reshape(res))
    return normalize(field)


def _sample_in_box(
    belief: TargetBelief, domain: BoxDomain, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    lengths = np.asarray(domain.lengths)
    out = np.empty((n_samples, 2))
    filled = 0
    for _ in range(50):
        need = n_samples - filled
        if need == 0:
            break
        draw = rng.multivariate_normal(belief.mean, belief.cov, size=need, method="cholesky")
        keep = draw[np.all((draw >= 0.0) & (draw <= lengths), axis=1)]
        take = min(keep.shape[0], need)
        out[filled : filled + take] = keep[:take]
        filled += take
    if filled < n_samples:
        out[filled:] = rng.uniform(0.0, lengths, size=(n_samples - filled, 2))
    return out


def bearing_information_determinant(
    grid: np.ndarray,
    samples: np.ndarray,
    variance: float,
    range_floor: float = 0.0,
) -> np.ndarray:
    """det of the sample-averaged bearing Fisher information at each grid
    point, with the kernel softened below range_floor."""
    delta = samples[None, :, :] - grid[:, None, :]          # (G, M, 2)
    d2 = np.sum(delta**2, axis=2) + range_floor**2
    d2 = np.maximum(d2, _EID_DIST_FLOOR)
    hx = -delta[:, :, 1] / d2
    hy = delta[:, :, 0] / d2
    a = np.mean(hx * hx, axis=1)
    b = np.mean(hx * hy, axis=1)
    c = np.mean(hy * hy, axis=1)
    return (a * c - b * b) / (variance**2)


# -- CSV grid interchange -----------------------------------------------------

def field_csv_text(field: SpatialField) -> str:
    """Header row: v, lengths, resolution; then row-major grid values."""
    res = field.resolution
    header = [str(field.domain.dim)]
    header += [repr(float(L)) for L in field.domain.lengths]
    header += [str(r) for r in res]
    rows = field.values.reshape(res[0], -1)
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def save_field_csv(field: SpatialField, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(field_csv_text(field))


def load_field_csv(path) -> SpatialField:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        v = int(header[0])
        lengths = tuple(float(x) for x in header[1 : 1 + v])
        res = tuple(int(x) for x in header[1 + v : 1 + 2 * v])
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    domain = BoxDomain(lengths=lengths)
    return SpatialField(domain=domain, values=values.reshape(res))


def _resolve_resolution(domain: BoxDomain, resolution) -> tuple[int, ...]:
    if np.isscalar(resolution):
        res = (int(resolution),) * domain.dim
    else:
        res = tuple(int(r) for r in resolution)
    if len(res) != domain.dim or any(r < 1 for r in res):
        raise ValueError(f"bad resolution {resolution} for a {domain.dim}-d domain")
    return res
