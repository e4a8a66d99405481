"""Line integrals along sampled trajectories.

Trajectories are treated as piecewise-linear paths through their samples.
Each inter-sample segment is integrated with a fixed 5-point Gauss-Legendre
rule, which is exact to machine precision for the smooth integrands used here
(products of cosines, quadratic penalties) at the segment lengths that occur
in practice.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .basis import BasisContext, eval_all

# Gauss-Legendre nodes/weights mapped onto [0, 1].
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def segment_quad_points(times: np.ndarray, points: np.ndarray):
    """Quadrature nodes and weights for a piecewise-linear path.

    times: (S,) strictly increasing sample times.
    points: (S, v) path samples.
    Returns (nodes (M, v), weights (M,)) with M = 5 * (S - 1); the weighted
    sum of any function over the nodes approximates its time integral.
    """
    times = np.asarray(times, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if times.ndim != 1 or times.size != points.shape[0]:
        raise ValueError("times and points must have matching leading length")
    if times.size < 2:
        raise ValueError("need at least two samples to integrate")
    dts = np.diff(times)
    if np.any(dts <= 0):
        raise ValueError("times must be strictly increasing")
    starts = points[:-1]                       # (S-1, v)
    deltas = points[1:] - points[:-1]
    # nodes[i, g, :] = start_i + node_g * delta_i
    nodes = starts[:, None, :] + _GL_NODES[None, :, None] * deltas[:, None, :]
    weights = dts[:, None] * _GL_WEIGHTS[None, :]
    return nodes.reshape(-1, points.shape[1]), weights.reshape(-1)


def basis_path_integral(
    ctx: BasisContext, times: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Integral of every basis function along the path: (count,)."""
    nodes, weights = segment_quad_points(times, points)
    return weights @ eval_all(ctx, nodes)


def scalar_path_integral(
    fn: Callable[[np.ndarray], np.ndarray], times: np.ndarray, points: np.ndarray
) -> float:
    """Integral of a scalar field fn(points (M, v)) -> (M,) along the path."""
    nodes, weights = segment_quad_points(times, points)
    return float(weights @ np.asarray(fn(nodes), dtype=float))
