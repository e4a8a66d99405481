"""Consensus layer: stochastic matrix validation, averaging rounds,
convergence prediction and the coefficient message codec."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

_STOCH_TOL = 1e-12
_CODEC_VERSION = 1


@dataclass(frozen=True)
class ConsensusMatrix:
    """Row- and column-stochastic network matrix over N agents."""

    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))

    @property
    def n_agents(self) -> int:
        return self.P.shape[0]


def validate(P: np.ndarray) -> list[str]:
    """Check the consensus matrix; returns a list of violations (empty = ok).

    Checks non-negativity, row stochasticity, column stochasticity, and
    irreducibility of the link graph implied by the positive entries.
    """
    P = np.asarray(P, dtype=float)
    violations: list[str] = []
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return [f"matrix must be square, got shape {P.shape}"]
    if np.any(P < 0):
        violations.append("negative entries present")
    row = np.abs(P.sum(axis=1) - 1.0)
    if np.any(row > _STOCH_TOL):
        violations.append(
            f"row sums deviate from 1 by up to {row.max():.3e} (row-stochasticity)"
        )
    col = np.abs(P.sum(axis=0) - 1.0)
    if np.any(col > _STOCH_TOL):
        violations.append(
            f"column sums deviate from 1 by up to {col.max():.3e} (column-stochasticity)"
        )
    if not _strongly_connected(P > 0):
        violations.append("link graph is not connected (matrix reducible)")
    return violations


def _strongly_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return False

    def reachable(a):
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.nonzero(a[i])[0]:
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == n

    return reachable(adj) and reachable(adj.T)


def consensus_round(locals_: np.ndarray, P: np.ndarray) -> np.ndarray:
    """One averaging round: new_i = sum_j P_ij local_j, blockwise per entry.

    locals_: (N, L) array (or list of length-L vectors).
    """
    P = np.asarray(P, dtype=float)
    vecs = np.atleast_2d(np.asarray(locals_, dtype=float))
    if vecs.shape[0] != P.shape[0]:
        raise ValueError(
            f"{vecs.shape[0]} local vectors for a {P.shape[0]}-agent matrix"
        )
    return P @ vecs


def second_singular_value(P: np.ndarray) -> float:
    s = np.linalg.svd(np.asarray(P, dtype=float), compute_uv=False)
    return float(s[1]) if s.size > 1 else 0.0


def rounds_to_tolerance(P: np.ndarray, spread0: float, eps: float) -> int:
    """Rounds needed for the disagreement to contract from spread0 to eps.

    Uses the second-largest singular value of P as the per-round contraction
    factor on the disagreement subspace.
    """
    if eps <= 0 or spread0 < 0:
        raise ValueError("spread0 must be >= 0 and eps > 0")
    if eps >= spread0:
        return 0
    sigma2 = second_singular_value(P)
    if sigma2 >= 1.0 - _STOCH_TOL:
        raise ValueError(
            f"second singular value {sigma2:.6f} is not < 1; network does not mix"
        )
    if sigma2 == 0.0:
        return 1
    return int(math.ceil(math.log(eps / spread0) / math.log(sigma2)))


# -- standard constructions --------------------------------------------------

def complete_uniform(n: int) -> np.ndarray:
    """Complete graph with uniform weights: one round reaches the exact mean."""
    if n < 1:
        raise ValueError("need at least one agent")
    return np.full((n, n), 1.0 / n)


def ring_adjacency(n: int) -> np.ndarray:
    adj = np.zeros((n, n))
    for i in range(n):
        adj[i, (i + 1) % n] = 1
        adj[(i + 1) % n, i] = 1
    return adj


def adjacency_from_edges(n: int, edges) -> np.ndarray:
    adj = np.zeros((n, n))
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ValueError(f"bad edge ({i}, {j}) for {n} agents")
        adj[i, j] = adj[j, i] = 1
    return adj


def metropolis_weights(adjacency: np.ndarray) -> np.ndarray:
    """Doubly-stochastic matrix from an undirected link graph.

    w_ij = 1 / (1 + max(deg_i, deg_j)) on links, diagonal absorbs the rest.
    """
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric (undirected links)")
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    P = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if adj[i, j]:
                P[i, j] = P[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return P


# -- message codec ------------------------------------------------------------

@dataclass
class CoefficientMessage:
    """Coefficient payload exchanged between neighbors each round."""

    sender: int
    round_counter: int
    ck: np.ndarray
    phik: np.ndarray | None = None

    def __post_init__(self):
        self.ck = np.asarray(self.ck, dtype=float)
        if self.phik is not None:
            self.phik = np.asarray(self.phik, dtype=float)


def encode_message(msg: CoefficientMessage) -> bytes:
    """Versioned little-endian layout: u32 version, u32 sender, u32 round,
    u32 length, length f64 coefficients, then u32 target-coefficient count
    (0 when absent) followed by that many f64 values."""
    ck = msg.ck
    phik = msg.phik if msg.phik is not None else np.empty(0)
    head = struct.pack("<IIII", _CODEC_VERSION, msg.sender, msg.round_counter, ck.size)
    body = struct.pack(f"<{ck.size}d", *ck.tolist())
    tail = struct.pack("<I", phik.size) + struct.pack(f"<{phik.size}d", *phik.tolist())
    return head + body + tail


def decode_message(data: bytes) -> CoefficientMessage:
    version, sender, round_counter, length = struct.unpack_from("<IIII", data, 0)
    if version != _CODEC_VERSION:
        raise ValueError(f"unsupported message version {version}")
    offset = 16
    ck = np.array(struct.unpack_from(f"<{length}d", data, offset))
    offset += 8 * length
    (phi_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    phik = None
    if phi_len:
        phik = np.array(struct.unpack_from(f"<{phi_len}d", data, offset))
    return CoefficientMessage(sender=sender, round_counter=round_counter, ck=ck, phik=phik)


def message_to_json(msg: CoefficientMessage) -> str:
    payload = {
        "version": _CODEC_VERSION,
        "sender": msg.sender,
        "round": msg.round_counter,
        "ck": msg.ck.tolist(),
        "phik": msg.phik.tolist() if msg.phik is not None else None,
    }
    return json.dumps(payload, sort_keys=True)


def message_from_json(text: str) -> CoefficientMessage:
    payload = json.loads(text)
    if payload.get("version") != _CODEC_VERSION:
        raise ValueError(f"unsupported message version {payload.get('version')}")
    phik = payload.get("phik")
    return CoefficientMessage(
        sender=payload["sender"],
        round_counter=payload["round"],
        ck=np.asarray(payload["ck"], dtype=float),
        phik=None if phik is None else np.asarray(phik, dtype=float),
    )
