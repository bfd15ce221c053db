"""Second-moment estimation from leaf measurements, and the distance estimator.

The model links measured voltage deviations to injections linearly, so every
quantity the learner needs is a raw second moment: E[v_a p_b], E[v_a q_b] for
node pairs and E[p_b^2], E[q_b^2], E[p_b q_b] per node. Means are not
re-centered; the model is zero-mean by construction.

For each ordered pair (a, b), the two unknown inverse-Laplacian entries solve

    [E[p_b^2]   E[p_b q_b]] [h_r]   [E[v_a p_b]]
    [E[p_b q_b] E[q_b^2]  ] [h_x] = [E[v_a q_b]]

and the additive distances follow as d(a,b) = h(a,a) + h(b,b) - 2 h(a,b).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .distances import DistanceMatrix
from .exceptions import ConditioningError, FormatError, ValidationError

if TYPE_CHECKING:  # pragma: no cover
    from .lcpf import MeasurementSet

ACCUMULATOR_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Raw second moments over an ordered node list.

    count is the number of samples averaged, or None for analytic
    (infinite-sample) moments. vp[a, b] holds E[v_a p_b]; vq likewise;
    pp, qq, pq are the per-node injection moments.
    """

    nodes: tuple[str, ...]
    count: int | None
    vp: np.ndarray
    vq: np.ndarray
    pp: np.ndarray
    qq: np.ndarray
    pq: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        m = len(self.nodes)
        for name in ("vp", "vq"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m, m):
                raise ValidationError(f"moment block {name!r}: expected shape {(m, m)}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        for name in ("pp", "qq", "pq"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (m,):
                raise ValidationError(f"moment block {name!r}: expected shape {(m,)}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if self.count is not None and self.count < 0:
            raise ValidationError(f"sample count must be >= 0, got {self.count}")

    @classmethod
    def empty(cls, nodes: tuple[str, ...]) -> "MomentSet":
        """Zero-count identity element for merge()."""
        m = len(nodes)
        z = np.zeros((m, m))
        return cls(tuple(nodes), 0, z, z.copy(), np.zeros(m), np.zeros(m), np.zeros(m))

    def index(self, node: str) -> int:
        try:
            return self.nodes.index(node)
        except ValueError:
            raise ValidationError(f"moment set has no node {node!r}") from None


class MomentAccumulator:
    """Streaming accumulator for the five moment blocks.

    Data is folded in fixed-size chunks; each chunk contributes its own mean,
    merged with a count-weighted update. That keeps the result identical (to
    rounding) whether the data arrives in one pass or as merged partials.
    """

    def __init__(self, nodes: tuple[str, ...]):
        self.nodes = tuple(nodes)
        m = len(self.nodes)
        self.count = 0
        self._vp = np.zeros((m, m))
        self._vq = np.zeros((m, m))
        self._pp = np.zeros(m)
        self._qq = np.zeros(m)
        self._pq = np.zeros(m)

    def update(self, v: np.ndarray, p: np.ndarray, q: np.ndarray) -> None:
        """Fold in a block of rows (shape (t, m) each)."""
        v, p, q = (np.asarray(a, dtype=float) for a in (v, p, q))
        t = v.shape[0]
        if t == 0:
            return
        if v.shape != p.shape or v.shape != q.shape or v.shape[1] != len(self.nodes):
            raise ValidationError("measurement block shapes do not match the node list")
        w = t / (self.count + t)
        self._vp += w * (v.T @ p / t - self._vp)
        self._vq += w * (v.T @ q / t - self._vq)
        self._pp += w * ((p * p).mean(axis=0) - self._pp)
        self._qq += w * ((q * q).mean(axis=0) - self._qq)
        self._pq += w * ((p * q).mean(axis=0) - self._pq)
        self.count += t

    def merge(self, other: "MomentAccumulator") -> None:
        if self.nodes != other.nodes:
            raise ValidationError("cannot merge accumulators over different node lists")
        if other.count == 0:
            return
        w = other.count / (self.count + other.count)
        for name in ("_vp", "_vq", "_pp", "_qq", "_pq"):
            mine, theirs = getattr(self, name), getattr(other, name)
            mine += w * (theirs - mine)
        self.count += other.count

    def result(self) -> MomentSet:
        return MomentSet(
            self.nodes, self.count,
            self._vp.copy(), self._vq.copy(),
            self._pp.copy(), self._qq.copy(), self._pq.copy(),
        )


def accumulate(ms: "MeasurementSet", chunk: int = ACCUMULATOR_CHUNK) -> MomentSet:
    """Second moments of a measurement set."""
    if ms.T == 0:
        raise ValidationError("cannot accumulate an empty measurement set")
    acc = MomentAccumulator(ms.nodes)
    for start in range(0, ms.T, chunk):
        stop = min(start + chunk, ms.T)
        acc.update(ms.v[start:stop], ms.p[start:stop], ms.q[start:stop])
    return acc.result()


def merge(m1: MomentSet, m2: MomentSet) -> MomentSet:
    """Count-weighted combination; equals accumulating the concatenated data."""
    if m1.nodes != m2.nodes:
        raise ValidationError("cannot merge moment sets over different node lists")
    if m1.count is None or m2.count is None:
        raise ValidationError("analytic moment sets (count=None) cannot be merged")
    total = m1.count + m2.count
    if total == 0:
        return MomentSet.empty(m1.nodes)
    w = m2.count / total
    blocks = [
        getattr(m1, name) + w * (getattr(m2, name) - getattr(m1, name))
        for name in ("vp", "vq", "pp", "qq", "pq")
    ]
    return MomentSet(m1.nodes, total, *blocks)


# ---------------------------------------------------------------------------
# Conditioning and the pairwise solve
# ---------------------------------------------------------------------------

def node_determinants(m: MomentSet) -> np.ndarray:
    """Determinant of each node's 2x2 injection moment matrix."""
    return m.pp * m.qq - m.pq * m.pq


def default_conditioning_threshold(m: MomentSet) -> float:
    """0.1 x the median per-node injection covariance determinant."""
    dets = np.abs(node_determinants(m))
    return 0.1 * float(np.median(dets)) if dets.size else 0.0


def conditioning_check(m: MomentSet, lam: float | None = None) -> dict[str, bool]:
    """Per-node pass/fail: node b passes iff |det of its moment matrix| >= lam."""
    if lam is None:
        lam = default_conditioning_threshold(m)
    dets = np.abs(node_determinants(m))
    return {n: bool(dets[i] >= lam) for i, n in enumerate(m.nodes)}


def estimate_h_pair(m: MomentSet, a: str, b: str, lam: float | None = None) -> tuple[float, float]:
    """Solve the 2x2 system for (h_r, h_x) at the ordered pair (a, b)."""
    if lam is None:
        lam = default_conditioning_threshold(m)
    ia, ib = m.index(a), m.index(b)
    det = m.pp[ib] * m.qq[ib] - m.pq[ib] * m.pq[ib]
    if abs(det) < lam:
        raise ConditioningError(
            f"node {b!r}: injection moment determinant {det:.3e} below threshold {lam:.3e}",
            nodes=(b,),
        )
    h_r = (m.qq[ib] * m.vp[ia, ib] - m.pq[ib] * m.vq[ia, ib]) / det
    h_x = (m.pp[ib] * m.vq[ia, ib] - m.pq[ib] * m.vp[ia, ib]) / det
    return float(h_r), float(h_x)


def estimate_distances(
    m: MomentSet,
    nodes: tuple[str, ...] | None = None,
    lam: float | None = None,
) -> DistanceMatrix:
    """Pairwise d_r and d_x estimates over the given nodes (default: all).

    Runs the pairwise 2x2 solves for every ordered pair, symmetrizes the two
    inverse-Laplacian estimates by averaging, and converts to distances. The
    diagonal is exactly zero by construction.
    """
    if lam is None:
        lam = default_conditioning_threshold(m)
    if nodes is None:
        nodes = m.nodes
    ix = np.array([m.index(n) for n in nodes])

    det = node_determinants(m)[ix]
    bad = [nodes[i] for i in range(len(nodes)) if abs(det[i]) < lam]
    if bad:
        raise ConditioningError(
            f"nodes {bad} fail the conditioning check (threshold {lam:.3e})",
            nodes=tuple(bad),
        )

    vp = m.vp[np.ix_(ix, ix)]
    vq = m.vq[np.ix_(ix, ix)]
    pp, qq, pq = m.pp[ix], m.qq[ix], m.pq[ix]
    h_r = (qq * vp - pq * vq) / det
    h_x = (pp * vq - pq * vp) / det
    h_r = (h_r + h_r.T) / 2.0
    h_x = (h_x + h_x.T) / 2.0

    out = []
    for h in (h_r, h_x):
        diag = np.diagonal(h)
        d = diag[:, None] + diag[None, :] - 2.0 * h
        np.fill_diagonal(d, 0.0)
        out.append(d)
    return DistanceMatrix(tuple(nodes), out[0], out[1])


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

def moments_to_dict(m: MomentSet) -> dict:
    return {
        "nodes": list(m.nodes),
        "count": m.count,
        "vp": m.vp.tolist(),
        "vq": m.vq.tolist(),
        "pp": m.pp.tolist(),
        "qq": m.qq.tolist(),
        "pq": m.pq.tolist(),
    }


def moments_from_dict(data: dict, source: str = "<moments>") -> MomentSet:
    if not isinstance(data, dict):
        raise FormatError(f"{source}: expected a JSON object")
    for key in ("nodes", "count", "vp", "vq", "pp", "qq", "pq"):
        if key not in data:
            raise FormatError(f"{source}: missing field {key!r}")
    count = data["count"]
    if count is not None and not isinstance(count, int):
        raise FormatError(f"{source}: field 'count' must be an integer or null")
    try:
        return MomentSet(
            tuple(data["nodes"]), count,
            np.asarray(data["vp"], dtype=float), np.asarray(data["vq"], dtype=float),
            np.asarray(data["pp"], dtype=float), np.asarray(data["qq"], dtype=float),
            np.asarray(data["pq"], dtype=float),
        )
    except (ValidationError, ValueError) as exc:
        raise FormatError(f"{source}: {exc}") from None


def save_moments(m: MomentSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(moments_to_dict(m), indent=2) + "\n")


def load_moments(path: str | Path) -> MomentSet:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return moments_from_dict(data, source=str(path))
