"""Linear power-flow simulator over the reduced tree.

Voltage-magnitude and angle deviations respond linearly to the power
injections: with H_r, H_x the reduced Laplacians weighted by 1/r and 1/x,

    v     = H_r^-1 p + H_x^-1 q
    theta = H_x^-1 p - H_r^-1 q

All variables are zero-mean deviations from the operating point. Injections
are drawn independently per node and per sample; hidden junctions inject too,
but only observed leaves appear in the exported measurements. Angles are
computed for completeness and never exported.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .exceptions import FormatError, ValidationError
from .grid import Grid, ensure_valid, reduced_laplacian
from .moments import MomentSet

SIM_CHUNK = 4096  # frozen: part of the reproducibility contract

_FAMILIES = ("gaussian", "uniform")


@dataclass(frozen=True)
class InjectionSpec:
    """Per-node injection second moments and the sampling family.

    sigma_pp, sigma_qq are the active/reactive power variances, sigma_pq the
    covariance. per_node overrides the triple for individual nodes. The
    "uniform" family draws from a uniform distribution with the same matched
    second moments (a distribution-robustness option).
    """

    sigma_pp: float = 1.0
    sigma_qq: float = 1.0
    sigma_pq: float = 0.0
    family: str = "gaussian"
    per_node: Mapping[str, tuple[float, float, float]] | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValidationError(f"unknown injection family {self.family!r}")

    def moments_for(self, node: str) -> tuple[float, float, float]:
        if self.per_node and node in self.per_node:
            spp, sqq, spq = self.per_node[node]
        else:
            spp, sqq, spq = self.sigma_pp, self.sigma_qq, self.sigma_pq
        if spp <= 0 or sqq <= 0 or spp * sqq - spq * spq <= 0:
            raise ValidationError(
                f"node {node!r}: injection moments ({spp}, {sqq}, {spq}) are not positive definite"
            )
        return float(spp), float(sqq), float(spq)


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """T samples of (v, p, q) per node, as (T, m) arrays over `nodes`."""

    nodes: tuple[str, ...]
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    seed: int | None = None
    grid_name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        for name in ("v", "p", "q"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != len(self.nodes):
                raise ValidationError(
                    f"measurement block {name!r}: expected shape (T, {len(self.nodes)})"
                )
            object.__setattr__(self, name, arr)
        if self.v.shape != self.p.shape or self.v.shape != self.q.shape:
            raise ValidationError("measurement blocks have mismatched shapes")

    @property
    def T(self) -> int:
        return self.v.shape[0]

    def head(self, t: int) -> "MeasurementSet":
        """First t samples. Equals a fresh simulation of length t (same seed)."""
        if not 0 < t <= self.T:
            raise ValidationError(f"cannot take {t} of {self.T} samples")
        return MeasurementSet(self.nodes, self.v[:t], self.p[:t], self.q[:t],
                              seed=self.seed, grid_name=self.grid_name)


def _cholesky_coeffs(g: Grid, spec: InjectionSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-node (a, b, c) with p = a z1, q = b z1 + c z2 matching the moments."""
    a, b, c = [], [], []
    for n in g.reduced_nodes:
        spp, sqq, spq = spec.moments_for(n)
        ai = math.sqrt(spp)
        bi = spq / ai
        c.append(math.sqrt(sqq - bi * bi))
        a.append(ai)
        b.append(bi)
    return np.array(a), np.array(b), np.array(c)


def sample_injections(g: Grid, spec: InjectionSpec, T: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw (p, q) of shape (T, m) over the reduced nodes, hidden included.

    Sampling is chunked with a fixed chunk size and one child RNG stream per
    chunk, so the output is identical whether chunks run serially or in
    parallel, and a shorter run is an exact prefix of a longer one.
    """
    ensure_valid(g)
    if T < 1:
        raise ValidationError(f"sample count must be >= 1, got {T}")
    a, b, c = _cholesky_coeffs(g, spec)
    m = len(g.reduced_nodes)
    p = np.empty((T, m))
    q = np.empty((T, m))
    half_width = math.sqrt(3.0)
    for chunk_idx, start in enumerate(range(0, T, SIM_CHUNK)):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(chunk_idx,)))
        # Always draw the full chunk so shorter runs share the prefix exactly.
        if spec.family == "gaussian":
            z = rng.standard_normal((SIM_CHUNK, m, 2))
        else:
            z = rng.uniform(-half_width, half_width, size=(SIM_CHUNK, m, 2))
        rows = min(SIM_CHUNK, T - start)
        z = z[:rows]
        p[start:start + rows] = z[:, :, 0] * a
        q[start:start + rows] = z[:, :, 0] * b + z[:, :, 1] * c
    return p, q


def solve_lcpf(g: Grid, p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Voltage and angle deviations for injection rows over the reduced nodes."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError("p and q must have the same shape")
    single = p.ndim == 1
    if single:
        p, q = p[None, :], q[None, :]
    L_r = reduced_laplacian(g, "r").matrix
    L_x = reduced_laplacian(g, "x").matrix
    if p.shape[1] != L_r.shape[0]:
        raise ValidationError(
            f"expected {L_r.shape[0]} injection columns (reduced nodes), got {p.shape[1]}"
        )
    hp_r = np.linalg.solve(L_r, p.T).T
    hp_x = np.linalg.solve(L_x, p.T).T
    hq_r = np.linalg.solve(L_r, q.T).T
    hq_x = np.linalg.solve(L_x, q.T).T
    v = hp_r + hq_x
    theta = hp_x - hq_r
    if single:
        return v[0], theta[0]
    return v, theta


def simulate(g: Grid, spec: InjectionSpec, T: int, seed: int) -> MeasurementSet:
    """End-to-end draw: injections everywhere, measurements at observed leaves."""
    p, q = sample_injections(g, spec, T, seed)
    v, _theta = solve_lcpf(g, p, q)
    cols = np.array([g.reduced_nodes.index(n) for n in g.observed_nodes])
    if cols.size == 0:
        raise ValidationError("grid has no observed nodes to measure")
    return MeasurementSet(g.observed_nodes, v[:, cols], p[:, cols], q[:, cols], seed=seed)


def analytic_moments(g: Grid, spec: InjectionSpec = InjectionSpec()) -> MomentSet:
    """Exact model moments over the observed nodes (count=None).

    E[v_a p_b] = H_r^-1(a,b) E[p_b^2] + H_x^-1(a,b) E[p_b q_b], and
    E[v_a q_b] = H_r^-1(a,b) E[p_b q_b] + H_x^-1(a,b) E[q_b^2]; injections are
    independent across nodes, so only node b's own moments survive.
    """
    lap_r = reduced_laplacian(g, "r")
    h_r = np.linalg.inv(lap_r.matrix)
    h_x = np.linalg.inv(reduced_laplacian(g, "x").matrix)
    reduced = lap_r.nodes
    cols = np.array([reduced.index(n) for n in g.observed_nodes])
    spp, sqq, spq = np.empty(len(cols)), np.empty(len(cols)), np.empty(len(cols))
    for i, n in enumerate(g.observed_nodes):
        spp[i], sqq[i], spq[i] = spec.moments_for(n)
    h_r_oo = h_r[np.ix_(cols, cols)]
    h_x_oo = h_x[np.ix_(cols, cols)]
    vp = h_r_oo * spp + h_x_oo * spq
    vq = h_r_oo * spq + h_x_oo * sqq
    return MomentSet(g.observed_nodes, None, vp, vq, spp, sqq, spq)


# ---------------------------------------------------------------------------
# Measurement CSV round trip
# ---------------------------------------------------------------------------

def save_measurements(ms: MeasurementSet, path: str | Path) -> None:
    """Write `t` plus a (v, p, q) column triplet per node; seed in a comment."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if ms.seed is not None or ms.grid_name is not None:
            parts = []
            if ms.seed is not None:
                parts.append(f"seed={ms.seed}")
            if ms.grid_name is not None:
                parts.append(f"grid={ms.grid_name}")
            fh.write("# " + " ".join(parts) + "\n")
        writer = csv.writer(fh)
        header = ["t"]
        for n in ms.nodes:
            header += [f"v:{n}", f"p:{n}", f"q:{n}"]
        writer.writerow(header)
        v_rows, p_rows, q_rows = ms.v.tolist(), ms.p.tolist(), ms.q.tolist()
        for t in range(ms.T):
            row: list[str] = [str(t)]
            for vj, pj, qj in zip(v_rows[t], p_rows[t], q_rows[t]):
                row += [repr(vj), repr(pj), repr(qj)]
            writer.writerow(row)


def load_measurements(path: str | Path) -> MeasurementSet:
    path = Path(path)
    try:
        fh = path.open(newline="")
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    with fh:
        seed = None
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            for token in line[1:].split():
                if token.startswith("seed="):
                    try:
                        seed = int(token[5:])
                    except ValueError:
                        pass
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0] != "t":
            raise FormatError(f"{path}: first header column must be 't'")
        col_of: dict[str, int] = {}
        nodes: list[str] = []
        for i, name in enumerate(header[1:], start=1):
            if ":" not in name:
                raise FormatError(f"{path}: header column {name!r} is not of the form kind:node")
            kind, node = name.split(":", 1)
            if kind not in ("v", "p", "q"):
                raise FormatError(f"{path}: header column {name!r} has unknown kind {kind!r}")
            if name in col_of:
                raise FormatError(f"{path}: duplicate column {name!r}")
            col_of[name] = i
            if node not in nodes:
                nodes.append(node)
        for node in nodes:
            for kind in ("v", "p", "q"):
                if f"{kind}:{node}" not in col_of:
                    raise FormatError(f"{path}: missing column '{kind}:{node}'")
        rows = list(reader)
        if not rows:
            raise FormatError(f"{path}: no measurement rows")
        m = len(nodes)
        v = np.empty((len(rows), m))
        p = np.empty((len(rows), m))
        q = np.empty((len(rows), m))
        for t, row in enumerate(rows):
            if len(row) != len(header):
                raise FormatError(f"{path}: row {t + 2} has {len(row)} fields, expected {len(header)}")
            try:
                for j, node in enumerate(nodes):
                    v[t, j] = float(row[col_of[f"v:{node}"]])
                    p[t, j] = float(row[col_of[f"p:{node}"]])
                    q[t, j] = float(row[col_of[f"q:{node}"]])
            except ValueError:
                raise FormatError(f"{path}: row {t + 2} has a non-numeric value") from None
    return MeasurementSet(tuple(nodes), v, p, q, seed=seed)
