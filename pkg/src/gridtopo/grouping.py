"""Recursive grouping: rebuild a latent tree from additive leaf distances.

The engine is the witness statistic phi(a, b; c) = d(a, c) - d(b, c). On an
additive tree metric it is constant in the witness c exactly when a and b are
adjacent-or-siblings at the same junction:

* phi = +d(a, b) for every witness  <=>  b sits on every path out of a
  (a is a leaf and b its parent); the mirrored sign swaps the roles;
* phi constant with |phi| < d(a, b)  <=>  a and b hang off a common junction.

Each round classifies every active pair, groups the coarsest consistent
blocks, replaces sibling blocks with a fresh hidden junction, and re-derives
the active distance matrix from the input entries through the nodes already
placed below each survivor, until two or fewer nodes remain. The sampled
variant runs the same tests with a tolerance eps over capped
tau-neighborhood witness sets, escalating eps (and a starved pair's tau)
until a round makes progress; escalated rounds commit only the single
best-supported block before eps resets, parent claims that reach past a
node's nearest consistent junction are dropped, and junctions rediscovered
twice are merged instead of stacked.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .distances import DistanceMatrix, _canonical
from .exceptions import (
    GroupingStalledError,
    NegativeLengthWarning,
    NoWitnessError,
    NotAdditiveError,
    ValidationError,
)

EXACT_TOL = 1e-9
HIDDEN_PREFIX = "h#"
TAU_GROWTH = 1.5
# Each pair's witness set keeps only this many closest witnesses (by the
# larger of the two distances). The spread test is a range statistic, so a
# single far, noisy witness pins it high; trimming to the nearest witnesses
# keeps the straddling ones that carry the signal while dropping the tail
# that carries mostly estimation noise.
WITNESS_CAP = 15


@dataclass(frozen=True)
class RGConfig:
    """Knobs for sampled grouping.

    eps0 is the starting tolerance; when a round classifies no pair into a
    block and dynamic_eps is set, eps grows by eps_growth and the round
    retries (eps resets to eps0 after any productive round). With dynamic_eps
    off, a stalled round raises instead. tau bounds the witness neighborhood
    (None: 2x the median distance entry); witness_cap keeps only that many
    closest witnesses per pair (None: no cap — required for exact inputs,
    where every witness is decisive); max_rounds bounds the outer loop
    (None: 4x the number of input nodes).
    """

    eps0: float = 0.07
    eps_growth: float = 1.5
    tau: float | None = None
    witness_cap: int | None = WITNESS_CAP
    max_rounds: int | None = None
    dynamic_eps: bool = True

    def __post_init__(self):
        if self.eps0 <= 0:
            raise ValidationError(f"eps0 must be > 0, got {self.eps0}")
        if self.eps_growth <= 1:
            raise ValidationError(f"eps_growth must be > 1, got {self.eps_growth}")
        if self.tau is not None and self.tau <= 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if self.witness_cap is not None and self.witness_cap < 3:
            raise ValidationError(
                f"witness_cap must be >= 3 witnesses or None, got {self.witness_cap}"
            )
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValidationError(f"max_rounds must be >= 1, got {self.max_rounds}")


@dataclass(frozen=True)
class TreeEdge:
    u: str
    v: str
    length: float


@dataclass
class RGDiagnostics:
    rounds: int = 0
    eps_escalations: int = 0
    tau_escalations: int = 0
    clamped_lengths: int = 0
    merged_junctions: int = 0
    eps0: float = 0.0
    tau: float = float("inf")


@dataclass(frozen=True)
class LearnedTree:
    """Unrooted weighted tree over the input nodes plus synthesized junctions."""

    nodes: tuple[str, ...]
    edges: tuple[TreeEdge, ...]
    hidden: frozenset[str]
    diagnostics: RGDiagnostics | None = field(default=None, compare=False, repr=False)

    def adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {n: {} for n in self.nodes}
        for e in self.edges:
            adj[e.u][e.v] = e.length
            adj[e.v][e.u] = e.length
        return adj

    def degree(self, node: str) -> int:
        return len(self.adjacency()[node])

    @property
    def leaves(self) -> tuple[str, ...]:
        adj = self.adjacency()
        return tuple(n for n in self.nodes if len(adj[n]) <= 1)


def tree_path_lengths(tree: LearnedTree, nodes: tuple[str, ...] | None = None) -> np.ndarray:
    """Pairwise path-length matrix over `nodes` (default: all tree nodes)."""
    if nodes is None:
        nodes = tree.nodes
    adj = tree.adjacency()
    for n in nodes:
        if n not in adj:
            raise ValidationError(f"tree has no node {n!r}")
    index = {n: i for i, n in enumerate(nodes)}
    out = np.zeros((len(nodes), len(nodes)))
    for src in nodes:
        dist = {src: 0.0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for w, length in adj[u].items():
                if w not in dist:
                    dist[w] = dist[u] + length
                    queue.append(w)
        if len(dist) != len(adj):
            raise ValidationError("tree is not connected")
        i = index[src]
        for n, j in index.items():
            out[i, j] = dist[n]
    return out


# ---------------------------------------------------------------------------
# Pair classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairRelation:
    """Outcome for one pair: 'parent' (with the parent named), 'siblings',
    or 'unrelated'. score is the winning residual (parent) or the witness
    spread (siblings); lower is more confident."""

    kind: str
    parent: str | None = None
    score: float = 0.0


def _classify_scalar(dab: float, phis: np.ndarray, eps: float) -> tuple[str, bool | None, float]:
    """Shared pair test. Returns (kind, parent_is_first, score).

    Parent tests take precedence over the sibling test; when both directions
    pass, the direction with the smaller mean residual wins.
    """
    dev_ba = float(np.abs(phis - dab).max())  # phi ~ +d(a,b): b is the parent
    dev_ab = float(np.abs(phis + dab).max())  # phi ~ -d(a,b): a is the parent
    pass_ba, pass_ab = dev_ba <= eps, dev_ab <= eps
    if pass_ba or pass_ab:
        mean = float(phis.mean())
        res_ba, res_ab = abs(dab - mean), abs(dab + mean)
        if pass_ba and pass_ab:
            parent_is_first = res_ab <= res_ba
        else:
            parent_is_first = pass_ab
        return "parent", parent_is_first, (res_ab if parent_is_first else res_ba)
    spread = float(phis.max() - phis.min())
    absmax = float(np.abs(phis).max())
    if spread <= eps and absmax <= dab + eps:
        return "siblings", None, spread
    return "unrelated", None, 0.0


def phi(d: DistanceMatrix, a: str, b: str, c: str, mode: str = "r") -> float:
    """Witness statistic d(a, c) - d(b, c)."""
    if len({a, b, c}) != 3:
        raise ValidationError(f"phi needs three distinct nodes, got ({a!r}, {b!r}, {c!r})")
    mat = d.mode(mode)
    ia, ib, ic = d.index[a], d.index[b], d.index[c]
    return float(mat[ia, ic] - mat[ib, ic])


def neighborhood(d: DistanceMatrix, a: str, b: str, tau: float, mode: str = "r") -> tuple[str, ...]:
    """Witness candidates: nodes within tau of both a and b."""
    mat = d.mode(mode)
    ia, ib = d.index[a], d.index[b]
    return tuple(
        c for i, c in enumerate(d.nodes)
        if c != a and c != b and mat[ia, i] < tau and mat[ib, i] < tau
    )


def classify_pair_exact(
    d: DistanceMatrix,
    a: str,
    b: str,
    witnesses: tuple[str, ...] | None = None,
    mode: str = "r",
    tol: float = EXACT_TOL,
) -> PairRelation:
    """Classify (a, b) against every witness, with a numeric tolerance only."""
    if witnesses is None:
        witnesses = tuple(c for c in d.nodes if c != a and c != b)
    else:
        witnesses = tuple(c for c in witnesses if c != a and c != b)
    if not witnesses:
        raise ValidationError("classification needs at least one witness node")
    return classify_pair_sampled(d, a, b, witnesses, tol, mode)


def classify_pair_sampled(
    d: DistanceMatrix,
    a: str,
    b: str,
    witnesses: tuple[str, ...],
    eps: float,
    mode: str = "r",
) -> PairRelation:
    """Classify (a, b) using the given witnesses and tolerance eps."""
    if a == b:
        raise ValidationError("cannot classify a node against itself")
    witnesses = tuple(c for c in witnesses if c != a and c != b)
    if not witnesses:
        raise NoWitnessError(f"pair ({a!r}, {b!r}): no witness in the neighborhood")
    mat = d.mode(mode)
    ia, ib = d.index[a], d.index[b]
    ic = np.array([d.index[c] for c in witnesses])
    phis = mat[ia, ic] - mat[ib, ic]
    kind, parent_is_first, score = _classify_scalar(float(mat[ia, ib]), phis, eps)
    if kind == "parent":
        return PairRelation("parent", a if parent_is_first else b, score)
    return PairRelation(kind, None, score)


# ---------------------------------------------------------------------------
# Coarsest partition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    members: tuple[str, ...]
    parent: str | None = None


def _greedy_partition(
    k: int,
    parent_cands: list[tuple],
    sibling_cands: list[tuple[float, int, int]],
    sib_ok: np.ndarray,
) -> list[dict]:
    """Deterministic block formation.

    Parent relations are accepted first (ascending pair distance, then
    residual), then sibling pairs grow blocks (ascending spread). A node
    joins a sibling block, and two parentless blocks merge, when at least
    half of the cross pairs are sibling pairs; on noiseless relations this
    is the same as requiring a full clique, while on noisy relations it
    stops one failed pair test from splitting a large sibling class into two
    stacked blocks. Ties break on node order. Conflicting relations are
    skipped, never fatal. Each block records the largest test statistic that
    went into it ("req"): the smallest tolerance at which all its evidence
    passes.
    """

    def _quorum(hits: int, total: int) -> bool:
        return 2 * hits >= total

    blocks: list[dict] = []
    assigned: dict[int, int] = {}

    for cand in sorted(parent_cands):
        *head, p, c = cand
        stat = float(head[-1])
        if c in assigned:
            continue
        if p in assigned:
            blk = blocks[assigned[p]]
            if blk["parent"] != p:
                continue
            blk["members"].append(c)
            blk["req"] = max(blk["req"], stat)
            assigned[c] = assigned[p]
        else:
            blocks.append({"parent": p, "members": [p, c], "req": stat})
            assigned[p] = assigned[c] = len(blocks) - 1

    for score, a, b in sorted(sibling_cands):
        a_in, b_in = a in assigned, b in assigned
        if a_in and b_in:
            ia, ib = assigned[a], assigned[b]
            if ia == ib:
                continue
            b1, b2 = blocks[ia], blocks[ib]
            if b1["parent"] is not None or b2["parent"] is not None:
                continue
            hits = sum(sib_ok[x, y] for x in b1["members"] for y in b2["members"])
            if _quorum(hits, len(b1["members"]) * len(b2["members"])):
                for y in b2["members"]:
                    assigned[y] = ia
                b1["members"].extend(b2["members"])
                b1["req"] = max(b1["req"], b2["req"], float(score))
                b2["members"] = []
        elif a_in or b_in:
            placed, other = (a, b) if a_in else (b, a)
            blk = blocks[assigned[placed]]
            if blk["parent"] is not None:
                continue
            hits = sum(sib_ok[other, x] for x in blk["members"])
            if _quorum(hits, len(blk["members"])):
                blk["members"].append(other)
                blk["req"] = max(blk["req"], float(score))
                assigned[other] = assigned[placed]
        else:
            blocks.append({"parent": None, "members": [a, b], "req": float(score)})
            assigned[a] = assigned[b] = len(blocks) - 1

    blocks = [b for b in blocks if b["members"]]
    for n in range(k):
        if n not in assigned:
            blocks.append({"parent": None, "members": [n], "req": 0.0})
    return blocks


def coarsest_partition(
    nodes: tuple[str, ...],
    relations: dict[tuple[str, str] | frozenset, PairRelation],
) -> list[Block]:
    """Group nodes into the coarsest blocks consistent with pair relations.

    Every two nodes in a block are either siblings, or one is the block's
    parent and the other its child. Nodes without usable relations come back
    as singletons.
    """
    index = {n: i for i, n in enumerate(nodes)}
    k = len(nodes)
    sib_ok = np.zeros((k, k), dtype=bool)
    parent_cands: list[tuple[float, int, int]] = []
    sibling_cands: list[tuple[float, int, int]] = []
    for key, rel in relations.items():
        a, b = tuple(key)
        if a not in index or b not in index:
            raise ValidationError(f"relation ({a!r}, {b!r}) references an unknown node")
        ia, ib = index[a], index[b]
        if rel.kind == "parent":
            if rel.parent not in (a, b):
                raise ValidationError(f"relation ({a!r}, {b!r}): parent {rel.parent!r} is not in the pair")
            p = index[rel.parent]
            c = ib if p == ia else ia
            parent_cands.append((rel.score, p, c))
        elif rel.kind == "siblings":
            sib_ok[ia, ib] = sib_ok[ib, ia] = True
            sibling_cands.append((rel.score, min(ia, ib), max(ia, ib)))
        elif rel.kind != "unrelated":
            raise ValidationError(f"unknown relation kind {rel.kind!r}")
    raw = _greedy_partition(k, parent_cands, sibling_cands, sib_ok)
    return [
        Block(tuple(nodes[i] for i in sorted(blk["members"])),
              None if blk["parent"] is None else nodes[blk["parent"]])
        for blk in raw
    ]


# ---------------------------------------------------------------------------
# The grouping engine
# ---------------------------------------------------------------------------

def _witness_mask(
    D: np.ndarray, tau: float, cap: int | None
) -> tuple[np.ndarray, int]:
    """Witness tensor W[a, b, c]: c lies within the pair (a, b)'s radius.

    Every pair starts from the shared radius tau. A pair whose ball holds no
    witness grows its own radius by TAU_GROWTH until one enters; growing only
    the starved pair keeps distant pairs from forcing wide - and therefore
    noisy - witness sets onto close pairs. Crowded balls are trimmed to the
    cap closest witnesses when one is set. Returns the mask and the number
    of pairs that had to grow.
    """
    k = D.shape[0]
    M = np.maximum(D[:, None, :], D[None, :, :])
    ar = np.arange(k)
    M[ar, :, ar] = np.inf
    M[:, ar, ar] = np.inf
    m = M.min(axis=2)
    radius = np.full((k, k), tau)
    need = (m >= tau) & ~np.eye(k, dtype=bool)
    if need.any():
        grow = np.ceil(np.log(m[need] / tau) / np.log(TAU_GROWTH))
        r = tau * TAU_GROWTH ** np.maximum(grow, 1.0)
        radius[need] = np.where(r > m[need], r, r * TAU_GROWTH)
    W = M < radius[:, :, None]
    if cap is not None and k - 2 > cap:
        kth = np.partition(M, cap - 1, axis=2)[:, :, cap - 1 : cap]
        W &= M <= kth
    return W, int(need.sum()) // 2


def _pair_stats(D: np.ndarray, W: np.ndarray):
    Phi = D[:, None, :] - D[None, :, :]
    nwit = W.sum(axis=2)
    phi_hi = np.where(W, Phi, -np.inf).max(axis=2)
    phi_lo = np.where(W, Phi, np.inf).min(axis=2)
    phi_mean = np.where(W, Phi, 0.0).sum(axis=2) / np.maximum(nwit, 1)
    dab = D[:, :, None]
    dev_ba = np.where(W, np.abs(Phi - dab), -np.inf).max(axis=2)
    dev_ab = np.where(W, np.abs(Phi + dab), -np.inf).max(axis=2)
    spread = phi_hi - phi_lo
    absmax = np.maximum(np.abs(phi_hi), np.abs(phi_lo))
    return phi_mean, spread, absmax, dev_ba, dev_ab, nwit


def _relations_from_stats(
    D, eps, phi_mean, spread, absmax, dev_ba, dev_ab, margin=None, interior_floor=None
):
    """Mirror of _classify_scalar over all pairs i < j."""
    if margin is None:
        margin = eps
    if interior_floor is None:
        interior_floor = margin
    k = D.shape[0]
    pass_ba = dev_ba <= eps
    pass_ab = dev_ab <= eps
    sib = (spread <= eps) & (absmax <= D + eps)
    np.fill_diagonal(sib, False)
    res_ba = np.abs(D - phi_mean)
    res_ab = np.abs(D + phi_mean)
    # Each sibling pass (c, s) locates c's nearest junction at
    # (d(c,s) + mean Phi)/2. A parent claim on c from farther away than that
    # junction (plus the tolerance) contradicts it and is dropped; for a true
    # parent the junction is the parent itself, so nothing changes. Only
    # interior sibling passes qualify as evidence: both nodes must sit a
    # clear step off the implied junction, otherwise the "sibling" is just a
    # parent pair in disguise and its junction estimate is degenerate.
    joint = 0.5 * (D + phi_mean)
    interior = sib & (joint >= interior_floor) & (D - joint >= interior_floor)
    jmin = np.where(interior, joint, np.inf).min(axis=1)
    # Parent claims are ranked by pair distance before residual: when both a
    # node's parent and a farther ancestor pass the tolerance test, the true
    # parent is the closer one.
    parent_cands: list[tuple[float, float, float, int, int]] = []
    sibling_cands: list[tuple[float, int, int]] = []
    sib_ok = np.zeros((k, k), dtype=bool)
    for i in range(k):
        for j in range(i + 1, k):
            if pass_ba[i, j] or pass_ab[i, j]:
                if pass_ba[i, j] and pass_ab[i, j]:
                    i_is_parent = res_ab[i, j] <= res_ba[i, j]
                else:
                    i_is_parent = pass_ab[i, j]
                p, c = (i, j) if i_is_parent else (j, i)
                if D[i, j] > jmin[c] + margin:
                    # Contradicted parent claim: keep the pair in play as
                    # siblings when that reading also holds on its own, else
                    # drop it for this tolerance.
                    if interior[i, j]:
                        sibling_cands.append((float(spread[i, j]), i, j))
                        sib_ok[i, j] = sib_ok[j, i] = True
                    continue
                res = res_ab[i, j] if i_is_parent else res_ba[i, j]
                dev = dev_ab[i, j] if i_is_parent else dev_ba[i, j]
                parent_cands.append((float(D[i, j]), float(res), float(dev), p, c))
            elif sib[i, j]:
                sibling_cands.append((float(spread[i, j]), i, j))
                sib_ok[i, j] = sib_ok[j, i] = True
    return parent_cands, sibling_cands, sib_ok


def _default_tau(D: np.ndarray) -> float:
    k = D.shape[0]
    if k < 2:
        return float("inf")
    off = D[np.triu_indices(k, k=1)]
    tau = 2.0 * float(np.median(off))
    if not np.isfinite(tau) or tau <= 0:
        return float("inf")
    return tau


def _rg_core(
    names: list[str],
    D: np.ndarray,
    *,
    eps0: float,
    eps_growth: float,
    tau0: float,
    witness_cap: int | None,
    dynamic_eps: bool,
    max_rounds: int,
) -> LearnedTree:
    diag = RGDiagnostics(eps0=eps0, tau=tau0)
    all_names = list(names)
    hidden: list[str] = []
    edges: list[TreeEdge] = []
    taken = set(names)
    hidden_counter = 1

    def fresh_hidden() -> str:
        nonlocal hidden_counter
        while (name := f"{HIDDEN_PREFIX}{hidden_counter}") in taken:
            hidden_counter += 1
        taken.add(name)
        hidden_counter += 1
        return name

    def emit(u: str, v: str, length: float) -> None:
        if length < 0:
            diag.clamped_lengths += 1
            length = 0.0
        edges.append(TreeEdge(u, v, float(length)))

    def partial_tree() -> LearnedTree:
        return LearnedTree(tuple(all_names), tuple(edges), frozenset(hidden), diag)

    # Bookkeeping for every active node: which input nodes sit below it in
    # the part of the tree built so far, and how far away along built edges.
    # Distances between active nodes are re-derived from the input matrix
    # through these anchors each round, so estimation noise does not compound
    # across rounds of updates.
    Draw = np.array(D, dtype=float, copy=True)
    leaf_of = {nm: i for i, nm in enumerate(names)}
    desc: dict[str, tuple[list[int], np.ndarray]] = {
        nm: ([leaf_of[nm]], np.zeros(1)) for nm in names
    }

    def adopt(parent: str, child: str, length: float) -> None:
        emit(parent, child, length)
        li, pi = desc[parent]
        lj, pj = desc[child]
        desc[parent] = (li + lj, np.concatenate([pi, pj + max(float(length), 0.0)]))

    def refresh() -> np.ndarray:
        infos = [desc[nm] for nm in active]
        kk = len(active)
        M = np.zeros((kk, kk))
        means = [float(p.mean()) for _, p in infos]
        for i in range(kk):
            li, _ = infos[i]
            for j in range(i + 1, kk):
                lj, _ = infos[j]
                M[i, j] = M[j, i] = float(Draw[np.ix_(li, lj)].mean()) - means[i] - means[j]
        return M

    active = list(names)
    while len(active) > 2:
        if diag.rounds >= max_rounds:
            raise GroupingStalledError(
                f"grouping exceeded max_rounds={max_rounds} with {len(active)} nodes left",
                partial=partial_tree(),
            )
        diag.rounds += 1
        k = len(active)
        D = refresh()

        # Witness neighborhoods; starved pairs widen their own radius.
        W, grown = _witness_mask(D, tau0, witness_cap)
        diag.tau_escalations += grown
        phi_mean, spread, absmax, dev_ba, dev_ab, _ = _pair_stats(D, W)

        # Classify; escalate eps until some block of size >= 2 forms.
        eps = eps0
        while True:
            cands = _relations_from_stats(
                D, eps, phi_mean, spread, absmax, dev_ba, dev_ab,
                margin=0.5 * eps0, interior_floor=eps0,
            )
            blocks = _greedy_partition(k, *cands)
            if any(len(b["members"]) > 1 for b in blocks):
                break
            if not dynamic_eps:
                raise GroupingStalledError(
                    f"no pair classified at eps={eps:g} and eps is fixed",
                    partial=partial_tree(),
                )
            eps *= eps_growth
            diag.eps_escalations += 1

        # At an escalated tolerance, several marginal relationships tend to
        # come due at once and the weakest of them are the likeliest to be
        # wrong. Apply only the block whose evidence needed the smallest
        # tolerance (the relationship an infinitely fine escalation ladder
        # would have reached first), then let eps reset and the rest requalify
        # against the updated distances.
        if eps > eps0:
            formed = [b for b in blocks if len(b["members"]) > 1]
            if len(formed) > 1:
                best = min(formed, key=lambda b: (b["req"], min(b["members"])))
                blocks = [best] + [
                    {"parent": None, "members": [m], "req": 0.0}
                    for b in blocks
                    if b is not best
                    for m in b["members"]
                ]

        # Apply blocks: parents keep their node, sibling blocks get a new
        # hidden junction; edge lengths and the shrunk distance matrix come
        # from witness-averaged updates.
        keep: list[int] = []
        hidden_children: list[list[int]] = []
        parent_blocks: list[tuple[int, list[int]]] = []
        for blk in blocks:
            members = sorted(blk["members"])
            if len(members) == 1:
                keep.append(members[0])
            elif blk["parent"] is not None:
                p = blk["parent"]
                keep.append(p)
                parent_blocks.append((p, [c for c in members if c != p]))
            else:
                hidden_children.append(members)
        def ext_col(children: list[int]) -> np.ndarray:
            """Distances from every active node to the block's new junction."""
            col = np.zeros(k)
            for a in children:
                others = [b for b in children if b != a]
                col[a] = float(
                    (D[a, others] + phi_mean[a, others]).sum() / (2.0 * len(others))
                )
            outside = np.setdiff1d(np.arange(k), children)
            if outside.size:
                col[outside] = (
                    D[np.ix_(outside, children)] - col[children][None, :]
                ).mean(axis=1)
            return col

        # A freshly inferred junction that lands within merge_tol of an already
        # known junction is the same junction seen twice (a sibling class that
        # partially grouped earlier, or a parent relation that the tolerance
        # test missed). Glue it back instead of stacking a near-zero edge.
        merge_tol = 0.75 * eps0
        hidden_set = set(hidden)
        resolved: list[tuple[list[int], np.ndarray]] = []
        for children in hidden_children:
            col = ext_col(children)
            cands: list[tuple[float, int, str, int]] = []
            for a in children:
                if active[a] in hidden_set and col[a] < merge_tol:
                    cands.append((float(col[a]), 0, "child", a))
            for y in keep:
                if active[y] in hidden_set and col[y] < merge_tol:
                    cands.append((float(col[y]), 1, "kept", y))
            if not cands:
                resolved.append((children, col))
                continue
            diag.merged_junctions += 1
            _, _, kind, tgt = min(cands)
            if kind == "child":
                # The new junction coincides with one of its own hidden
                # children: that child is the true parent of the block.
                keep.append(tgt)
                parent_blocks.append((tgt, [c for c in children if c != tgt]))
            else:
                # Coincides with a junction kept from an earlier round: the
                # block members are that junction's missing children.
                for a in children:
                    adopt(active[tgt], active[a], D[tgt, a])

        # Same check between two new junctions of this round: a sibling class
        # split into two blocks puts both copies at (near) zero distance.
        i = 0
        while i < len(resolved):
            j = i + 1
            while j < len(resolved):
                ch_i, col_i = resolved[i]
                ch_j, col_j = resolved[j]
                fwd = float((col_j[ch_i] - col_i[ch_i]).mean())
                bwd = float((col_i[ch_j] - col_j[ch_j]).mean())
                if 0.5 * (fwd + bwd) < merge_tol:
                    diag.merged_junctions += 1
                    union = sorted(ch_i + ch_j)
                    resolved[i] = (union, ext_col(union))
                    del resolved[j]
                else:
                    j += 1
            i += 1
        keep.sort()

        def contract(child: str, into: str) -> None:
            """Remove a hidden node, rewiring its edges onto another node."""
            nonlocal edges
            diag.merged_junctions += 1
            edges = [
                TreeEdge(into if e.u == child else e.u, into if e.v == child else e.v, e.length)
                for e in edges
            ]
            li, pi = desc[into]
            lj, pj = desc[child]
            desc[into] = (li + lj, np.concatenate([pi, pj]))
            all_names.remove(child)
            hidden.remove(child)

        for p, children in parent_blocks:
            for c in children:
                if (
                    active[p] in hidden_set
                    and active[c] in hidden_set
                    and D[p, c] < merge_tol
                ):
                    # Two junctions from earlier rounds collapse onto one
                    # point: the "child" junction is the parent seen twice.
                    contract(active[c], active[p])
                else:
                    adopt(active[p], active[c], D[p, c])

        hidden_names = []
        for children, col in resolved:
            h = fresh_hidden()
            hidden_names.append(h)
            all_names.append(h)
            hidden.append(h)
            desc[h] = ([], np.zeros(0))
            for a in children:
                adopt(h, active[a], col[a])

        active = [active[i] for i in keep] + hidden_names

    if len(active) == 2:
        diag.rounds += 1
        D = refresh()
        emit(active[0], active[1], D[0, 1])

    if diag.clamped_lengths:
        warnings.warn(
            f"{diag.clamped_lengths} negative length estimate(s) clamped to zero",
            NegativeLengthWarning,
            stacklevel=3,
        )
    tree = LearnedTree(tuple(all_names), tuple(edges), frozenset(hidden), diag)
    if len(tree.edges) != len(tree.nodes) - 1:
        raise GroupingStalledError("internal error: grouping output is not a tree", partial=tree)
    return tree


def _as_matrix(O: tuple[str, ...], d: DistanceMatrix | np.ndarray, mode: str) -> np.ndarray:
    if isinstance(d, DistanceMatrix):
        return np.array(d.sub(tuple(O)).mode(mode))
    return np.array(_canonical(np.asarray(d, dtype=float), "distance matrix"))


def rg_sampled(
    O: tuple[str, ...] | list[str],
    d: DistanceMatrix | np.ndarray,
    cfg: RGConfig | None = None,
    mode: str = "r",
) -> LearnedTree:
    """Grouping under noise: tolerance eps with the configured schedule.

    Raises GroupingStalledError (carrying the partial tree) when max_rounds
    runs out or a fixed eps makes no progress.
    """
    O = tuple(O)
    if len(set(O)) != len(O):
        raise ValidationError("node list contains duplicates")
    if len(O) == 0:
        raise ValidationError("node list is empty")
    cfg = cfg or RGConfig()
    D = _as_matrix(O, d, mode)
    if D.shape[0] != len(O):
        raise ValidationError(f"distance matrix is {D.shape[0]}x{D.shape[0]} for {len(O)} nodes")
    if len(O) == 1:
        return LearnedTree(O, (), frozenset(), RGDiagnostics(eps0=cfg.eps0))
    tau0 = cfg.tau if cfg.tau is not None else _default_tau(D)
    max_rounds = cfg.max_rounds if cfg.max_rounds is not None else 4 * len(O)
    return _rg_core(
        list(O), D,
        eps0=cfg.eps0, eps_growth=cfg.eps_growth, tau0=tau0,
        witness_cap=cfg.witness_cap,
        dynamic_eps=cfg.dynamic_eps, max_rounds=max_rounds,
    )


def rg_exact(
    O: tuple[str, ...] | list[str],
    d: DistanceMatrix | np.ndarray,
    mode: str = "r",
    tol: float = EXACT_TOL,
) -> LearnedTree:
    """Grouping for exact additive metrics; tolerance covers rounding only.

    The output tree is verified to reproduce the input distances; any
    violation beyond tol means the input was not an additive tree metric and
    raises NotAdditiveError.
    """
    O = tuple(O)
    D = _as_matrix(O, d, mode)
    cfg = RGConfig(eps0=tol, tau=float("inf"), witness_cap=None,
                   dynamic_eps=False, max_rounds=max(4 * len(O), 1))
    try:
        tree = rg_sampled(O, D, cfg)
    except GroupingStalledError as exc:
        raise NotAdditiveError(
            f"input distances are not an additive tree metric ({exc})"
        ) from exc
    rebuilt = tree_path_lengths(tree, O)
    violation = float(np.abs(rebuilt - D).max())
    allow = tol * max(1.0, float(np.abs(D).max()))
    if violation > allow:
        raise NotAdditiveError(
            f"input distances are not an additive tree metric "
            f"(max path-sum violation {violation:.3e})",
            max_violation=violation,
        )
    return tree
