"""Statistic terms, model specifications, and statistic evaluation.

Every term in the catalog is a count.  An edge-type term contributes a
fixed integer weight per present edge, so on one subgraph its value is
``bits @ weights``.  A transitive term counts the edges of a within-block
subgraph that close at least one triangle inside the block.  Each
subgraph therefore compiles to a weight matrix ``C`` (D x d) and a 0/1
vector ``t`` (d,) marking the transitive coordinates; the subgraph
statistic is ``bits @ C + n_transitive * t``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import ClassVar, Sequence

import numpy as np

from .errors import DataError, ModelError
from .graph import BlockPartition, LocalGraph, SubgraphRef

WITHIN = "within"
BETWEEN = "between"


class Term:
    """Base class for statistic terms.  Subclasses are frozen dataclasses."""

    kind: ClassVar[str]
    transitive: ClassVar[bool] = False

    @property
    def name(self) -> str:
        return type(self).__name__

    def validate(self, partition: BlockPartition) -> None:
        pass

    def pair_weights(self, partition: BlockPartition, ref: SubgraphRef,
                     u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Per-edge weight on subgraph ``ref`` for edge variables (u, v)."""
        return np.zeros(u.size, dtype=np.int64)

    def applies_transitive(self, partition: BlockPartition, ref: SubgraphRef) -> bool:
        return False

    def block_specific(self) -> tuple:
        """Part of the subgraph-class signature that depends on the block
        index itself rather than on the block's composition."""
        return ()

    def to_config(self) -> dict:
        return {"term": type(self).__name__}


@dataclass(frozen=True)
class WithinEdgesTotal(Term):
    kind: ClassVar[str] = WITHIN

    def pair_weights(self, partition, ref, u, v):
        return np.ones(u.size, dtype=np.int64)


@dataclass(frozen=True)
class WithinEdgesPerBlock(Term):
    """Edge count of block ``block`` alone (0-based)."""

    block: int
    kind: ClassVar[str] = WITHIN

    @property
    def name(self):
        return f"WithinEdgesPerBlock[{self.block + 1}]"

    def validate(self, partition):
        if not 0 <= self.block < partition.n_blocks:
            raise ModelError(f"{self.name}: block does not exist (K={partition.n_blocks})")

    def pair_weights(self, partition, ref, u, v):
        return np.full(u.size, int(ref.k == self.block), dtype=np.int64)

    def block_specific(self):
        return (self.block,)

    def to_config(self):
        return {"term": "WithinEdgesPerBlock", "block": self.block + 1}


@dataclass(frozen=True)
class WithinEdgesByNodeGroup(Term):
    """Within-block degree total of nodes in group ``group`` (nodefactor)."""

    group: int
    kind: ClassVar[str] = WITHIN

    @property
    def name(self):
        return f"WithinEdgesByNodeGroup[{self.group + 1}]"

    def validate(self, partition):
        if partition.node_groups is None:
            raise ModelError(f"{self.name}: the partition has no node groups")
        if not 0 <= self.group < partition.n_node_groups:
            raise ModelError(f"{self.name}: node group does not exist (M={partition.n_node_groups})")

    def pair_weights(self, partition, ref, u, v):
        g = partition.node_groups
        return (g[u] == self.group).astype(np.int64) + (g[v] == self.group)

    def to_config(self):
        return {"term": "WithinEdgesByNodeGroup", "group": self.group + 1}


@dataclass(frozen=True)
class WithinTransitiveEdgesTotal(Term):
    kind: ClassVar[str] = WITHIN
    transitive: ClassVar[bool] = True

    def applies_transitive(self, partition, ref):
        return ref.within


@dataclass(frozen=True)
class WithinTransitiveEdgesByBlockGroup(Term):
    """Transitive edges of the blocks in block group ``group``."""

    group: int
    kind: ClassVar[str] = WITHIN
    transitive: ClassVar[bool] = True

    @property
    def name(self):
        return f"WithinTransitiveEdgesByBlockGroup[{self.group + 1}]"

    def validate(self, partition):
        if partition.block_groups is None:
            raise ModelError(f"{self.name}: the partition has no block groups")
        if not 0 <= self.group < partition.n_block_groups:
            raise ModelError(f"{self.name}: block group does not exist (L={partition.n_block_groups})")

    def applies_transitive(self, partition, ref):
        return ref.within and int(partition.block_groups[ref.k]) == self.group

    def to_config(self):
        return {"term": "WithinTransitiveEdgesByBlockGroup", "group": self.group + 1}


@dataclass(frozen=True)
class BetweenEdgesTotal(Term):
    kind: ClassVar[str] = BETWEEN

    def pair_weights(self, partition, ref, u, v):
        return np.ones(u.size, dtype=np.int64)


@dataclass(frozen=True)
class BetweenEdgesPerPair(Term):
    """Edge count of the between-block subgraph (k, l), k < l, 0-based."""

    k: int
    l: int
    kind: ClassVar[str] = BETWEEN

    @property
    def name(self):
        return f"BetweenEdgesPerPair[{self.k + 1},{self.l + 1}]"

    def validate(self, partition):
        if not 0 <= self.k < self.l < partition.n_blocks:
            raise ModelError(f"{self.name}: needs 1 <= k < l <= K={partition.n_blocks}")

    def pair_weights(self, partition, ref, u, v):
        hit = ref.k == self.k and ref.l == self.l
        return np.full(u.size, int(hit), dtype=np.int64)

    def block_specific(self):
        return (self.k, self.l)

    def to_config(self):
        return {"term": "BetweenEdgesPerPair", "pair": [self.k + 1, self.l + 1]}


TERM_TYPES: dict[str, type[Term]] = {
    cls.__name__: cls
    for cls in (
        WithinEdgesTotal,
        WithinEdgesPerBlock,
        WithinEdgesByNodeGroup,
        WithinTransitiveEdgesTotal,
        WithinTransitiveEdgesByBlockGroup,
        BetweenEdgesTotal,
        BetweenEdgesPerPair,
    )
}


@dataclass(frozen=True)
class ParamVector:
    """Natural parameters split into within (p) and between (q) parts."""

    theta_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_b: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        w = np.asarray(self.theta_w, dtype=float).reshape(-1)
        b = np.asarray(self.theta_b, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelError("natural parameters must be finite")
        object.__setattr__(self, "theta_w", w)
        object.__setattr__(self, "theta_b", b)

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.theta_w, self.theta_b])

    def part(self, kind: str) -> np.ndarray:
        return self.theta_w if kind == WITHIN else self.theta_b

    @classmethod
    def from_full(cls, spec: "ModelSpec", theta) -> "ParamVector":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != spec.dim:
            raise ModelError(f"expected {spec.dim} parameters, got {theta.size}")
        return cls(theta[: spec.p], theta[spec.p:])

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return np.array_equal(self.theta_w, other.theta_w) and np.array_equal(self.theta_b, other.theta_b)

    __hash__ = None


@dataclass(frozen=True)
class SubgraphModel:
    """A model restricted to one subgraph, in the form the kernels use.

    ``weights`` is D x d (edge-type coordinates), ``tvec`` marks the
    transitive coordinates, ``u``/``v`` are local ranks of each edge
    variable (row, column rank for between subgraphs).
    """

    ref: SubgraphRef
    size: int
    weights: np.ndarray
    tvec: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def has_transitive(self) -> bool:
        return bool(np.any(self.tvec)) and self.size >= 3

    def log_odds(self, theta_part: np.ndarray) -> tuple[np.ndarray, float]:
        """Per-variable edge log-odds and the transitive coefficient."""
        theta_part = np.asarray(theta_part, dtype=float)
        return self.weights @ theta_part, float(self.tvec @ theta_part)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate-wise minimum and maximum attainable statistic."""
        lo = np.minimum(self.weights, 0).sum(axis=0)
        hi = np.maximum(self.weights, 0).sum(axis=0)
        if self.size >= 3:
            hi = hi + self.tvec * self.n_vars
        return lo, hi


class ModelSpec:
    """Ordered within terms (dimension p) and between terms (dimension q)
    bound to one partition.  Immutable after construction."""

    def __init__(self, partition: BlockPartition, within_terms: Sequence[Term] = (),
                 between_terms: Sequence[Term] = ()):
        self.partition = partition
        self.within_terms = tuple(within_terms)
        self.between_terms = tuple(between_terms)
        if not self.within_terms and not self.between_terms:
            raise ModelError("a model needs at least one term")
        for t in self.within_terms:
            if not isinstance(t, Term) or t.kind != WITHIN:
                raise ModelError(f"{t!r} is not a within-block term")
        for t in self.between_terms:
            if not isinstance(t, Term) or t.kind != BETWEEN:
                raise ModelError(f"{t!r} is not a between-block term")
        seen = set()
        for t in self.terms:
            if t in seen:
                raise ModelError(f"duplicate term {t.name}")
            seen.add(t)
            t.validate(partition)
        self._compiled: dict[SubgraphRef, SubgraphModel] = {}
        self._check_collinearity()

    @property
    def p(self) -> int:
        return len(self.within_terms)

    @property
    def q(self) -> int:
        return len(self.between_terms)

    @property
    def dim(self) -> int:
        return self.p + self.q

    @property
    def terms(self) -> tuple[Term, ...]:
        return self.within_terms + self.between_terms

    @cached_property
    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    def terms_of(self, kind: str) -> tuple[Term, ...]:
        return self.within_terms if kind == WITHIN else self.between_terms

    def refs_of(self, kind: str) -> list[SubgraphRef]:
        p = self.partition
        return p.within_refs() if kind == WITHIN else p.between_refs()

    def part_slice(self, kind: str) -> slice:
        return slice(0, self.p) if kind == WITHIN else slice(self.p, self.dim)

    def compiled(self, ref: SubgraphRef) -> SubgraphModel:
        """Weight matrix and transitive marker of one subgraph (cached)."""
        sm = self._compiled.get(ref)
        if sm is not None:
            return sm
        part = self.partition
        part.check_ref(ref)
        kind = WITHIN if ref.within else BETWEEN
        terms = self.terms_of(kind)
        gu, gv = part.pair_nodes(ref)
        D = gu.size
        W = np.zeros((D, len(terms)), dtype=np.int64)
        tvec = np.zeros(len(terms), dtype=np.int64)
        for c, term in enumerate(terms):
            if term.transitive:
                tvec[c] = int(term.applies_transitive(part, ref))
            else:
                W[:, c] = term.pair_weights(part, ref, gu, gv)
        lu = part.local_rank[gu]
        lv = part.local_rank[gv]
        sm = SubgraphModel(ref, int(part.sizes[ref.k]), W, tvec, lu, lv)
        for arr in (W, tvec, lu, lv):
            arr.flags.writeable = False
        self._compiled[ref] = sm
        return sm

    def signature(self, ref: SubgraphRef) -> tuple:
        """Key shared by subgraphs whose statistic distributions coincide
        up to relabeling of nodes (same size, same node-group multiset,
        same applicable block-specific and transitive terms)."""
        part = self.partition
        kind = WITHIN if ref.within else BETWEEN
        terms = self.terms_of(kind)
        specific = tuple(
            c for c, t in enumerate(terms)
            if t.block_specific() and np.any(self.compiled(ref).weights[:, c])
        )
        tvec = tuple(self.compiled(ref).tvec.tolist())
        if ref.within:
            nodes = part.blocks[ref.k]
            groups = () if part.node_groups is None else tuple(np.sort(part.node_groups[nodes]).tolist())
            return (WITHIN, int(nodes.size), groups, specific, tvec)
        sizes = tuple(sorted((int(part.sizes[ref.k]), int(part.sizes[ref.l]))))
        if part.node_groups is not None:
            gk = tuple(np.sort(part.node_groups[part.blocks[ref.k]]).tolist())
            gl = tuple(np.sort(part.node_groups[part.blocks[ref.l]]).tolist())
            groups = tuple(sorted((gk, gl)))
        else:
            groups = ()
        return (BETWEEN, sizes, groups, specific, tvec)

    def bounds(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        """Attainable coordinate-wise range of the full within or between
        statistic."""
        d = self.p if kind == WITHIN else self.q
        lo, hi = np.zeros(d, dtype=np.int64), np.zeros(d, dtype=np.int64)
        for ref in self.refs_of(kind):
            a, b = self.compiled(ref).bounds()
            lo += a
            hi += b
        return lo, hi

    def _check_collinearity(self) -> None:
        for kind in (WITHIN, BETWEEN):
            terms = self.terms_of(kind)
            edge_cols = [c for c, t in enumerate(terms) if not t.transitive]
            if not edge_cols:
                continue
            rows = set()
            for ref in self.refs_of(kind):
                W = self.compiled(ref).weights[:, edge_cols]
                rows.update(map(tuple, np.unique(W, axis=0).tolist()))
            design = np.array(sorted(rows), dtype=float).reshape(-1, len(edge_cols))
            if design.shape[0] == 0:
                continue
            if np.linalg.matrix_rank(design) < len(edge_cols):
                warnings.warn(
                    f"{kind} edge terms are linearly dependent on this partition; "
                    "the exponential family is not minimal",
                    stacklevel=3,
                )

    def to_config(self) -> dict:
        return {
            "within": [t.to_config() for t in self.within_terms],
            "between": [t.to_config() for t in self.between_terms],
        }

    def __repr__(self):
        return f"ModelSpec(p={self.p}, q={self.q}, terms={self.names})"


# -- statistic evaluation ------------------------------------------------------


def _check_compatible(g: LocalGraph, spec: ModelSpec) -> None:
    if g.partition is not spec.partition and g.partition != spec.partition:
        raise ModelError("graph and model are defined on different partitions")


def count_transitive_edges(adj: np.ndarray) -> int:
    """Edges {i, j} with at least one common neighbor, from a dense 0/1
    adjacency matrix."""
    a = np.asarray(adj, dtype=np.int64)
    sp = a @ a
    r, s = np.triu_indices(a.shape[0], k=1)
    return int(np.count_nonzero((a[r, s] > 0) & (sp[r, s] > 0)))


def _part_statistics(g: LocalGraph, spec: ModelSpec, ref: SubgraphRef) -> np.ndarray:
    sm = spec.compiled(ref)
    bits = g.subgraph_bits(ref).astype(np.int64)
    s = bits @ sm.weights
    if ref.within and np.any(sm.tvec):
        s = s + count_transitive_edges(g.within_adjacency(ref.k)) * sm.tvec
    return s


def _embed(spec: ModelSpec, ref: SubgraphRef, part: np.ndarray) -> np.ndarray:
    out = np.zeros(spec.dim, dtype=np.int64)
    out[spec.part_slice(WITHIN if ref.within else BETWEEN)] = part
    return out


def subgraph_statistics(g: LocalGraph, spec: ModelSpec, ref: SubgraphRef) -> np.ndarray:
    """Contribution of subgraph (k, l) to s(x), as a length p+q vector."""
    _check_compatible(g, spec)
    spec.partition.check_ref(ref)
    return _embed(spec, ref, _part_statistics(g, spec, ref))


def compute_statistics(g: LocalGraph, spec: ModelSpec) -> np.ndarray:
    """Full sufficient statistic s(x) = (s_W, s_B) as int64."""
    _check_compatible(g, spec)
    s = np.zeros(spec.dim, dtype=np.int64)
    if spec.p:
        for ref in spec.partition.within_refs():
            s[: spec.p] += _part_statistics(g, spec, ref)
    if spec.q:
        for ref in spec.partition.between_refs():
            s[spec.p:] += _part_statistics(g, spec, ref)
    return s


def part_statistics_by_subgraph(g: LocalGraph, spec: ModelSpec, kind: str) -> np.ndarray:
    """Per-subgraph statistic rows (within: K x p, between: C(K,2) x q)."""
    _check_compatible(g, spec)
    refs = spec.refs_of(kind)
    d = spec.p if kind == WITHIN else spec.q
    out = np.zeros((len(refs), d), dtype=np.int64)
    if d:
        for r, ref in enumerate(refs):
            out[r] = _part_statistics(g, spec, ref)
    return out


def transitive_change(adj_i: np.ndarray, adj_j: np.ndarray, sp: np.ndarray,
                      ri: int, rj: int, adding: bool) -> int:
    """Change in the transitive-edge count when toggling {i, j}.

    ``adj_i``/``adj_j`` are the neighbor indicator rows of the two nodes
    (local ranks) and ``sp`` the shared-partner matrix before the toggle.
    Only the toggled edge and edges from i or j to their common neighbors
    can change status.
    """
    common = np.flatnonzero(adj_i & adj_j)
    if adding:
        return int(sp[ri, rj] > 0) + int(np.count_nonzero(sp[ri, common] == 0)) + int(
            np.count_nonzero(sp[rj, common] == 0))
    return -(int(sp[ri, rj] > 0) + int(np.count_nonzero(sp[ri, common] == 1)) + int(
        np.count_nonzero(sp[rj, common] == 1)))


def change_statistics(g: LocalGraph, spec: ModelSpec, i: int, j: int) -> np.ndarray:
    """Exact s(x with X_ij toggled) - s(x)."""
    _check_compatible(g, spec)
    part = spec.partition
    ref, pos = part.locate(i, j)
    sm = spec.compiled(ref)
    present = bool(g.subgraph_bits(ref)[pos])
    sign = -1 if present else 1
    delta = sign * sm.weights[pos]
    if ref.within and np.any(sm.tvec):
        k = ref.k
        ri, rj = int(part.local_rank[i]), int(part.local_rank[j])
        rows = g._neighbor_rows(k, (ri, rj))
        rows[0, rj] = rows[1, ri] = False
        dt = transitive_change(rows[0], rows[1], g.shared_partners(k), ri, rj, adding=not present)
        delta = delta + dt * sm.tvec
    return _embed(spec, ref, delta)


def parse_term(desc: dict, kind: str, partition: BlockPartition, path: str = "") -> list[Term]:
    """Expand one JSON term descriptor into terms.

    Indexed terms without an explicit index (``block``, ``group``,
    ``pair``) expand to one term per block, group, or block pair.
    """
    if not isinstance(desc, dict):
        raise DataError(f"{path}: term descriptor must be an object")
    name = desc.get("term")
    if name not in TERM_TYPES:
        raise DataError(f"{path}.term: unknown term {name!r}")
    cls = TERM_TYPES[name]
    if cls.kind != kind:
        raise DataError(f"{path}.term: {name} is a {cls.kind}-block term, listed under {kind!r}")
    allowed = {"term", "block", "group", "pair"}
    extra = set(desc) - allowed
    if extra:
        raise DataError(f"{path}: unexpected keys {sorted(extra)}")

    def _index(key, upper, label):
        val = desc[key]
        if not isinstance(val, int) or isinstance(val, bool) or not 1 <= val <= upper:
            raise DataError(f"{path}.{key}: {label} must be an integer in 1..{upper}, got {val!r}")
        return val - 1

    K = partition.n_blocks
    if cls is WithinEdgesPerBlock:
        if "block" in desc:
            return [cls(_index("block", K, "block"))]
        return [cls(k) for k in range(K)]
    if cls is WithinEdgesByNodeGroup:
        M = partition.n_node_groups
        if M == 0:
            raise DataError(f"{path}: {name} needs node groups in the blocks file")
        if "group" in desc:
            return [cls(_index("group", M, "group"))]
        return [cls(m) for m in range(M)]
    if cls is WithinTransitiveEdgesByBlockGroup:
        L = partition.n_block_groups
        if L == 0:
            raise DataError(f"{path}: {name} needs block_groups in the model config")
        if "group" in desc:
            return [cls(_index("group", L, "group"))]
        return [cls(l) for l in range(L)]
    if cls is BetweenEdgesPerPair:
        if "pair" in desc:
            pair = desc["pair"]
            if (not isinstance(pair, list) or len(pair) != 2
                    or not all(isinstance(x, int) for x in pair)
                    or not 1 <= pair[0] < pair[1] <= K):
                raise DataError(f"{path}.pair: expected [k, l] with 1 <= k < l <= {K}, got {pair!r}")
            return [cls(pair[0] - 1, pair[1] - 1)]
        return [cls(k, l) for k in range(K) for l in range(k + 1, K)]
    for key in ("block", "group", "pair"):
        if key in desc:
            raise DataError(f"{path}.{key}: {name} takes no index")
    return [cls()]
