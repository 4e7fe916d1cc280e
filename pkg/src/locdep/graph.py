"""Block partitions and edge storage organized by block-based subgraph.

Every unordered node pair {i, j} lives in exactly one container: the
within-block bit vector of block k when both nodes are in A_k, or the
between-block bit vector of (k, l), k < l, otherwise.  Nodes are 0-based
here; the TSV readers and writers translate to the 1-based ids used in
files.

Within-block pairs are laid out lexicographically over local ranks
(r_i < r_j); between-block pairs are row-major over
(rank in A_k) x (rank in A_l).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True, order=True)
class SubgraphRef:
    """Index (k, l) of a block-based subgraph, 0-based, with k <= l."""

    k: int
    l: int

    def __post_init__(self):
        if self.k < 0 or self.l < self.k:
            raise DataError(f"invalid subgraph reference ({self.k}, {self.l})")

    @property
    def within(self) -> bool:
        return self.k == self.l

    def __str__(self):
        return f"({self.k + 1},{self.l + 1})"


def within_pair_index(a: int) -> np.ndarray:
    """Return an a x a matrix mapping local ranks (r, s), r != s, to the
    lexicographic pair index.  Diagonal entries are -1."""
    idx = np.full((a, a), -1, dtype=np.int64)
    r, s = np.triu_indices(a, k=1)
    idx[r, s] = np.arange(r.size)
    idx[s, r] = idx[r, s]
    return idx


class BlockPartition:
    """Partition of nodes 0..N-1 into K non-empty blocks.

    Groups with no members are allowed only through an explicit
    ``n_node_groups``.

    Parameters
    ----------
    blocks : sequence of node-id collections
        Disjoint blocks whose union is ``range(n_nodes)``.
    node_groups : sequence of int, optional
        Group index in ``0..M-1`` for every node.
    block_groups : sequence of int, optional
        Group index in ``0..L-1`` for every block.
    """

    def __init__(
        self,
        blocks: Sequence[Iterable[int]],
        node_groups: Sequence[int] | None = None,
        block_groups: Sequence[int] | None = None,
        n_node_groups: int | None = None,
    ):
        blocks = [np.array(sorted(int(v) for v in b), dtype=np.int64) for b in blocks]
        if not blocks:
            raise DataError("a partition needs at least one block")
        for k, b in enumerate(blocks):
            if b.size == 0:
                raise DataError(f"block {k + 1} is empty")
        allnodes = np.concatenate(blocks)
        n = allnodes.size
        if np.unique(allnodes).size != n:
            raise DataError("blocks are not disjoint")
        if allnodes.min() != 0 or allnodes.max() != n - 1:
            raise DataError("the union of blocks must be the node set 1..N")

        self.n_nodes = int(n)
        self.blocks: tuple[np.ndarray, ...] = tuple(blocks)
        self.node_to_block = np.empty(n, dtype=np.int64)
        self.local_rank = np.empty(n, dtype=np.int64)
        for k, b in enumerate(blocks):
            self.node_to_block[b] = k
            self.local_rank[b] = np.arange(b.size)

        self.node_groups = None
        if node_groups is not None:
            ng = np.asarray(node_groups, dtype=np.int64)
            if ng.shape != (n,):
                raise DataError("node_groups must assign exactly one group to every node")
            if ng.min() < 0:
                raise DataError("node group indices must be non-negative")
            self.node_groups = ng
        if n_node_groups is not None:
            if self.node_groups is None or n_node_groups <= self.node_groups.max():
                raise DataError("n_node_groups must exceed every node group index")
        self._n_node_groups = n_node_groups
        self.block_groups = None
        if block_groups is not None:
            bg = np.asarray(block_groups, dtype=np.int64)
            if bg.shape != (len(blocks),):
                raise DataError("block_groups must assign exactly one group to every block")
            if bg.min() < 0:
                raise DataError("block group indices must be non-negative")
            self.block_groups = bg

    @classmethod
    def from_labels(cls, block_of_node, node_groups=None, block_groups=None):
        """Build from a per-node block label array (0-based, contiguous)."""
        labels = np.asarray(block_of_node, dtype=np.int64)
        K = int(labels.max()) + 1
        blocks = [np.flatnonzero(labels == k) for k in range(K)]
        return cls(blocks, node_groups=node_groups, block_groups=block_groups)

    @classmethod
    def equal_blocks(cls, n_blocks: int, block_size: int, **kwargs):
        """K consecutive blocks of identical size."""
        return cls([range(k * block_size, (k + 1) * block_size) for k in range(n_blocks)], **kwargs)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([b.size for b in self.blocks], dtype=np.int64)

    @property
    def n_node_groups(self) -> int:
        if self.node_groups is None:
            return 0
        if self._n_node_groups is not None:
            return self._n_node_groups
        return int(self.node_groups.max()) + 1

    @property
    def n_block_groups(self) -> int:
        return 0 if self.block_groups is None else int(self.block_groups.max()) + 1

    def within_refs(self) -> list[SubgraphRef]:
        return [SubgraphRef(k, k) for k in range(self.n_blocks)]

    def between_refs(self) -> list[SubgraphRef]:
        K = self.n_blocks
        return [SubgraphRef(k, l) for k in range(K) for l in range(k + 1, K)]

    def refs(self) -> list[SubgraphRef]:
        """All subgraph references sorted by (k, l)."""
        return sorted(self.within_refs() + self.between_refs())

    def subgraph_index(self, ref: SubgraphRef) -> int:
        """Stable integer id: blocks 0..K-1, then pairs in (k, l) order."""
        self.check_ref(ref)
        K = self.n_blocks
        if ref.within:
            return ref.k
        k, l = ref.k, ref.l
        return K + k * (2 * K - k - 1) // 2 + (l - k - 1)

    def check_ref(self, ref: SubgraphRef) -> None:
        if ref.l >= self.n_blocks:
            raise DataError(f"subgraph {ref} out of range for K={self.n_blocks}")

    def n_pairs(self, ref: SubgraphRef) -> int:
        """Number of edge variables D in a subgraph."""
        self.check_ref(ref)
        a = int(self.sizes[ref.k])
        if ref.within:
            return a * (a - 1) // 2
        return a * int(self.sizes[ref.l])

    def rank_index(self, k: int) -> np.ndarray:
        """Cached local-rank pair index matrix for block k."""
        cache = self.__dict__.setdefault("_rank_index", {})
        a = int(self.sizes[k])
        if a not in cache:
            cache[a] = within_pair_index(a)
        return cache[a]

    def locate(self, i: int, j: int) -> tuple[SubgraphRef, int]:
        """Container and bit position of the unordered pair {i, j}."""
        if i == j:
            raise DataError(f"self-loop ({i + 1},{j + 1}) requested")
        n = self.n_nodes
        if not (0 <= i < n and 0 <= j < n):
            raise DataError(f"node out of range in pair ({i + 1},{j + 1})")
        bi, bj = int(self.node_to_block[i]), int(self.node_to_block[j])
        ri, rj = int(self.local_rank[i]), int(self.local_rank[j])
        if bi == bj:
            return SubgraphRef(bi, bi), int(self.rank_index(bi)[ri, rj])
        if bi > bj:
            bi, bj, ri, rj = bj, bi, rj, ri
        return SubgraphRef(bi, bj), ri * int(self.sizes[bj]) + rj

    def pair_nodes(self, ref: SubgraphRef) -> tuple[np.ndarray, np.ndarray]:
        """Global node ids (u, v) of every edge variable of a subgraph, in
        bit order."""
        self.check_ref(ref)
        bk = self.blocks[ref.k]
        if ref.within:
            r, s = np.triu_indices(bk.size, k=1)
            return bk[r], bk[s]
        bl = self.blocks[ref.l]
        return np.repeat(bk, bl.size), np.tile(bl, bk.size)

    def relabel_blocks(self, order: Sequence[int]) -> "BlockPartition":
        """Same partition with blocks listed in a new order."""
        order = list(order)
        ng = self.node_groups
        bg = None if self.block_groups is None else self.block_groups[order]
        return BlockPartition([self.blocks[k] for k in order], node_groups=ng, block_groups=bg,
                              n_node_groups=self._n_node_groups)

    def __eq__(self, other):
        if not isinstance(other, BlockPartition):
            return NotImplemented
        same_groups = lambda a, b: (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b))
        return (
            self.n_blocks == other.n_blocks
            and all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks))
            and same_groups(self.node_groups, other.node_groups)
            and same_groups(self.block_groups, other.block_groups)
            and self.n_node_groups == other.n_node_groups
        )

    __hash__ = None

    def __repr__(self):
        return f"BlockPartition(N={self.n_nodes}, K={self.n_blocks}, M={self.n_node_groups})"


class LocalGraph:
    """Undirected simple graph stored per block-based subgraph.

    Each subgraph owns one boolean vector with a single entry per unordered
    pair.  For within-block subgraphs a shared-partner count matrix is kept
    in sync so that common-neighbor queries are O(1) and toggles O(|A_k|).
    """

    def __init__(self, partition: BlockPartition):
        self.partition = partition
        self._bits: dict[SubgraphRef, np.ndarray] = {
            ref: np.zeros(partition.n_pairs(ref), dtype=bool) for ref in partition.refs()
        }
        self._partners: list[np.ndarray] = [
            np.zeros((a, a), dtype=np.int32) for a in partition.sizes
        ]

    @classmethod
    def from_edges(cls, partition: BlockPartition, edges: Iterable[tuple[int, int]]):
        """Build from 0-based edges; duplicates and self-loops are rejected."""
        g = cls(partition)
        for i, j in edges:
            ref, pos = partition.locate(int(i), int(j))
            bits = g._bits[ref]
            if bits[pos]:
                raise DataError(f"duplicate edge ({i + 1},{j + 1})")
            bits[pos] = True
        for k in range(partition.n_blocks):
            g._refresh_partners(k)
        return g

    def copy(self) -> "LocalGraph":
        g = LocalGraph.__new__(LocalGraph)
        g.partition = self.partition
        g._bits = {ref: b.copy() for ref, b in self._bits.items()}
        g._partners = [p.copy() for p in self._partners]
        return g

    # -- queries -----------------------------------------------------------

    def has_edge(self, i: int, j: int) -> bool:
        ref, pos = self.partition.locate(i, j)
        return bool(self._bits[ref][pos])

    def subgraph_bits(self, ref: SubgraphRef) -> np.ndarray:
        """Read-only view of the edge vector of one subgraph."""
        self.partition.check_ref(ref)
        v = self._bits[ref].view()
        v.flags.writeable = False
        return v

    def edge_count(self, ref: SubgraphRef | None = None) -> int:
        if ref is None:
            return int(sum(np.count_nonzero(b) for b in self._bits.values()))
        return int(np.count_nonzero(self.subgraph_bits(ref)))

    def within_adjacency(self, k: int) -> np.ndarray:
        """Dense symmetric 0/1 adjacency of block k over local ranks."""
        a = int(self.partition.sizes[k])
        adj = np.zeros((a, a), dtype=np.uint8)
        r, s = np.triu_indices(a, k=1)
        b = self._bits[SubgraphRef(k, k)]
        adj[r, s] = b
        adj[s, r] = b
        return adj

    def shared_partners(self, k: int) -> np.ndarray:
        """Shared-partner count matrix of block k (read-only view)."""
        v = self._partners[k].view()
        v.flags.writeable = False
        return v

    def common_within_neighbors(self, i: int, j: int) -> int:
        """Number of h in the common block, h not in {i, j}, adjacent to both."""
        p = self.partition
        if i == j:
            raise DataError("common neighbors of a node with itself are undefined")
        k = int(p.node_to_block[i])
        if int(p.node_to_block[j]) != k:
            raise DataError(f"nodes {i + 1} and {j + 1} are in different blocks")
        return int(self._partners[k][p.local_rank[i], p.local_rank[j]])

    def edges(self) -> list[tuple[int, int]]:
        """All edges as sorted 0-based pairs (i < j)."""
        out = []
        for ref, bits in self._bits.items():
            u, v = self.partition.pair_nodes(ref)
            on = np.flatnonzero(bits)
            out.extend(zip(np.minimum(u[on], v[on]).tolist(), np.maximum(u[on], v[on]).tolist()))
        out.sort()
        return out

    # -- mutation ----------------------------------------------------------

    def toggle_edge(self, i: int, j: int) -> bool:
        """Flip X_ij and return its new value."""
        p = self.partition
        ref, pos = p.locate(i, j)
        bits = self._bits[ref]
        new = not bits[pos]
        if ref.within:
            k = ref.k
            ri, rj = int(p.local_rank[i]), int(p.local_rank[j])
            adj = self._neighbor_rows(k, (ri, rj))
            delta = 1 if new else -1
            sp = self._partners[k]
            ni = np.flatnonzero(adj[0])
            nj = np.flatnonzero(adj[1])
            ni = ni[ni != rj]
            nj = nj[nj != ri]
            sp[rj, ni] += delta
            sp[ni, rj] += delta
            sp[ri, nj] += delta
            sp[nj, ri] += delta
        bits[pos] = new
        return new

    def set_subgraph(self, ref: SubgraphRef, bits: np.ndarray) -> None:
        """Replace one subgraph's edge vector wholesale."""
        self.partition.check_ref(ref)
        bits = np.asarray(bits, dtype=bool)
        if bits.shape != self._bits[ref].shape:
            raise DataError(f"subgraph {ref} expects {self._bits[ref].size} edge variables")
        self._bits[ref] = bits.copy()
        if ref.within:
            self._refresh_partners(ref.k)

    def _neighbor_rows(self, k: int, ranks) -> np.ndarray:
        idx = self.partition.rank_index(k)[list(ranks)]
        bits = self._bits[SubgraphRef(k, k)]
        rows = bits[np.where(idx < 0, 0, idx)]
        rows[idx < 0] = False
        return rows

    def _refresh_partners(self, k: int) -> None:
        adj = self.within_adjacency(k).astype(np.int32)
        sp = adj @ adj
        np.fill_diagonal(sp, 0)
        self._partners[k] = sp

    def __eq__(self, other):
        if not isinstance(other, LocalGraph):
            return NotImplemented
        return self.partition == other.partition and all(
            np.array_equal(b, other._bits[ref]) for ref, b in self._bits.items()
        )

    __hash__ = None

    def __repr__(self):
        return f"LocalGraph({self.partition!r}, edges={self.edge_count()})"


# -- TSV files ----------------------------------------------------------------


def _int_field(row: dict, key: str, path, line: int) -> int:
    try:
        return int(row[key])
    except (TypeError, ValueError):
        raise DataError(f"{path}:{line}: column {key!r} is not an integer: {row.get(key)!r}") from None


def read_blocks(path) -> BlockPartition:
    """Read a blocks TSV (header: node_id, block_id[, node_group]).

    Ids in the file are 1-based; node ids must cover 1..N, block ids 1..K,
    and node groups 1..M.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        cols = reader.fieldnames or []
        for need in ("node_id", "block_id"):
            if need not in cols:
                raise DataError(f"{path}: missing column {need!r}")
        has_groups = "node_group" in cols
        rows = []
        for line, row in enumerate(reader, start=2):
            node = _int_field(row, "node_id", path, line)
            block = _int_field(row, "block_id", path, line)
            group = _int_field(row, "node_group", path, line) if has_groups else None
            rows.append((node, block, group))
    if not rows:
        raise DataError(f"{path}: no nodes")
    nodes = np.array([r[0] for r in rows])
    n = nodes.size
    if sorted(nodes.tolist()) != list(range(1, n + 1)):
        raise DataError(f"{path}: node ids must be exactly 1..{n}, each once")
    labels = np.empty(n, dtype=np.int64)
    labels[nodes - 1] = [r[1] for r in rows]
    K = int(labels.max())
    if labels.min() < 1 or set(labels.tolist()) != set(range(1, K + 1)):
        raise DataError(f"{path}: block ids must be contiguous 1..K")
    groups = None
    if has_groups:
        groups = np.empty(n, dtype=np.int64)
        groups[nodes - 1] = [r[2] for r in rows]
        if groups.min() < 1:
            raise DataError(f"{path}: node groups must be 1-based")
        groups -= 1
    return BlockPartition.from_labels(labels - 1, node_groups=groups)


def write_blocks(partition: BlockPartition, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        header = ["node_id", "block_id"]
        if partition.node_groups is not None:
            header.append("node_group")
        w.writerow(header)
        for v in range(partition.n_nodes):
            row = [v + 1, int(partition.node_to_block[v]) + 1]
            if partition.node_groups is not None:
                row.append(int(partition.node_groups[v]) + 1)
            w.writerow(row)


def iter_edge_rows(path) -> Iterator[tuple[int, int]]:
    """Yield 1-based (i, j) rows; a non-numeric first line is a header."""
    path = Path(path)
    with path.open(newline="") as fh:
        for line, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{line}: expected two columns i, j")
            try:
                i, j = int(row[0]), int(row[1])
            except ValueError:
                if line == 1:
                    continue
                raise DataError(f"{path}:{line}: non-integer node id") from None
            yield i, j


def read_edges(path, partition: BlockPartition) -> LocalGraph:
    """Read an edges TSV (1-based, unordered pairs) into a LocalGraph."""
    return LocalGraph.from_edges(partition, ((i - 1, j - 1) for i, j in iter_edge_rows(path)))


def write_edges(g: LocalGraph, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["i", "j"])
        for i, j in g.edges():
            w.writerow([i + 1, j + 1])
