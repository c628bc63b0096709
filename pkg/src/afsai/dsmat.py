"""Row-stripe distributed matrices and the setup-time halo exchange.

A matrix is cut into ``n_ranks`` stripes of consecutive rows; rank ``p``
keeps its stripe split by the same column ranges into CSR blocks that use
local numbering inside each block. Blocks left of the diagonal couple to
lower ranks, blocks right of it to higher ranks. Empty blocks are dropped.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .comm import CommError, Tag
from .sparse import CsrMatrix

INDEX32_LIMIT = 2**31


@dataclass(frozen=True)
class Partition:
    row_split: np.ndarray

    def __post_init__(self):
        split = np.asarray(self.row_split, dtype=np.int64)
        object.__setattr__(self, "row_split", split)
        if split.size < 2 or split[0] != 0 or np.any(np.diff(split) <= 0):
            raise ValueError("row_split must start at 0 and be strictly increasing")

    @property
    def n_ranks(self):
        return self.row_split.size - 1

    @property
    def n(self):
        return int(self.row_split[-1])

    def range(self, rank):
        return int(self.row_split[rank]), int(self.row_split[rank + 1])

    def size(self, rank):
        lo, hi = self.range(rank)
        return hi - lo

    def owner(self, index):
        return int(np.searchsorted(self.row_split, index, side="right") - 1)


def partition_rows(n, n_ranks, weights=None):
    """Contiguous stripes; sizes differ by at most one, larger stripes first.

    With ``weights`` (e.g. nnz per row) the cuts balance cumulative weight
    instead, still giving every rank at least one row.
    """
    if n_ranks < 1:
        raise ValueError("n_ranks must be >= 1")
    if n_ranks > n:
        raise ValueError(f"cannot split {n} rows over {n_ranks} ranks")
    if weights is None:
        base, extra = divmod(n, n_ranks)
        sizes = np.full(n_ranks, base, dtype=np.int64)
        sizes[:extra] += 1
        return Partition(np.concatenate([[0], np.cumsum(sizes)]))
    cum = np.cumsum(np.asarray(weights, dtype=np.float64))
    targets = cum[-1] * np.arange(1, n_ranks) / n_ranks
    cuts = np.searchsorted(cum, targets, side="left") + 1
    cuts = np.clip(cuts, np.arange(1, n_ranks), n - n_ranks + np.arange(1, n_ranks))
    for k in range(1, cuts.size):
        cuts[k] = max(cuts[k], cuts[k - 1] + 1)
    return Partition(np.concatenate([[0], cuts, [n]]))


@dataclass(eq=False)
class DSMat:
    """One rank's stripe: diagonal block plus non-empty off-diagonal blocks."""

    partition: Partition
    owner: int
    diag_block: CsrMatrix
    left_blocks: list = field(default_factory=list)
    right_blocks: list = field(default_factory=list)

    def blocks(self):
        """All ``(peer, block)`` pairs in ascending column order."""
        return [*self.left_blocks, (self.owner, self.diag_block), *self.right_blocks]

    def block(self, peer):
        for q, b in self.blocks():
            if q == peer:
                return b
        return None

    @property
    def nnz(self):
        return sum(b.nnz for _, b in self.blocks())

    def neighbors(self):
        return [q for q, _ in self.left_blocks] + [q for q, _ in self.right_blocks]

    def stripe(self):
        """The stripe with global column numbering."""
        lo, hi = self.partition.range(self.owner)
        parts = []
        for q in range(self.partition.n_ranks):
            b = self.block(q)
            parts.append(sps.csr_matrix((hi - lo, self.partition.size(q)))
                         if b is None else b.to_scipy())
        return CsrMatrix.from_scipy(sps.hstack(parts, format="csr"),
                                    dtype=self.diag_block.dtype)

    def astype(self, dtype):
        return DSMat(self.partition, self.owner, self.diag_block.astype(dtype),
                     [(q, b.astype(dtype)) for q, b in self.left_blocks],
                     [(q, b.astype(dtype)) for q, b in self.right_blocks])

    def dump(self):
        """One line per stored block: ``rank peer rows cols nnz``."""
        return [f"{self.owner} {q} {b.n_rows} {b.n_cols} {b.nnz}" for q, b in self.blocks()]


def dsmat_from_stripe(stripe, partition, rank):
    """Split a stripe with global columns into locally numbered blocks."""
    lo, hi = partition.range(rank)
    if stripe.n_rows != hi - lo or stripe.n_cols != partition.n:
        raise ValueError("stripe shape does not match the partition")
    sp = stripe.to_scipy()
    left, right, diag = [], [], None
    for q in range(partition.n_ranks):
        c0, c1 = partition.range(q)
        block = CsrMatrix.from_scipy(sp[:, c0:c1], dtype=stripe.dtype)
        if block.n_rows >= INDEX32_LIMIT or block.n_cols >= INDEX32_LIMIT:
            raise OverflowError("block dimensions exceed 4-byte local indexing")
        if q == rank:
            diag = block
        elif block.nnz:
            (left if q < rank else right).append((q, block))
    return DSMat(partition, rank, diag, left, right)


def to_dsmat(a, partition, rank):
    if a.n_rows != a.n_cols or a.n_rows != partition.n:
        raise ValueError("matrix must be square and match the partition")
    lo, hi = partition.range(rank)
    return dsmat_from_stripe(a.submatrix((lo, hi), (0, a.n_cols)), partition, rank)


def gather_dsmat(parts):
    """Reassemble the global matrix from every rank's DSMat."""
    rows = [part.stripe().to_scipy() for part in sorted(parts, key=lambda d: d.owner)]
    return CsrMatrix.from_scipy(sps.vstack(rows, format="csr"), dtype=rows[0].dtype)


@dataclass(frozen=True)
class CommMatrix:
    adjacency: np.ndarray

    @property
    def n_ranks(self):
        return self.adjacency.shape[0]

    def lower(self):
        return CommMatrix(np.tril(self.adjacency))

    def __eq__(self, other):
        return np.array_equal(self.adjacency, other.adjacency)


def comm_row(dist):
    """This rank's row of the communication matrix."""
    row = np.zeros(dist.partition.n_ranks, dtype=bool)
    for q, b in dist.blocks():
        row[q] = b.nnz > 0
    return row


def comm_matrix(parts):
    parts = sorted(parts, key=lambda d: d.owner)
    return CommMatrix(np.array([comm_row(d) for d in parts], dtype=bool))


def gather_comm_matrix(ctx, dist):
    """Collective version of :func:`comm_matrix`."""
    return CommMatrix(np.array(ctx.allgather(comm_row(dist)), dtype=bool))


def symbolic_power(c, k):
    """Boolean ``c^k``: which ranks are reachable within ``k`` hops."""
    if k < 1:
        raise ValueError("power must be >= 1")
    base = c.adjacency.astype(np.int64)
    acc = base.copy()
    for _ in range(k - 1):
        acc = ((acc @ base) > 0).astype(np.int64)
    return CommMatrix(acc > 0)


@dataclass(frozen=True)
class HaloPlan:
    """Block traffic of the setup gather for one rank.

    ``stripes`` are the row/column stripes of the assembled local matrix,
    ascending, ending with the owner. ``recv_from`` maps each left neighbour
    to the block columns it sends; ``send_to`` maps right neighbours to the
    block columns this rank sends them. Strictly lower blocks are mirrored
    into the upper triangle after arrival.
    """

    rank: int
    power: int
    stripes: tuple
    recv_from: dict
    send_to: dict
    transpose_complete: bool = True


def _gathered_stripes(g_hat, p):
    return tuple(int(q) for q in np.flatnonzero(g_hat.adjacency[p, :p + 1]))


def build_setup_halo(g_hat, rank, power=None):
    """Plan from the lower triangle of the powered communication matrix."""
    g = g_hat.lower()
    stripes = _gathered_stripes(g, rank)
    if rank not in stripes and g.n_ranks > 0:
        stripes = tuple(sorted(set(stripes) | {rank}))
    recv_from = {}
    for i in stripes:
        if i != rank:
            recv_from[i] = tuple(j for j in stripes if j <= i)
    send_to = {}
    for p in range(rank + 1, g.n_ranks):
        if g.adjacency[p, rank]:
            theirs = _gathered_stripes(g, p)
            send_to[p] = tuple(j for j in theirs if j <= rank)
    return HaloPlan(rank, power or 0, stripes, recv_from, send_to)


def _lower_blocks(dist, cols):
    out = {}
    for j in cols:
        b = dist.block(j)
        if b is not None and b.nnz:
            out[j] = b
    return out


def exchange_setup_halo(ctx, dist, plan):
    """Two-stage block exchange: sizes first, then the blocks themselves.

    Returns ``(received, truncated_nnz)`` where ``received[(i, j)]`` is block
    ``A[i, j]`` of a left neighbour and ``truncated_nnz`` counts lower
    entries of those stripes that fall outside the gathered column set.
    """
    pending = []
    for p, cols in plan.send_to.items():
        mine = _lower_blocks(dist, cols)
        outside = sum(b.nnz for q, b in dist.left_blocks if q not in cols)
        sizes = {j: (b.n_rows, b.n_cols, b.nnz) for j, b in mine.items()}
        pending.append(ctx.isend(p, Tag.HALO_SIZE, (sizes, outside)))
    size_ops = {i: ctx.irecv(i, Tag.HALO_SIZE) for i in plan.recv_from}
    ctx.wait_all(list(size_ops.values()))
    for p, cols in plan.send_to.items():
        mine = _lower_blocks(dist, cols)
        pending.append(ctx.isend(p, Tag.HALO_BLOCK, mine))
    block_ops = {i: ctx.irecv(i, Tag.HALO_BLOCK) for i in plan.recv_from}
    ctx.wait_all(list(block_ops.values()))
    received = {}
    truncated = 0
    for i, op in block_ops.items():
        sizes, outside = size_ops[i].payload
        truncated += outside
        blocks = op.payload
        if set(blocks) != set(sizes):
            raise CommError(f"rank {ctx.rank}: blocks from rank {i} disagree with announced sizes")
        for j, b in blocks.items():
            if (b.n_rows, b.n_cols, b.nnz) != sizes[j]:
                raise CommError(f"rank {ctx.rank}: block ({i}, {j}) has unexpected size")
            received[(i, j)] = b
    return received, truncated


@dataclass(eq=False)
class HaloMatrix:
    """Assembled local matrix with a compact local-to-global index map."""

    matrix: CsrMatrix
    local_to_global: np.ndarray
    owned: tuple

    @property
    def owned_local(self):
        n_own = self.owned[1] - self.owned[0]
        return (self.matrix.n_rows - n_own, self.matrix.n_rows)


def assemble_halo_matrix(dist, plan, received):
    """Build full (lower plus mirrored upper) CSR over the gathered stripes."""
    part = dist.partition
    stripes = plan.stripes
    sizes = [part.size(s) for s in stripes]
    where = {s: k for k, s in enumerate(stripes)}
    lower = {}
    for i in stripes:
        for j in stripes:
            if j > i:
                continue
            if i == dist.owner:
                b = dist.block(j)
            else:
                if (i, j) not in received and i not in plan.recv_from:
                    raise CommError(f"rank {dist.owner}: no plan entry for peer {i}")
                b = received.get((i, j))
            if b is not None and b.nnz:
                lower[(i, j)] = b
    grid = [[None] * len(stripes) for _ in stripes]
    for (i, j), b in lower.items():
        grid[where[i]][where[j]] = b.to_scipy()
        if i != j:
            grid[where[j]][where[i]] = b.to_scipy().T
    for k, s in enumerate(stripes):
        if grid[k][k] is None:
            grid[k][k] = sps.csr_matrix((sizes[k], sizes[k]))
    mat = sps.bmat(grid, format="csr")
    local_to_global = np.concatenate([np.arange(*part.range(s)) for s in stripes])
    return HaloMatrix(CsrMatrix.from_scipy(mat, dtype=dist.diag_block.dtype),
                      local_to_global.astype(np.int64), part.range(dist.owner))


def gather_setup_matrix(ctx, dist, power):
    """Collective: build this rank's halo matrix for the factor setup."""
    a_hat = gather_comm_matrix(ctx, dist)
    g_hat = symbolic_power(a_hat, power).lower()
    plan = build_setup_halo(g_hat, ctx.rank, power)
    received, truncated = exchange_setup_halo(ctx, dist, plan)
    return assemble_halo_matrix(dist, plan, received), plan, truncated
