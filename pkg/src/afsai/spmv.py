"""Overlapped distributed SpMV on DSMat stripes.

Arrival order decides when a block product becomes available, but every
row is summed in ascending global column order (left blocks by ascending
peer, diagonal block, right blocks by ascending peer). The result is
therefore bitwise equal to the sequential product regardless of n_ranks
or message timing. Rows with no left coupling start on the diagonal block
before any message is awaited.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .comm import Tag
from .dsmat import DSMat, Partition


@dataclass(eq=False)
class DistVector:
    partition: Partition
    owner: int
    local_values: np.ndarray

    def __post_init__(self):
        if self.local_values.shape != (self.partition.size(self.owner),):
            raise ValueError("local length must equal the stripe length")

    @classmethod
    def from_global(cls, x, partition, rank):
        lo, hi = partition.range(rank)
        return cls(partition, rank, np.array(x[lo:hi], dtype=np.float64))

    def like(self, values):
        return DistVector(self.partition, self.owner, values)


@dataclass(eq=False)
class SpmvPlan:
    """Which owned entries go to which peer, and which arrive from which peer.

    ``send[q]`` are local row indices this rank ships to ``q``; ``recv[q]``
    are the local column indices of block ``q`` that peer ``q`` provides.
    """

    owner: int
    send: dict
    recv: dict
    left_free_rows: np.ndarray
    left_coupled_rows: np.ndarray

    def equivalent(self, other):
        return (self.send.keys() == other.send.keys() and self.recv.keys() == other.recv.keys()
                and all(np.array_equal(self.send[q], other.send[q]) for q in self.send)
                and all(np.array_equal(self.recv[q], other.recv[q]) for q in self.recv))


def _used_columns(block):
    return np.unique(block.col_idx)


def prepare(ctx, dist):
    """Collective: tell every rank which of its entries this rank will read."""
    needs = {q: _used_columns(b) for q, b in dist.left_blocks + dist.right_blocks}
    others = [q for q in range(ctx.n_ranks) if q != ctx.rank]
    for q in others:
        ctx.isend(q, Tag.PREPARE, needs.get(q, np.zeros(0, dtype=np.int64)))
    ops = {q: ctx.irecv(q, Tag.PREPARE) for q in others}
    ctx.wait_all(list(ops.values()))
    send = {q: op.payload for q, op in sorted(ops.items()) if op.payload.size}
    n_local = dist.diag_block.n_rows
    coupled = np.zeros(n_local, dtype=bool)
    for _, b in dist.left_blocks:
        coupled |= np.diff(b.row_start) > 0
    return SpmvPlan(ctx.rank, send, needs, np.flatnonzero(~coupled).astype(np.int64),
                    np.flatnonzero(coupled).astype(np.int64))


def spmv_dist(ctx, dist, plan, y):
    """z = A y on this rank's stripe; collective over all ranks."""
    if plan.owner != dist.owner or y.owner != dist.owner:
        raise ValueError("plan, matrix and vector belong to different ranks")
    yl = y.local_values
    if yl.shape[0] != dist.diag_block.n_cols:
        raise ValueError("vector stripe does not match the diagonal block")
    tag = Tag.SPMV_VECTOR
    for q, idx in plan.send.items():
        ctx.isend(q, tag, yl[idx])
    pending = {q: ctx.irecv(q, tag) for q in plan.recv}
    z = np.zeros(dist.diag_block.n_rows, dtype=np.float64)
    d = dist.diag_block
    # overlap: rows whose sum starts in the diagonal block need no remote data
    _kernels.csr_accumulate(d.row_start, d.col_idx, d.values, yl, z, plan.left_free_rows)

    queue = [(q, b) for q, b in dist.left_blocks] + [(None, None)] + list(dist.right_blocks)
    part = dist.partition
    arrived = {}
    all_rows = np.arange(z.shape[0], dtype=np.int64)
    waiting = list(pending.values())
    while queue:
        q, b = queue[0]
        if q is None:
            _kernels.csr_accumulate(d.row_start, d.col_idx, d.values, yl, z,
                                    plan.left_coupled_rows)
            queue.pop(0)
            continue
        if q not in arrived:
            for op in ctx.test_any(waiting):
                arrived[op.peer] = op.payload
            waiting = [op for op in waiting if not op.done]
            if q not in arrived:
                if ctx.world.aborted:
                    raise RuntimeError(f"rank {ctx.rank}: aborted during SpMV")
                ctx.idle()
                continue
        buf = np.zeros(part.size(q), dtype=np.float64)
        buf[plan.recv[q]] = arrived[q]
        _kernels.csr_accumulate(b.row_start, b.col_idx, b.values, buf, z, all_rows)
        queue.pop(0)
    return y.like(z)


def transpose_dist(ctx, dist):
    """Collective distributed transpose: block (p, q) becomes block (q, p) on rank q."""
    p = ctx.rank
    for q, b in dist.left_blocks + dist.right_blocks:
        ctx.isend(q, Tag.TRANSPOSE, b.transpose())
    senders = [q for q in range(ctx.n_ranks) if q != p]
    # every rank announces to every other rank whether a block follows
    have = {q for q, _ in dist.left_blocks + dist.right_blocks}
    for q in senders:
        ctx.isend(q, (Tag.TRANSPOSE, "count"), q in have)
    flags = {q: ctx.recv(q, (Tag.TRANSPOSE, "count")) for q in senders}
    blocks = {q: ctx.recv(q, Tag.TRANSPOSE) for q in senders if flags[q]}
    left = [(q, blocks[q]) for q in sorted(blocks) if q < p]
    right = [(q, blocks[q]) for q in sorted(blocks) if q > p]
    return DSMat(dist.partition, p, dist.diag_block.transpose(), left, right)


def apply_dist_preconditioner(ctx, g_dist, gt_dist, g_plan, gt_plan, r):
    """G^T (G r) via two distributed products."""
    w = spmv_dist(ctx, g_dist, g_plan, r)
    return spmv_dist(ctx, gt_dist, gt_plan, w)
