import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afsai.bench import build_fsai_preconditioner
from afsai.comm import run_ranks
from afsai.dsmat import (CommMatrix, Partition, build_setup_halo, comm_matrix,
                         gather_comm_matrix, gather_dsmat, gather_setup_matrix,
                         partition_rows, symbolic_power, to_dsmat)
from afsai.fsai import FsaiParams, setup_afsai
from afsai.problems import generate_poisson7, random_spd
from afsai.sparse import CsrMatrix

from conftest import tridiag


def tri_adjacency(n):
    return CommMatrix(np.abs(np.subtract.outer(np.arange(n), np.arange(n))) <= 1)


def all_parts(a, n_ranks):
    p = partition_rows(a.n_rows, n_ranks)
    return [to_dsmat(a, p, r) for r in range(n_ranks)]


# --- partition ----------------------------------------------------------------

@pytest.mark.parametrize("n,r,sizes", [(10, 3, [4, 3, 3]), (8, 8, [1] * 8), (7, 2, [4, 3])])
def test_partition_sizes(n, r, sizes):
    p = partition_rows(n, r)
    assert np.diff(p.row_split).tolist() == sizes
    assert p.n_ranks == r and p.n == n


def test_partition_errors():
    with pytest.raises(ValueError):
        partition_rows(3, 4)
    with pytest.raises(ValueError):
        Partition([0, 2, 2, 5])


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 300), r=st.integers(1, 16), seed=st.integers(0, 1000))
def test_partition_covers_and_balances(n, r, seed):
    if r > n:
        return
    p = partition_rows(n, r)
    sizes = np.diff(p.row_split)
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
    w = np.random.default_rng(seed).integers(1, 20, n)
    pw = partition_rows(n, r, weights=w)
    assert pw.row_split[0] == 0 and pw.n == n and np.all(np.diff(pw.row_split) >= 1)
    for i in range(n):
        lo, hi = p.range(p.owner(i))
        assert lo <= i < hi


def test_nnz_balance_option():
    a = generate_poisson7(6, 6, 6)
    weights = np.diff(a.row_start).astype(float)
    weights[:50] *= 10
    p = partition_rows(a.n_rows, 4, weights=weights)
    loads = [weights[slice(*p.range(r))].sum() for r in range(4)]
    assert max(loads) <= 1.3 * weights.sum() / 4


# --- blocks -------------------------------------------------------------------

def test_single_rank_is_whole_matrix():
    a = random_spd(30, 0.2, 1)
    d = to_dsmat(a, partition_rows(30, 1), 0)
    assert d.diag_block.equals(a) and not d.left_blocks and not d.right_blocks


def test_tridiagonal_block_enumeration():
    a = tridiag(6)
    d = to_dsmat(a, partition_rows(6, 3), 1)
    assert [q for q, _ in d.left_blocks] == [0] and [q for q, _ in d.right_blocks] == [2]
    (_, left), (_, right) = d.left_blocks[0], d.right_blocks[0]
    assert left.toarray().tolist() == [[0.0, -1.0], [0.0, 0.0]]
    assert right.toarray().tolist() == [[0.0, 0.0], [-1.0, 0.0]]
    assert d.diag_block.toarray().tolist() == [[2.0, -1.0], [-1.0, 2.0]]
    assert d.dump() == ["1 0 2 2 1", "1 1 2 2 4", "1 2 2 2 1"]


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 80), r=st.integers(1, 8), seed=st.integers(0, 1000))
def test_lossless_reassembly(n, r, seed):
    if r > n:
        return
    a = random_spd(n, density=0.1, seed=seed)
    parts = all_parts(a, r)
    assert sum(d.nnz for d in parts) == a.nnz
    assert gather_dsmat(parts).equals(a)
    for d in parts:
        for q, b in d.blocks():
            assert b.n_cols == d.partition.size(q) and b.n_rows == d.partition.size(d.owner)
            if b.nnz:
                assert b.col_idx.max() < b.n_cols
        assert all(b.nnz > 0 for _, b in d.left_blocks + d.right_blocks)


# --- communication matrix -----------------------------------------------------

def test_comm_matrix_examples():
    assert comm_matrix(all_parts(tridiag(12), 4)) == tri_adjacency(4)
    diag = CsrMatrix.from_dense(np.diag(np.arange(1.0, 9.0)))
    assert comm_matrix(all_parts(diag, 4)) == CommMatrix(np.eye(4, dtype=bool))
    dense = CsrMatrix.from_dense(np.ones((9, 9)) + 9 * np.eye(9))
    assert comm_matrix(all_parts(dense, 3)) == CommMatrix(np.ones((3, 3), dtype=bool))


def test_collective_comm_matrix_matches():
    a = random_spd(60, 0.05, 3)
    parts = all_parts(a, 4)
    results, _ = run_ranks(4, lambda ctx: gather_comm_matrix(ctx, parts[ctx.rank]))
    expect = comm_matrix(parts)
    assert all(r == expect for r in results)
    assert np.array_equal(expect.adjacency, expect.adjacency.T)


def reachability(adj, k):
    n = adj.shape[0]
    out = np.zeros_like(adj)
    for s in range(n):
        frontier = {s}
        seen = {s} if adj[s, s] else set()
        for _ in range(k):
            frontier = {j for i in frontier for j in np.flatnonzero(adj[i])}
            seen |= frontier
        out[s, list(seen)] = True
    return out


def test_symbolic_power_examples():
    c = tri_adjacency(4)
    assert symbolic_power(c, 1) == c
    c2 = symbolic_power(c, 2).adjacency
    assert c2[3, 1] and not c2[3, 0]
    assert np.array_equal(c2, np.abs(np.subtract.outer(range(4), range(4))) <= 2)
    assert symbolic_power(tri_adjacency(6), 5) == CommMatrix(np.ones((6, 6), dtype=bool))
    with pytest.raises(ValueError):
        symbolic_power(c, 0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 8), k=st.integers(1, 4), seed=st.integers(0, 1000))
def test_symbolic_power_is_reachability(n, k, seed):
    rng = np.random.default_rng(seed)
    adj = rng.random((n, n)) < 0.3
    adj = adj | adj.T | np.eye(n, dtype=bool)
    assert np.array_equal(symbolic_power(CommMatrix(adj), k).adjacency, reachability(adj, k))


# --- halo plan ----------------------------------------------------------------

def test_halo_plan_examples():
    plan = build_setup_halo(CommMatrix(np.ones((1, 1), dtype=bool)), 0, 2)
    assert plan.recv_from == {} and plan.send_to == {}
    g1 = tri_adjacency(4).lower()
    plan = build_setup_halo(g1, 2, 1)
    assert list(plan.recv_from) == [1] and list(plan.send_to) == [3]
    g2 = symbolic_power(tri_adjacency(4), 2).lower()
    assert sorted(build_setup_halo(g2, 3, 2).recv_from) == [1, 2]


@pytest.mark.parametrize("r,k", [(3, 1), (4, 2), (6, 2), (5, 3)])
def test_halo_plans_mirror(r, k):
    g = symbolic_power(comm_matrix(all_parts(generate_poisson7(6, 6, 6), r)), k).lower()
    plans = [build_setup_halo(g, p, k) for p in range(r)]
    for p in plans:
        for q, cols in p.send_to.items():
            assert plans[q].recv_from[p.rank] == cols
        for q, cols in p.recv_from.items():
            assert plans[q].send_to[p.rank] == cols
        assert p.stripes[-1] == p.rank


def _halo_program(ctx, parts, k):
    halo, plan, truncated = gather_setup_matrix(ctx, parts[ctx.rank], k)
    return halo, plan, truncated


def test_two_ranks_one_hop_covers_lower_part():
    a = random_spd(40, 0.1, 5)
    parts = all_parts(a, 2)
    results, _ = run_ranks(2, _halo_program, parts, 1)
    dense = a.toarray()
    h0, h1 = results[0][0], results[1][0]
    assert np.array_equal(h0.matrix.toarray(), dense[:20, :20])
    assert np.array_equal(h1.matrix.toarray(), dense)
    assert h1.owned_local == (20, 40)
    assert results[0][2] == results[1][2] == 0


@pytest.mark.parametrize("r,k", [(3, 1), (4, 1), (4, 2), (5, 2)])
def test_assembled_halo_symmetric_and_exact(r, k):
    a = generate_poisson7(5, 5, 6)
    parts = all_parts(a, r)
    results, _ = run_ranks(r, _halo_program, parts, k, seed=r, max_delay=3)
    dense = a.toarray()
    for halo, plan, _ in results:
        m = halo.matrix
        assert m.is_symmetric()
        l2g = halo.local_to_global
        sub = dense[np.ix_(l2g, l2g)]
        # every gathered entry is an entry of A; lower part of owned rows complete where gathered
        got = m.toarray()
        assert np.array_equal(got[got != 0], sub[got != 0])
        lo, hi = halo.owned_local
        assert np.array_equal(got[lo:hi, :hi], sub[lo:hi, :hi])


def test_truncation_counted_with_short_halo():
    a = generate_poisson7(4, 4, 16)
    parts = all_parts(a, 8)
    results, _ = run_ranks(8, _halo_program, parts, 1)
    # two planes per stripe: stripe p-1 still couples one plane into stripe p-2,
    # which a one-hop halo on rank p does not gather (ranks 2..7, 16 entries each)
    assert sum(t for _, _, t in results) == 6 * 16
    b = random_spd(80, 0.2, 1)
    parts = all_parts(b, 8)
    results, _ = run_ranks(8, _halo_program, parts, 1)
    lost = sum(t for _, _, t in results)
    # entries of received stripes outside the gathered column set
    expect = 0
    g = symbolic_power(comm_matrix(parts), 1).lower()
    for p in range(8):
        plan = build_setup_halo(g, p, 1)
        for i in plan.recv_from:
            expect += sum(blk.nnz for q, blk in parts[i].left_blocks if q not in plan.stripes)
    assert lost == expect


@pytest.mark.parametrize("r", [1, 2, 3, 4])
def test_halo_sufficiency_gives_serial_factor(r):
    a = random_spd(90, 0.05, 11)
    params = FsaiParams(kmax=4, s=3, eps=1e-4)
    serial = setup_afsai(a, params).g
    parts = all_parts(a, r)

    def prog(ctx):
        pre, _ = build_fsai_preconditioner(ctx, parts[ctx.rank], params, max(r - 1, 1))
        return pre.g_dist, pre.gt_dist
    results, _ = run_ranks(r, prog, seed=r, max_delay=4)
    assert gather_dsmat([g for g, _ in results]).equals(serial)
    assert gather_dsmat([gt for _, gt in results]).equals(serial.transpose())
