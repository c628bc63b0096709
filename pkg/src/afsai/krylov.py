"""Preconditioned conjugate gradient over simulated ranks."""

import time
from dataclasses import dataclass, field

import numpy as np

from .spmv import apply_dist_preconditioner, spmv_dist


class SolverDivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SolveParams:
    tol: float = 1e-8
    max_iters: int = 1000
    record_residual_history: bool = True
    fixed_iters: bool = False

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolveReport:
    iterations: int
    final_relative_residual: float
    converged: object
    setup_time: float
    solve_time: float
    residual_history: list = field(default_factory=list)
    explicit_relative_residual: float = float("nan")

    @property
    def total_time(self):
        return self.setup_time + self.solve_time

    def history_csv(self):
        lines = ["iteration,relative_residual"]
        lines += [f"{k},{v!r}" for k, v in enumerate(self.residual_history)]
        return "\n".join(lines) + "\n"


class IdentityPreconditioner:
    name = "none"

    def apply(self, ctx, r):
        return r.like(r.local_values.copy())


class JacobiPreconditioner:
    name = "jacobi"

    def __init__(self, inv_diag):
        self.inv_diag = inv_diag

    def apply(self, ctx, r):
        return r.like(self.inv_diag * r.local_values)


def jacobi_setup(a_dist):
    diag = a_dist.diag_block.diagonal()
    bad = np.flatnonzero(~(diag > 0.0))
    if bad.size:
        lo, _ = a_dist.partition.range(a_dist.owner)
        raise ValueError(f"Jacobi needs a positive diagonal; row {lo + bad[0]} has {diag[bad[0]]}")
    return JacobiPreconditioner(1.0 / diag)


class FsaiPreconditioner:
    name = "afsai"

    def __init__(self, g_dist, gt_dist, g_plan, gt_plan):
        self.g_dist, self.gt_dist = g_dist, gt_dist
        self.g_plan, self.gt_plan = g_plan, gt_plan

    def apply(self, ctx, r):
        return apply_dist_preconditioner(ctx, self.g_dist, self.gt_dist,
                                         self.g_plan, self.gt_plan, r)


def _dyadic_nodes(values, lo, n_global):
    """Pairwise-tree partial sums of the aligned dyadic blocks covering ``[lo, lo+len)``.

    The tree is the one a single process would build over all ``n_global``
    entries, so merging the nodes of every rank gives the same bits for any
    partition.
    """
    nodes = {}
    hi = lo + values.shape[0]
    pos = lo
    while pos < hi:
        level = 0
        while (pos % (1 << (level + 1)) == 0) and pos + (1 << (level + 1)) <= hi:
            level += 1
        v = values[pos - lo: pos - lo + (1 << level)]
        while v.shape[0] > 1:
            v = v[0::2] + v[1::2]
        nodes[(level, pos >> level)] = float(v[0])
        pos += 1 << level
    return nodes


def _tree_total(nodes, n_global):
    top = max(int(np.ceil(np.log2(max(n_global, 1)))), 0)

    def value(level, idx):
        hit = nodes.get((level, idx))
        if hit is not None:
            return hit
        if (idx << level) >= n_global or level == 0:
            return 0.0
        return value(level - 1, 2 * idx) + value(level - 1, 2 * idx + 1)

    return value(top, 0)


def dot(ctx, x, y):
    """Partition-invariant, bitwise reproducible global dot product."""
    lo, _ = x.partition.range(x.owner)
    nodes = _dyadic_nodes(x.local_values * y.local_values, lo, x.partition.n)
    merged = ctx.allreduce(nodes, lambda a, b: {**a, **b}, name="dot")
    return _tree_total(merged, x.partition.n)


def serial_tree_dot(x, y):
    """Reference for :func:`dot` on one process."""
    return _tree_total(_dyadic_nodes(np.asarray(x) * np.asarray(y), 0, len(x)), len(x))


def pcg_solve(ctx, a_dist, a_plan, precond, b, params=None, setup_time=0.0):
    """Solve A x = b from x0 = 0. Collective; returns ``(x, SolveReport)``.

    Stops when the recurrence residual drops to ``tol`` relative to
    ``||r0||``, or after ``max_iters``. In ``fixed_iters`` mode exactly
    ``max_iters`` iterations run and ``converged`` is ``None``.
    """
    params = params or SolveParams()
    t0 = time.perf_counter()
    x = b.like(np.zeros_like(b.local_values))
    r = b.like(b.local_values.copy())
    z = precond.apply(ctx, r)
    p = z.like(z.local_values.copy())
    rz = dot(ctx, r, z)
    r0 = np.sqrt(dot(ctx, r, r))
    history = [1.0] if params.record_residual_history else []
    rel = 1.0 if r0 > 0.0 else 0.0
    it = 0
    if r0 == 0.0 and not params.fixed_iters:
        return x, SolveReport(0, 0.0, True, setup_time, time.perf_counter() - t0,
                              history, 0.0)
    while it < params.max_iters:
        if not params.fixed_iters and rel <= params.tol:
            break
        ap = spmv_dist(ctx, a_dist, a_plan, p)
        pap = dot(ctx, p, ap)
        if pap == 0.0 and rel == 0.0:
            break  # exact solution reached, only possible in fixed-iteration mode
        if not (np.isfinite(pap) and np.isfinite(rz)) or pap <= 0.0:
            raise SolverDivergenceError(f"iteration {it}: (p, Ap) = {pap}, (r, z) = {rz}")
        alpha = rz / pap
        x.local_values += alpha * p.local_values
        r.local_values -= alpha * ap.local_values
        z = precond.apply(ctx, r)
        rz_new = dot(ctx, r, z)
        beta = rz_new / rz
        rz = rz_new
        p.local_values *= beta
        p.local_values += z.local_values
        it += 1
        rel = np.sqrt(dot(ctx, r, r)) / r0
        if params.record_residual_history:
            history.append(float(rel))
        if not np.isfinite(rel):
            raise SolverDivergenceError(f"iteration {it}: residual is not finite")
    ax = spmv_dist(ctx, a_dist, a_plan, x)
    res = b.like(b.local_values - ax.local_values)
    explicit = np.sqrt(dot(ctx, res, res)) / np.sqrt(dot(ctx, b, b))
    converged = None if params.fixed_iters else bool(rel <= params.tol)
    report = SolveReport(it, float(rel), converged, setup_time,
                         time.perf_counter() - t0, history, float(explicit))
    return x, report
