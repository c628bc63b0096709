"""Benchmark harness: one collective setup+solve program run over simulated ranks."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .comm import run_ranks
from .dsmat import dsmat_from_stripe, gather_setup_matrix, partition_rows, to_dsmat
from .fsai import FsaiParams, StopReason, setup_afsai
from .krylov import (FsaiPreconditioner, IdentityPreconditioner, SolveParams,
                     jacobi_setup, pcg_solve)
from .mmio import read_matrix_market
from .problems import generate_poisson7
from .sparse import CsrMatrix
from .spmv import DistVector, prepare, transpose_dist

SCHEMA_VERSION = 1
PRECONDITIONERS = ("none", "jacobi", "afsai")


@dataclass(frozen=True)
class RunConfig:
    matrix_path: str = None
    poisson: tuple = None
    precond: str = "afsai"
    fsai: FsaiParams = field(default_factory=FsaiParams)
    solve: SolveParams = field(default_factory=SolveParams)
    n_ranks: int = 1
    halo_power: int = 2
    fixed_iters: int = None
    balance_nnz: bool = False
    seed: int = None
    max_delay: int = 0

    def __post_init__(self):
        if (self.matrix_path is None) == (self.poisson is None):
            raise ValueError("exactly one of matrix_path / poisson must be given")
        if self.n_ranks < 1:
            raise ValueError("n_ranks must be >= 1")
        if self.precond not in PRECONDITIONERS:
            raise ValueError(f"precond must be one of {PRECONDITIONERS}")
        if not 1 <= self.halo_power <= 3:
            raise ValueError("halo power must be 1, 2 or 3")
        if self.fixed_iters is not None and self.fixed_iters < 1:
            raise ValueError("fixed_iters must be >= 1")

    def load_matrix(self):
        if self.poisson is not None:
            return generate_poisson7(*self.poisson)
        return read_matrix_market(self.matrix_path, require_square=True,
                                  require_symmetric=True)

    def solve_params(self):
        if self.fixed_iters is None:
            return self.solve
        return replace(self.solve, max_iters=self.fixed_iters, fixed_iters=True)


def build_fsai_preconditioner(ctx, dist, params, power):
    """Collective aFSAI setup on the gathered halo matrix of every rank."""
    src = dist.astype(np.float32) if params.use_single_precision_setup else dist
    halo, plan, truncated = gather_setup_matrix(ctx, src, power)
    factor = setup_afsai(halo.matrix, params, rows=halo.owned_local)
    g = factor.g
    stripe = CsrMatrix(g.n_rows, dist.partition.n, g.row_start,
                       halo.local_to_global[g.col_idx], g.values)
    g_dist = dsmat_from_stripe(stripe, dist.partition, ctx.rank)
    gt_dist = transpose_dist(ctx, g_dist)
    pre = FsaiPreconditioner(g_dist, gt_dist, prepare(ctx, g_dist), prepare(ctx, gt_dist))
    info = {
        "factor_nnz": g.nnz,
        "psi_reduction": factor.psi_reduction(),
        "stop_reasons": np.bincount(factor.stop_reasons, minlength=len(StopReason)),
        "halo_truncated_nnz": truncated,
        "halo_rows": halo.matrix.n_rows,
        "halo_stripes": list(plan.stripes),
    }
    return pre, info


def _rank_program(ctx, a, b, cfg, partition):
    dist = to_dsmat(a, partition, ctx.rank)
    a_plan = prepare(ctx, dist)
    t0 = time.perf_counter()
    info = {}
    if cfg.precond == "none":
        pre = IdentityPreconditioner()
    elif cfg.precond == "jacobi":
        pre = jacobi_setup(dist)
    else:
        pre, info = build_fsai_preconditioner(ctx, dist, cfg.fsai, cfg.halo_power)
    ctx.barrier()
    setup_time = time.perf_counter() - t0
    bv = DistVector.from_global(b, partition, ctx.rank)
    x, report = pcg_solve(ctx, dist, a_plan, pre, bv, cfg.solve_params(), setup_time)
    return {"x": x.local_values, "report": report, "info": info}


def solve_distributed(a, b, cfg):
    """Run the collective program; returns per-rank results and the world."""
    weights = np.diff(a.row_start) if cfg.balance_nnz else None
    partition = partition_rows(a.n_rows, cfg.n_ranks, weights)
    return run_ranks(cfg.n_ranks, _rank_program, a, b, cfg, partition,
                     seed=cfg.seed, max_delay=cfg.max_delay), partition


def _summary(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return None
    return {"min": float(values.min()), "mean": float(values.mean()),
            "max": float(values.max())}


def run_benchmark(cfg, a=None, b=None):
    """Setup + solve for one configuration; returns ``(metrics, x, report)``."""
    a = a if a is not None else cfg.load_matrix()
    b = np.ones(a.n_rows) if b is None else np.asarray(b, dtype=np.float64)
    (results, world), partition = solve_distributed(a, b, cfg)
    report = results[0]["report"]
    x = np.concatenate([r["x"] for r in results])
    setup_time = max(r["report"].setup_time for r in results)
    solve_time = max(r["report"].solve_time for r in results)
    solve = {
        "iterations": report.iterations,
        "final_relative_residual": report.final_relative_residual,
        "explicit_relative_residual": report.explicit_relative_residual,
    }
    if report.converged is not None:
        solve["converged"] = report.converged
    precond = {"type": cfg.precond}
    if cfg.precond == "afsai":
        infos = [r["info"] for r in results]
        g_nnz = sum(i["factor_nnz"] for i in infos)
        reasons = np.sum([i["stop_reasons"] for i in infos], axis=0)
        precond.update({
            "kmax": cfg.fsai.kmax, "s": cfg.fsai.s, "eps": cfg.fsai.eps,
            "single_precision_setup": cfg.fsai.use_single_precision_setup,
            "halo_power": cfg.halo_power,
            "factor_nnz": int(g_nnz),
            "factor_nnz_per_row": g_nnz / a.n_rows,
            "psi_reduction": _summary(np.concatenate([i["psi_reduction"] for i in infos])),
            "stop_reasons": {r.name.lower(): int(reasons[r]) for r in StopReason},
            "halo_truncated_nnz": int(sum(i["halo_truncated_nnz"] for i in infos)),
            "halo_rows_per_rank": [int(i["halo_rows"]) for i in infos],
        })
    metrics = {
        "schema_version": SCHEMA_VERSION,
        "matrix": {"source": cfg.matrix_path or "poisson7:%dx%dx%d" % tuple(cfg.poisson),
                   "n": a.n_rows, "nnz": a.nnz},
        "config": {"n_ranks": cfg.n_ranks, "tol": cfg.solve.tol,
                   "max_iters": cfg.solve_params().max_iters,
                   "mode": "solve" if cfg.fixed_iters is None else "fixed-iters",
                   "row_split": partition.row_split.tolist()},
        "preconditioner": precond,
        "solve": solve,
        "timing": {"setup": setup_time, "solve": solve_time,
                   "total": setup_time + solve_time},
        "comm": {"bytes_sent_per_rank": list(world.bytes_sent),
                 "messages_sent_per_rank": list(world.messages_sent)},
    }
    return metrics, x, report


SWEEP_COLUMNS = ("mode", "n_ranks", "n", "nnz", "iterations", "setup_time", "solve_time",
                 "total_time", "time_per_iteration", "efficiency", "factor_nnz_per_row")


def weak_dims(rows_per_rank, n_ranks):
    side = max(1, int(round((rows_per_rank * n_ranks) ** (1.0 / 3.0))))
    return (side, side, side)


def run_sweep(cfg, ranks, mode="strong", rows_per_rank=None):
    """One metrics row per rank count.

    ``strong`` keeps the problem of ``cfg``; ``weak`` regenerates a Poisson
    cube holding about ``rows_per_rank`` rows per rank.
    """
    ranks = list(ranks)
    if not ranks:
        raise ValueError("rank list must not be empty")
    if mode not in ("strong", "weak"):
        raise ValueError("mode must be 'strong' or 'weak'")
    if mode == "weak" and not rows_per_rank:
        raise ValueError("weak scaling needs rows_per_rank")
    a_fixed = cfg.load_matrix() if mode == "strong" else None
    rows = []
    for r in ranks:
        if mode == "strong":
            run_cfg, a = replace(cfg, n_ranks=r), a_fixed
        else:
            run_cfg = replace(cfg, n_ranks=r, poisson=weak_dims(rows_per_rank, r),
                              matrix_path=None)
            a = None
        metrics, _, _ = run_benchmark(run_cfg, a=a)
        its = metrics["solve"]["iterations"]
        t = metrics["timing"]
        rows.append({
            "mode": mode, "n_ranks": r, "n": metrics["matrix"]["n"],
            "nnz": metrics["matrix"]["nnz"], "iterations": its,
            "setup_time": t["setup"], "solve_time": t["solve"], "total_time": t["total"],
            "time_per_iteration": t["solve"] / its if its else float("nan"),
            "factor_nnz_per_row": metrics["preconditioner"].get("factor_nnz_per_row"),
            "metrics": metrics,
        })
    base = min(rows, key=lambda row: row["n_ranks"])
    for row in rows:
        if mode == "strong":
            row["efficiency"] = (base["total_time"] * base["n_ranks"]
                                 / (row["total_time"] * row["n_ranks"]))
        else:
            row["efficiency"] = base["total_time"] / row["total_time"]
    return rows


def sweep_csv(rows):
    lines = [",".join(SWEEP_COLUMNS)]
    for row in rows:
        lines.append(",".join("" if row.get(c) is None else str(row[c]) for c in SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"

