"""Command-line benchmark driver.

Exit status: 0 on convergence or completed benchmark, 2 when a solve did
not converge, 1 on error.
"""

import argparse
import json
import logging
import sys

from .bench import RunConfig, run_benchmark, run_sweep, sweep_csv
from .fsai import FsaiParams
from .krylov import SolveParams

log = logging.getLogger("afsai")


def _rank_list(text):
    try:
        ranks = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rank list '{text}'") from None
    if not ranks or min(ranks) < 1:
        raise argparse.ArgumentTypeError("rank list needs positive integers")
    return ranks


def build_parser():
    p = argparse.ArgumentParser(prog="afsai-bench",
                                description="aFSAI-preconditioned CG over simulated ranks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", metavar="PATH", help="Matrix Market file (SPD)")
    src.add_argument("--poisson", nargs=3, type=int, metavar=("NX", "NY", "NZ"),
                     help="7-point Poisson problem on an NX x NY x NZ grid")
    p.add_argument("--precond", choices=("none", "jacobi", "afsai"), default="afsai")
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--step", type=int, default=10, help="entries added per adaptive step")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--single-precision-setup", action="store_true")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--halo-power", type=int, default=2, choices=(1, 2, 3))
    p.add_argument("--fixed-iters", type=int, metavar="N")
    p.add_argument("--balance-nnz", action="store_true",
                   help="cut stripes by non-zeros instead of rows")
    sweep = p.add_mutually_exclusive_group()
    sweep.add_argument("--sweep-strong", type=_rank_list, metavar="R1,R2,...")
    sweep.add_argument("--sweep-weak", nargs=2, metavar=("ROWS_PER_RANK", "R1,R2,..."))
    p.add_argument("--out", metavar="PATH", help="metrics JSON (default stdout)")
    p.add_argument("--history", metavar="PATH",
                   help="residual history CSV, or sweep table CSV in sweep mode")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args):
    return RunConfig(
        matrix_path=args.matrix,
        poisson=tuple(args.poisson) if args.poisson else None,
        precond=args.precond,
        fsai=FsaiParams(args.kmax, args.step, args.eps, args.single_precision_setup),
        solve=SolveParams(args.tol, args.max_iters),
        n_ranks=args.ranks,
        halo_power=args.halo_power,
        fixed_iters=args.fixed_iters,
        balance_nnz=args.balance_nnz,
    )


def _emit(doc, path):
    text = json.dumps(doc, indent=2, default=float)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.sweep_strong or args.sweep_weak:
            if args.sweep_strong:
                rows = run_sweep(cfg, args.sweep_strong, mode="strong")
            else:
                rows = run_sweep(cfg, _rank_list(args.sweep_weak[1]), mode="weak",
                                 rows_per_rank=int(args.sweep_weak[0]))
            doc = {"sweep": rows[0]["mode"],
                   "rows": [{k: v for k, v in r.items() if k != "metrics"} for r in rows],
                   "runs": [r["metrics"] for r in rows]}
            _emit(doc, args.out)
            if args.history:
                with open(args.history, "w") as fh:
                    fh.write(sweep_csv(rows))
            converged = [r["metrics"]["solve"].get("converged", True) for r in rows]
            return 0 if all(converged) else 2
        metrics, _, report = run_benchmark(cfg)
        _emit(metrics, args.out)
        if args.history:
            with open(args.history, "w") as fh:
                fh.write(report.history_csv())
        log.info("iterations=%d total=%.3fs", report.iterations, metrics["timing"]["total"])
        if report.converged is False:
            return 2
        return 0
    except Exception as exc:  # noqa: BLE001 - translated into exit status 1
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
