"""Adaptive FSAI preconditioning for PCG on row-stripe distributed matrices."""

from .comm import RankContext, World, run_ranks
from .dsmat import DSMat, Partition, partition_rows, to_dsmat
from .fsai import FsaiFactor, FsaiParams, apply_preconditioner, setup_afsai
from .krylov import SolveParams, SolveReport, pcg_solve
from .mmio import read_matrix_market, write_matrix_market
from .problems import generate_poisson7
from .sparse import BreakdownError, CsrMatrix, NonPositivePivotError, spmv_seq
from .spmv import DistVector, prepare, spmv_dist

__version__ = "0.1.0"

__all__ = [
    "BreakdownError", "CsrMatrix", "DSMat", "DistVector", "FsaiFactor", "FsaiParams",
    "NonPositivePivotError", "Partition", "RankContext", "SolveParams", "SolveReport",
    "World", "apply_preconditioner", "generate_poisson7", "partition_rows", "pcg_solve",
    "prepare", "read_matrix_market", "run_ranks", "setup_afsai", "spmv_dist", "spmv_seq",
    "to_dsmat", "write_matrix_market",
]
