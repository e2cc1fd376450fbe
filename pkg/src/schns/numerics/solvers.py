"""Linear solves: preconditioned conjugate gradients for the SPD systems, sparse LU for the rest."""

import logging
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..core.exceptions import LinearSolveError

log = logging.getLogger(__name__)


def jacobi_preconditioner(matrix: sp.spmatrix) -> sp.spmatrix:
    diagonal = matrix.diagonal()
    diagonal = np.where(diagonal != 0, diagonal, 1.0)
    return sp.diags(1.0 / diagonal)


def conjugate_gradient(
    matrix: sp.spmatrix,
    rhs: np.ndarray,
    x0: Optional[np.ndarray] = None,
    rtol: float = 1e-10,
    atol: float = 0.0,
    maxiter: Optional[int] = None,
    preconditioner: Optional[Any] = None,
    label: str = "cg",
) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Solves matrix @ x = rhs for a symmetric positive (semi-)definite matrix.

    Returns:
        The solution and an info dict with `niter`, `success` and `res_norm`.

    Raises:
        LinearSolveError: if the iteration cap is reached or the solver breaks down.
    """
    n = rhs.shape[0]
    maxiter = maxiter or 10 * n
    iterations = 0

    def count(_xk: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    if not np.any(rhs) and x0 is None:
        return np.zeros_like(rhs), {"niter": 0, "success": True, "res_norm": 0.0}

    x, status = spla.cg(matrix, rhs, x0=x0, rtol=rtol, atol=atol, maxiter=maxiter, M=preconditioner, callback=count)
    residual = float(np.linalg.norm(rhs - matrix @ x))
    info = {"niter": iterations, "success": status == 0, "res_norm": residual}
    if status != 0:
        log.error(f"{label}: conjugate gradients did not converge, status={status}, residual={residual:.3e}")
        raise LinearSolveError(f"{label}: conjugate gradients did not converge", residual=residual, iterations=iterations)
    log.debug(f"{label}: converged in {iterations} iterations, residual={residual:.3e}")
    return x, info


class FactorizedSystem:
    """Sparse LU factorization reused across right-hand sides."""

    def __init__(self, matrix: sp.spmatrix, label: str = "lu"):
        self.label = label
        self.matrix = matrix.tocsc()
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as e:
            raise LinearSolveError(f"{label}: factorization failed: {e}") from e
        log.debug(f"{label}: factorized system of size {self.matrix.shape[0]}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            residual = float(np.linalg.norm(self.matrix @ np.nan_to_num(x) - rhs))
            raise LinearSolveError(f"{self.label}: non-finite solution", residual=residual, iterations=1)
        return x
