"""Dense operator algebra for the small (2-4 level) systems used throughout.

States and operators are plain complex ``numpy`` arrays. Level bookkeeping
(which index is ``g``, ``i``, ...) lives with the model, not the array.
"""

from __future__ import annotations

import numpy as np

HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-9
TRACE_TOL = 1e-9


class NonHermitianError(ValueError):
    """Raised when an operator that must be Hermitian is not."""


class PositivityError(ValueError):
    """Raised when a density matrix has an eigenvalue below ``-POSITIVITY_TOL``."""


def sigma(k: int, l: int, dim: int) -> np.ndarray:
    """Return the ladder operator ``|k><l|`` in a ``dim``-level basis."""
    op = np.zeros((dim, dim), dtype=complex)
    op[k, l] = 1.0
    return op


def projector(k: int, dim: int) -> np.ndarray:
    return sigma(k, k, dim)


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def hermiticity_error(a: np.ndarray) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a - dagger(a)))) if a.size else 0.0


def hermitian_spectrum(a: np.ndarray, tol: float = HERMITIAN_TOL):
    """Eigen-decomposition of a Hermitian matrix.

    Returns ``(evals, evecs)`` with eigenvalues ascending and ``evecs`` unitary,
    so that ``a == evecs @ diag(evals) @ evecs^dagger``.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    err = hermiticity_error(a)
    if err > tol:
        raise NonHermitianError(f"matrix is not Hermitian: max|A - A^dag| = {err:.3e}")
    # symmetrise so LAPACK sees exactly Hermitian input
    evals, evecs = np.linalg.eigh(0.5 * (a + dagger(a)))
    return evals, evecs


def state_eigenvalues(rho: np.ndarray, tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Ascending eigenvalues of ``rho``; raises on positivity violations."""
    evals, _ = hermitian_spectrum(rho, tol=max(HERMITIAN_TOL, 1e-8))
    if evals[0] < -tol:
        raise PositivityError(f"density matrix has eigenvalue {evals[0]:.3e} < -{tol:g}")
    return evals


def von_neumann_entropy(rho: np.ndarray) -> float:
    """``-Tr(rho ln rho)`` in nats, with ``0 ln 0 = 0``.

    Tiny negative eigenvalues from integrator roundoff are clamped to zero here
    (and only here).
    """
    lam = np.clip(state_eigenvalues(rho), 0.0, None)
    lam = lam[lam > 0.0]
    return float(-np.sum(lam * np.log(lam)))


def expectation(rho: np.ndarray, a: np.ndarray) -> complex:
    """``Tr(rho A)``."""
    rho = np.asarray(rho)
    a = np.asarray(a)
    if rho.shape != a.shape:
        raise ValueError(f"dimension mismatch: state {rho.shape} vs operator {a.shape}")
    # Tr(rho A) = sum_kl rho_kl A_lk
    return complex(np.sum(rho * a.T))


def trace_distance(rho: np.ndarray, sigma_: np.ndarray) -> float:
    """``0.5 * ||rho - sigma||_1`` for Hermitian arguments."""
    evals, _ = hermitian_spectrum(np.asarray(rho) - np.asarray(sigma_), tol=1e-8)
    return 0.5 * float(np.sum(np.abs(evals)))


def validate_state(rho: np.ndarray, *, herm_tol: float = 1e-12, trace_tol: float = TRACE_TOL,
                   pos_tol: float = POSITIVITY_TOL) -> None:
    """Check Hermiticity, unit trace and positivity; raise ``ValueError`` subclasses."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    err = hermiticity_error(rho)
    if err > herm_tol:
        raise NonHermitianError(f"state is not Hermitian: max|rho - rho^dag| = {err:.3e}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"state trace {tr.real:.12g} deviates from 1")
    state_eigenvalues(rho, tol=pos_tol)


def pure_state(k: int, dim: int) -> np.ndarray:
    return projector(k, dim)


def maximally_mixed(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex) / dim
