"""Dense real linear algebra: LU solves, inversion, and a Jacobi SVD.

Everything here is written against plain ``numpy.ndarray`` (row-major dense
storage) and implemented directly so results can be audited against
independent oracles. Problem sizes in this package are tiny (n <= a few
hundred), so the one-sided Jacobi SVD is chosen for robustness and exactly
reproducible output rather than speed.

All tolerances are centralized below as named constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LU_PIVOT_RTOL",
    "SVD_PAIR_TOL",
    "SVD_MAX_SWEEPS",
    "SVD_ORTHOGONALITY_TOL",
    "SVD_RECONSTRUCTION_RTOL",
    "SYMMETRY_ATOL",
    "PSD_EIG_FLOOR",
    "SingularMatrixError",
    "SvdConvergenceError",
    "LuFactorization",
    "SvdResult",
    "lu_factor",
    "lu_solve",
    "invert",
    "svd",
    "top_singular_pair",
]

# Pivot smaller than this times ||a||_inf is treated as singular.
LU_PIVOT_RTOL = 1e-12
# One-sided Jacobi: a column pair counts as orthogonal when
# |a_p . a_q| <= SVD_PAIR_TOL * ||a_p|| * ||a_q||.
SVD_PAIR_TOL = 1e-12
SVD_MAX_SWEEPS = 100
# Contract tolerances (asserted by the test suite, re-exported for callers).
SVD_ORTHOGONALITY_TOL = 1e-10
SVD_RECONSTRUCTION_RTOL = 1e-8
# top_singular_pair input validation.
SYMMETRY_ATOL = 1e-10
PSD_EIG_FLOOR = -1e-10


class SingularMatrixError(ValueError):
    """Matrix is singular to working precision."""

    def __init__(self, message: str, pivot: float = 0.0, column: int = -1):
        super().__init__(message)
        self.pivot = pivot
        self.column = column


class SvdConvergenceError(RuntimeError):
    """Jacobi sweeps hit the iteration cap before orthogonalizing."""

    def __init__(self, sweeps: int, off_norm: float):
        super().__init__(
            f"SVD did not converge in {sweeps} sweeps; "
            f"worst relative off-diagonal {off_norm:.3e}"
        )
        self.sweeps = sweeps
        self.off_norm = off_norm


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True, eq=False)
class LuFactorization:
    """PA = LU with partial pivoting; ``lu`` packs L (unit diagonal) and U."""

    lu: np.ndarray
    piv: np.ndarray
    norm_inf: float


def lu_factor(a) -> LuFactorization:
    a = _as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"square matrix required, got {n}x{m}")
    lu = a.copy()
    piv = np.arange(n)
    norm = float(np.max(np.sum(np.abs(a), axis=1))) if n else 0.0
    if n and norm == 0.0:
        raise SingularMatrixError("zero matrix is singular", 0.0, 0)
    threshold = LU_PIVOT_RTOL * norm
    for k in range(n):
        j = k + int(np.argmax(np.abs(lu[k:, k])))
        pivot = abs(lu[j, k])
        if pivot < threshold:
            raise SingularMatrixError(
                f"pivot {pivot:.3e} below {threshold:.3e} at column {k} "
                "(singular to working precision)",
                pivot, k,
            )
        if j != k:
            lu[[k, j]] = lu[[j, k]]
            piv[[k, j]] = piv[[j, k]]
        lu[k + 1:, k] /= lu[k, k]
        if k + 1 < n:
            lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return LuFactorization(lu=lu, piv=piv, norm_inf=norm)


def lu_solve_factored(fac: LuFactorization, b) -> np.ndarray:
    """Solve a x = b given the factorization of a. ``b`` may be 1-D or 2-D."""
    b = np.array(b, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    n = fac.lu.shape[0]
    if b.shape[0] != n:
        raise ValueError(f"rhs has {b.shape[0]} rows, expected {n}")
    x = b[fac.piv].astype(float)
    lu = fac.lu
    for i in range(1, n):          # forward: L y = P b
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):  # backward: U x = y
        if i + 1 < n:
            x[i] -= lu[i, i + 1:] @ x[i + 1:]
        x[i] /= lu[i, i]
    return x[:, 0] if vector else x


def lu_solve(a, b) -> np.ndarray:
    """Solve a x = b by LU with partial pivoting.

    Raises ``SingularMatrixError`` when a pivot falls below
    ``LU_PIVOT_RTOL * ||a||_inf``.
    """
    return lu_solve_factored(lu_factor(a), b)


def invert(a) -> np.ndarray:
    """Inverse of a nonsingular square matrix."""
    fac = lu_factor(a)
    return lu_solve_factored(fac, np.eye(fac.lu.shape[0]))


@dataclass(frozen=True, eq=False)
class SvdResult:
    """Full decomposition a = u @ diag(sigma) @ vt.

    ``u`` is m x m orthogonal, ``vt`` n x n, ``sigma`` the min(m, n)
    singular values in descending order. Each left singular vector is
    oriented so its largest-magnitude entry is non-negative.
    """

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray


def _jacobi_orthogonalize(wt: np.ndarray, vt: np.ndarray) -> None:
    """One-sided Jacobi sweeps over the rows of ``wt`` (the working vectors,
    stored contiguously) until every pair is orthogonal relative to
    SVD_PAIR_TOL; the same rotations accumulate into the rows of ``vt``."""
    n = wt.shape[0]
    norms = np.einsum("ij,ij->i", wt, wt)  # squared row norms
    # Rows whose squared norm collapses below eps^2 * ||A||_F^2 are
    # numerically zero; rotating them only stirs rounding noise.
    zero_floor = float(np.sum(norms)) * np.finfo(float).eps ** 2
    for sweep in range(SVD_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            wp = wt[p]
            for q in range(p + 1, n):
                alpha = norms[p]
                beta = norms[q]
                if alpha <= zero_floor or beta <= zero_floor:
                    continue
                wq = wt[q]
                gamma = float(wp @ wq)
                if abs(gamma) <= SVD_PAIR_TOL * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta == 0.0:
                    t = 1.0
                else:
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * wp - s * wq
                wt[q] = s * wp + c * wq
                wt[p] = new_p
                wp = wt[p]
                vp = c * vt[p] - s * vt[q]
                vt[q] = s * vt[p] + c * vt[q]
                vt[p] = vp
                norms[p] = float(wp @ wp)
                norms[q] = float(wt[q] @ wt[q])
        if not rotated:
            return
    # Re-measure honestly before reporting failure.
    gram = wt @ wt.T
    d = np.sqrt(np.abs(np.diag(gram)))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(gram) / np.outer(d, d)
    np.fill_diagonal(rel, 0.0)
    raise SvdConvergenceError(SVD_MAX_SWEEPS, float(np.nanmax(rel)))


def _complete_basis(cols: list[np.ndarray], m: int) -> list[np.ndarray]:
    """Extend an orthonormal set to a full basis of R^m with canonical
    vectors (deterministic modified Gram-Schmidt, re-orthogonalized)."""
    basis = list(cols)
    for i in range(m):
        if len(basis) == m:
            break
        cand = np.zeros(m)
        cand[i] = 1.0
        for _ in range(2):
            for b in basis:
                cand -= (b @ cand) * b
        norm = float(np.linalg.norm(cand))
        if norm > 1e-8:
            basis.append(cand / norm)
    return basis


def svd(a) -> SvdResult:
    """Singular value decomposition by one-sided Jacobi rotations.

    Deterministic for identical inputs; suited to the small dense matrices
    this package works with.
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m == 0 or n == 0:
        raise ValueError("empty matrix has no SVD")
    if m < n:
        res = svd(a.T)
        u = res.vt.T.copy()
        vt = res.u.T.copy()
        return _apply_sign_convention(u, res.sigma.copy(), vt)

    wt = np.ascontiguousarray(a.T)  # rows are the vectors being rotated
    vt = np.eye(n)
    _jacobi_orthogonalize(wt, vt)

    sig = np.sqrt(np.einsum("ij,ij->i", wt, wt))
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    wt = wt[order]
    vt = vt[order]

    # Normalize the range vectors; those with (near-)zero singular value
    # get replaced by a completion of the orthonormal basis.
    cutoff = sig[0] * np.finfo(float).eps * max(m, n) if sig.size else 0.0
    u_cols: list[np.ndarray] = []
    rank = 0
    for k in range(n):
        if sig[k] > cutoff:
            u_cols.append(wt[k] / sig[k])
            rank += 1
        else:
            break
    u = np.column_stack(_complete_basis(u_cols, m)) if m else np.eye(0)
    return _apply_sign_convention(u, sig, vt)


def _apply_sign_convention(u: np.ndarray, sigma: np.ndarray,
                           vt: np.ndarray) -> SvdResult:
    m = u.shape[0]
    r = len(sigma)
    for k in range(m):
        j = int(np.argmax(np.abs(u[:, k])))
        if u[j, k] < 0:
            u[:, k] = -u[:, k]
            if k < r:
                vt[k, :] = -vt[k, :]
    # Rows of vt beyond the coupled range get their own deterministic sign.
    for k in range(r, vt.shape[0]):
        j = int(np.argmax(np.abs(vt[k, :])))
        if vt[k, j] < 0:
            vt[k, :] = -vt[k, :]
    return SvdResult(u=u, sigma=sigma, vt=vt)


def top_singular_pair(a) -> tuple[float, np.ndarray]:
    """Largest singular value and left singular vector of a symmetric PSD
    matrix.

    Validates symmetry (to ``SYMMETRY_ATOL``) and positive
    semi-definiteness (eigenvalues above ``PSD_EIG_FLOOR``); the returned
    vector has unit norm and follows the svd() sign convention.
    """
    a = _as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"square matrix required, got {n}x{m}")
    asym = float(np.max(np.abs(a - a.T))) if n else 0.0
    if asym > SYMMETRY_ATOL:
        raise ValueError(f"matrix is asymmetric (max |a - a^T| = {asym:.3e})")
    res = svd(a)
    # For symmetric a, eigenvalues are sigma_k signed by u_k . v_k.
    for k in range(len(res.sigma)):
        if res.sigma[k] <= abs(PSD_EIG_FLOOR):
            break
        if res.sigma[k] * float(res.u[:, k] @ res.vt[k, :]) < PSD_EIG_FLOOR:
            raise ValueError(
                f"matrix has negative eigenvalue ~{-res.sigma[k]:.3e}, not PSD"
            )
    return float(res.sigma[0]), res.u[:, 0].copy()
