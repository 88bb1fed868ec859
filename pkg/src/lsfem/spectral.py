"""Displacement Schur complement and the spectrum of the discrete operator.

The generalized problem

    [[A, B^T], [B, C]] x = omega [[0, D], [0, 0]] x

is reduced to the displacement pencil ``S u = omega G u`` with
``S = B A^-1 B^T - C`` and ``G = B A^-1 D``. Since ``-S`` is symmetric
positive definite, the eigenvalues are computed for the reciprocal problem
``G u = gamma S u`` and ``omega = 1 / gamma``; ``gamma`` below the threshold
counts as an infinite eigenvalue.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import hqr
from .assembly import BlockSystem
from .errors import NearSingularError, NumericalFailure, ParameterError, PropertyViolation
from .output import fmt

log = logging.getLogger(__name__)

PIVOT_RTOL = 1e-14
DEFAULT_REL_TOL_INF = 1e-10
RANK_RTOL = 1e-10
GENUINE_RTOL = 1e-8
FULL_SYSTEM_CAP = 2000
SOURCE_RESIDUAL_TOL = 1e-10
SCHUR_CHUNK = 256


def _symmetric_lu(matrix):
    """Sparse LU with symmetric ordering and diagonal pivots; for SPD input the
    pivots are those of the LDL^T (Cholesky) factorization."""
    return spla.splu(
        sp.csc_matrix(matrix),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )


def _check_pivots(lu, diagonal, what):
    pivots = lu.U.diagonal()
    threshold = PIVOT_RTOL * float(np.max(np.abs(diagonal)))
    smallest = float(np.min(pivots))
    if not smallest > threshold:
        raise NearSingularError(
            f"{what} is numerically singular: pivot {smallest:.3e} below {threshold:.3e}",
            min_pivot=smallest,
            threshold=threshold,
        )
    return smallest


def _solve_real(lu, rhs):
    if np.iscomplexobj(rhs):
        return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(
            np.ascontiguousarray(rhs.imag)
        )
    return lu.solve(np.asarray(rhs, dtype=float))


class StressSolver:
    """Factorization of the stress block ``A``, reused for many right-hand sides.

    With trace deflation the factored operator is ``A + w t t^T``, handled as
    the bordered sparse matrix ``[[A, t], [t^T, -1/w]]``. For right-hand sides
    orthogonal to the constant-trace mode (every column of ``B^T`` and ``D``)
    both operators give the same solution.
    """

    def __init__(self, system: BlockSystem):
        self.system = system
        self.deflated = system.deflate_trace
        A = system.A
        if self.deflated:
            t = system.trace_vector[:, None]
            K = sp.bmat(
                [[A, sp.csr_matrix(t)], [sp.csr_matrix(t.T), sp.csr_matrix([[-1.0 / system.deflation_weight]])]],
                format="csc",
            )
            self.lu = spla.splu(K)
            self.min_pivot = float(np.min(np.abs(self.lu.U.diagonal())))
            # bordered system is indefinite; pivots checked in magnitude
            threshold = PIVOT_RTOL * float(np.max(np.abs(A.diagonal())))
            if not self.min_pivot > threshold:
                raise NumericalFailure(f"deflated stress block is singular (pivot {self.min_pivot:.3e})")
        else:
            self.lu = _symmetric_lu(A)
            self.min_pivot = _check_pivots(self.lu, A.diagonal(), "stress block A")

    def solve(self, rhs):
        rhs = np.asarray(rhs)
        if not self.deflated:
            return _solve_real(self.lu, rhs)
        pad = np.zeros((1,) + rhs.shape[1:], dtype=rhs.dtype)
        return _solve_real(self.lu, np.concatenate([rhs, pad]))[:-1]


@dataclass(eq=False)
class SchurPencil:
    S: np.ndarray
    G: np.ndarray
    system: BlockSystem = field(repr=False)
    stress_solver: StressSolver = field(repr=False)

    @property
    def n(self) -> int:
        return self.S.shape[0]


@dataclass(eq=False)
class Spectrum:
    finite_eigenvalues: np.ndarray
    gamma_values: np.ndarray
    n_infinite: int
    threshold: float
    size: int
    backend: str = "lapack"
    eigenvectors: np.ndarray | None = None
    n_spurious: int = 0

    @property
    def finite_count(self) -> int:
        return len(self.finite_eigenvalues)

    def summary(self) -> dict:
        w = self.finite_eigenvalues
        return {
            "count": int(len(w)),
            "n_infinite": int(self.n_infinite),
            "min_real": float(w.real.min()) if len(w) else None,
            "max_abs_imag": float(np.abs(w.imag).max()) if len(w) else None,
            "min_modulus": float(np.abs(w).min()) if len(w) else None,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class FamilyCount:
    dim_sigma: int
    dim_ker_D: int
    finite_count: int
    rank_D: int
    rank_G: int

    def as_dict(self) -> dict:
        return {
            "dim_sigma": self.dim_sigma,
            "dim_ker_D": self.dim_ker_D,
            "finite_count": self.finite_count,
            "rank_D": self.rank_D,
            "rank_G": self.rank_G,
        }


def sort_eigenvalues(values):
    """Order by modulus, then real part, then imaginary part (all ascending)."""
    values = np.asarray(values, dtype=complex)
    order = np.lexsort((values.imag, values.real, np.abs(values)))
    return values[order], order


def build_schur(system: BlockSystem, solver: StressSolver | None = None) -> SchurPencil:
    """Form the dense matrices ``S = B A^-1 B^T - C`` and ``G = B A^-1 D``."""
    solver = solver or StressSolver(system)
    B = system.B
    Bt = sp.csc_matrix(system.B.T)
    D = sp.csc_matrix(system.D)
    n = system.n_u
    S = np.empty((n, n))
    G = np.empty((n, n))
    for start in range(0, n, SCHUR_CHUNK):
        cols = slice(start, min(start + SCHUR_CHUNK, n))
        Y = solver.solve(Bt[:, cols].toarray())
        S[:, cols] = B @ Y
        Z = solver.solve(D[:, cols].toarray())
        G[:, cols] = B @ Z
    S -= system.C.toarray()
    S = 0.5 * (S + S.T)
    return SchurPencil(S=S, G=G, system=system, stress_solver=solver)


def _negative_schur_factor(S):
    try:
        return la.cholesky(-S, lower=True)
    except la.LinAlgError as exc:
        raise PropertyViolation("-S is not positive definite") from exc


def eigensolve(
    pencil: SchurPencil,
    tol_inf: float | None = None,
    backend: str = "lapack",
    dump_path=None,
) -> Spectrum:
    """Finite eigenvalues of ``S u = omega G u``.

    The reciprocal problem is symmetrized with the Cholesky factor of ``-S``,
    ``W = -L^-1 G L^-T``, which is similar to ``S^-1 G``. Its eigenvalues come
    from balancing, Hessenberg reduction and double-shift QR, either through
    LAPACK (``backend="lapack"``) or :mod:`lsfem.hqr` (``"francis"``).

    ``tol_inf`` is the absolute threshold below which ``|gamma|`` counts as
    zero; it defaults to ``1e-10 * max|gamma|``.
    """
    L = _negative_schur_factor(pencil.S)
    W = -la.solve_triangular(L, la.solve_triangular(L, pencil.G, lower=True).T, lower=True).T
    if backend == "lapack":
        gamma = la.eigvals(W, overwrite_a=True, check_finite=False)
    elif backend == "francis":
        gamma = hqr.eigvals(W, dump_path=dump_path)
    else:
        raise ParameterError(f"unknown eigen backend {backend!r}")
    if not np.all(np.isfinite(gamma)):
        raise NumericalFailure("eigenvalue iteration returned non-finite values", matrix=W)
    return _spectrum_from_gamma(gamma, tol_inf, size=pencil.n, backend=backend)


def _spectrum_from_gamma(gamma, tol_inf, size, backend, keep=None):
    gmax = float(np.max(np.abs(gamma))) if len(gamma) else 0.0
    threshold = DEFAULT_REL_TOL_INF * gmax if tol_inf is None else float(tol_inf)
    if threshold <= 0 and gmax > 0:
        raise ParameterError("tol_inf must be positive")
    finite = np.abs(gamma) > threshold
    spurious = 0
    if keep is not None:
        spurious = int(np.sum(finite & ~keep))
        finite &= keep
    omega, _ = sort_eigenvalues(1.0 / gamma[finite])
    return Spectrum(
        finite_eigenvalues=omega,
        gamma_values=np.asarray(gamma),
        n_infinite=int(size - finite.sum()),
        threshold=threshold,
        size=size,
        backend=backend,
        n_spurious=spurious,
    )


def numerical_rank(matrix, rtol=RANK_RTOL):
    s = la.svdvals(np.asarray(matrix))
    if len(s) == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def classify_families(system: BlockSystem, spectrum: Spectrum, pencil: SchurPencil | None = None) -> FamilyCount:
    """Count the eigenvalue families of the full pencil and check them
    against the computed Schur spectrum."""
    pencil = pencil or build_schur(system)
    rank_D = numerical_rank(system.D.toarray())
    rank_G = numerical_rank(pencil.G)
    counts = FamilyCount(
        dim_sigma=system.n_sigma,
        dim_ker_D=system.n_u - rank_D,
        finite_count=spectrum.finite_count,
        rank_D=rank_D,
        rank_G=rank_G,
    )
    if counts.finite_count != rank_G:
        raise PropertyViolation(f"finite count {counts.finite_count} != rank(G) {rank_G}")
    if counts.finite_count > rank_D:
        raise PropertyViolation(f"finite count {counts.finite_count} > rank(D) {rank_D}")
    if rank_G != rank_D:
        log.info("rank(G)=%d differs from rank(D)=%d", rank_G, rank_D)
    return counts


def full_system_eigensolve(system: BlockSystem, tol_inf: float | None = None) -> Spectrum:
    """Eigenvalues of the full dense pencil, for cross-validation on small meshes.

    Only eigenpairs whose displacement part is not negligible are reported.
    """
    size = system.n_sigma + system.n_u
    if size > FULL_SYSTEM_CAP:
        raise ParameterError(f"full system of size {size} exceeds the dense cap {FULL_SYSTEM_CAP}")
    M = system.full_matrix().toarray()
    N = system.rhs_matrix().toarray()
    try:
        factor = la.cho_factor(M, lower=True)
    except la.LinAlgError as exc:
        raise PropertyViolation("full block matrix is not positive definite") from exc
    gamma, vectors = la.eig(la.cho_solve(factor, N))
    u_norm = np.linalg.norm(vectors[system.n_sigma :], axis=0)
    genuine = u_norm > GENUINE_RTOL * np.linalg.norm(vectors, axis=0)
    return _spectrum_from_gamma(gamma, tol_inf, size=size, backend="lapack-full", keep=genuine)


def eigenvectors(pencil: SchurPencil, omegas, iterations=3, seed=0):
    """Right eigenvectors ``u`` of ``S u = omega G u`` by inverse iteration
    with the computed eigenvalue as shift. Columns are unit-norm."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=complex))
    rng = np.random.default_rng(seed)
    out = np.empty((pencil.n, len(omegas)), dtype=complex)
    G = pencil.G.astype(complex)
    for i, omega in enumerate(omegas):
        lu = la.lu_factor(pencil.S - omega * G, check_finite=False)
        x = rng.standard_normal(pencil.n) + 0j
        x /= np.linalg.norm(x)
        for _ in range(iterations):
            x = la.lu_solve(lu, G @ x, check_finite=False)
            norm = np.linalg.norm(x)
            if not np.isfinite(norm) or norm == 0:
                raise NumericalFailure(f"inverse iteration broke down at omega={omega}")
            x /= norm
        # fix the phase: largest entry real positive
        k = int(np.argmax(np.abs(x)))
        x *= np.abs(x[k]) / x[k]
        out[:, i] = x
    return out


def with_eigenvectors(pencil: SchurPencil, spectrum: Spectrum, count: int) -> Spectrum:
    """Attach eigenvectors for the ``count`` smallest-modulus eigenvalues."""
    spectrum.eigenvectors = eigenvectors(pencil, spectrum.finite_eigenvalues[:count])
    return spectrum


def recover_stress(system: BlockSystem, omega, u_hat, solver: StressSolver | None = None):
    """Stress coefficients ``A^-1 (omega D - B^T) u`` of an eigenpair."""
    solver = solver or StressSolver(system)
    u_hat = np.asarray(u_hat)
    rhs = omega * (system.D @ u_hat) - system.B.T @ u_hat
    if np.isrealobj(u_hat) and np.isreal(omega):
        rhs = np.real(rhs)
    return solver.solve(rhs)


def eigen_residual(system: BlockSystem, omega, sigma_hat, u_hat):
    """``||M x - omega N x||`` for ``x = (sigma, u)``."""
    first = system.A @ sigma_hat + system.B.T @ u_hat - omega * (system.D @ u_hat)
    second = system.B @ sigma_hat + system.C @ u_hat
    return float(np.sqrt(np.linalg.norm(first) ** 2 + np.linalg.norm(second) ** 2))


def solve_source(system: BlockSystem, load):
    """Solve ``[[A, B^T], [B, C]] (sigma, u) = (load, 0)``.

    Returns ``(sigma_hat, u_hat)``. Raises :class:`NumericalFailure` if the
    relative algebraic residual exceeds ``1e-10``.
    """
    load = np.asarray(load, dtype=float)
    if load.shape != (system.n_sigma,):
        raise ParameterError(f"load must have length {system.n_sigma}, got {load.shape}")
    M = system.full_matrix(deflated=False)
    b = np.concatenate([load, np.zeros(system.n_u)])
    if not np.any(b):
        return np.zeros(system.n_sigma), np.zeros(system.n_u)
    if system.deflate_trace:
        t = np.concatenate([system.trace_vector, np.zeros(system.n_u)])[:, None]
        K = sp.bmat(
            [[M, sp.csr_matrix(t)], [sp.csr_matrix(t.T), sp.csr_matrix([[-1.0 / system.deflation_weight]])]],
            format="csc",
        )
        lu = spla.splu(K)

        def solve(r):
            return lu.solve(np.concatenate([r, [0.0]]))[:-1]

    else:
        lu = _symmetric_lu(M)
        _check_pivots(lu, M.diagonal(), "block matrix")
        solve = lu.solve

    x = solve(b)
    residual = np.linalg.norm(M @ x - b) / np.linalg.norm(b)
    if residual > 1e-13:
        x += solve(b - M @ x)
        residual = np.linalg.norm(M @ x - b) / np.linalg.norm(b)
    if residual > SOURCE_RESIDUAL_TOL:
        raise NumericalFailure(f"source solve residual {residual:.3e} exceeds {SOURCE_RESIDUAL_TOL}")
    return x[: system.n_sigma], x[system.n_sigma :]


def source_residual(system: BlockSystem, load, sigma_hat, u_hat):
    M = system.full_matrix(deflated=False)
    b = np.concatenate([load, np.zeros(system.n_u)])
    x = np.concatenate([sigma_hat, u_hat])
    return float(np.linalg.norm(M @ x - b) / np.linalg.norm(b))


def compute_spectrum(system: BlockSystem, tol_inf=None, backend="lapack"):
    """Schur pencil and its spectrum in one call."""
    pencil = build_schur(system)
    return pencil, eigensolve(pencil, tol_inf=tol_inf, backend=backend)


# -- serialization ---------------------------------------------------------

SPECTRUM_CSV_HEADER = "family,N,lambda,mu,index,re,im,modulus"


def spectrum_rows(spectrum: Spectrum, family, n, lam, mu):
    for i, w in enumerate(spectrum.finite_eigenvalues):
        yield ",".join([str(family), str(int(n)), fmt(lam), fmt(mu), str(i), fmt(w.real), fmt(w.imag), fmt(abs(w))])


def spectrum_to_csv(spectrum: Spectrum, family, n, lam, mu, header_lines=()) -> str:
    lines = [f"# {line}" for line in header_lines]
    lines.append(SPECTRUM_CSV_HEADER)
    lines.extend(spectrum_rows(spectrum, family, n, float(lam), float(mu)))
    return "\n".join(lines) + "\n"


def spectrum_to_json(spectrum: Spectrum, family, n, lam, mu, counts: FamilyCount | None = None, metadata=None) -> str:
    payload = {
        "metadata": metadata or {},
        "family": str(family),
        "N": int(n),
        "lambda": float(lam),
        "mu": float(mu),
        "threshold": spectrum.threshold,
        "rel_tol_inf_default": DEFAULT_REL_TOL_INF,
        "n_infinite": spectrum.n_infinite,
        "size": spectrum.size,
        "backend": spectrum.backend,
        "summary": spectrum.summary(),
        "family_count": counts.as_dict() if counts else None,
        "eigenvalues": [[float(w.real), float(w.imag)] for w in spectrum.finite_eigenvalues],
    }
    return json.dumps(payload, indent=1) + "\n"
