"""Convergence studies, spectrum sweeps and field export.

Reference eigenvalues are the published high-accuracy estimates of the two
smallest eigenvalues for mu = 1 on the unit square and on the L-shaped
domain, for lambda in {1, 1e2, 1e4, 1e8}.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .assembly import (
    DofMap,
    LameParameters,
    assemble_blocks,
    assemble_load,
    displacement_gradient,
    ElementGeometry,
)
from .errors import LsfemError, ParameterError
from .mesh import Family, MeshFamily, TriangleMesh, generate_mesh
from .output import fmt, header_lines
from .quadrature import triangle_rule
from .spectral import Spectrum, build_schur, eigensolve, solve_source, source_residual

log = logging.getLogger(__name__)


class ReferenceTable:
    """Read-only map ``(domain, lambda) -> (omega_1, omega_2)``."""

    def __init__(self, entries):
        self._entries = MappingProxyType(
            {(domain, float(lam)): tuple(map(float, pair)) for (domain, lam), pair in entries.items()}
        )

    def __contains__(self, key):
        domain, lam = key
        return (domain, float(lam)) in self._entries

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def lookup(self, domain, lam):
        if domain not in ("square", "lshape"):
            domain = Family.parse(domain).domain
        try:
            return self._entries[(domain, float(lam))]
        except KeyError:
            known = sorted({lam for d, lam in self._entries if d == domain})
            raise ParameterError(
                f"no reference eigenvalues for {domain} with lambda={lam:g} (known: {known})"
            ) from None


REFERENCE = ReferenceTable(
    {
        ("square", 1.0): (37.266072200953786, 37.2660721997643),
        ("square", 1e2): (52.31315105053875, 91.4778227239564),
        ("square", 1e4): (52.3443693, 92.11827609964527),
        ("square", 1e8): (52.344691, 92.12439336305897),
        ("lshape", 1.0): (54.36578831544661, 69.08352886532845),
        ("lshape", 1e2): (127.990463, 147.44431322194393),
        ("lshape", 1e4): (128.52363885700083, 148.06735898422232),
        ("lshape", 1e8): (128.5293816640767, 148.07344440728022),
    }
)

AMBIGUITY_TOL = 1e-12


def fit_order(h, errors, last=3):
    """Least-squares slope of ``log(error)`` against ``log(h)`` over the
    final ``last`` levels. ``None`` when fewer than two usable levels."""
    h = np.asarray(h, dtype=float)[-last:]
    e = np.asarray(errors, dtype=float)[-last:]
    ok = (h > 0) & (e > 0)
    if ok.sum() < 2:
        return None
    slope, _ = np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)
    return float(slope)


def match_references(eigenvalues, references):
    """Assign to each reference the nearest computed eigenvalue, each computed
    value being used at most once. Returns ``(indices, ambiguous_flags)``."""
    eigenvalues = np.asarray(eigenvalues, dtype=complex)
    taken = np.zeros(len(eigenvalues), dtype=bool)
    indices, ambiguous = [], []
    for ref in references:
        dist = np.abs(eigenvalues - ref)
        dist[taken] = np.inf
        order = np.argsort(dist, kind="stable")
        best = int(order[0])
        flag = len(order) > 1 and np.isfinite(dist[order[1]]) and dist[order[1]] - dist[best] <= AMBIGUITY_TOL
        taken[best] = True
        indices.append(best)
        ambiguous.append(bool(flag))
    return indices, ambiguous


@dataclass
class ConvergenceLevel:
    n: int
    h: float
    omega1: complex
    omega2: complex
    err1: float
    err2: float
    ambiguous: bool = False


@dataclass
class ConvergenceReport:
    family: Family
    params: LameParameters
    reference: tuple
    levels: list = field(default_factory=list)
    tol_inf: float | None = None
    deflate_trace: bool = False

    CSV_HEADER = "family,lambda,mu,N,h,omega1_re,omega1_im,err1,omega2_re,omega2_im,err2"

    @property
    def order1(self):
        return fit_order([lv.h for lv in self.levels], [lv.err1 for lv in self.levels])

    @property
    def order2(self):
        return fit_order([lv.h for lv in self.levels], [lv.err2 for lv in self.levels])

    def to_csv(self, config=None) -> str:
        lines = [f"# {line}" for line in header_lines(config)]
        lines.append(self.CSV_HEADER)
        lam, mu = float(self.params.lam), float(self.params.mu)
        for lv in self.levels:
            lines.append(
                ",".join([self.family.value, fmt(lam), fmt(mu), str(lv.n), fmt(lv.h),
                          fmt(lv.omega1.real), fmt(lv.omega1.imag), fmt(lv.err1),
                          fmt(lv.omega2.real), fmt(lv.omega2.imag), fmt(lv.err2)])
            )
        return "\n".join(lines) + "\n"

    def summary(self, config=None) -> dict:
        return {
            "metadata": {"header": header_lines(config)},
            "family": self.family.value,
            "lambda": float(self.params.lam),
            "mu": float(self.params.mu),
            "reference": list(self.reference),
            "levels": [lv.n for lv in self.levels],
            "order1": self.order1,
            "order2": self.order2,
            "ambiguous_levels": [lv.n for lv in self.levels if lv.ambiguous],
            "tol_inf": self.tol_inf,
            "deflate_trace": self.deflate_trace,
        }


def convergence_study(
    family,
    params: LameParameters,
    levels,
    reference: ReferenceTable = REFERENCE,
    tol_inf=None,
    deflate_trace=False,
    seed=0,
) -> ConvergenceReport:
    """Eigenvalue errors against the reference pair on a sequence of meshes."""
    family = Family.parse(family)
    levels = [int(n) for n in levels]
    if not levels:
        raise ParameterError("at least one level is required")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ParameterError("levels must be strictly increasing")
    ref = reference.lookup(family.domain, params.lam)
    report = ConvergenceReport(family, params, ref, tol_inf=tol_inf, deflate_trace=deflate_trace)
    for n in levels:
        mesh = generate_mesh(MeshFamily(family, n, seed))
        system = assemble_blocks(mesh, params, deflate_trace=deflate_trace)
        spectrum = eigensolve(build_schur(system), tol_inf=tol_inf)
        w = spectrum.finite_eigenvalues
        (i1, i2), flags = match_references(w, ref)
        if any(flags):
            log.warning("ambiguous eigenvalue match on %s N=%d", family.value, n)
        report.levels.append(
            ConvergenceLevel(
                n=n,
                h=mesh.h_max,
                omega1=complex(w[i1]),
                omega2=complex(w[i2]),
                err1=float(abs(w[i1] - ref[0])),
                err2=float(abs(w[i2] - ref[1])),
                ambiguous=any(flags),
            )
        )
        log.info("%s N=%d omega1=%s omega2=%s", family.value, n, w[i1], w[i2])
    return report


def radius_filter(spectrum, radius):
    """Eigenvalues of modulus strictly below ``radius``, order preserved."""
    if radius < 0:
        raise ParameterError("radius must be non-negative")
    values = spectrum.finite_eigenvalues if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    return values[np.abs(values) < radius]


@dataclass
class SweepEntry:
    family: Family
    n: int
    lam: float
    mu: float
    spectrum: Spectrum | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def name(self) -> str:
        return f"{self.family.value}_N{self.n}_lambda{self.lam:g}"

    def summary(self) -> dict:
        out = {"family": self.family.value, "N": self.n, "lambda": self.lam, "mu": self.mu,
               "status": "ok" if self.ok else "failed"}
        if self.ok:
            out.update(self.spectrum.summary())
        else:
            out["error"] = self.error
        return out


def sweep_plan(families, lambdas, levels):
    """All (family, N, lambda) combinations in deterministic order."""
    return [
        (Family.parse(f), int(n), float(lam))
        for f in families
        for lam in lambdas
        for n in levels
    ]


def _sweep_worker(item, mu, seed, tol_inf, deflate_trace):
    family, n, lam = item
    entry = SweepEntry(family, n, lam, float(mu))
    try:
        mesh = generate_mesh(MeshFamily(family, n, seed))
        system = assemble_blocks(mesh, LameParameters(mu, lam), deflate_trace=deflate_trace)
        entry.spectrum = eigensolve(build_schur(system), tol_inf=tol_inf)
    except LsfemError as exc:
        entry.error = f"{type(exc).__name__}: {exc}"
    return entry


def worker_count(default=1):
    try:
        return max(1, int(os.environ.get("LSFEM_THREADS", default)))
    except ValueError:
        return default


def spectrum_sweep(
    families,
    lambdas,
    levels,
    mu=1.0,
    seed=0,
    tol_inf=None,
    deflate_trace=False,
    workers=None,
    stop_on_error=False,
):
    """One spectrum per (family, lambda, N) combination.

    Failures are recorded in the entry and the sweep continues unless
    ``stop_on_error`` is set. Results keep the plan order regardless of
    ``workers``.
    """
    plan = sweep_plan(families, lambdas, levels)
    workers = worker_count() if workers is None else workers
    args = (mu, seed, tol_inf, deflate_trace)
    if workers <= 1 or stop_on_error:
        entries = []
        for item in plan:
            entry = _sweep_worker(item, *args)
            entries.append(entry)
            if stop_on_error and not entry.ok:
                break
        return entries
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: _sweep_worker(item, *args), plan))


def sweep_csv(entries, config=None) -> str:
    from .spectral import SPECTRUM_CSV_HEADER, spectrum_rows

    lines = [f"# {line}" for line in header_lines(config)]
    lines.append(SPECTRUM_CSV_HEADER)
    for e in entries:
        if e.ok:
            lines.extend(spectrum_rows(e.spectrum, e.family.value, e.n, e.lam, e.mu))
    return "\n".join(lines) + "\n"


# -- manufactured source problem ----------------------------------------------


def manufactured_solution(params: LameParameters):
    """``u = sin(pi x) sin(pi y) (1, 1)`` and the body force ``f = -div(C eps(u))``.

    Returns callables ``(u, grad_u, f)``; ``grad_u(x, y)`` has shape (..., 2, 2)
    with ``grad_u[..., i, j] = d u_i / d x_j``.
    """
    mu, lam = params.mu, params.lam
    pi = math.pi

    def u(x, y):
        s = np.sin(pi * x) * np.sin(pi * y)
        return s, s

    def grad_u(x, y):
        gx = pi * np.cos(pi * x) * np.sin(pi * y)
        gy = pi * np.sin(pi * x) * np.cos(pi * y)
        row = np.stack([gx, gy], axis=-1)
        return np.stack([row, row], axis=-2)

    def f(x, y):
        s = np.sin(pi * x) * np.sin(pi * y)
        cc = np.cos(pi * x) * np.cos(pi * y)
        val = pi**2 * ((3 * mu + lam) * s - (lam + mu) * cc)
        return val, val

    return u, grad_u, f


def h1_seminorm_error(mesh: TriangleMesh, u_hat, grad_exact, quad_degree=4):
    """``|u - u_h|_1`` with ``u_h`` given by its interior coefficients."""
    dofmap = DofMap.for_mesh(mesh)
    geo = ElementGeometry(mesh)
    bary, w = triangle_rule(quad_degree)
    pts = geo.points(bary)
    diff = grad_exact(pts[..., 0], pts[..., 1]) - displacement_gradient(mesh, dofmap, u_hat)[:, None]
    return float(np.sqrt(np.einsum("q,tqab,tqab,t->", w, diff, diff, geo.area)))


def source_convergence(family, params: LameParameters, levels, seed=0):
    """H1 displacement errors of the manufactured problem over mesh levels."""
    family = Family.parse(family)
    _, grad_u, f = manufactured_solution(params)
    rows = []
    for n in levels:
        mesh = generate_mesh(MeshFamily(family, n, seed))
        system = assemble_blocks(mesh, params)
        load = assemble_load(mesh, system.dofmap, f)
        sigma, u = solve_source(system, load)
        rows.append(
            {
                "N": n,
                "h": mesh.h_max,
                "h1_error": h1_seminorm_error(mesh, u, grad_u),
                "residual": source_residual(system, load, sigma, u),
                "sigma": sigma,
                "u": u,
            }
        )
    order = fit_order([r["h"] for r in rows], [r["h1_error"] for r in rows], last=len(rows))
    return rows, order


# -- VTK export ---------------------------------------------------------------


def export_eigenfunction(mesh: TriangleMesh, u_hat, path, title="lsfem eigenfunction"):
    """Write the displacement field as a legacy ASCII VTK unstructured grid.

    Real and imaginary parts go into separate point-vector arrays; boundary
    nodes carry zero.
    """
    dofmap = DofMap.for_mesh(mesh)
    u_hat = np.asarray(u_hat)
    if u_hat.shape != (dofmap.n_u,):
        raise ParameterError(f"u_hat must have length {dofmap.n_u}, got {u_hat.shape}")
    nodal = dofmap.expand_displacement(u_hat.astype(complex), mesh.n_vertices)
    title = " ".join(str(title).split())[:255]
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    out += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    out.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {mesh.n_triangles}")
    out += ["5"] * mesh.n_triangles
    out.append(f"POINT_DATA {mesh.n_vertices}")
    for name, part in (("displacement_re", nodal.real), ("displacement_im", nodal.imag)):
        out.append(f"VECTORS {name} double")
        out += [f"{a:.17g} {b:.17g} 0" for a, b in part]
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=1, default=str) + "\n")
