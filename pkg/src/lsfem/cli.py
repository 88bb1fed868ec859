"""Command-line front end: ``lsfem {mesh,eig,convergence,sweep}``.

Exit codes: 0 on success, 1 on a numerical failure, 2 on a usage or
validation error. Every file written starts with a metadata header that
echoes the full run configuration and the package version.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .analysis import (
    REFERENCE,
    convergence_study,
    export_eigenfunction,
    spectrum_sweep,
    sweep_csv,
    sweep_plan,
)
from .assembly import LameParameters, assemble_blocks
from .errors import LsfemError, ParameterError
from .mesh import SQUARE_FAMILIES, Family, MeshFamily, format_statistics, generate_mesh, mesh_statistics
from .output import header_lines, metadata
from .spectral import (
    build_schur,
    classify_families,
    eigensolve,
    spectrum_to_csv,
    spectrum_to_json,
    with_eigenvectors,
)

log = logging.getLogger("lsfem")

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2

DEFAULT_LEVELS = (4, 8, 16, 32)
DEFAULT_SWEEP_LAMBDAS = (1.0, 100.0, 1e4, 1e8)


class UsageError(ParameterError):
    """Bad command-line or configuration input."""


@dataclass
class RunConfig:
    """Validated configuration for one CLI invocation."""

    command: str
    families: list = field(default_factory=lambda: ["square-right"])
    n: int | None = None
    levels: list = field(default_factory=list)
    lambdas: list = field(default_factory=lambda: [1.0])
    mu: float = 1.0
    seed: int = 0
    tol_inf: float | None = None
    deflate_trace: bool = False
    out: str = "."
    format: str = "csv"
    keep_going: bool = False
    backend: str = "lapack"
    eigenfunctions: int = 0
    plan_only: bool = False

    @property
    def family(self) -> str:
        return self.families[0]

    @property
    def lam(self) -> float:
        return self.lambdas[0]

    def validate(self):
        try:
            self.families = [Family.parse(f).value for f in self.families]
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if self.command in ("mesh", "eig"):
            if len(self.families) != 1 or len(self.lambdas) != 1:
                raise UsageError(f"{self.command} takes a single family and lambda")
            if self.n is None:
                raise UsageError("--n is required")
            for f in self.families:
                MeshFamily(Family(f), self.n, self.seed)
        if self.command in ("convergence", "sweep"):
            if not self.levels:
                self.levels = list(DEFAULT_LEVELS)
            if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
                raise UsageError("levels must be strictly increasing")
            for f in self.families:
                for n in self.levels:
                    MeshFamily(Family(f), n, self.seed)
        if self.command == "convergence" and (len(self.families) != 1 or len(self.lambdas) != 1):
            raise UsageError("convergence takes a single family and lambda")
        if self.seed < 0:
            raise UsageError("--seed must be non-negative")
        for lam in self.lambdas:
            LameParameters(self.mu, lam)
        if self.tol_inf is not None and not self.tol_inf > 0:
            raise UsageError("--tol-inf must be positive")
        if self.format not in ("csv", "json"):
            raise UsageError("--format must be csv or json")
        if self.backend not in ("lapack", "francis"):
            raise UsageError("--backend must be lapack or francis")
        if self.eigenfunctions < 0:
            raise UsageError("--eigenfunctions must be non-negative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# -- config file -----------------------------------------------------------

_KEYS = {
    "family": "families",
    "families": "families",
    "n": "n",
    "levels": "levels",
    "lambda": "lambdas",
    "lambdas": "lambdas",
    "mu": "mu",
    "seed": "seed",
    "tol_inf": "tol_inf",
    "deflate_trace": "deflate_trace",
    "out": "out",
    "format": "format",
    "keep_going": "keep_going",
    "backend": "backend",
    "eigenfunctions": "eigenfunctions",
}


def _unquote(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def read_config(path) -> dict:
    """Parse a ``key = value`` file.

    ``#`` starts a comment, ``[section]`` lines are ignored, values may be
    quoted and lists may be written as ``[a, b]`` or ``a,b``.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]") and "=" not in line):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in _KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        value = value.strip()
        if value.startswith("[") and value.endswith("]"):
            value = value[1:-1]
        values[_KEYS[key]] = _unquote(value)
    return values


# -- value parsing -------------------------------------------------------------


def _split(text):
    return [_unquote(p) for p in str(text).split(",") if p.strip()]


def _float(name, text):
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{name}: not a number: {text!r}") from None


def _int(name, text):
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"{name}: not an integer: {text!r}") from None


def _bool(name, value):
    if isinstance(value, bool):
        return value
    low = str(value).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{name}: not a boolean: {value!r}")


_CONVERT = {
    "families": lambda v: _split(v),
    "n": lambda v: _int("n", v),
    "levels": lambda v: [_int("levels", p) for p in _split(v)],
    "lambdas": lambda v: [_float("lambda", p) for p in _split(v)],
    "mu": lambda v: _float("mu", v),
    "seed": lambda v: _int("seed", v),
    "tol_inf": lambda v: _float("tol_inf", v),
    "deflate_trace": lambda v: _bool("deflate_trace", v),
    "out": str,
    "format": str,
    "keep_going": lambda v: _bool("keep_going", v),
    "backend": str,
    "eigenfunctions": lambda v: _int("eigenfunctions", v),
}


def build_config(args) -> RunConfig:
    """Merge defaults, the optional config file and explicit flags."""
    merged = {}
    if args.config:
        merged.update(read_config(args.config))
    for key in _CONVERT:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    kwargs = {key: _CONVERT[key](value) for key, value in merged.items()}
    if args.command == "sweep" and "families" not in kwargs:
        kwargs["families"] = [f.value for f in SQUARE_FAMILIES]
    if args.command == "sweep" and "lambdas" not in kwargs:
        kwargs["lambdas"] = list(DEFAULT_SWEEP_LAMBDAS)
    kwargs["plan_only"] = bool(getattr(args, "plan_only", False))
    return RunConfig(command=args.command, **kwargs).validate()


# -- argument parser -----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lsfem", description="Least-squares elasticity eigenvalue toolkit.")
    parser.add_argument("--version", action="version", version=f"lsfem {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, multi=False):
        # store_const None keeps "not given" distinguishable from False
        p.add_argument("--config", help="key = value file; flags override its values")
        p.add_argument("--family", dest="families",
                       help="mesh family" + (" (comma-separated list)" if multi else ""))
        p.add_argument("--seed", type=str, help="jitter seed for nonuniform families")
        p.add_argument("--out", help="output directory (default: current directory)")
        return p

    def physics(p, multi=False):
        p.add_argument("--lambda", dest="lambdas",
                       help="first Lame parameter" + (" (comma-separated list)" if multi else ""))
        p.add_argument("--mu", help="second Lame parameter (default 1)")
        p.add_argument("--tol-inf", dest="tol_inf",
                       help="absolute |gamma| threshold for infinite eigenvalues")
        p.add_argument("--deflate-trace", dest="deflate_trace", action="store_const", const=True,
                       help="deflate the constant-trace stress mode")

    p = common(sub.add_parser("mesh", help="generate a mesh and print its statistics"))
    p.add_argument("--n", help="subdivisions per side")

    p = common(sub.add_parser("eig", help="finite spectrum of one configuration"))
    p.add_argument("--n", help="subdivisions per side")
    physics(p)
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--backend", choices=["lapack", "francis"])
    p.add_argument("--eigenfunctions", help="export this many eigenfunctions as VTK")

    p = common(sub.add_parser("convergence", help="eigenvalue errors against reference values"))
    p.add_argument("--levels", help="comma-separated N values")
    physics(p)

    p = common(sub.add_parser("sweep", help="spectra over families, lambdas and levels"), multi=True)
    p.add_argument("--levels", help="comma-separated N values")
    physics(p, multi=True)
    p.add_argument("--keep-going", dest="keep_going", action="store_const", const=True,
                   help="continue after a failed combination and exit 0")
    p.add_argument("--plan-only", dest="plan_only", action="store_true",
                   help="write the manifest without computing")
    return parser


# -- commands ------------------------------------------------------------------


def _outdir(config: RunConfig) -> Path:
    path = Path(config.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _stem(family, n, lam):
    return f"{family}_N{n}_lambda{lam:g}"


def cmd_mesh(config: RunConfig) -> int:
    mesh = generate_mesh(MeshFamily(Family(config.family), config.n, config.seed))
    path = _outdir(config) / f"mesh_{config.family}_N{config.n}.json"
    stats = mesh_statistics(mesh)
    meta = metadata(config.to_dict())
    meta["statistics"] = stats
    mesh.save(path, metadata=meta)
    print(format_statistics(stats))
    return EXIT_OK


def cmd_eig(config: RunConfig) -> int:
    mesh = generate_mesh(MeshFamily(Family(config.family), config.n, config.seed))
    params = LameParameters(config.mu, config.lam)
    system = assemble_blocks(mesh, params, deflate_trace=config.deflate_trace)
    pencil = build_schur(system)
    outdir = _outdir(config)
    stem = _stem(config.family, config.n, config.lam)
    spectrum = eigensolve(pencil, tol_inf=config.tol_inf, backend=config.backend,
                          dump_path=outdir / f"{stem}_failed.npy")
    cfg = config.to_dict()
    if config.format == "json":
        counts = classify_families(system, spectrum, pencil)
        text = spectrum_to_json(spectrum, config.family, config.n, config.lam, config.mu,
                                counts=counts, metadata=metadata(cfg))
        path = outdir / f"spectrum_{stem}.json"
    else:
        text = spectrum_to_csv(spectrum, config.family, config.n, config.lam, config.mu,
                               header_lines=header_lines(cfg))
        path = outdir / f"spectrum_{stem}.csv"
    path.write_text(text)
    count = min(config.eigenfunctions, spectrum.finite_count)
    if count:
        spectrum = with_eigenvectors(pencil, spectrum, count)
        title = " ".join(header_lines(cfg))
        for i in range(count):
            export_eigenfunction(mesh, spectrum.eigenvectors[:, i],
                                 outdir / f"eigenfunction_{stem}_{i}.vtk", title=title)
    print(json.dumps(spectrum.summary()))
    return EXIT_OK


def cmd_convergence(config: RunConfig) -> int:
    params = LameParameters(config.mu, config.lam)
    # fail fast on a missing reference before any computation
    REFERENCE.lookup(Family(config.family).domain, params.lam)
    report = convergence_study(config.family, params, config.levels, tol_inf=config.tol_inf,
                               deflate_trace=config.deflate_trace, seed=config.seed)
    cfg = config.to_dict()
    outdir = _outdir(config)
    stem = f"convergence_{config.family}_lambda{config.lam:g}"
    (outdir / f"{stem}.csv").write_text(report.to_csv(cfg))
    summary = report.summary(cfg)
    (outdir / f"{stem}_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps({"order1": summary["order1"], "order2": summary["order2"]}))
    return EXIT_OK


def cmd_sweep(config: RunConfig) -> int:
    cfg = config.to_dict()
    outdir = _outdir(config)
    plan = sweep_plan(config.families, config.lambdas, config.levels)
    manifest = {"metadata": metadata(cfg), "n_runs": len(plan), "runs": []}
    if config.plan_only:
        manifest["runs"] = [
            {"family": f.value, "N": n, "lambda": lam, "status": "planned",
             "file": f"spectrum_{_stem(f.value, n, lam)}.csv"}
            for f, n, lam in plan
        ]
    else:
        entries = spectrum_sweep(config.families, config.lambdas, config.levels, mu=config.mu,
                                 seed=config.seed, tol_inf=config.tol_inf,
                                 deflate_trace=config.deflate_trace,
                                 stop_on_error=not config.keep_going)
        header = header_lines(cfg)
        for e in entries:
            record = e.summary()
            if e.ok:
                name = f"spectrum_{e.name}.csv"
                (outdir / name).write_text(
                    spectrum_to_csv(e.spectrum, e.family.value, e.n, e.lam, e.mu, header_lines=header))
                record["file"] = name
            manifest["runs"].append(record)
        (outdir / "sweep_summary.csv").write_text(sweep_csv(entries, cfg))
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    failed = [r for r in manifest["runs"] if r["status"] == "failed"]
    print(f"{len(manifest['runs'])} runs, {len(failed)} failed")
    if failed and not config.keep_going:
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "eig": cmd_eig, "convergence": cmd_convergence, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lsfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        config = build_config(args)
        return COMMANDS[config.command](config)
    except ParameterError as exc:
        print(f"lsfem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LsfemError as exc:
        print(f"lsfem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
