"""Command-line front end: ``embhom {homogenize,sweep,eshelby,validate,gen}``.

Exit codes: 0 success, 1 failed validation criteria, 2 bad configuration or
moduli, 3 linear solver failure, 4 fixed-point or root-bracketing failure.
"""

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, concavity, eshelby, validation
from ._accel import use_numba
from .fem import solver as fem
from .fem.voxel import read_voxel_field
from .microstructure import CapacityError, GeneratorSpec, PackingError, generate, rescale, save
from .schemes import (
    BracketError,
    ClosedFormOracle,
    ConcavityError,
    FEMOracle,
    FixedPointError,
    run_schemes,
)
from .tensor import DomainError, IDENTITY, IsoModuli, basis_pairs, canonical_basis, iso_projection, iso_to_full

FORMAT_VERSION = 1
SCHEMES = ("A1", "A2", "A3", "A4", "periodic_reference", "eshelby_validate", "concavity_report", "truncation_table")
EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_SOLVER, EXIT_FIXED_POINT = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    generator: Optional[GeneratorSpec]
    field_path: Optional[str]
    solver: fem.SolverConfig
    schemes: List[str]
    oracle: str = "fem"
    rescale: int = 1
    sweep: List[int] = dc_field(default_factory=lambda: [1, 2, 4])
    exterior: Optional[IsoModuli] = None  # matrix moduli for eshelby_validate
    a1_tol: Optional[float] = None
    a4_tol: float = 1e-6
    out: Optional[str] = None
    truncation_L: List[float] = dc_field(default_factory=lambda: [2.0, 3.0, 4.0])

    def echo(self):
        return {
            "generator": self.generator.to_dict() if self.generator else None,
            "field_path": self.field_path,
            "solver": {
                "L": self.solver.L, "nx": self.solver.nx, "cg_tol": self.solver.cg_tol,
                "cg_max_iter": self.solver.cg_max_iter, "preconditioner": self.solver.preconditioner,
            },
            "schemes": list(self.schemes),
            "oracle": self.oracle,
            "rescale": self.rescale,
            "sweep": list(self.sweep),
            "exterior": None if self.exterior is None else {"kappa": self.exterior.kappa, "mu": self.exterior.mu},
            "a1_tol": self.a1_tol,
            "a4_tol": self.a4_tol,
            "truncation_L": list(self.truncation_L),
        }

    def digest(self):
        return hashlib.sha256(json.dumps(self.echo(), sort_keys=True).encode()).hexdigest()


def _moduli(d, where):
    try:
        if "lam" in d:
            return IsoModuli.from_lame(float(d["lam"]), float(d["mu"]))
        return IsoModuli(float(d["kappa"]), float(d["mu"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: expected {{kappa, mu}} or {{lam, mu}} ({exc})") from exc


def load_config(path, args=None) -> RunConfig:
    """Parse a JSON run configuration; command-line flags override file values."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = raw.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"format_version: unsupported value {version!r}")
    known = {"format_version", "generator", "field_path", "solver", "schemes", "oracle", "rescale", "sweep",
             "exterior", "a1_tol", "a4_tol", "out", "truncation_L"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown top-level field(s): {sorted(extra)}")

    gen = raw.get("generator")
    spec = None
    if gen is not None:
        if not isinstance(gen, dict) or "phases" not in gen:
            raise ConfigError("generator: expected an object with 'kind' and 'phases'")
        g = dict(gen)
        g["phases"] = [{"kappa": m.kappa, "mu": m.mu} for m in
                       (_moduli(p, f"generator.phases[{i}]") for i, p in enumerate(g["phases"]))]
        if args is not None and args.seed is not None:
            g["seed"] = args.seed
        try:
            spec = GeneratorSpec.from_dict(g)
        except TypeError as exc:
            raise ConfigError(f"generator: {exc}") from exc
    field_path = raw.get("field_path")
    if (spec is None) == (field_path is None):
        raise ConfigError("exactly one of 'generator' and 'field_path' is required")

    sol = dict(raw.get("solver", {}))
    if args is not None:
        for key, flag in (("nx", "nx"), ("L", "L"), ("cg_tol", "cg_tol")):
            if getattr(args, flag, None) is not None:
                sol[key] = getattr(args, flag)
    try:
        solver = fem.SolverConfig(
            cg_tol=float(sol.get("cg_tol", 1e-8)),
            cg_max_iter=int(sol.get("cg_max_iter", 5000)),
            L=float(sol.get("L", 2.0)),
            nx=int(sol.get("nx", 32)),
            preconditioner=str(sol.get("preconditioner", "diagonal")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc

    schemes = raw.get("schemes", ["A1", "A2", "A3", "A4"])
    if args is not None and getattr(args, "schemes", None):
        schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise ConfigError(f"schemes: unknown entries {bad}; choose from {list(SCHEMES)}")

    oracle = raw.get("oracle", "fem")
    if oracle not in ("fem", "closed_form"):
        raise ConfigError("oracle: expected 'fem' or 'closed_form'")
    exterior = _moduli(raw["exterior"], "exterior") if raw.get("exterior") is not None else None
    constant = spec is not None and spec.kind == "constant"
    if oracle == "closed_form" and not constant:
        raise ConfigError("oracle: 'closed_form' needs a constant generator")
    for name in ("eshelby_validate", "truncation_table"):
        if name in schemes and not (constant and exterior is not None):
            raise ConfigError(f"schemes: {name} needs a constant generator and an 'exterior' modulus pair")
    fem_only = ("periodic_reference", "eshelby_validate", "truncation_table")
    if oracle == "closed_form" and any(s in schemes for s in fem_only):
        raise ConfigError("schemes: " + ", ".join(fem_only) + " need the fem oracle")
    try:
        truncation_L = [float(x) for x in raw.get("truncation_L", [2.0, 3.0, 4.0])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"truncation_L: {exc}") from exc

    try:
        N = int(raw.get("rescale", 1))
        sweep = [int(x) for x in raw.get("sweep", [1, 2, 4])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rescale/sweep: {exc}") from exc
    if N < 1 or any(x < 1 for x in sweep):
        raise ConfigError("rescale/sweep: factors must be positive integers")
    out = raw.get("out")
    if args is not None and getattr(args, "out", None):
        out = args.out
    return RunConfig(spec, field_path, solver, list(schemes), oracle, N, sweep, exterior,
                     raw.get("a1_tol"), float(raw.get("a4_tol", 1e-6)), out, truncation_L)


# ----------------------------------------------------------------------------
# report helpers


def _iso(m):
    return None if m is None else {"kappa": float(m.kappa), "mu": float(m.mu)}


def _mat(M):
    return None if M is None else np.asarray(M).tolist()


def base_field(cfg: RunConfig):
    if cfg.field_path is not None:
        return read_voxel_field(cfg.field_path)
    return generate(cfg.generator)


def make_oracle(cfg: RunConfig, field):
    if cfg.oracle == "closed_form":
        return ClosedFormOracle(cfg.generator.phases[0])
    return FEMOracle(field, cfg.solver)


def _meta(oracle, cfg, tol):
    meta = {"backend": oracle.backend, "tol": tol, "kernels": "numba" if use_numba() else "numpy"}
    if oracle.backend == "fem":
        meta.update({"L": cfg.solver.L, "nx": cfg.solver.nx, "cg_tol": cfg.solver.cg_tol})
    return meta


def eshelby_table(field, exterior: IsoModuli, inclusion: IsoModuli, solver: fem.SolverConfig):
    rows = []
    A = iso_to_full(exterior)
    loads = [(f"{i}{j}", canonical_basis(i, j)) for i, j in basis_pairs()] + [("id", IDENTITY)]
    for name, s in loads:
        w = fem.solve_embedded(field, A, s, solver)
        e_fem = fem.energy_primal(field, A, s, w)
        e_ref = eshelby.energy(eshelby.EshelbyConfig(inclusion, exterior, s))
        rows.append({"sigma": name, "fem": e_fem, "analytic": e_ref, "rel_error": abs(e_fem - e_ref) / abs(e_ref),
                     "flux_form": fem.energy_flux(field, A, s, w), "iterations": w.stats.iterations})
    return rows


def homogenize(cfg: RunConfig, N=None):
    """Run the requested schemes for one rescaling factor; returns (payload, timings, trace)."""
    N = cfg.rescale if N is None else N
    base = base_field(cfg)
    field = rescale(base, N) if N != 1 else base
    band = field.band
    oracle = make_oracle(cfg, field)
    timings = {}
    payload = {"N": N, "band": {"alpha": band.alpha, "beta": band.beta}}
    main = [s for s in cfg.schemes if s in ("A1", "A2", "A3", "A4")]
    trace = None
    if main:
        t0 = time.perf_counter()
        rep = run_schemes(oracle, band, main, a1_tol=cfg.a1_tol, a4_tol=cfg.a4_tol)
        timings.update(rep.metadata.get("runtimes", {}))
        a1_tol = cfg.a1_tol if cfg.a1_tol is not None else 1e-6 * band.beta
        if rep.A1 is not None:
            payload["A1"] = {"moduli": _iso(rep.A1), "meta": _meta(oracle, cfg, a1_tol)}
        if "A2" in main:
            payload["A2"] = {"matrix": _mat(rep.A2), "asymmetry": rep.A2_asymmetry, "meta": _meta(oracle, cfg, cfg.solver.cg_tol)}
        if "A3" in main:
            payload["A3"] = {"matrix": _mat(rep.A3), "meta": _meta(oracle, cfg, cfg.solver.cg_tol)}
        if rep.A4 is not None:
            trace = rep.trace
            payload["A4"] = {"moduli": _iso(rep.A4), "outer_iterations": len(trace.iterates),
                             "converged": trace.converged, "meta": _meta(oracle, cfg, cfg.a4_tol),
                             "trace": list(trace.rows())}
        timings["schemes_total"] = time.perf_counter() - t0
    if "periodic_reference" in cfg.schemes:
        t0 = time.perf_counter()
        M, asym = fem.periodic_tensor(base, cfg.solver)
        k, m = iso_projection(M)
        payload["periodic_reference"] = {"matrix": _mat(M), "iso_projection": {"kappa": k, "mu": m},
                                         "asymmetry": asym, "meta": {"backend": "fem_periodic", "tol": cfg.solver.cg_tol}}
        timings["periodic_reference"] = time.perf_counter() - t0
    if "eshelby_validate" in cfg.schemes:
        t0 = time.perf_counter()
        payload["eshelby_validate"] = {
            "rows": eshelby_table(field, cfg.exterior, cfg.generator.phases[0], cfg.solver),
            "meta": _meta(oracle, cfg, cfg.solver.cg_tol),
        }
        timings["eshelby_validate"] = time.perf_counter() - t0
    if "truncation_table" in cfg.schemes:
        t0 = time.perf_counter()
        inc, s12 = cfg.generator.phases[0], canonical_basis(1, 2)
        ref = eshelby.energy(eshelby.EshelbyConfig(inc, cfg.exterior, s12))
        payload["truncation_table"] = {
            "sigma": "12", "analytic": ref,
            "rows": fem.truncation_table(field, iso_to_full(cfg.exterior), s12, cfg.solver, cfg.truncation_L, ref),
            "meta": _meta(oracle, cfg, cfg.solver.cg_tol),
        }
        timings["truncation_table"] = time.perf_counter() - t0
    if "concavity_report" in cfg.schemes:
        t0 = time.perf_counter()
        lo, hi = iso_to_full(IsoModuli(band.alpha, band.alpha / 2)), iso_to_full(IsoModuli(band.beta, band.beta / 2))
        probes = {}
        for name, s in (("12", canonical_basis(1, 2)), ("id", IDENTITY)):
            r = concavity.energy_concavity_probe(oracle, lo, hi, s, samples=7)
            probes[name] = {"t": r.t.tolist(), "energies": r.energies.tolist(), "max_violation": r.max_violation,
                            "second_differences": r.second_differences.tolist()}
        payload["concavity_report"] = {"segments": probes, "meta": _meta(oracle, cfg, cfg.solver.cg_tol)}
        timings["concavity_report"] = time.perf_counter() - t0
    if oracle.backend == "fem":
        payload["solver"] = {"solves": oracle.solves,
                             "max_duality_gap": max(oracle.duality, default=0.0),
                             "max_residual": max(oracle.residuals, default=0.0)}
    return payload, timings, trace


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["t", "kappa", "mu", "abs_F", "abs_G", "damped"])
        w.writeheader()
        for row in trace.rows():
            w.writerow(row)


def _emit(report, out, as_json):
    text = json.dumps(report, indent=2, sort_keys=True, default=float)
    if out:
        Path(out).write_text(text + "\n")
    if as_json or not out:
        print(text)


# ----------------------------------------------------------------------------
# commands


def cmd_homogenize(args):
    cfg = load_config(args.config, args)
    payload, timings, trace = homogenize(cfg)
    report = {"format_version": FORMAT_VERSION, "command": "homogenize", "version": __version__,
              "config_hash": cfg.digest(), "config": cfg.echo(), "results": payload, "timings": timings}
    out = cfg.out
    _emit(report, out, args.json)
    if trace is not None and out:
        write_trace_csv(Path(out).with_suffix(".trace.csv"), trace)
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config, args)
    if not any(s in cfg.schemes for s in ("A1", "A2", "A3", "A4")):
        cfg.schemes = ["A4"] + cfg.schemes
    per_n, timings = [], {}
    ref_requested = "periodic_reference" in cfg.schemes
    schemes = [s for s in cfg.schemes if s != "periodic_reference"]
    for N in cfg.sweep:
        sub = RunConfig(**{**cfg.__dict__, "schemes": schemes})
        payload, t, trace = homogenize(sub, N)
        per_n.append(payload)
        timings[f"N={N}"] = t
        if trace is not None and cfg.out:
            write_trace_csv(Path(cfg.out).with_suffix(f".N{N}.trace.csv"), trace)
    results = {"per_N": per_n}
    if ref_requested:
        sub = RunConfig(**{**cfg.__dict__, "schemes": ["periodic_reference"]})
        payload, t, _ = homogenize(sub, 1)
        results["periodic_reference"] = payload["periodic_reference"]
        timings["periodic_reference"] = t
    report = {"format_version": FORMAT_VERSION, "command": "sweep", "version": __version__,
              "config_hash": cfg.digest(), "config": cfg.echo(), "results": results, "timings": timings}
    _emit(report, cfg.out, args.json)
    if cfg.out:
        with open(Path(cfg.out).with_suffix(".sweep.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "kappa4", "mu4"])
            for p in per_n:
                if "A4" in p:
                    w.writerow([p["N"], p["A4"]["moduli"]["kappa"], p["A4"]["moduli"]["mu"]])
    return EXIT_OK


def _parse_pair(text, lame, what):
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--{what}: expected two comma-separated numbers, got {text!r}") from exc
    return IsoModuli.from_lame(a, b) if lame else IsoModuli(a, b)


def _parse_sigma(text):
    t = text.strip().lower()
    if t in ("id", "identity"):
        return IDENTITY.copy()
    if len(t) == 2 and t.isdigit():
        i, j = int(t[0]), int(t[1])
        try:
            return canonical_basis(min(i, j), max(i, j))
        except ValueError as exc:
            raise ConfigError(f"--sigma: {exc}") from exc
    try:
        vals = [float(x) for x in t.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--sigma: expected 'id', a pair like '12', or 6 Mandel components, got {text!r}") from exc
    if len(vals) != 6:
        raise ConfigError("--sigma: expected 6 Mandel components")
    return np.array(vals)


def cmd_eshelby(args):
    inc = _parse_pair(args.inclusion, args.lame, "inclusion")
    mat = _parse_pair(args.matrix, args.lame, "matrix")
    s = _parse_sigma(args.sigma)
    cfg = eshelby.EshelbyConfig(inc, mat, s)
    sol = eshelby.solve(cfg)
    q = np.random.default_rng(0).normal(size=(50, 3))
    x = q / np.linalg.norm(q, axis=1, keepdims=True)
    jump = float(np.abs(eshelby.traction_jump(cfg, sol, x) - eshelby.traction_jump_target(cfg, x)).max())
    energies = {"general": eshelby.energy(cfg)}
    if np.allclose(s, canonical_basis(1, 2)) or np.allclose(s, canonical_basis(1, 3)) or np.allclose(s, canonical_basis(2, 3)):
        energies["shear_closed_form"] = eshelby.energy_shear(inc, mat)
    for k in (1, 2, 3):
        if np.allclose(s, canonical_basis(k, k)):
            energies["diagonal_closed_form"] = eshelby.energy_diagonal(inc, mat)
    if np.allclose(s, IDENTITY):
        energies["bulk_lame_form"] = eshelby.energy_bulk(inc, mat)
        energies["bulk_kappa_mu_form"] = eshelby.energy_bulk_kappa_mu(inc, mat)
    report = {
        "format_version": FORMAT_VERSION, "command": "eshelby",
        "inclusion": _iso(inc), "matrix": _iso(mat), "sigma_mandel": s.tolist(),
        "interior_matrix_mandel": sol.interior_matrix.tolist(), "energies": energies,
        "flux": eshelby.flux(cfg).tolist(), "traction_jump_residual": jump,
    }
    if args.json or args.out:
        _emit(report, args.out, args.json)
    else:
        print(f"C (Mandel)       : {np.array2string(sol.interior_matrix, precision=10)}")
        for k, v in energies.items():
            print(f"energy {k:<18}: {v:.15g}")
        print(f"traction jump residual : {jump:.3e}")
    return EXIT_OK


def cmd_validate(args):
    results = validation.run(quick=args.quick)
    failed = [r for r in results if not r.passed]
    if args.json or args.out:
        report = {"format_version": FORMAT_VERSION, "command": "validate", "quick": bool(args.quick),
                  "kernels": "numba" if use_numba() else "numpy",
                  "criteria": [r.to_dict() for r in results], "passed": not failed}
        _emit(report, args.out, args.json)
    if not args.json:
        for r in results:
            print(r.line())
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_gen(args):
    if not args.out:
        raise ConfigError("--out is required for gen")
    cfg = load_config(args.config, args)
    if cfg.generator is None:
        raise ConfigError("gen needs a 'generator' block")
    field = generate(cfg.generator)
    if cfg.rescale != 1:
        field = rescale(field, cfg.rescale)
    save(args.out, cfg.generator, field)
    print(f"wrote {args.out} (n={field.n}, band=[{field.band.alpha}, {field.band.beta}])")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="embhom", description="Effective elastic tensors from embedded-corrector energies.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override the generator seed")
        sp.add_argument("--nx", type=int, help="elements per axis of the truncation box")
        sp.add_argument("--L", type=float, help="half-width of the truncation box")
        sp.add_argument("--cg-tol", dest="cg_tol", type=float, help="relative CG residual tolerance")
        sp.add_argument("--schemes", help="comma-separated subset of " + ",".join(SCHEMES))
        sp.add_argument("--json", action="store_true", help="print the JSON report to stdout")
        sp.add_argument("--out", help="output path")

    common(sub.add_parser("homogenize", help="run the approximation schemes for one configuration"))
    common(sub.add_parser("sweep", help="run the schemes over the rescaling factors of the configuration"))
    common(sub.add_parser("gen", help="generate a voxel field file"))

    e = sub.add_parser("eshelby", help="closed-form spherical inclusion")
    e.add_argument("--inclusion", required=True, help="kappa,mu of the inclusion (lam,mu with --lame)")
    e.add_argument("--matrix", required=True, help="kappa,mu of the matrix (lam,mu with --lame)")
    e.add_argument("--sigma", default="12", help="'id', an index pair such as 12, or 6 Mandel components")
    e.add_argument("--lame", action="store_true", help="read moduli pairs as (lam, mu)")
    e.add_argument("--json", action="store_true")
    e.add_argument("--out")

    v = sub.add_parser("validate", help="run the acceptance criteria")
    v.add_argument("--quick", action="store_true", help="closed-form criteria only")
    v.add_argument("--json", action="store_true")
    v.add_argument("--out")
    return p


COMMANDS = {"homogenize": cmd_homogenize, "sweep": cmd_sweep, "eshelby": cmd_eshelby,
            "validate": cmd_validate, "gen": cmd_gen}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError, CapacityError, PackingError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except fem.SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FixedPointError as exc:
        print(f"fixed-point error: {exc}", file=sys.stderr)
        for row in exc.trace.rows():
            print(json.dumps(row), file=sys.stderr)
        return EXIT_FIXED_POINT
    except (BracketError, ConcavityError) as exc:
        print(f"fixed-point error: {exc}", file=sys.stderr)
        return EXIT_FIXED_POINT


if __name__ == "__main__":
    sys.exit(main())
