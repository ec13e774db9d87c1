"""Configuration ingestion, scenario dispatch, and result emission.

Configs are JSON documents with sections ``material``, ``scenario``,
``solver`` (optional), ``method`` (optional), and ``output`` (optional):

    {
      "material": {"preset": "table2"},
      "scenario": {"name": "accuracy1", "dt": 2.5},
      "method": "mebm",
      "solver": {"newton_tol": 1e-12},
      "output": {"dir": "out"}
    }

The material section names a preset ("table2" or "fig7_modified") or
gives all ten constants explicitly.  Unknown keys are rejected anywhere.

Commands (exit codes: 0 ok, 2 config error, 3 solver failure,
4 comparison mismatch beyond tolerance):

    viscoplast run --config cfg.json [--method em|mebm|ebm] [--dt S] [--out DIR]
    viscoplast compare test.csv ref.csv [--max-rel-error X]
    viscoplast converge --config cfg.json --dts 5,2.5,1.25

``run`` writes ``<name>_<method>_history.csv`` (one row per grid point,
17 significant digits, '.' decimal separator) and a summary JSON that
embeds the fully resolved config plus invariant extrema.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import driver
from .driver import (HistoryRecord, LoadingProgram, compare_histories,
                     convergence_study, run_scenario_full)
from .errors import ConfigError, GridMismatchError, SimulationError
from .integrator import Method, SolverSettings
from .material import PRESETS, MaterialParams

CSV_COLUMNS = (
    "t",
    "F11", "F12", "F13", "F21", "F22", "F23", "F31", "F32", "F33",
    "T11", "T22", "T33", "T12", "T13", "T23",
    "sigma", "tau", "xi", "f", "R", "s", "s_d", "det_Ci", "det_Cii", "diss",
)

_MATERIAL_KEYS = ("k", "mu", "c", "gamma", "K", "m", "eta", "k0",
                  "kappa", "beta")

#: scenario name -> (builder, {parameter: default})
SCENARIOS = {
    "accuracy1": (lambda **kw: driver.accuracy_program("unimodular", **kw),
                  {"dt": 2.5}),
    "accuracy2": (lambda **kw: driver.accuracy_program("raw", **kw),
                  {"dt": 2.5}),
    "uniaxial": (driver.uniaxial_ramp_program,
                 {"rate": 0.1, "eps_max": 0.05, "dt": None}),
    "uniaxial_cyclic": (driver.uniaxial_cyclic_program,
                        {"rate": 0.1, "amplitude": 0.05, "half_cycles": 18,
                         "dt": None}),
    "relaxation": (driver.relaxation_program,
                   {"levels": (0.01, 0.02, 0.03, 0.04, 0.05),
                    "ramp_rate": 0.01, "hold": 10.0, "dt": 0.1}),
    "creep": (driver.creep_program,
              {"levels": (280.0, 300.0, 320.0), "stress_rate": 27.0,
               "hold": 20.0, "dt": 0.2}),
    "torsion": (driver.torsion_ramp_program,
                {"rate": 0.01, "phi_max": 0.2, "dt": None}),
    "torsion_cyclic": (driver.torsion_cyclic_program,
                       {"rate": 0.01, "amplitude": 0.2, "half_cycles": 4,
                        "dt": None}),
}


@dataclasses.dataclass
class RunConfig:
    """A fully resolved, validated run description."""

    material: MaterialParams
    material_spec: dict
    scenario_name: str
    scenario_params: dict
    method: Method
    settings: SolverSettings
    out_dir: Path

    def build_program(self):
        builder, _ = SCENARIOS[self.scenario_name]
        params = {k: v for k, v in self.scenario_params.items()}
        if "levels" in params:
            params["levels"] = tuple(params["levels"])
        try:
            return builder(**params)
        except ValueError as exc:
            raise ConfigError(f"scenario {self.scenario_name!r}: {exc}") from exc

    def resolved(self):
        """Config echo: a loadable document with every value pinned."""
        return {
            "material": {key: getattr(self.material, key)
                         for key in _MATERIAL_KEYS},
            "scenario": {"name": self.scenario_name, **{
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.scenario_params.items()}},
            "method": self.method.value,
            "solver": dataclasses.asdict(self.settings),
            "output": {"dir": str(self.out_dir)},
        }


def _require_mapping(obj, name):
    if not isinstance(obj, dict):
        raise ConfigError(f"section {name!r} must be an object")
    return obj


def _check_keys(section, allowed, name):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")


def _parse_material(section):
    section = _require_mapping(section, "material")
    if "preset" in section:
        _check_keys(section, ("preset",), "material")
        preset = section["preset"]
        if preset not in PRESETS:
            raise ConfigError(f"unknown material preset {preset!r} "
                              f"(have: {', '.join(sorted(PRESETS))})")
        return PRESETS[preset], dict(section)
    _check_keys(section, _MATERIAL_KEYS, "material")
    missing = sorted(set(_MATERIAL_KEYS) - set(section))
    if missing:
        raise ConfigError(f"material is missing {', '.join(missing)} "
                          "(or name a preset)")
    try:
        return MaterialParams(**{k: float(section[k]) for k in _MATERIAL_KEYS}), \
            dict(section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"material: {exc}") from exc


def _parse_scenario(section):
    section = _require_mapping(section, "scenario")
    if "name" not in section:
        raise ConfigError("scenario must have a 'name'")
    name = section["name"]
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r} "
                          f"(have: {', '.join(sorted(SCENARIOS))})")
    _, defaults = SCENARIOS[name]
    _check_keys({k: v for k, v in section.items() if k != "name"},
                defaults, f"scenario {name!r}")
    params = dict(defaults)
    params.update({k: v for k, v in section.items() if k != "name"})
    return name, params


def _parse_method(value):
    try:
        return Method(value)
    except ValueError:
        raise ConfigError(f"unknown method {value!r} (use ebm, mebm, or em)") \
            from None


def _parse_solver(section):
    section = _require_mapping(section, "solver")
    fields = {f.name for f in dataclasses.fields(SolverSettings)}
    _check_keys(section, fields, "solver")
    try:
        return SolverSettings(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc


def load_config(path, method=None, dt=None, out=None):
    """Read, validate, and fully default a run configuration.

    method/dt/out are command-line overrides applied on top of the file.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: JSON parse error at line {exc.lineno}, "
            f"column {exc.colno}: {exc.msg}") from exc
    doc = _require_mapping(doc, "config")
    _check_keys(doc, ("material", "scenario", "method", "solver", "output"),
                "config")
    if "material" not in doc or "scenario" not in doc:
        raise ConfigError("config needs 'material' and 'scenario' sections")
    material, material_spec = _parse_material(doc["material"])
    scenario_name, scenario_params = _parse_scenario(doc["scenario"])
    cfg_method = _parse_method(doc.get("method", "em"))
    settings = _parse_solver(doc.get("solver", {}))
    output = _require_mapping(doc.get("output", {}), "output")
    _check_keys(output, ("dir",), "output")
    out_dir = Path(output.get("dir", "out"))

    if method is not None:
        cfg_method = _parse_method(method)
    if dt is not None:
        if dt <= 0.0:
            raise ConfigError("--dt must be positive")
        scenario_params["dt"] = dt
    if out is not None:
        out_dir = Path(out)

    cfg = RunConfig(material=material, material_spec=material_spec,
                    scenario_name=scenario_name,
                    scenario_params=scenario_params, method=cfg_method,
                    settings=settings, out_dir=out_dir)
    cfg.build_program()  # validate scenario parameters now
    return cfg


# ------------------------------------------------------------------ CSV IO

def _fmt(x):
    return format(float(x), ".17g")


def write_history_csv(path, records):
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        F = rec.F
        T = rec.T
        row = [rec.t,
               F[0, 0], F[0, 1], F[0, 2],
               F[1, 0], F[1, 1], F[1, 2],
               F[2, 0], F[2, 1], F[2, 2],
               T[0, 0], T[1, 1], T[2, 2], T[0, 1], T[0, 2], T[1, 2],
               rec.sigma, rec.tau, rec.xi, rec.f, rec.R, rec.s, rec.s_d,
               rec.det_Ci, rec.det_Cii, rec.dissipation]
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_history_csv(path):
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not lines or tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise ConfigError(f"{path}: missing or wrong CSV header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise ConfigError(
                f"{path}: row {lineno} has {len(parts)} fields, "
                f"expected {len(CSV_COLUMNS)}")
        try:
            vals = [float(v) for v in parts]
        except ValueError as exc:
            raise ConfigError(f"{path}: row {lineno}: {exc}") from exc
        F = np.array(vals[1:10]).reshape(3, 3)
        T = np.empty((3, 3))
        T11, T22, T33, T12, T13, T23 = vals[10:16]
        T[0, 0], T[1, 1], T[2, 2] = T11, T22, T33
        T[0, 1] = T[1, 0] = T12
        T[0, 2] = T[2, 0] = T13
        T[1, 2] = T[2, 1] = T23
        (sigma, tau, xi, f, R, s, s_d, det_ci, det_cii, diss) = vals[16:]
        records.append(HistoryRecord(
            t=vals[0], F=F, T=T, sigma=sigma, tau=tau, xi=xi, f=f, R=R,
            s=s, s_d=s_d, det_Ci=det_ci, det_Cii=det_cii, dissipation=diss))
    return records


def histories_equal(a, b):
    """Exact (bit-level) equality of two record sequences."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if ra.t != rb.t or not np.array_equal(ra.F, rb.F) \
                or not np.array_equal(ra.T, rb.T):
            return False
        for name in ("sigma", "tau", "xi", "f", "R", "s", "s_d",
                     "det_Ci", "det_Cii", "dissipation"):
            if getattr(ra, name) != getattr(rb, name):
                return False
    return True


# ---------------------------------------------------------------- commands

def execute(config):
    """Run one configured scenario; write history CSV and summary JSON.

    Returns the exit status (0 on success); solver failures propagate as
    SimulationError for the caller to map to exit code 3.
    """
    program = config.build_program()
    run = run_scenario_full(program, config.method, config.material,
                            config.settings)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    base = f"{config.scenario_name}_{config.method.value}"
    csv_path = config.out_dir / f"{base}_history.csv"
    write_history_csv(csv_path, run.records)
    summary = {
        "config": config.resolved(),
        "rows": len(run.records),
        "max_xi": run.stats.max_xi,
        "peak_cauchy": run.stats.peak_cauchy,
        "peak_sigma": run.stats.peak_sigma,
        "peak_tau": run.stats.peak_tau,
        "max_det_ci_err": run.stats.max_det_ci_err,
        "max_det_cii_err": run.stats.max_det_cii_err,
        "max_skew": run.stats.max_skew,
        "min_dissipation_increment": run.stats.min_dissipation,
    }
    summary_path = config.out_dir / f"{base}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True)
                            + "\n")
    print(f"wrote {csv_path} ({len(run.records)} rows) and {summary_path}")
    return 0


def compare_command(test_csv, ref_csv, max_rel_error=None, out=print):
    """Compare two history CSVs; returns (metrics, exit_status)."""
    test = read_history_csv(test_csv)
    reference = read_history_csv(ref_csv)
    metrics = compare_histories(test, reference)
    out(f"compared {len(metrics.times)} shared grid points")
    out(f"max |dT|            : {metrics.max_abs_error:.6e} MPa")
    out(f"rms |dT|            : {metrics.rms_error:.6e} MPa")
    out(f"peak reference |T|  : {metrics.peak_reference:.6e} MPa")
    out(f"max relative error  : {metrics.max_rel_error:.6e}")
    out(f"error(t_end)/max    : {metrics.final_over_max:.6f}")
    status = 0
    if max_rel_error is not None and metrics.max_rel_error > max_rel_error:
        out(f"FAIL: relative error {metrics.max_rel_error:.3e} exceeds "
            f"tolerance {max_rel_error:.3e}")
        status = 4
    return metrics, status


def converge_command(config, dts, out=print):
    """Run a convergence study for the configured scenario and method."""
    program = config.build_program()
    result = convergence_study(program, config.method, dts, config.material,
                               config.settings)
    out("dt [s]      max ||dT||_F [MPa]")
    for d, e in zip(result.dts, result.errors):
        out(f"{d:<10g}  {e:.6e}")
    if result.degenerate:
        out("errors at roundoff level: degenerate study, no order estimate")
    else:
        out(f"observed order: {result.order:.3f}")
    config.out_dir.mkdir(parents=True, exist_ok=True)
    base = f"{config.scenario_name}_{config.method.value}_convergence"
    table = ["dt,error"]
    table += [f"{_fmt(d)},{_fmt(e)}" for d, e in zip(result.dts, result.errors)]
    (config.out_dir / f"{base}.csv").write_text("\n".join(table) + "\n")
    return result


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="viscoplast",
        description="Finite-strain viscoplasticity material-point runs")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one configured scenario")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--method", choices=["em", "mebm", "ebm"])
    run_p.add_argument("--dt", type=float)
    run_p.add_argument("--out")

    cmp_p = sub.add_parser("compare", help="compare two history CSVs")
    cmp_p.add_argument("test_csv")
    cmp_p.add_argument("ref_csv")
    cmp_p.add_argument("--max-rel-error", type=float, default=None)

    conv_p = sub.add_parser("converge", help="convergence study")
    conv_p.add_argument("--config", required=True)
    conv_p.add_argument("--dts", required=True,
                        help="comma-separated steps, descending (5,2.5,1.25)")
    conv_p.add_argument("--method", choices=["em", "mebm", "ebm"])
    conv_p.add_argument("--out")
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config, method=args.method,
                                 dt=args.dt, out=args.out)
            return execute(config)
        if args.command == "compare":
            _, status = compare_command(args.test_csv, args.ref_csv,
                                        max_rel_error=args.max_rel_error)
            return status
        if args.command == "converge":
            config = load_config(args.config, method=args.method,
                                 out=args.out)
            try:
                dts = [float(v) for v in args.dts.split(",") if v]
            except ValueError as exc:
                raise ConfigError(f"--dts: {exc}") from exc
            if not dts:
                raise ConfigError("--dts: need at least one step")
            try:
                converge_command(config, dts)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, GridMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
