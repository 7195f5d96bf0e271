"""Command-line front end.

    stfusion run --config experiment.yaml --runs 200 --out results.csv
    stfusion diagnostics --out kl.csv

Exit status is 0 on success, 2 on configuration errors and 3 on runtime
errors. Progress goes to standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import yaml

from .diagnostics import divergence_table
from .fusion import AAVariant, DofRule
from .scenario import (
    METHOD_NAMES,
    FilterDofs,
    Method,
    OutlierNoiseSpec,
    RunReport,
    ScenarioConfig,
    SensorSpec,
    method_from_name,
    run_sweep,
)

log = logging.getLogger("stfusion")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

STEP_FIELDS = ("p_o", "method", "step", "position_rmse", "velocity_rmse")
SUMMARY_FIELDS = (
    "p_o",
    "method",
    "avg_position_rmse",
    "avg_velocity_rmse",
    "mean_weight_sensor_1",
    "excluded_runs",
)
DEFAULT_SWEEP = tuple(round(0.02 * i, 2) for i in range(11))

_TOP_KEYS = {
    "runs",
    "steps",
    "seed",
    "delta_t",
    "initial_mean",
    "initial_cov",
    "process_noise",
    "sensors",
    "filter_dofs",
    "noise_convention",
    "methods",
    "aa_variant",
    "dof_rule",
    "p_o",
    "output",
}
_NOISE_KEYS = {"nominal_sigma", "outlier_sigma", "outlier_prob"}
_SENSOR_KEYS = {"H"} | _NOISE_KEYS
_DOF_KEYS = {"nu0", "nu_q", "nu_r"}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None) -> None:
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


class RunSpec(NamedTuple):
    scenario: ScenarioConfig
    methods: list[Method]
    sweep: list[float] | None
    output: str = "results.csv"
    aa_variant: AAVariant = AAVariant.V1
    dof_rule: DofRule = DofRule.AVERAGE


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError("unknown key", f"{where}{key}")


def _number(value: Any, key: str, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    if integer and int(value) != value:
        raise ConfigError(f"expected an integer, got {value!r}", key)
    if not math.isfinite(value):
        raise ConfigError("must be finite", key)
    return int(value) if integer else float(value)


def _matrix(value: Any, key: str) -> tuple[tuple[float, ...], ...]:
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ConfigError("expected a list of rows", key)
    return tuple(tuple(_number(v, key) for v in row) for row in value)


def _noise(section: Any, key: str) -> OutlierNoiseSpec:
    if not isinstance(section, dict):
        raise ConfigError("expected a mapping", key)
    _check_keys(section, _SENSOR_KEYS if key.startswith("sensors") else _NOISE_KEYS, f"{key}.")
    try:
        return OutlierNoiseSpec(
            _number(section["nominal_sigma"], f"{key}.nominal_sigma"),
            _number(section["outlier_sigma"], f"{key}.outlier_sigma"),
            _number(section.get("outlier_prob", 0.0), f"{key}.outlier_prob"),
        )
    except KeyError as exc:
        raise ConfigError("missing required key", f"{key}.{exc.args[0]}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key) from None


def config_from_mapping(doc: dict) -> RunSpec:
    """Validate a parsed configuration document; missing keys take the
    default two-sensor experiment values."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping")
    _check_keys(doc, _TOP_KEYS, "")
    base = ScenarioConfig()
    kw: dict[str, Any] = {}
    for key in ("runs", "steps", "seed"):
        if key in doc:
            kw[key] = _number(doc[key], key, integer=True)
    if "delta_t" in doc:
        kw["delta_t"] = _number(doc["delta_t"], "delta_t")
    if "initial_mean" in doc:
        if not isinstance(doc["initial_mean"], list):
            raise ConfigError("expected a list", "initial_mean")
        kw["initial_mean"] = tuple(_number(v, "initial_mean") for v in doc["initial_mean"])
    if "initial_cov" in doc:
        kw["initial_cov"] = _matrix(doc["initial_cov"], "initial_cov")
    if "process_noise" in doc:
        kw["process_noise"] = _noise(doc["process_noise"], "process_noise")
    if "sensors" in doc:
        if not isinstance(doc["sensors"], list) or not doc["sensors"]:
            raise ConfigError("expected a non-empty list", "sensors")
        sensors = []
        for i, s in enumerate(doc["sensors"]):
            key = f"sensors[{i}]"
            noise = _noise(s, key)
            if "H" not in s:
                raise ConfigError("missing required key", f"{key}.H")
            sensors.append(SensorSpec(_matrix(s["H"], f"{key}.H"), noise))
        kw["sensors"] = tuple(sensors)
    if "filter_dofs" in doc:
        section = doc["filter_dofs"]
        if not isinstance(section, dict):
            raise ConfigError("expected a mapping", "filter_dofs")
        _check_keys(section, _DOF_KEYS, "filter_dofs.")
        dofs = {k: _number(v, f"filter_dofs.{k}") for k, v in section.items()}
        for k, v in dofs.items():
            if v <= 2:
                raise ConfigError("dof must be > 2", f"filter_dofs.{k}")
        kw["filter_dofs"] = replace(FilterDofs(), **dofs)
    if "noise_convention" in doc:
        kw["noise_convention"] = doc["noise_convention"]
    try:
        scenario = replace(base, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    try:
        aa_variant = AAVariant(doc.get("aa_variant", "v1"))
    except ValueError:
        raise ConfigError("expected v1 or v2", "aa_variant") from None
    try:
        dof_rule = DofRule(doc.get("dof_rule", "average"))
    except ValueError:
        raise ConfigError("expected min or average", "dof_rule") from None

    names = doc.get("methods", list(METHOD_NAMES))
    if not isinstance(names, list) or not names:
        raise ConfigError("expected a non-empty list", "methods")
    methods = []
    for name in names:
        if name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {name!r}", "methods")
        methods.append(method_from_name(name, aa_variant, dof_rule))

    sweep: list[float] | None
    raw = doc.get("p_o", list(DEFAULT_SWEEP))
    if raw is None:
        sweep = None
    else:
        if not isinstance(raw, list) or not raw:
            raise ConfigError("expected a non-empty list or null", "p_o")
        sweep = [_number(p, "p_o") for p in raw]
        if any(not 0.0 <= p <= 1.0 for p in sweep):
            raise ConfigError("probabilities must lie in [0, 1]", "p_o")

    output = doc.get("output", "results.csv")
    if not isinstance(output, str):
        raise ConfigError("expected a path", "output")
    return RunSpec(scenario, methods, sweep, output, aa_variant, dof_rule)


def parse_config(path: str | Path) -> RunSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"parse error: {getattr(exc, 'problem', exc)}", line=line) from None
    return config_from_mapping(doc)


def _noise_doc(spec: OutlierNoiseSpec) -> dict:
    return {
        "nominal_sigma": spec.nominal_sigma,
        "outlier_sigma": spec.outlier_sigma,
        "outlier_prob": spec.outlier_prob,
    }


def serialize(spec: RunSpec) -> str:
    """YAML text that :func:`parse_config` maps back to ``spec``."""
    sc = spec.scenario
    doc = {
        "runs": sc.runs,
        "steps": sc.steps,
        "seed": sc.seed,
        "delta_t": sc.delta_t,
        "initial_mean": list(sc.initial_mean),
        "initial_cov": [list(r) for r in sc.initial_cov],
        "process_noise": _noise_doc(sc.process_noise),
        "sensors": [{"H": [list(r) for r in s.H], **_noise_doc(s.noise)} for s in sc.sensors],
        "filter_dofs": {"nu0": sc.filter_dofs.nu0, "nu_q": sc.filter_dofs.nu_q, "nu_r": sc.filter_dofs.nu_r},
        "noise_convention": sc.noise_convention,
        "methods": [m.name for m in spec.methods],
        "aa_variant": spec.aa_variant.value,
        "dof_rule": spec.dof_rule.value,
        "p_o": None if spec.sweep is None else list(spec.sweep),
        "output": spec.output,
    }
    return yaml.safe_dump(doc, sort_keys=False)


def _summary_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}_summary{out.suffix}")


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_results(reports: Sequence[RunReport], out: Path, fmt: str) -> tuple[Path, Path]:
    """Write the per-step table to ``out`` and the summary next to it."""
    steps = [row for r in reports for row in r.step_rows()]
    summary = [{k: _clean(v) for k, v in row.items()} for r in reports for row in r.summary_rows()]
    summary_path = _summary_path(out)
    if fmt == "json":
        out.write_text(json.dumps(steps, indent=1) + "\n")
        summary_path.write_text(json.dumps(summary, indent=1) + "\n")
    else:
        _write_csv(out, STEP_FIELDS, steps)
        _write_csv(summary_path, SUMMARY_FIELDS, summary)
    return out, summary_path


def _write_csv(path: Path, fields: Sequence[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row[k] is None else _fmt(row[k]) for k in fields})


def _fmt(value):
    return repr(value) if isinstance(value, float) else value


def run_command(args: argparse.Namespace) -> int:
    spec = parse_config(args.config) if args.config else config_from_mapping({})
    scenario = spec.scenario
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("must be >= 1", "--runs")
        scenario = replace(scenario, runs=args.runs)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    out = Path(args.out or spec.output)
    if not out.parent.exists():
        raise OSError(f"output directory {out.parent} does not exist")
    # without a sweep the configured process-noise outlier probability is used
    probs = spec.sweep if spec.sweep is not None else [scenario.process_noise.outlier_prob]
    reports = run_sweep(scenario, spec.methods, probs, args.parallel)
    for r in reports:
        for row in r.summary_rows():
            log.info(
                "p_o=%.2f %-16s pos %.3f vel %.3f",
                row["p_o"],
                row["method"],
                row["avg_position_rmse"],
                row["avg_velocity_rmse"],
            )
    paths = write_results(reports, out, args.format)
    log.info("wrote %s and %s", *paths)
    return EXIT_OK


def diagnostics_command(args: argparse.Namespace) -> int:
    if args.dof <= 2:
        raise ConfigError("must be > 2", "--dof")
    if args.dim < 1 or args.samples < 2:
        raise ConfigError("dimension and sample count must be positive", "--dim/--samples")
    rows = divergence_table(args.offsets, args.scale_ratios, args.dof, args.dim, args.samples, args.seed)
    dicts = [r.as_dict() for r in rows]
    for r in rows:
        log.info(
            "ratio %g offset %g: kl %.4f v1 %.4f v2 %.4f w1 %.3f rel.residual %.3f",
            r.scale_ratio, r.offset, r.mc_kl, r.approx_v1, r.approx_v2, r.w1, r.relative_residual,
        )
    if args.out is None:
        _emit(sys.stdout, dicts, args.format)
    else:
        with open(args.out, "w", newline="") as fh:
            _emit(fh, dicts, args.format)
    return EXIT_OK


def _emit(fh, rows: list[dict], fmt: str) -> None:
    if fmt == "json":
        fh.write(json.dumps(rows, indent=1) + "\n")
        return
    writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stfusion", description="Student's t multi-sensor fusion experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo tracking experiment")
    run.add_argument("--config", help="YAML experiment file; defaults to the two-sensor setup")
    run.add_argument("--runs", type=int, help="override the number of Monte Carlo runs")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help="per-step results file; the summary goes to <stem>_summary.<ext>")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--parallel", type=int, default=1, help="worker processes")
    run.set_defaults(handler=run_command)

    diag = sub.add_parser("diagnostics", help="t-divergence surrogate curves")
    diag.add_argument("--offsets", type=_floats, default=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    diag.add_argument("--scale-ratios", type=_floats, default=[1.0, 2.0, 4.0])
    diag.add_argument("--dof", type=float, default=3.0)
    diag.add_argument("--dim", type=int, default=2)
    diag.add_argument("--samples", type=int, default=100_000)
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--out", help="output file; standard output if omitted")
    diag.add_argument("--format", choices=("csv", "json"), default="csv")
    diag.set_defaults(handler=diagnostics_command)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "parallel", 1) < 1:
        log.error("--parallel must be >= 1")
        return EXIT_CONFIG
    try:
        return args.handler(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
