"""File formats: observation stacks, ground-truth sidecars, solve
reports, trajectory CSVs, metrics and flat config files.

Stack files are a one-line text header `OTGSTACK v1 n_side T sigma level
seed` followed by T frames of n_side^2 little-endian float64, row-major,
in time order.  Everything else is flat `key = value` text with floats
printed as %.17g (exact float64 round-trip), so write -> read -> write
is byte-identical.
"""

from __future__ import annotations

import dataclasses
from enum import Enum

import numpy as np

from .curves import DiscreteCurve, DiscretizationScheme, eval_amplitude, eval_curve
from .energy import Atom, EnergyConfig, MeasureState
from .exceptions import ConfigError
from .metrics import TrajectoryMetrics
from .observation import GroundTruth, ObservationStack, SensorGrid
from .solver import SolveReport, SolverConfig

STACK_MAGIC = "OTGSTACK"
STACK_VERSION = "v1"


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _fmt_array(a) -> str:
    return " ".join(_fmt(v) for v in np.asarray(a, dtype=float).ravel())


def _parse_array(s: str):
    return np.array([float(v) for v in s.split()], dtype=float)


# ---------------------------------------------------------------------------
# observation stacks


def write_stack(
    stack: ObservationStack, path, level: float = 0.0, seed: int = 0
) -> None:
    """Write a stack file; level/seed record how the noise was drawn."""
    header = (
        f"{STACK_MAGIC} {STACK_VERSION} {stack.grid.n_side} "
        f"{stack.n_frames} {_fmt(stack.grid.sigma_kernel)} "
        f"{_fmt(level)} {int(seed)}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(stack.frames, dtype="<f8").tobytes())


def read_stack(path):
    """Read a stack file; returns (ObservationStack, meta dict)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 7 or header[0] != STACK_MAGIC or header[1] != STACK_VERSION:
            raise ConfigError(f"not an {STACK_MAGIC} {STACK_VERSION} file: {path}")
        n_side, n_frames = int(header[2]), int(header[3])
        sigma, level, seed = float(header[4]), float(header[5]), int(header[6])
        payload = fh.read()
    expected = n_frames * n_side * n_side * 8
    if len(payload) != expected:
        raise ConfigError(
            f"stack payload is {len(payload)} bytes, expected {expected}"
        )
    frames = np.frombuffer(payload, dtype="<f8").reshape(n_frames, n_side * n_side)
    grid = SensorGrid(n_side=n_side, sigma_kernel=sigma)
    stack = ObservationStack(
        np.linspace(0.0, 1.0, n_frames), frames.astype(float), grid
    )
    return stack, {"level": level, "seed": seed}


# ---------------------------------------------------------------------------
# key = value text


def format_key_values(kv: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in kv.items())


def write_key_values(kv: dict, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_key_values(kv))


def read_key_values(path) -> dict:
    """Parse flat `key = value` text; '#' starts a comment line."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# curves and ground truth


def _curve_kv(curve: DiscreteCurve, prefix: str) -> dict:
    kv = {
        f"{prefix}scheme": curve.scheme.value,
        f"{prefix}controls": _fmt_array(curve.controls),
    }
    if curve.velocities is not None:
        kv[f"{prefix}velocities"] = _fmt_array(curve.velocities)
    if curve.amplitudes is not None:
        kv[f"{prefix}amplitudes"] = _fmt_array(curve.amplitudes)
    return kv


def _curve_from_kv(kv: dict, prefix: str) -> DiscreteCurve:
    scheme = DiscretizationScheme(kv[f"{prefix}scheme"])
    controls = _parse_array(kv[f"{prefix}controls"]).reshape(-1, 3)
    velocities = None
    if f"{prefix}velocities" in kv:
        velocities = _parse_array(kv[f"{prefix}velocities"]).reshape(-1, 3)
    amplitudes = None
    if f"{prefix}amplitudes" in kv:
        amplitudes = _parse_array(kv[f"{prefix}amplitudes"])
    return DiscreteCurve(scheme, controls, velocities, amplitudes)


def write_truth(truth: GroundTruth, path) -> None:
    kv = {"format": "rotolift-truth 1", "n_curves": str(len(truth.curves))}
    for i, curve in enumerate(truth.curves):
        kv[f"curve.{i}.mass"] = _fmt(truth.masses[i])
        kv.update(_curve_kv(curve, f"curve.{i}."))
    write_key_values(kv, path)


def read_truth(path) -> GroundTruth:
    kv = read_key_values(path)
    if kv.get("format") != "rotolift-truth 1":
        raise ConfigError(f"not a rotolift-truth file: {path}")
    n = int(kv["n_curves"])
    curves = [_curve_from_kv(kv, f"curve.{i}.") for i in range(n)]
    masses = [float(kv[f"curve.{i}.mass"]) for i in range(n)]
    return GroundTruth(curves, masses)


# ---------------------------------------------------------------------------
# configs (nested dataclasses flattened with dotted keys)


def _flatten_config(obj, prefix: str) -> dict:
    kv = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            kv.update(_flatten_config(v, key + "."))
        elif isinstance(v, Enum):
            kv[key] = v.value
        elif isinstance(v, bool):
            kv[key] = "true" if v else "false"
        elif isinstance(v, (int, np.integer)):
            kv[key] = str(int(v))
        elif isinstance(v, (float, np.floating)):
            kv[key] = _fmt(v)
        else:
            kv[key] = str(v)
    return kv


def _rebuild_config(cls, kv: dict, prefix: str):
    """Inverse of _flatten_config for default-constructible dataclasses."""
    ref = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        default = getattr(ref, f.name)
        if dataclasses.is_dataclass(default):
            kwargs[f.name] = _rebuild_config(type(default), kv, key + ".")
        elif key in kv:
            raw = kv[key]
            if isinstance(default, Enum):
                kwargs[f.name] = type(default)(raw)
            elif isinstance(default, bool):
                kwargs[f.name] = raw == "true"
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# solve reports


def write_report(report: SolveReport, path) -> None:
    kv = {
        "format": "rotolift-report 1",
        "stop_reason": report.stop_reason,
        "n_outer": str(report.n_outer),
        "times": _fmt_array(report.times),
        "grid.n_side": str(report.grid.n_side),
        "grid.sigma_kernel": _fmt(report.grid.sigma_kernel),
    }
    kv.update(_flatten_config(report.solver_config, "solver."))
    kv.update(_flatten_config(report.energy_config, "energy."))
    kv["energy_trace.phases"] = " ".join(p for p, _ in report.energy_trace)
    kv["energy_trace.values"] = _fmt_array([e for _, e in report.energy_trace])
    kv["certificate_trace"] = _fmt_array(report.certificate_trace)
    for name in sorted(report.wall_times):
        kv[f"wall.{name}"] = _fmt(report.wall_times[name])
    kv["n_atoms"] = str(report.measure.n_atoms)
    for i, atom in enumerate(report.measure.atoms):
        kv[f"atom.{i}.mass"] = _fmt(atom.mass)
        kv.update(_curve_kv(atom.curve, f"atom.{i}."))
    write_key_values(kv, path)


def read_report(path) -> SolveReport:
    kv = read_key_values(path)
    if kv.get("format") != "rotolift-report 1":
        raise ConfigError(f"not a rotolift-report file: {path}")
    scfg = _rebuild_config(SolverConfig, kv, "solver.")
    ecfg = _rebuild_config(EnergyConfig, kv, "energy.")
    phases = kv["energy_trace.phases"].split()
    values = _parse_array(kv["energy_trace.values"])
    atoms = []
    for i in range(int(kv["n_atoms"])):
        atoms.append(
            Atom(float(kv[f"atom.{i}.mass"]), _curve_from_kv(kv, f"atom.{i}."))
        )
    walls = {
        k[len("wall."):]: float(v) for k, v in kv.items() if k.startswith("wall.")
    }
    return SolveReport(
        measure=MeasureState(atoms),
        stop_reason=kv["stop_reason"],
        n_outer=int(kv["n_outer"]),
        energy_trace=list(zip(phases, [float(v) for v in values])),
        certificate_trace=[float(v) for v in _parse_array(kv["certificate_trace"])],
        wall_times=walls,
        times=_parse_array(kv["times"]),
        grid=SensorGrid(
            n_side=int(kv["grid.n_side"]),
            sigma_kernel=float(kv["grid.sigma_kernel"]),
        ),
        solver_config=scfg,
        energy_config=ecfg,
    )


# ---------------------------------------------------------------------------
# trajectory CSV and metrics text


def trajectory_csv(report: SolveReport) -> str:
    """CSV of the recovered trajectories sampled at the stack times.

    amp is the observable intensity: mass times the amplitude channel
    (or the constant mass for balanced atoms).
    """
    params = report.energy_config.metric
    integ = report.solver_config.integrator
    lines = ["atom_id,t,x,y,theta,amp"]
    for i, atom in enumerate(report.measure.atoms):
        pts = eval_curve(atom.curve, report.times, params, integ)
        if atom.curve.amplitudes is not None:
            amp = atom.mass * eval_amplitude(atom.curve, report.times)
        else:
            amp = np.full(len(report.times), atom.mass)
        for k, t in enumerate(report.times):
            lines.append(
                f"{i},{_fmt(t)},{_fmt(pts[k, 0])},{_fmt(pts[k, 1])},"
                f"{_fmt(pts[k, 2])},{_fmt(amp[k])}"
            )
    return "\n".join(lines) + "\n"


def write_trajectory_csv(report: SolveReport, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(trajectory_csv(report))


def metrics_kv(metrics: TrajectoryMetrics) -> dict:
    return {
        "matched_rmse": _fmt(metrics.matched_rmse),
        "endpoint_error": _fmt(metrics.endpoint_error),
        "crossing_detected": "true" if metrics.crossing_detected else "false",
        "mass_relative_error": _fmt(metrics.mass_relative_error),
    }


def write_metrics(metrics: TrajectoryMetrics, path) -> None:
    write_key_values(metrics_kv(metrics), path)
