"""Command-line harness.

Subcommands: phantom (generate test stacks), solve (run the
reconstruction and write report/CSV/SVG), validate (property suites),
metrics (score a stored report against a truth sidecar), plot
(regenerate the SVG from a stored report).

A flat `key = value` config file may supply any long-option value;
explicit flags win over the config, the config wins over built-in
defaults.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import observation, plotting, serialize, validation
from .curves import DiscretizationScheme
from .energy import EnergyConfig
from .exceptions import ConfigError, InsufficientSamples, IntegrationDiverged
from .geometry import MetricParams
from .metrics import compute_metrics
from .solver import SolverConfig, solve


def _resolve(args, config: dict, name: str, default, cast):
    """Flag value if given, else config-file value, else default."""
    given = getattr(args, name.replace("-", "_"))
    if given is not None:
        return given
    if name in config:
        raw = config[name]
        if cast is bool:
            return raw.strip().lower() in ("true", "1", "yes")
        return cast(raw)
    return default


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        return serialize.read_key_values(args.config)
    return {}


def _out_dir(args, config) -> str:
    out = _resolve(args, config, "out", ".", str)
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args) -> int:
    config = _load_config(args)
    phantom_id = _resolve(args, config, "id", "crossing2", str)
    n_frames = _resolve(args, config, "T", 21, int)
    noise = _resolve(args, config, "noise", 0.0, float)
    seed = _resolve(args, config, "seed", 0, int)
    unbalanced = _resolve(args, config, "unbalanced", False, bool)
    out = _out_dir(args, config)

    stack, truth = observation.make_phantom(
        phantom_id, n_frames, unbalanced=unbalanced
    )
    if noise > 0.0:
        stack = observation.add_noise(stack, noise, seed)
    stack_path = os.path.join(out, f"{phantom_id}.otg")
    truth_path = os.path.join(out, f"{phantom_id}.truth")
    serialize.write_stack(stack, stack_path, level=noise, seed=seed)
    serialize.write_truth(truth, truth_path)

    print(f"wrote {stack_path} and {truth_path}")
    print(
        f"frames {stack.n_frames} x {stack.grid.n_side}^2, "
        f"values [{stack.frames.min():.4g}, {stack.frames.max():.4g}], "
        f"frobenius {np.linalg.norm(stack.frames):.6g}, "
        f"noise level {noise:g} seed {seed}"
    )
    return 0


def _solve_configs(args, config):
    beta = _resolve(args, config, "beta", 1e-2, float)
    epsilon = _resolve(args, config, "epsilon", 1.0, float)
    xi = _resolve(args, config, "xi", 1.0, float)
    zeta = _resolve(args, config, "zeta", 0.0, float)
    alpha_mass = _resolve(args, config, "alpha-mass", 0.0, float)
    exponent = _resolve(args, config, "energy-exponent", 2, int)
    scheme = _resolve(args, config, "scheme", "bezier", str)
    k_n = _resolve(args, config, "kn", 4, int)
    multistart = _resolve(args, config, "multistart", 8, int)
    unbalanced = _resolve(args, config, "unbalanced", False, bool)
    seed = _resolve(args, config, "seed", 0, int)
    max_outer = _resolve(args, config, "max-outer-iters", 10, int)

    ecfg = EnergyConfig(
        beta=beta,
        metric=MetricParams(epsilon=epsilon, xi=xi),
        zeta=zeta,
        alpha_mass=alpha_mass,
        energy_exponent=exponent,
    )
    scfg = SolverConfig(
        scheme=DiscretizationScheme(scheme),
        n_controls=k_n + 1,
        multistart=multistart,
        balanced=not unbalanced,
        seed=seed,
        max_outer_iters=max_outer,
    )
    return scfg, ecfg


def cmd_solve(args) -> int:
    config = _load_config(args)
    if not args.stack:
        raise ConfigError("solve needs --stack PATH")
    stack, _ = serialize.read_stack(args.stack)
    truth = serialize.read_truth(args.truth) if args.truth else None
    scfg, ecfg = _solve_configs(args, config)
    out = _out_dir(args, config)

    report = solve(stack, scfg, ecfg)
    serialize.write_report(report, os.path.join(out, "report.txt"))
    serialize.write_trajectory_csv(report, os.path.join(out, "trajectories.csv"))
    plotting.write_report_svg(report, os.path.join(out, "overlay.svg"), truth)

    print(
        f"stop {report.stop_reason} after {report.n_outer} outer iterations; "
        f"{report.measure.n_atoms} atoms, "
        f"masses {[round(a.mass, 6) for a in report.measure.atoms]}"
    )
    if truth is not None:
        scores = compute_metrics(
            report.measure, truth, report.times, ecfg.metric, scfg.integrator
        )
        serialize.write_metrics(scores, os.path.join(out, "metrics.txt"))
        for line in serialize.format_key_values(
            serialize.metrics_kv(scores)
        ).splitlines():
            print(line)
    return 0


def cmd_validate(args) -> int:
    config = _load_config(args)
    seed = _resolve(args, config, "seed", 0, int)
    names = None
    suite = _resolve(args, config, "suite", "", str)
    if suite:
        names = [s.strip() for s in suite.split(",") if s.strip()]
    overrides = {}
    scheme = _resolve(args, config, "scheme", "", str)
    if scheme:
        overrides["schemes"] = (DiscretizationScheme(scheme),)
    kn = _resolve(args, config, "kn", "", str)
    if kn:
        overrides["segment_counts"] = tuple(
            int(s) for s in kn.split(",") if s.strip()
        )
    results = validation.run_suites(names, seed=seed, **overrides)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_metrics(args) -> int:
    if not (args.report and args.truth):
        raise ConfigError("metrics needs --report PATH and --truth PATH")
    report = serialize.read_report(args.report)
    truth = serialize.read_truth(args.truth)
    scores = compute_metrics(
        report.measure,
        truth,
        report.times,
        report.energy_config.metric,
        report.solver_config.integrator,
    )
    text = serialize.format_key_values(serialize.metrics_kv(scores))
    print(text, end="")
    if args.out:
        serialize.write_metrics(scores, args.out)
    return 0


def cmd_plot(args) -> int:
    if not args.report:
        raise ConfigError("plot needs --report PATH")
    report = serialize.read_report(args.report)
    truth = serialize.read_truth(args.truth) if args.truth else None
    out = args.out or "overlay.svg"
    plotting.write_report_svg(report, out, truth)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_shared(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value defaults file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotolift",
        description="Recovery of crossing point-source trajectories "
        "from frame stacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic stack + truth")
    _add_shared(p)
    p.add_argument("--id", choices=("crossing2", "triple3"))
    p.add_argument("--T", type=int, help="number of frames")
    p.add_argument("--noise", type=float, help="relative noise level")
    p.add_argument("--unbalanced", action="store_true", default=None,
                   help="time-varying amplitudes")
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("solve", help="reconstruct trajectories from a stack")
    _add_shared(p)
    p.add_argument("--stack", help="OTGSTACK input file")
    p.add_argument("--truth", help="truth sidecar for metrics/overlay")
    p.add_argument("--beta", type=float, help="regularization weight")
    p.add_argument("--epsilon", type=float, help="sideways-motion relaxation")
    p.add_argument("--xi", type=float, help="turning penalty")
    p.add_argument("--zeta", type=float, help="amplitude regularizer")
    p.add_argument("--alpha-mass", type=float, help="flat per-unit-mass charge")
    p.add_argument("--scheme", choices=[s.value for s in DiscretizationScheme])
    p.add_argument("--kn", type=int, help="curve segments (controls = kn+1)")
    p.add_argument("--multistart", type=int, help="oracle initializations")
    p.add_argument("--unbalanced", action="store_true", default=None,
                   help="recover time-varying amplitudes")
    p.add_argument("--energy-exponent", type=int, choices=(1, 2))
    p.add_argument("--max-outer-iters", type=int)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("validate", help="run the property suites")
    _add_shared(p)
    p.add_argument("--suite", help="comma-separated suite names "
                   f"(default all: {','.join(validation.SUITES)})")
    p.add_argument("--scheme", choices=[s.value for s in DiscretizationScheme],
                   help="restrict the gamma suite to one scheme")
    p.add_argument("--kn", help="comma-separated segment counts (gamma suite)")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("metrics", help="score a report against a truth")
    p.add_argument("--report", help="stored solve report")
    p.add_argument("--truth", help="truth sidecar")
    p.add_argument("--out", help="also write the metrics file here")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("plot", help="regenerate the SVG from a report")
    p.add_argument("--report", help="stored solve report")
    p.add_argument("--truth", help="truth sidecar to overlay")
    p.add_argument("--out", help="output SVG path")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InsufficientSamples, IntegrationDiverged, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
