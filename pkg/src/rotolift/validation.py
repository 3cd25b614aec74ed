"""Property validation suites.

Each suite checks an implementation route against an independent oracle:
closed-form Christoffel symbols against a Koszul finite-difference
construction from the metric tensor, geodesic integration against speed
conservation, discretized path energies against dense quadrature of the
smooth curve, and the forward/adjoint pair against brute-force inner
products.  The CLI `validate` subcommand runs them and the test suite
pins their tolerances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from . import geometry
from .curves import (
    DiscretizationScheme,
    SampledCurve,
    knots,
    path_energy,
    sample_map,
)
from .energy import Atom, MeasureState
from .exceptions import ConfigError
from .geometry import IntegratorConfig, MetricParams
from .observation import Certificate, SensorGrid, certificate_pairing, forward_stack
from .curves import DiscreteCurve

SPEED_INTEGRATOR = IntegratorConfig(method="rk4", steps=512)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    runtime: float
    detail: str = ""

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return (
            f"{status}  {self.name}: max error {self.max_error:.3e} "
            f"vs tolerance {self.tolerance:.0e} in {self.runtime:.2f}s{extra}"
        )


def _random_params(rng) -> MetricParams:
    return MetricParams(
        epsilon=float(rng.uniform(0.05, 1.0)), xi=float(rng.uniform(0.5, 100.0))
    )


def _random_point(rng):
    return np.array(
        [rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 2 * np.pi)]
    )


# ---------------------------------------------------------------------------
# Christoffel symbols vs Koszul finite differences


def christoffel_koszul_fd(point, params: MetricParams, step: float = 1e-5):
    """Koszul construction by central differences of the metric tensor:
    Gamma^k_ij = 0.5 g^{kl} (d_i g_lj + d_j g_li - d_l g_ij)."""
    base = np.asarray(point, dtype=float)
    dg = np.zeros((3, 3, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = step
        dg[a] = (
            geometry.metric_tensor(base + e, params)
            - geometry.metric_tensor(base - e, params)
        ) / (2.0 * step)
    ginv = np.linalg.inv(geometry.metric_tensor(base, params))
    gamma = np.zeros((3, 3, 3))
    for k in range(3):
        for i in range(3):
            for j in range(3):
                s = 0.0
                for a in range(3):
                    s += ginv[k, a] * (dg[i][a, j] + dg[j][a, i] - dg[a][i, j])
                gamma[k, i, j] = 0.5 * s
    return gamma


def christoffel_suite(
    n_draws: int = 100,
    tol: float = 1e-6,
    flat_tol: float = 1e-12,
    seed: int = 0,
) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        params = _random_params(rng)
        point = _random_point(rng)
        closed = geometry.christoffel(point, params)
        fd = christoffel_koszul_fd(point, params)
        worst = max(worst, float(np.max(np.abs(closed - fd))))
    flat_worst = 0.0
    for _ in range(20):
        params = MetricParams(epsilon=1.0, xi=float(rng.uniform(0.5, 100.0)))
        closed = geometry.christoffel(_random_point(rng), params)
        flat_worst = max(flat_worst, float(np.max(np.abs(closed))))
    passed = worst <= tol and flat_worst <= flat_tol
    return SuiteResult(
        "christoffel",
        passed,
        worst,
        tol,
        time.perf_counter() - t0,
        f"flat-case max {flat_worst:.3e} vs {flat_tol:.0e}",
    )


# ---------------------------------------------------------------------------
# metric inverse


def metric_inverse_suite(
    n_draws: int = 200, tol: float = 1e-9, seed: int = 0
) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    eye = np.eye(3)
    for _ in range(n_draws):
        params = _random_params(rng)
        point = _random_point(rng)
        g = geometry.metric_tensor(point, params)
        ginv = geometry.metric_inverse(point, params)
        # relative: the product error is scale-free, the solve error is not
        worst = max(worst, float(np.max(np.abs(g @ ginv - eye))))
        worst = max(
            worst,
            float(
                np.max(np.abs(ginv - np.linalg.inv(g))) / np.max(np.abs(ginv))
            ),
        )
    return SuiteResult(
        "inverse", worst <= tol, worst, tol, time.perf_counter() - t0
    )


# ---------------------------------------------------------------------------
# geodesic speed conservation


def geodesic_speed_suite(
    n_geodesics: int = 50,
    tol: float = 1e-5,
    flat_tol: float = 1e-8,
    seed: int = 0,
    integ: IntegratorConfig = SPEED_INTEGRATOR,
) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    fractions = np.array([0.25, 0.5, 0.75, 1.0])
    worst = 0.0
    for _ in range(n_geodesics):
        params = _random_params(rng)
        point = _random_point(rng)
        raw = rng.normal(size=3)
        speed0 = np.sqrt(geometry.metric_norm_sq(point, raw, params))
        vec = raw * (rng.uniform(0.5, 10.0) / speed0)
        base = np.sqrt(geometry.metric_norm_sq(point, vec, params))
        pts = np.broadcast_to(point, (4, 3))
        vecs = fractions[:, None] * vec[None, :]
        ends, end_vels = geometry.exp_map_with_velocity(pts, vecs, params, integ)
        speeds = np.sqrt(geometry.metric_norm_sq(ends, end_vels, params))
        worst = max(worst, float(np.max(np.abs(speeds / fractions - base) / base)))
    flat_worst = 0.0
    for _ in range(n_geodesics):
        params = MetricParams(epsilon=1.0, xi=float(rng.uniform(0.5, 100.0)))
        point = _random_point(rng)
        vec = rng.normal(size=3)
        end = geometry.exp_map(point, vec, params, integ)
        gap = end - (point + vec)
        gap[2] = geometry.angle_diff(end[2], point[2] + vec[2])
        flat_worst = max(flat_worst, float(np.max(np.abs(gap))))
    passed = worst <= tol and flat_worst <= flat_tol
    return SuiteResult(
        "speed",
        passed,
        worst,
        tol,
        time.perf_counter() - t0,
        f"flat-case max {flat_worst:.3e} vs {flat_tol:.0e}",
    )


# ---------------------------------------------------------------------------
# discretized energy vs dense quadrature (refinement corpus)

GAMMA_EPSILONS = (1.0, 0.8, 0.6)
GAMMA_HARMONICS = 4
GAMMA_XY_SCALE = 0.35
GAMMA_THETA_SCALE = 0.5


class SmoothCurve:
    """Random trigonometric-polynomial curve with analytic derivative.

    Coefficients of harmonic j decay like 1/j^2, keeping the corpus in
    the smooth regime where the discretization inequality is exact.
    """

    def __init__(self, rng):
        j = np.arange(1, GAMMA_HARMONICS + 1)
        decay = 1.0 / j ** 2
        self.base = np.array(
            [rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0, 2 * np.pi)]
        )
        scales = np.array([GAMMA_XY_SCALE, GAMMA_XY_SCALE, GAMMA_THETA_SCALE])
        self.cos_c = rng.normal(size=(3, GAMMA_HARMONICS)) * decay * scales[:, None]
        self.sin_c = rng.normal(size=(3, GAMMA_HARMONICS)) * decay * scales[:, None]
        self.omega = 2.0 * np.pi * j

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        phase = self.omega[None, :] * t[:, None]
        c, s = np.cos(phase), np.sin(phase)
        return self.base[None, :] + c @ self.cos_c.T + s @ self.sin_c.T

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        phase = self.omega[None, :] * t[:, None]
        dc = -self.omega[None, :] * np.sin(phase)
        ds = self.omega[None, :] * np.cos(phase)
        return dc @ self.cos_c.T + ds @ self.sin_c.T

    def dense_energy(self, params: MetricParams, n: int = 4097) -> float:
        t = np.linspace(0.0, 1.0, n)
        f = geometry.metric_norm_sq(self.eval(t), self.deriv(t), params)
        return float(simpson(f, x=t))


def discretization_suite(
    schemes=tuple(DiscretizationScheme),
    segment_counts=(2, 4, 8, 16),
    n_curves: int = 50,
    tol: float = 1e-6,
    mono_tol: float = 1e-9,
    seed: int = 0,
) -> SuiteResult:
    """Discretized energy <= dense energy + tol for every scheme and
    segment count, and the gap shrinks (weakly) under dyadic refinement."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_exceed = -np.inf
    worst_mono = -np.inf
    for c in range(n_curves):
        params = MetricParams(epsilon=GAMMA_EPSILONS[c % len(GAMMA_EPSILONS)], xi=1.0)
        smooth = SmoothCurve(rng)
        dense = smooth.dense_energy(params)
        for scheme in schemes:
            errors = []
            for k_n in segment_counts:
                tk = knots(k_n + 1)
                sampled = SampledCurve(tk, smooth.eval(tk))
                curve = sample_map(sampled, scheme, k_n + 1, params)
                disc = path_energy(curve, params)
                worst_exceed = max(worst_exceed, disc - dense)
                errors.append(dense - disc)
            steps = np.diff(errors)
            if len(steps):
                worst_mono = max(worst_mono, float(np.max(steps)))
    passed = worst_exceed <= tol and worst_mono <= mono_tol
    return SuiteResult(
        "gamma",
        passed,
        max(worst_exceed, 0.0),
        tol,
        time.perf_counter() - t0,
        f"worst refinement backstep {worst_mono:.3e} vs {mono_tol:.0e}",
    )


# ---------------------------------------------------------------------------
# forward/adjoint identity and linearity


def _random_measure(rng, n_atoms: int, with_amplitudes: bool) -> MeasureState:
    atoms = []
    for _ in range(n_atoms):
        k = int(rng.integers(3, 6))
        controls = np.column_stack(
            [
                rng.uniform(-0.8, 0.8, size=k),
                rng.uniform(-0.8, 0.8, size=k),
                rng.uniform(0, 2 * np.pi, size=k),
            ]
        )
        amps = rng.uniform(0.3, 1.5, size=k) if with_amplitudes else None
        curve = DiscreteCurve(DiscretizationScheme.BEZIER, controls, None, amps)
        atoms.append(Atom(float(rng.uniform(0.2, 2.0)), curve))
    return MeasureState(atoms)


def adjoint_suite(
    n_draws: int = 5,
    tol: float = 1e-10,
    lin_tol: float = 1e-12,
    seed: int = 0,
    n_frames: int = 5,
) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    grid = SensorGrid()
    times = np.linspace(0.0, 1.0, n_frames)
    worst = 0.0
    worst_lin = 0.0
    for d in range(n_draws):
        measure = _random_measure(rng, 2, with_amplitudes=(d % 2 == 1))
        q = rng.normal(size=(n_frames, grid.n_nodes))
        frames = forward_stack(measure, times, grid)
        lhs = float(np.sum(frames * q))
        rhs = certificate_pairing(Certificate(q, grid, 1.0), measure, times)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))

        other = _random_measure(rng, 2, with_amplitudes=(d % 2 == 1))
        a, b = 0.7, -1.3
        combo = MeasureState(
            [Atom(a * at.mass, at.curve.copy()) for at in measure.atoms]
            + [Atom(b * at.mass, at.curve.copy()) for at in other.atoms]
        )
        direct = forward_stack(combo, times, grid)
        linear = a * frames + b * forward_stack(other, times, grid)
        scale = float(np.max(np.abs(direct))) or 1.0
        worst_lin = max(
            worst_lin, float(np.max(np.abs(direct - linear))) / scale
        )
    passed = worst <= tol and worst_lin <= lin_tol
    return SuiteResult(
        "adjoint",
        passed,
        worst,
        tol,
        time.perf_counter() - t0,
        f"linearity max {worst_lin:.3e} vs {lin_tol:.0e}",
    )


# ---------------------------------------------------------------------------
# runner

SUITES = {
    "christoffel": christoffel_suite,
    "inverse": metric_inverse_suite,
    "speed": geodesic_speed_suite,
    "gamma": discretization_suite,
    "adjoint": adjoint_suite,
}


def run_suites(names=None, seed: int = 0, **overrides) -> list[SuiteResult]:
    """Run the named suites (all by default) with a shared seed.

    overrides are forwarded to every suite that accepts the keyword.
    """
    names = list(names) if names else list(SUITES)
    results = []
    for name in names:
        if name not in SUITES:
            raise ConfigError(
                f"unknown suite {name!r}; choose from {sorted(SUITES)}"
            )
        fn = SUITES[name]
        kwargs = {
            k: v for k, v in overrides.items() if k in fn.__code__.co_varnames
        }
        results.append(fn(seed=seed, **kwargs))
    return results
