"""Tests for the conditional-gradient solver loop and its building blocks."""

import numpy as np
import pytest

from rotolift import solver as S
from rotolift.curves import (
    DiscreteCurve,
    DiscretizationScheme,
    SampledCurve,
    eval_curve,
    sample_map,
)
from rotolift.energy import (
    Atom,
    EnergyConfig,
    MeasureState,
    curve_regularizer_weight,
    total_energy,
)
from rotolift.exceptions import ConfigError, NoDescentCandidate
from rotolift.geometry import IntegratorConfig, MetricParams
from rotolift.observation import (
    ObservationStack,
    SensorGrid,
    certificate_field,
    forward_stack,
    stack_times,
)


@pytest.fixture(scope="module")
def moving_setup():
    """Single source drifting across a coarse grid, observed in 5 frames."""
    grid = SensorGrid(n_side=32)
    times = stack_times(5)
    heading = np.arctan2(0.5, 1.0)
    controls = np.stack(
        [-0.5 + 1.0 * times, -0.2 + 0.5 * times, np.full_like(times, heading)],
        axis=-1,
    )
    curve = DiscreteCurve(DiscretizationScheme.POLYGONAL, controls)
    frames = forward_stack(MeasureState([Atom(1.0, curve)]), times, grid)
    stack = ObservationStack(times, frames, grid)
    return grid, times, controls, curve, stack


def planar_error(curve, controls, times, ecfg, integ):
    pts = eval_curve(curve, times, ecfg.metric, integ)
    return float(np.max(np.hypot(*(pts[:, :2] - controls[:, :2]).T)))


def test_solver_config_defaults_and_validation():
    cfg = S.SolverConfig()
    assert cfg.max_outer_iters == 10
    assert cfg.n_controls == 5
    assert cfg.scheme == DiscretizationScheme.BEZIER
    assert cfg.balanced is True
    assert cfg.seed == 0

    with pytest.raises(ConfigError):
        S.SolverConfig(max_outer_iters=0)
    with pytest.raises(ConfigError):
        S.SolverConfig(n_controls=1)
    with pytest.raises(ConfigError):
        S.SolverConfig(multistart=0)
    with pytest.raises(ConfigError):
        S.SolverConfig(inner_iters=0)
    with pytest.raises(ConfigError):
        S.SolverConfig(prune_threshold=1.0)
    with pytest.raises(ConfigError):
        S.SolverConfig(prune_threshold=-0.1)
    with pytest.raises(ConfigError):
        S.SolverConfig(merge_tol=-1.0)
    with pytest.raises(ConfigError):
        S.SolverConfig(optimizer="newton")


def test_stop_reason_constants():
    assert S.STOP_CERTIFICATE == "CertificateBound"
    assert S.STOP_MAX_ITERS == "MaxIters"
    assert S.STOP_STALLED == "Stalled"


def test_oracle_init_zero_residual_raises(moving_setup):
    grid, times, _, _, stack = moving_setup
    cert = certificate_field(np.zeros_like(stack.frames), grid, 1.0)
    with pytest.raises(NoDescentCandidate):
        S.oracle_init(cert, stack, S.SolverConfig(seed=0), EnergyConfig(),
                      np.random.default_rng(0))


def test_oracle_init_tracks_source(moving_setup):
    # exact-fit certificate: the init should land within one grid spacing
    grid, times, controls, _, stack = moving_setup
    scfg = S.SolverConfig(seed=0)
    ecfg = EnergyConfig()
    cert = certificate_field(-stack.frames, grid, 1.0)
    cand = S.oracle_init(cert, stack, scfg, ecfg, np.random.default_rng(5))
    err = planar_error(cand, controls, times, ecfg, scfg.integrator)
    assert err <= grid.spacing

    again = S.oracle_init(cert, stack, scfg, ecfg, np.random.default_rng(5))
    assert np.array_equal(cand.controls, again.controls)


def test_oracle_descend_improves_linear_score(moving_setup):
    grid, times, controls, _, stack = moving_setup
    scfg = S.SolverConfig(seed=0)
    ecfg = EnergyConfig()
    cert = certificate_field(-stack.frames, grid, 1.0)
    ctx = S._Context(stack, scfg, ecfg)

    def score(curve):
        vec = ctx.coder.pack(curve)
        return S._oracle_value_and_grad_linear(ctx, cert, vec, ctx.ball_bound)[0]

    start = S.oracle_init(cert, stack, scfg, ecfg, np.random.default_rng(5))
    offset = DiscreteCurve(start.scheme, start.controls + np.array([0.05, 0.05, 0.0]))
    out = S.oracle_descend(offset, cert, stack, scfg, ecfg, ctx)
    assert score(out) <= score(offset)
    assert planar_error(out, controls, times, ecfg, scfg.integrator) <= 1e-2

    # descending from a descended state must not find further progress
    out2 = S.oracle_descend(out, cert, stack, scfg, ecfg, ctx)
    assert score(out2) <= score(out) + 1e-6


def test_amplitude_step_matches_closed_form(moving_setup):
    grid, times, _, curve, stack = moving_setup
    ecfg = EnergyConfig()
    mass = S.amplitude_step([curve], stack, ecfg)
    assert mass.shape == (1,)

    phi = forward_stack(MeasureState([Atom(1.0, curve)]), times, grid)
    weight = curve_regularizer_weight(curve, ecfg)
    closed = (float(np.sum(phi * stack.frames)) - weight) / float(np.sum(phi * phi))
    assert mass[0] == pytest.approx(closed, rel=1e-10)

    # negligible regularization recovers the generating unit mass
    tiny = S.amplitude_step([curve], stack, EnergyConfig(beta=1e-12))
    assert abs(tiny[0] - 1.0) <= 1e-6


def test_amplitude_step_zero_frames(moving_setup):
    grid, times, _, curve, stack = moving_setup
    zero = ObservationStack(times, np.zeros_like(stack.frames), grid)
    mass = S.amplitude_step([curve], zero, EnergyConfig())
    assert np.all(mass == 0.0)


def test_amplitude_step_splits_duplicates(moving_setup):
    grid, times, _, curve, stack = moving_setup
    ecfg = EnergyConfig()
    single = S.amplitude_step([curve], stack, ecfg)
    dup = S.amplitude_step([curve, curve.copy()], stack, ecfg)
    assert dup.shape == (2,)
    assert np.all(dup >= 0.0)
    assert dup.sum() == pytest.approx(single[0], rel=1e-9)


def test_sliding_step_decreases_energy(moving_setup):
    grid, times, _, curve, stack = moving_setup
    scfg = S.SolverConfig(seed=0)
    ecfg = EnergyConfig()
    shifted = DiscreteCurve(curve.scheme, curve.controls + np.array([0.03, -0.02, 0.0]))
    measure = MeasureState([Atom(0.9, shifted)])

    e0 = total_energy(measure, stack, ecfg)
    slid, trace = S.sliding_step(measure, stack, scfg, ecfg)
    e1 = total_energy(slid, stack, ecfg)
    assert e1 < 0.1 * e0
    assert len(trace) == scfg.inner_iters + 1
    assert np.all(np.diff(trace) <= 1e-12)

    # already-optimized input: energy may only move by rounding noise
    slid2, _ = S.sliding_step(slid, stack, scfg, ecfg)
    e2 = total_energy(slid2, stack, ecfg)
    assert e2 <= e1 + 1e-9
    assert abs(e2 - e1) <= 1e-6


def test_sliding_step_geodesic_chaining():
    # lighter stack: chaining feasibility must survive the descent
    grid = SensorGrid(n_side=24)
    times = stack_times(5)
    heading = np.arctan2(0.5, 1.0)
    controls = np.stack(
        [-0.5 + 1.0 * times, -0.2 + 0.5 * times, np.full_like(times, heading)],
        axis=-1,
    )
    truth = DiscreteCurve(DiscretizationScheme.POLYGONAL, controls)
    frames = forward_stack(MeasureState([Atom(1.0, truth)]), times, grid)
    stack = ObservationStack(times, frames, grid)

    params = MetricParams(epsilon=0.5, xi=1.0)
    integ = IntegratorConfig(steps=16)
    ecfg = EnergyConfig(beta=1e-2, metric=params)
    scfg = S.SolverConfig(
        scheme=DiscretizationScheme.PIECEWISE_GEODESIC,
        n_controls=3,
        inner_iters=120,
        sasaki_lambda=50.0,
        integrator=integ,
        seed=0,
    )

    samples = SampledCurve(times, controls + np.array([0.04, -0.03, 0.1]))
    geo = sample_map(samples, DiscretizationScheme.PIECEWISE_GEODESIC, 3,
                     params=params, integ=integ)
    measure = MeasureState([Atom(0.9, geo)])

    e0 = total_energy(measure, stack, ecfg)
    out, trace = S.sliding_step(measure, stack, scfg, ecfg)
    assert total_energy(out, stack, ecfg) <= e0
    assert np.all(np.diff(trace) <= 1e-12)

    atom = out.atoms[0]
    gaps = S._chain_gaps(atom.curve.controls, atom.curve.velocities, params, integ)
    assert np.abs(gaps).max() <= 1e-2


def test_sasaki_energy_decomposition():
    rng = np.random.default_rng(3)
    params = MetricParams(epsilon=0.5, xi=2.0)
    integ = IntegratorConfig(steps=16)
    scfg = S.SolverConfig(scheme=DiscretizationScheme.PIECEWISE_GEODESIC,
                          n_controls=4, sasaki_lambda=10.0, integrator=integ, seed=0)
    ecfg = EnergyConfig(beta=0.02, metric=params)
    times = stack_times(6)

    points = rng.normal(scale=0.3, size=(4, 3))
    velocities = rng.normal(scale=0.5, size=(3, 3))

    value = S.sasaki_penalized_energy(points, velocities, None, times, scfg, ecfg)
    from rotolift.geometry import metric_norm_sq

    dt = 1.0 / 3.0
    kinetic = dt * float(np.sum(metric_norm_sq(points[:-1], velocities, params)))
    gaps = S._chain_gaps(points, velocities, params, integ)
    expected = ecfg.beta * kinetic + scfg.sasaki_lambda * float(np.sum(gaps**2))
    assert value == pytest.approx(expected, abs=1e-10)

    # perfectly chained controls contribute no penalty
    from rotolift.geometry import exp_map

    chained = [points[0]]
    for k in range(3):
        chained.append(exp_map(chained[-1], velocities[k], params, integ))
    chained = np.asarray(chained)
    flat = S._chain_gaps(chained, velocities, params, integ)
    assert np.abs(flat).max() <= 1e-10


def test_sasaki_energy_rejects_bad_velocity_shape():
    scfg = S.SolverConfig(seed=0)
    ecfg = EnergyConfig()
    points = np.zeros((4, 3))
    with pytest.raises(ConfigError):
        S.sasaki_penalized_energy(points, np.zeros((4, 3)), None,
                                  stack_times(5), scfg, ecfg)


def test_prune_rules(moving_setup):
    _, _, _, curve, _ = moving_setup
    measure = MeasureState([
        Atom(1.0, curve),
        Atom(1e-5, curve.copy()),
        Atom(0.0, curve.copy()),
    ])
    kept = S.prune(measure, 1e-3)
    assert [a.mass for a in kept.atoms] == [1.0]

    heavy = MeasureState([Atom(1.0, curve), Atom(0.5, curve.copy())])
    assert [a.mass for a in S.prune(heavy, 1e-3).atoms] == [1.0, 0.5]


def test_solve_zero_data_stops_immediately(moving_setup):
    grid, times, _, _, _ = moving_setup
    stack = ObservationStack(times, np.zeros((len(times), grid.n_nodes)), grid)
    report = S.solve(stack, S.SolverConfig(seed=0), EnergyConfig())
    assert report.stop_reason == S.STOP_CERTIFICATE
    assert report.measure.n_atoms == 0
    assert report.n_outer == 0
    assert report.energy_trace == [("init", 0.0)]
    assert report.certificate_trace == []


def test_solve_recovers_moving_source(moving_setup):
    grid, times, controls, _, stack = moving_setup
    scfg = S.SolverConfig(seed=0)
    ecfg = EnergyConfig()
    report = S.solve(stack, scfg, ecfg)

    assert report.stop_reason == S.STOP_CERTIFICATE
    assert report.measure.n_atoms == 1
    atom = report.measure.atoms[0]
    assert abs(atom.mass - 1.0) <= 1e-2
    assert planar_error(atom.curve, controls, times, ecfg, scfg.integrator) <= 1e-2

    # report bookkeeping
    assert np.array_equal(report.times, times)
    assert report.grid is grid
    assert report.solver_config is scfg
    assert report.energy_config is ecfg
    assert len(report.certificate_trace) == report.n_outer + 1
    assert set(report.wall_times) == {"oracle", "amplitude", "sliding"}
    phases = [p for p, _ in report.energy_trace]
    assert phases[0] == "init"
    assert {"amplitude", "sliding"} <= set(phases[1:])
    energies = [e for _, e in report.energy_trace]
    assert np.all(np.diff(energies) <= 1e-9)


def test_solve_is_deterministic(moving_setup):
    _, _, _, _, stack = moving_setup
    r1 = S.solve(stack, S.SolverConfig(seed=0), EnergyConfig())
    r2 = S.solve(stack, S.SolverConfig(seed=0), EnergyConfig())
    assert r1.energy_trace == r2.energy_trace
    assert r1.certificate_trace == r2.certificate_trace
    assert r1.measure.n_atoms == r2.measure.n_atoms
    for a, b in zip(r1.measure.atoms, r2.measure.atoms):
        assert a.mass == b.mass
        assert np.array_equal(a.curve.controls, b.curve.controls)
