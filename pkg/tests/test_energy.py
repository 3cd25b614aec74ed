"""Objective pieces: data term, regularizer, total energy, ball bound."""

import numpy as np
import pytest

from rotolift.curves import DiscreteCurve, DiscretizationScheme
from rotolift.energy import (
    Atom,
    EnergyConfig,
    MeasureState,
    curve_regularizer_weight,
    data_term,
    fw_ball_bound,
    regularizer,
    residual_data_term,
    total_energy,
)
from rotolift.exceptions import ConfigError, NegativeMass
from rotolift.geometry import MetricParams
from rotolift.observation import (
    ObservationStack,
    SensorGrid,
    forward_stack,
    stack_times,
)

POLY = DiscretizationScheme.POLYGONAL
BEZ = DiscretizationScheme.BEZIER


def poly_atom(controls, mass=1.0, amps=None):
    return Atom(mass, DiscreteCurve(POLY, np.asarray(controls, dtype=float), None, amps))


def small_stack(measure, n_frames=5, n_side=24):
    grid = SensorGrid(n_side=n_side)
    times = stack_times(n_frames)
    frames = forward_stack(measure, times, grid)
    return ObservationStack(times, frames, grid)


def random_measure(rng, n_atoms=2):
    atoms = []
    for _ in range(n_atoms):
        ctrl = np.column_stack(
            [rng.uniform(-0.7, 0.7, 3), rng.uniform(-0.7, 0.7, 3), rng.uniform(0, 6, 3)]
        )
        atoms.append(Atom(float(rng.uniform(0.3, 1.5)), DiscreteCurve(BEZ, ctrl)))
    return MeasureState(atoms)


# ---------------------------------------------------------------------------
# config and state types


def test_energy_config_validation():
    with pytest.raises(ConfigError):
        EnergyConfig(beta=0.0)
    with pytest.raises(ConfigError):
        EnergyConfig(zeta=-0.1)
    with pytest.raises(ConfigError):
        EnergyConfig(alpha_mass=-1.0)
    with pytest.raises(ConfigError):
        EnergyConfig(energy_exponent=3)
    with pytest.raises(ConfigError):
        EnergyConfig(quad_nodes=0)


def test_measure_state_helpers():
    m = MeasureState([poly_atom([[0, 0, 0], [1, 0, 0]], mass=0.4),
                      poly_atom([[0, 1, 0], [1, 1, 0]], mass=0.6)])
    assert m.n_atoms == 2
    assert m.total_mass() == pytest.approx(1.0)
    c = m.copy()
    c.atoms[0].mass = 99.0
    c.atoms[0].curve.controls[0, 0] = 99.0
    assert m.atoms[0].mass == 0.4
    assert m.atoms[0].curve.controls[0, 0] == 0.0


def test_negative_mass_detection():
    m = MeasureState([poly_atom([[0, 0, 0], [1, 0, 0]], mass=-0.1)])
    with pytest.raises(NegativeMass):
        m.validate_masses(strict=True)
    m.validate_masses(strict=False)  # tolerated in non-strict mode
    with pytest.raises(ConfigError):
        Atom(np.nan, m.atoms[0].curve)


# ---------------------------------------------------------------------------
# data term


def test_data_term_exact_fit_is_zero():
    m = MeasureState([poly_atom([[-0.3, 0.2, 0.1], [0.4, -0.1, 0.3]])])
    stack = small_stack(m)
    assert data_term(m, stack, EnergyConfig()) == 0.0


def test_data_term_zero_measure():
    m = MeasureState([poly_atom([[-0.3, 0.2, 0.1], [0.4, -0.1, 0.3]])])
    stack = small_stack(m)
    empty = MeasureState([])
    norms = np.linalg.norm(stack.frames, axis=1)
    squared = data_term(empty, stack, EnergyConfig(data_squared=True))
    assert squared == pytest.approx(0.5 * float(np.sum(norms ** 2)), rel=1e-12)
    plain = data_term(empty, stack, EnergyConfig(data_squared=False))
    assert plain == pytest.approx(float(np.sum(norms)), rel=1e-12)


def test_data_term_matches_brute_force():
    rng = np.random.default_rng(31)
    truth = random_measure(rng)
    stack = small_stack(truth)
    other = random_measure(rng)
    cfg = EnergyConfig()
    got = data_term(other, stack, cfg)
    model = forward_stack(other, stack.times, stack.grid, cfg.metric)
    want = sum(
        0.5 * float(np.linalg.norm(model[i] - stack.frames[i]) ** 2)
        for i in range(stack.n_frames)
    )
    assert got == pytest.approx(want, rel=1e-12)
    assert residual_data_term(model - stack.frames, cfg) == pytest.approx(
        want, rel=1e-12
    )


# ---------------------------------------------------------------------------
# regularizer


def test_regularizer_empty_and_static():
    cfg = EnergyConfig(beta=1e-3)
    assert regularizer(MeasureState([]), cfg) == 0.0
    static = MeasureState([poly_atom([[0.3, 0.3, 0.0], [0.3, 0.3, 0.0]])])
    assert regularizer(static, cfg) == pytest.approx(0.0, abs=1e-15)


def test_regularizer_unit_segment():
    cfg = EnergyConfig(beta=1e-3, metric=MetricParams(1.0, 1.0))
    seg = MeasureState([poly_atom([[0, 0, 0], [1, 0, 0]])])
    assert regularizer(seg, cfg) == pytest.approx(1e-3, rel=1e-12)
    assert curve_regularizer_weight(seg.atoms[0].curve, cfg) == pytest.approx(
        1e-3, rel=1e-12
    )


def test_regularizer_alpha_and_mass_homogeneity():
    cfg = EnergyConfig(beta=1e-3, alpha_mass=0.7)
    static = MeasureState([poly_atom([[0.1, 0, 0], [0.1, 0, 0]], mass=2.0)])
    assert regularizer(static, cfg) == pytest.approx(1.4, rel=1e-12)

    rng = np.random.default_rng(32)
    m = random_measure(rng)
    base = regularizer(m, EnergyConfig(beta=0.02))
    doubled = MeasureState([Atom(2 * a.mass, a.curve.copy()) for a in m.atoms])
    assert regularizer(doubled, EnergyConfig(beta=0.02)) == pytest.approx(
        2 * base, rel=1e-12
    )


def test_regularizer_amplitude_penalty():
    cfg = EnergyConfig(beta=1e-3, zeta=0.1)
    static = poly_atom([[0.1, 0, 0], [0.1, 0, 0]], mass=3.0, amps=[1.0, 2.0])
    # zeta * sum(a^2) is not mass weighted; the path term is zero here
    assert regularizer(MeasureState([static]), cfg) == pytest.approx(0.5, rel=1e-12)
    no_zeta = EnergyConfig(beta=1e-3, zeta=0.0)
    assert regularizer(MeasureState([static]), no_zeta) == pytest.approx(0.0, abs=1e-15)


def test_regularizer_flat_case_is_euclidean_kinetic_energy():
    ctrl = np.array([[0, 0, 0.4], [1, 2, 0.4], [2, 0, 0.4]], dtype=float)
    atom = Atom(1.0, DiscreteCurve(BEZ, ctrl))
    cfg = EnergyConfig(beta=1.0, metric=MetricParams(1.0, 1.0))
    # constant heading, so the lifted speed is the planar speed;
    # quadratic Bezier kinetic energy has the closed form 28/3
    assert regularizer(MeasureState([atom]), cfg) == pytest.approx(
        28.0 / 3.0, abs=1e-8
    )


# ---------------------------------------------------------------------------
# total energy and ball bound


def test_total_energy_zero_measure_zero_data():
    grid = SensorGrid(n_side=8)
    stack = ObservationStack(stack_times(3), np.zeros((3, 64)), grid)
    assert total_energy(MeasureState([]), stack, EnergyConfig()) == 0.0


def test_total_energy_decomposition():
    rng = np.random.default_rng(33)
    truth = random_measure(rng)
    stack = small_stack(truth)
    state = random_measure(rng)
    cfg = EnergyConfig(beta=0.01, zeta=0.0)
    total = total_energy(state, stack, cfg)
    parts = data_term(state, stack, cfg) + regularizer(state, cfg)
    assert total == pytest.approx(parts, rel=1e-12)


def test_total_energy_exact_fit_is_the_regularizer():
    m = MeasureState([poly_atom([[-0.3, 0.2, 0.1], [0.4, -0.1, 0.1]])])
    stack = small_stack(m)
    cfg = EnergyConfig(beta=1e-6)
    assert total_energy(m, stack, cfg) == pytest.approx(
        regularizer(m, cfg), rel=1e-12
    )


def test_fw_ball_bound():
    assert fw_ball_bound(np.array([[1.0]]), 0.5) == pytest.approx(1.0)
    assert fw_ball_bound(np.zeros((3, 4)), 0.2) == 0.0
    rng = np.random.default_rng(34)
    frames = rng.normal(size=(5, 16))
    brute = np.sqrt(float(np.sum(frames ** 2)))
    assert fw_ball_bound(frames, 2.0) == pytest.approx(brute / 4.0, rel=1e-12)
    with pytest.raises(ConfigError):
        fw_ball_bound(frames, 0.0)
