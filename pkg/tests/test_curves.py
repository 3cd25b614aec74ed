"""Curve families: evaluation, velocities, sampling maps, path energy."""

import numpy as np
import pytest
from scipy.integrate import simpson

from rotolift import geometry as G
from rotolift.curves import (
    DiscreteCurve,
    DiscretizationScheme,
    SampledCurve,
    bernstein_matrix,
    de_casteljau,
    eval_bezier,
    eval_curve,
    eval_piecewise_geodesic,
    eval_polygonal,
    knots,
    path_energy,
    sample_curve,
    sample_map,
    unwrap_angles,
    velocity,
)
from rotolift.exceptions import ConfigError, InsufficientSamples
from rotolift.geometry import IntegratorConfig, MetricParams

POLY = DiscretizationScheme.POLYGONAL
BEZ = DiscretizationScheme.BEZIER
GEO = DiscretizationScheme.PIECEWISE_GEODESIC


def poly(controls, amps=None):
    return DiscreteCurve(POLY, np.asarray(controls, dtype=float), None, amps)


def bez(controls, amps=None):
    return DiscreteCurve(BEZ, np.asarray(controls, dtype=float), None, amps)


# ---------------------------------------------------------------------------
# construction and knots


def test_knots_are_uniform():
    assert np.allclose(knots(5), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(knots(2), [0.0, 1.0])


def test_discrete_curve_validation():
    with pytest.raises(ConfigError):
        poly([[0, 0, 0]])
    with pytest.raises(ConfigError):
        DiscreteCurve(GEO, np.zeros((3, 3)))  # geodesic needs velocities
    with pytest.raises(ConfigError):
        DiscreteCurve(GEO, np.zeros((3, 3)), np.zeros((3, 3)))  # must be (k-1, 3)
    with pytest.raises(ConfigError):
        DiscreteCurve(POLY, np.zeros((3, 3)), np.zeros((2, 3)))  # no velocities here
    with pytest.raises(ConfigError):
        poly([[0, 0, 0], [1, 0, 0]], amps=[1.0])
    c = poly([[0, 0, 6.5], [1, 0, 0]])
    assert c.controls[0, 2] == pytest.approx(6.5 - 2 * np.pi)
    assert c.n_controls == 2 and c.n_segments == 1


def test_sampled_curve_validation():
    with pytest.raises(ConfigError):
        SampledCurve(np.linspace(0, 1, 4), np.zeros((3, 3)))
    with pytest.raises(ConfigError):
        SampledCurve(np.linspace(0, 1, 3), np.zeros((3, 3)), np.zeros(2))


def test_unwrap_angles_branch():
    raw = np.array([0.1, 6.2, 0.3, 3.0])
    out = unwrap_angles(raw)
    assert out[0] == raw[0]
    steps = np.diff(out)
    assert np.all(steps > -np.pi) and np.all(steps <= np.pi)
    assert np.allclose(np.mod(out, 2 * np.pi), np.mod(raw, 2 * np.pi), atol=1e-12)


# ---------------------------------------------------------------------------
# evaluation


def test_polygonal_values():
    c = poly([[0, 0, 0], [1, 0, 0]])
    assert np.allclose(eval_polygonal(c, 0.5)[0], [0.5, 0.0, 0.0])
    assert np.allclose(eval_polygonal(c, 0.0)[0], c.controls[0])
    assert np.allclose(eval_polygonal(c, 1.0)[0], c.controls[-1])


def test_polygonal_interpolates_theta_on_shortest_arc():
    c = poly([[0, 0, 0.1], [0, 0, 6.2]])
    mid = eval_polygonal(c, 0.5)[0]
    # halfway along the short arc through zero, not the long way around
    want = G.wrap_angle(0.1 + 0.5 * G.angle_diff(6.2, 0.1))
    assert mid[2] == pytest.approx(want, abs=1e-12)
    assert mid[2] == pytest.approx(0.008407346410207156, abs=1e-12)


def test_bezier_values():
    c = bez([[0, 0, 0], [1, 0, 0]])
    assert np.allclose(eval_bezier(c, 0.5)[0], [0.5, 0.0, 0.0])
    c = bez([[0, 0, 0], [1, 2, 0], [2, 0, 0]])
    assert np.allclose(eval_bezier(c, 0.0)[0], c.controls[0])
    assert np.allclose(eval_bezier(c, 1.0)[0], c.controls[-1])
    assert np.allclose(eval_bezier(c, 0.5)[0], [1.0, 1.0, 0.0])


def test_bezier_degree_one_is_a_segment():
    c2 = [[0.2, -0.4, 6.2], [-0.1, 0.3, 0.4]]
    t = np.linspace(0, 1, 17)
    assert np.allclose(eval_bezier(bez(c2), t), eval_polygonal(poly(c2), t), atol=1e-12)


def test_de_casteljau_matches_bernstein_sum():
    rng = np.random.default_rng(11)
    t = rng.uniform(0, 1, size=100)
    for degree in range(1, 17):
        pts = rng.normal(size=(degree + 1, 3))
        direct = de_casteljau(pts, t)
        basis = bernstein_matrix(degree, t)
        assert np.max(np.abs(direct - basis @ pts)) <= 1e-12


def test_piecewise_geodesic_knots_and_flat_case():
    ctrl = np.array([[0, 0, 0.2], [0.5, 0.1, 0.4], [1.0, -0.2, 0.1]])
    vel = G.flat_log(ctrl[:-1], ctrl[1:])
    c = DiscreteCurve(GEO, ctrl, vel)
    params = MetricParams(1.0, 1.0)
    for k, t in enumerate(knots(3)):
        assert np.allclose(
            eval_piecewise_geodesic(c, t, params)[0], ctrl[k], atol=1e-10
        )
    t = np.linspace(0, 1, 33)
    flat = eval_piecewise_geodesic(c, t, params)
    straight = eval_polygonal(poly(ctrl), t)
    assert np.max(np.abs(flat - straight)) <= 1e-8


def test_piecewise_geodesic_midpoint_refinement():
    ctrl = np.array([[0, 0, 0.7], [0.6, 0.3, 1.1]])
    params = MetricParams(0.5, 1.0)
    vel, res = G.connecting_velocity(
        ctrl[:1], ctrl[1:], params, IntegratorConfig(steps=64)
    )
    assert res[0] <= 1e-8
    c = DiscreteCurve(GEO, ctrl, vel)
    mid = eval_piecewise_geodesic(c, 0.5, params, IntegratorConfig(steps=64))[0]
    by_hand = G.exp_map(ctrl[0], 0.5 * vel[0], params, IntegratorConfig(steps=64))
    assert np.allclose(mid, by_hand, atol=1e-12)
    finer = eval_piecewise_geodesic(c, 0.5, params, IntegratorConfig(steps=640))[0]
    assert np.max(np.abs(mid - finer)) <= 1e-6


def test_eval_curve_dispatch_and_geodesic_guard():
    c2 = [[0, 0, 0], [1, 0, 0]]
    t = np.array([0.25, 0.75])
    assert np.allclose(eval_curve(poly(c2), t), eval_polygonal(poly(c2), t))
    assert np.allclose(eval_curve(bez(c2), t), eval_bezier(bez(c2), t))
    geo = DiscreteCurve(GEO, np.array(c2, dtype=float), np.array([[1.0, 0, 0]]))
    with pytest.raises(ConfigError):
        eval_curve(geo, t)  # needs metric params


# ---------------------------------------------------------------------------
# velocity


def test_velocity_values():
    c = poly([[0, 0, 0], [1, 0, 0]])
    assert np.allclose(velocity(c, np.array([0.3]))[0], [1.0, 0.0, 0.0])
    ctrl = np.array([[0, 0, 0], [1, 2, 0], [2, 0, 0]], dtype=float)
    c = bez(ctrl)
    assert np.allclose(velocity(c, np.array([0.0]))[0], 2 * (ctrl[1] - ctrl[0]))
    assert np.allclose(velocity(c, np.array([0.5]))[0], [2.0, 0.0, 0.0])


def test_bezier_velocity_matches_finite_differences():
    rng = np.random.default_rng(12)
    ctrl = rng.uniform(-1, 1, size=(4, 3))
    c = bez(ctrl)
    h = 1e-6
    for t in (0.21, 0.5, 0.83):
        fd = (eval_bezier(c, t + h)[0] - eval_bezier(c, t - h)[0]) / (2 * h)
        v = velocity(c, np.array([t]))[0]
        assert np.max(np.abs(v - fd)) <= 1e-5


def test_geodesic_velocity_flat_chain_matches_polygonal():
    ctrl = np.array([[0, 0, 0.2], [0.5, 0.1, 0.4], [1.0, -0.2, 0.1]])
    vel = G.flat_log(ctrl[:-1], ctrl[1:])
    c = DiscreteCurve(GEO, ctrl, vel)
    params = MetricParams(1.0, 1.0)
    t = np.array([0.1, 0.3, 0.6, 0.9])
    got = velocity(c, t, params)
    want = velocity(poly(ctrl), t)
    assert np.max(np.abs(got - want)) <= 1e-8


# ---------------------------------------------------------------------------
# amplitude channel


def test_amplitude_blending():
    c = poly([[0, 0, 0], [1, 0, 0]], amps=[1.0, 3.0])
    pts, amps = sample_curve(c, np.array([0.0, 0.5, 1.0]))
    assert np.allclose(amps, [1.0, 2.0, 3.0])
    assert pts.shape == (3, 3)
    c = bez([[0, 0, 0], [1, 0, 0], [2, 0, 0]], amps=[0.0, 1.0, 0.0])
    _, amps = sample_curve(c, np.array([0.5]))
    assert amps[0] == pytest.approx(0.5)  # quadratic Bernstein bump
    _, none_amps = sample_curve(poly([[0, 0, 0], [1, 0, 0]]), np.array([0.5]))
    assert none_amps is None


# ---------------------------------------------------------------------------
# sampling map


def test_sample_map_is_a_projection_on_controls():
    rng = np.random.default_rng(13)
    ctrl = rng.uniform(-1, 1, size=(5, 3))
    ctrl[:, 2] = rng.uniform(0, 2 * np.pi, size=5)
    c = poly(ctrl)
    dense_t = np.linspace(0, 1, 401)
    sampled = SampledCurve(dense_t, eval_polygonal(c, dense_t))
    back = sample_map(sampled, POLY, 5)
    assert np.max(np.abs(back.controls[:, :2] - c.controls[:, :2])) <= 1e-12
    gap = G.angle_diff(back.controls[:, 2], c.controls[:, 2])
    assert np.max(np.abs(gap)) <= 1e-12


def test_sample_map_constant_curve():
    t = np.linspace(0, 1, 50)
    pts = np.tile([0.3, -0.2, 1.0], (50, 1))
    c = sample_map(SampledCurve(t, pts), BEZ, 4)
    assert np.allclose(c.controls, np.tile([0.3, -0.2, 1.0], (4, 1)))


def test_sample_map_refinement_improves_sup_distance():
    t = np.linspace(0, 1, 1000)
    spiral = np.stack(
        [
            0.6 * (1 - 0.5 * t) * np.cos(3 * np.pi * t),
            0.6 * (1 - 0.5 * t) * np.sin(3 * np.pi * t),
            np.mod(3 * np.pi * t + np.pi / 2, 2 * np.pi),
        ],
        axis=-1,
    )
    sampled = SampledCurve(t, spiral)

    def sup_dist(k_n):
        c = sample_map(sampled, POLY, k_n + 1)
        approx = eval_polygonal(c, t)
        gap = np.hypot(*(approx[:, :2] - spiral[:, :2]).T)
        ang = np.abs(G.angle_diff(approx[:, 2], spiral[:, 2]))
        return float(np.max(gap)), float(np.max(ang))

    d8, a8 = sup_dist(8)
    d16, a16 = sup_dist(16)
    assert d16 <= d8 and a16 <= a8


def test_sample_map_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        sample_map(SampledCurve(np.array([0.0]), np.zeros((1, 3))), POLY, 3)
    with pytest.raises(ConfigError):
        sample_map(
            SampledCurve(np.linspace(0, 1, 10), np.zeros((10, 3))), POLY, 1
        )


def test_sample_map_geodesic_velocities_chain():
    t = np.linspace(0, 1, 200)
    pts = np.stack(
        [0.8 * t - 0.4, 0.2 * np.sin(np.pi * t), np.mod(0.3 * t + 0.2, 2 * np.pi)],
        axis=-1,
    )
    params = MetricParams(0.5, 1.0)
    integ = IntegratorConfig(steps=64)
    c = sample_map(SampledCurve(t, pts), GEO, 5, params, integ)
    ends = np.stack(
        [
            G.exp_map(c.controls[k], c.velocities[k], params, integ)
            for k in range(c.n_segments)
        ]
    )
    gap = ends[:, :2] - c.controls[1:, :2]
    ang = G.angle_diff(ends[:, 2], c.controls[1:, 2])
    assert np.max(np.abs(gap)) <= 1e-6
    assert np.max(np.abs(ang)) <= 1e-6


# ---------------------------------------------------------------------------
# path energy


def test_path_energy_values():
    params = MetricParams(1.0, 1.0)
    assert path_energy(poly([[0, 0, 0], [1, 0, 0]]), params) == pytest.approx(
        1.0, abs=1e-12
    )
    sideways = poly([[0, 0, 0], [0, 1, 0]])
    assert path_energy(sideways, MetricParams(0.05, 1.0)) == pytest.approx(
        400.0, rel=1e-12
    )


def test_path_energy_exponent_one():
    params = MetricParams(0.05, 1.0)
    sideways = poly([[0, 0, 0], [0, 1, 0]])
    assert path_energy(sideways, params, exponent=1) == pytest.approx(20.0, rel=1e-12)


def test_path_energy_bezier_against_dense_quadrature():
    c = bez([[0, 0, 0], [1, 2, 0], [2, 0, 0]])
    params = MetricParams(1.0, 1.0)
    got = path_energy(c, params)
    # quadratic Bezier: gamma'(t) = 2[(1-t)(c1-c0) + t(c2-c1)]
    t = np.linspace(0, 1, 100001)
    dx = np.full_like(t, 2.0)
    dy = 2.0 * ((1 - t) * 2.0 + t * (-2.0))
    dense = np.trapezoid(dx ** 2 + dy ** 2, t)
    assert got == pytest.approx(dense, rel=1e-6)
    assert got == pytest.approx(28.0 / 3.0, rel=1e-10)


def test_path_energy_translation_invariance():
    rng = np.random.default_rng(14)
    ctrl = rng.uniform(-0.5, 0.5, size=(4, 3))
    params = MetricParams(0.3, 2.0)
    base = path_energy(bez(ctrl), params)
    shifted = ctrl + np.array([0.3, -0.7, 0.0])
    assert path_energy(bez(shifted), params) == pytest.approx(base, rel=1e-12)


def test_nested_polygonal_refinement_is_exact():
    rng = np.random.default_rng(15)
    ctrl = rng.uniform(-1, 1, size=(3, 3))
    ctrl[:, 2] = rng.uniform(0, 2 * np.pi, size=3)
    c = poly(ctrl)
    dense_t = np.linspace(0, 1, 801)
    sampled = SampledCurve(dense_t, eval_polygonal(c, dense_t))
    refined = sample_map(sampled, POLY, 5)  # 2 segments -> 4 segments
    a = eval_polygonal(c, dense_t)
    b = eval_polygonal(refined, dense_t)
    assert np.max(np.abs(a[:, :2] - b[:, :2])) <= 1e-12
    assert np.max(np.abs(G.angle_diff(a[:, 2], b[:, 2]))) <= 1e-12


def test_discretized_energy_below_dense_energy():
    # one spot check per scheme; the full random corpus runs in the
    # acceptance suite
    t = np.linspace(0, 1, 4097)
    pts = np.stack(
        [
            0.4 * np.sin(2 * np.pi * t),
            0.3 * np.cos(2 * np.pi * t) - 0.1,
            np.mod(0.8 * np.sin(2 * np.pi * t) + 1.0, 2 * np.pi),
        ],
        axis=-1,
    )
    dxy = np.stack(
        [
            0.4 * 2 * np.pi * np.cos(2 * np.pi * t),
            -0.3 * 2 * np.pi * np.sin(2 * np.pi * t),
            0.8 * 2 * np.pi * np.cos(2 * np.pi * t),
        ],
        axis=-1,
    )
    params = MetricParams(0.8, 1.0)
    dense = float(simpson(G.metric_norm_sq(pts, dxy, params), x=t))
    sampled = SampledCurve(t, pts)
    for scheme in (POLY, BEZ):
        for k_n in (4, 8):
            disc = path_energy(sample_map(sampled, scheme, k_n + 1), params)
            assert disc <= dense + 1e-6
