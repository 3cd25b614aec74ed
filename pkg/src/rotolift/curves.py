"""Discrete curve families on roto-translation space and their energy.

Three discretizations share one container: polygonal chains, Bezier
curves (de Casteljau evaluation, angular controls blended along an
unwrapped branch), and piecewise-geodesic curves that carry an explicit
velocity per segment.  A curve with k controls has k-1 segments and
uniform knots j/(k-1).

The path energy is the time integral of the squared (or plain, for
exponent 1) metric norm of the velocity, by composite Gauss-Legendre
quadrature with a fixed number of nodes per segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import comb

import numpy as np

from . import geometry
from .exceptions import ConfigError, InsufficientSamples, IntegrationDiverged
from .geometry import MetricParams, IntegratorConfig


class DiscretizationScheme(Enum):
    POLYGONAL = "polygonal"
    BEZIER = "bezier"
    PIECEWISE_GEODESIC = "geodesic"


def knots(n_controls: int):
    """Uniform knot vector of a curve with n_controls controls."""
    return np.linspace(0.0, 1.0, n_controls)


def unwrap_angles(theta):
    """Rebase a sequence of angles onto a continuous branch.

    Consecutive increments are taken along the shortest arc, so the
    output starts at theta[0] and never jumps by more than pi.
    """
    theta = np.asarray(theta, dtype=float)
    steps = geometry.angle_diff(theta[1:], theta[:-1])
    return np.concatenate([theta[:1], theta[0] + np.cumsum(steps)])


@dataclass
class DiscreteCurve:
    """A discretized trajectory in R^2 x S^1.

    controls has shape (k, 3) with k >= 2 and theta wrapped to [0, 2*pi);
    velocities (k-1, 3) are present exactly for the piecewise-geodesic
    scheme; amplitudes (k,) optionally carry a per-control intensity
    channel blended with the same scheme.
    """

    scheme: DiscretizationScheme
    controls: np.ndarray
    velocities: np.ndarray | None = None
    amplitudes: np.ndarray | None = None

    def __post_init__(self):
        self.controls = np.array(self.controls, dtype=float)
        if self.controls.ndim != 2 or self.controls.shape[1] != 3:
            raise ConfigError(f"controls must be (k, 3), got {self.controls.shape}")
        if len(self.controls) < 2:
            raise ConfigError("a curve needs at least 2 controls")
        if not np.all(np.isfinite(self.controls)):
            raise ConfigError("controls must be finite")
        self.controls[:, 2] = geometry.wrap_angle(self.controls[:, 2])
        geodesic = self.scheme is DiscretizationScheme.PIECEWISE_GEODESIC
        if geodesic:
            if self.velocities is None:
                raise ConfigError("piecewise-geodesic curves need velocities")
            self.velocities = np.array(self.velocities, dtype=float)
            if self.velocities.shape != (len(self.controls) - 1, 3):
                raise ConfigError(
                    f"velocities must be (k-1, 3), got {self.velocities.shape}"
                )
            if not np.all(np.isfinite(self.velocities)):
                raise ConfigError("velocities must be finite")
        elif self.velocities is not None:
            raise ConfigError(f"{self.scheme.value} curves carry no velocities")
        if self.amplitudes is not None:
            self.amplitudes = np.array(self.amplitudes, dtype=float)
            if self.amplitudes.shape != (len(self.controls),):
                raise ConfigError(
                    f"amplitudes must be (k,), got {self.amplitudes.shape}"
                )
            if not np.all(np.isfinite(self.amplitudes)):
                raise ConfigError("amplitudes must be finite")

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def n_segments(self) -> int:
        return len(self.controls) - 1

    def copy(self) -> "DiscreteCurve":
        return DiscreteCurve(
            self.scheme,
            self.controls.copy(),
            None if self.velocities is None else self.velocities.copy(),
            None if self.amplitudes is None else self.amplitudes.copy(),
        )


@dataclass
class SampledCurve:
    """A densely sampled trajectory: times (m,), points (m, 3) and an
    optional amplitude channel (m,)."""

    times: np.ndarray
    points: np.ndarray
    amplitudes: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape != (len(self.times), 3):
            raise ConfigError("points must be (m, 3) matching times")
        if self.amplitudes is not None:
            self.amplitudes = np.asarray(self.amplitudes, dtype=float)
            if self.amplitudes.shape != (len(self.times),):
                raise ConfigError("amplitudes must match times")


def bernstein_matrix(degree: int, t):
    """Bernstein basis values, shape (len(t), degree + 1)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    cols = [
        comb(degree, j) * t ** j * (1.0 - t) ** (degree - j)
        for j in range(degree + 1)
    ]
    return np.stack(cols, axis=-1)


def de_casteljau(points, t):
    """Evaluate the Bezier curve with the given control points at t.

    points is (k, d); returns (len(t), d).  Matches the Bernstein-sum
    evaluation to machine precision but is numerically the stabler
    recurrence.
    """
    points = np.asarray(points, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))[:, None, None]
    b = np.broadcast_to(points, (t.shape[0],) + points.shape).copy()
    n = points.shape[0]
    for r in range(1, n):
        b[:, : n - r] = (1.0 - t) * b[:, : n - r] + t * b[:, 1 : n - r + 1]
    return b[:, 0, :]


def _segment_index(t, n_segments):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.minimum((t * n_segments).astype(int), n_segments - 1)
    idx = np.maximum(idx, 0)
    local = t * n_segments - idx
    return idx, local


def _unwrapped_controls(curve: DiscreteCurve):
    ctrl = curve.controls.copy()
    ctrl[:, 2] = unwrap_angles(ctrl[:, 2])
    return ctrl


def eval_polygonal(curve: DiscreteCurve, t):
    ctrl = _unwrapped_controls(curve)
    idx, s = _segment_index(t, curve.n_segments)
    p = ctrl[idx] + s[:, None] * (ctrl[idx + 1] - ctrl[idx])
    p[:, 2] = geometry.wrap_angle(p[:, 2])
    return p


def eval_bezier(curve: DiscreteCurve, t):
    p = de_casteljau(_unwrapped_controls(curve), t)
    p[:, 2] = geometry.wrap_angle(p[:, 2])
    return p


def eval_piecewise_geodesic(
    curve: DiscreteCurve,
    t,
    params: MetricParams,
    integ: IntegratorConfig | None = None,
):
    idx, s = _segment_index(t, curve.n_segments)
    starts = curve.controls[idx]
    vecs = s[:, None] * curve.velocities[idx]
    return geometry.exp_map(starts, vecs, params, integ)


def eval_curve(
    curve: DiscreteCurve,
    t,
    params: MetricParams | None = None,
    integ: IntegratorConfig | None = None,
):
    """Evaluate a curve at parameter values t in [0, 1]; returns (m, 3).

    The metric params are required only for the piecewise-geodesic
    scheme (its segments are integrated with exp_map).
    """
    if curve.scheme is DiscretizationScheme.POLYGONAL:
        return eval_polygonal(curve, t)
    if curve.scheme is DiscretizationScheme.BEZIER:
        return eval_bezier(curve, t)
    if params is None:
        raise ConfigError("piecewise-geodesic evaluation needs metric params")
    return eval_piecewise_geodesic(curve, t, params, integ)


def eval_amplitude(curve: DiscreteCurve, t):
    """Evaluate the amplitude channel with the curve's own blending.

    Piecewise-geodesic curves blend amplitudes linearly per segment (the
    channel is Euclidean).  Returns None when the curve carries none.
    """
    if curve.amplitudes is None:
        return None
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if curve.scheme is DiscretizationScheme.BEZIER:
        return de_casteljau(curve.amplitudes[:, None], t)[:, 0]
    idx, s = _segment_index(t, curve.n_segments)
    a = curve.amplitudes
    return a[idx] + s * (a[idx + 1] - a[idx])


def _bezier_velocity_controls(ctrl):
    n = len(ctrl) - 1
    return n * (ctrl[1:] - ctrl[:-1])


def velocity(
    curve: DiscreteCurve,
    t,
    params: MetricParams | None = None,
    integ: IntegratorConfig | None = None,
):
    """Curve velocity at parameter values t; returns (m, 3).

    At knots the right-sided segment is used (left-sided at t = 1).
    """
    m = curve.n_segments
    if curve.scheme is DiscretizationScheme.POLYGONAL:
        ctrl = _unwrapped_controls(curve)
        idx, _ = _segment_index(t, m)
        return m * (ctrl[idx + 1] - ctrl[idx])
    if curve.scheme is DiscretizationScheme.BEZIER:
        diff = _bezier_velocity_controls(_unwrapped_controls(curve))
        return de_casteljau(diff, t)
    if params is None:
        raise ConfigError("piecewise-geodesic velocity needs metric params")
    idx, s = _segment_index(t, m)
    starts = curve.controls[idx]
    vecs = s[:, None] * curve.velocities[idx]
    _, end_vel = geometry.exp_map_with_velocity(starts, vecs, params, integ)
    # gamma_v(s) has velocity (terminal velocity of the s*v run)/s; the
    # curve parameter runs m times faster than the segment parameter.
    out = np.where(s[:, None] > 0.0, end_vel / np.where(s == 0.0, 1.0, s)[:, None],
                   curve.velocities[idx])
    return m * out


def sample_curve(
    curve: DiscreteCurve,
    t,
    params: MetricParams | None = None,
    integ: IntegratorConfig | None = None,
):
    """Positions and amplitude channel at t: (points (m, 3), amps or None)."""
    return eval_curve(curve, t, params, integ), eval_amplitude(curve, t)


def sample_map(
    sampled: SampledCurve,
    scheme: DiscretizationScheme,
    n_controls: int,
    params: MetricParams | None = None,
    integ: IntegratorConfig | None = None,
    shooting_tol: float = 1e-8,
):
    """Project a densely sampled curve onto a discrete family.

    Controls are the sampled values at the uniform knots (angles
    interpolated on an unwrapped branch).  For the piecewise-geodesic
    scheme the segment velocities are the flat differences when no
    metric is given, and are refined by Gauss-Newton shooting to the
    connecting geodesic velocities when params are supplied.
    """
    if n_controls < 2:
        raise ConfigError("n_controls must be >= 2")
    if len(sampled.times) < max(2, n_controls):
        raise InsufficientSamples(
            f"{len(sampled.times)} samples cannot support {n_controls} controls"
        )
    tk = knots(n_controls)
    xs = np.interp(tk, sampled.times, sampled.points[:, 0])
    ys = np.interp(tk, sampled.times, sampled.points[:, 1])
    branch = unwrap_angles(sampled.points[:, 2])
    ths = np.interp(tk, sampled.times, branch)
    controls = np.stack([xs, ys, ths], axis=-1)
    amps = None
    if sampled.amplitudes is not None:
        amps = np.interp(tk, sampled.times, sampled.amplitudes)
    velocities = None
    if scheme is DiscretizationScheme.PIECEWISE_GEODESIC:
        if params is None:
            velocities = geometry.flat_log(controls[:-1], controls[1:])
        else:
            # shooting is wrap-invariant (theta enters through sin/cos
            # and shortest-arc gaps), so the unwrapped rows can be used
            velocities, residual = geometry.connecting_velocity(
                controls[:-1], controls[1:], params, integ
            )
            worst = float(np.max(residual))
            if worst > shooting_tol:
                raise IntegrationDiverged(
                    f"connecting-velocity shooting stalled at residual {worst:.3g}"
                )
    return DiscreteCurve(scheme, controls, velocities, amps)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _gl_nodes(quad_nodes):
    if quad_nodes == 8:
        return _GL_NODES, _GL_WEIGHTS
    return np.polynomial.legendre.leggauss(quad_nodes)


def path_energy(
    curve: DiscreteCurve,
    params: MetricParams,
    quad_nodes: int = 8,
    exponent: int = 2,
    integ: IntegratorConfig | None = None,
):
    """Integral over [0, 1] of the metric velocity norm to the given
    exponent (2 by default, 1 for plain length), by composite
    Gauss-Legendre quadrature with quad_nodes nodes per segment."""
    if exponent not in (1, 2):
        raise ConfigError(f"exponent must be 1 or 2, got {exponent}")
    nodes, weights = _gl_nodes(quad_nodes)
    m = curve.n_segments
    # quadrature nodes of all segments, in curve parameter
    t = ((np.arange(m)[:, None] + 0.5 * (nodes + 1.0)[None, :]) / m).ravel()
    pts = eval_curve(curve, t, params, integ)
    vel = velocity(curve, t, params, integ)
    f = geometry.metric_norm_sq(pts, vel, params)
    if exponent == 1:
        f = np.sqrt(f)
    return float((0.5 / m) * np.sum(f.reshape(m, -1) @ weights))
