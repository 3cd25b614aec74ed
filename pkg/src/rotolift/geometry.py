"""Riemannian geometry of the roto-translation space R^2 x S^1.

Points are length-3 arrays (x, y, theta) with theta kept in [0, 2*pi).
The metric is the relaxed Reeds-Shepp metric: motion orthogonal to the
heading theta is penalized by 1/epsilon^2 and turning by xi^2.  All
operations broadcast over leading axes, so batches of points/vectors are
first-class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, IntegrationDiverged

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Map angles to the canonical branch [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


def angle_diff(a, b):
    """Shortest signed angular difference a - b, in (-pi, pi]."""
    return np.pi - np.mod(np.pi - (np.asarray(a) - np.asarray(b)), TWO_PI)


def manifold_point(x, y, theta):
    """Build a point array with theta wrapped; rejects non-finite input."""
    p = np.array([x, y, theta], dtype=float)
    if not np.all(np.isfinite(p)):
        raise ConfigError(f"non-finite manifold point {p}")
    p[2] = wrap_angle(p[2])
    return p


def tangent_vector(dx, dy, dtheta):
    """Build a tangent vector array; rejects non-finite input."""
    v = np.array([dx, dy, dtheta], dtype=float)
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"non-finite tangent vector {v}")
    return v


@dataclass(frozen=True)
class MetricParams:
    """Anisotropy parameters of the relaxed Reeds-Shepp metric.

    epsilon in (0, 1] relaxes the sideways-motion penalty (1/epsilon^2);
    xi > 0 weights the turning cost (xi^2).
    """

    epsilon: float = 1.0
    xi: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ConfigError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not (self.xi > 0.0):
            raise ConfigError(f"xi must be positive, got {self.xi}")


def metric_tensor(point, params: MetricParams):
    """Metric tensor g at a point, shape (..., 3, 3).

    The planar block rotates with theta; the theta-theta entry is exactly
    xi^2 and the planar-angular couplings are exactly zero.
    """
    theta = np.asarray(point, dtype=float)[..., 2]
    c, s = np.cos(theta), np.sin(theta)
    ie2 = params.epsilon ** -2
    g = np.zeros(theta.shape + (3, 3))
    g[..., 0, 0] = c * c + ie2 * s * s
    g[..., 1, 1] = s * s + ie2 * c * c
    g[..., 0, 1] = g[..., 1, 0] = (1.0 - ie2) * c * s
    g[..., 2, 2] = params.xi ** 2
    return g


def metric_inverse(point, params: MetricParams):
    """Closed-form inverse metric, shape (..., 3, 3)."""
    theta = np.asarray(point, dtype=float)[..., 2]
    c, s = np.cos(theta), np.sin(theta)
    e2 = params.epsilon ** 2
    g = np.zeros(theta.shape + (3, 3))
    g[..., 0, 0] = c * c + e2 * s * s
    g[..., 1, 1] = s * s + e2 * c * c
    g[..., 0, 1] = g[..., 1, 0] = (1.0 - e2) * c * s
    g[..., 2, 2] = params.xi ** -2
    return g


def metric_norm_sq(point, vec, params: MetricParams):
    """Squared metric norm <v, v>_g, broadcasting over leading axes.

    Evaluated in the frame adapted to the heading: component along
    e_theta costs 1, orthogonal costs 1/epsilon^2, angular costs xi^2.
    """
    theta = np.asarray(point, dtype=float)[..., 2]
    v = np.asarray(vec, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    along = c * v[..., 0] + s * v[..., 1]
    across = -s * v[..., 0] + c * v[..., 1]
    return (
        along * along
        + params.epsilon ** -2 * across * across
        + params.xi ** 2 * v[..., 2] ** 2
    )


def _symbol_families(theta, params: MetricParams):
    """The seven nonzero Christoffel families; all depend on theta only."""
    c, s = np.cos(theta), np.sin(theta)
    e2 = params.epsilon ** 2
    e4 = e2 * e2
    xi2 = params.xi ** 2
    cs = c * s
    cc = c * c
    g_x_xt = -(e4 - 1.0) * cs / (2.0 * e2)
    g_x_yt = -(e4 - (e4 - 1.0) * cc - e2) / (2.0 * e2)
    g_y_xt = ((e4 - 1.0) * cc - e2 + 1.0) / (2.0 * e2)
    g_y_yt = (e4 - 1.0) * cs / (2.0 * e2)
    g_t_xx = (e2 - 1.0) * cs / (e2 * xi2)
    g_t_xy = -(2.0 * (e2 - 1.0) * cc - e2 + 1.0) / (2.0 * e2 * xi2)
    g_t_yy = -(e2 - 1.0) * cs / (e2 * xi2)
    return g_x_xt, g_x_yt, g_y_xt, g_y_yt, g_t_xx, g_t_xy, g_t_yy


def christoffel(point, params: MetricParams):
    """Levi-Civita symbols Gamma[k][i][j], shape (..., 3, 3, 3).

    Symmetric in (i, j); every family vanishes identically at epsilon=1
    and there are no theta-theta symbols.
    """
    theta = np.asarray(point, dtype=float)[..., 2]
    fx_xt, fx_yt, fy_xt, fy_yt, ft_xx, ft_xy, ft_yy = _symbol_families(theta, params)
    G = np.zeros(np.shape(theta) + (3, 3, 3))
    G[..., 0, 0, 2] = G[..., 0, 2, 0] = fx_xt
    G[..., 0, 1, 2] = G[..., 0, 2, 1] = fx_yt
    G[..., 1, 0, 2] = G[..., 1, 2, 0] = fy_xt
    G[..., 1, 1, 2] = G[..., 1, 2, 1] = fy_yt
    G[..., 2, 0, 0] = ft_xx
    G[..., 2, 0, 1] = G[..., 2, 1, 0] = ft_xy
    G[..., 2, 1, 1] = ft_yy
    return G


def geodesic_step(state, params: MetricParams):
    """Right-hand side of the geodesic equation.

    state stacks position and velocity, shape (..., 6).  Returns the pair
    (velocity, acceleration) with acc^k = -Gamma^k_ij v^i v^j, contracted
    in closed form for speed.
    """
    state = np.asarray(state, dtype=float)
    theta = state[..., 2]
    vx, vy, vt = state[..., 3], state[..., 4], state[..., 5]
    fx_xt, fx_yt, fy_xt, fy_yt, ft_xx, ft_xy, ft_yy = _symbol_families(theta, params)
    ax = -2.0 * fx_xt * vx * vt - 2.0 * fx_yt * vy * vt
    ay = -2.0 * fy_xt * vx * vt - 2.0 * fy_yt * vy * vt
    at = -ft_xx * vx * vx - 2.0 * ft_xy * vx * vy - ft_yy * vy * vy
    return state[..., 3:], np.stack([ax, ay, at], axis=-1)


@dataclass(frozen=True)
class IntegratorConfig:
    """Geodesic integrator selection.

    method "rk4" is a fixed-step classical Runge-Kutta with `steps` steps
    per unit time (deterministic, the default); "dp54" is the adaptive
    embedded Dormand-Prince 5(4) pair with tolerance `tol`.
    """

    method: str = "rk4"
    steps: int = 32
    tol: float = 1e-8
    diverge_bound: float = 1e6

    def __post_init__(self):
        if self.method not in ("rk4", "dp54"):
            raise ConfigError(f"unknown integrator method {self.method!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not (self.tol > 0.0):
            raise ConfigError("tol must be positive")
        if not (self.diverge_bound > 0.0):
            raise ConfigError("diverge_bound must be positive")


DEFAULT_INTEGRATOR = IntegratorConfig()


def _rhs6(state, params):
    vel, acc = geodesic_step(state, params)
    return np.concatenate([vel, acc], axis=-1)


def _rk4_flow(state, params, steps):
    h = 1.0 / steps
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            k1 = _rhs6(state, params)
            k2 = _rhs6(state + 0.5 * h * k1, params)
            k3 = _rhs6(state + 0.5 * h * k2, params)
            k4 = _rhs6(state + h * k3, params)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return state


def _dp54_flow(state, params, tol):
    from scipy.integrate import solve_ivp

    def rhs(_t, y):
        return _rhs6(y, params)

    flat = np.atleast_2d(state)
    out = np.empty_like(flat)
    for i, row in enumerate(flat):
        sol = solve_ivp(rhs, (0.0, 1.0), row, method="RK45", rtol=tol, atol=tol)
        out[i] = sol.y[:, -1] if sol.success else np.inf
    return out.reshape(np.shape(state))


def _integrate(points, vecs, params, integ):
    """Integrate the geodesic flow for unit time; never raises.

    Rows that blow up carry non-finite entries for the caller to detect
    (diverging rows cannot contaminate others: the flow is elementwise
    per row).
    """
    state = np.concatenate(
        [np.asarray(points, dtype=float), np.asarray(vecs, dtype=float)], axis=-1
    )
    if integ.method == "rk4":
        return _rk4_flow(state, params, integ.steps)
    return _dp54_flow(state, params, integ.tol)


def _check_diverged(end, bound):
    amax = np.max(np.abs(end), axis=-1)
    bad = ~np.isfinite(amax) | (amax > bound)
    if bad.any():
        raise IntegrationDiverged(
            f"geodesic state exceeded the bound {bound:.3g} "
            f"on {int(np.sum(bad))} trajectory(ies)"
        )


def exp_map(point, vec, params: MetricParams, integ: IntegratorConfig | None = None):
    """Riemannian exponential: endpoint of the unit-time geodesic from
    `point` with initial velocity `vec`.  Broadcasts over leading axes.

    Raises IntegrationDiverged if any state component exceeds the
    configured bound.
    """
    integ = integ or DEFAULT_INTEGRATOR
    end = _integrate(point, vec, params, integ)
    _check_diverged(end, integ.diverge_bound)
    out = end[..., :3].copy()
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def exp_map_with_velocity(
    point, vec, params: MetricParams, integ: IntegratorConfig | None = None
):
    """Like exp_map but also returns the terminal velocity of the geodesic."""
    integ = integ or DEFAULT_INTEGRATOR
    end = _integrate(point, vec, params, integ)
    _check_diverged(end, integ.diverge_bound)
    out = end[..., :3].copy()
    out[..., 2] = wrap_angle(out[..., 2])
    return out, end[..., 3:].copy()


def retraction(point, vec, params: MetricParams | None = None):
    """First-order retraction p + v with the angle wrapped.

    Agrees with exp_map to second order in the step; params is accepted
    for interface symmetry and unused.
    """
    out = np.asarray(point, dtype=float) + np.asarray(vec, dtype=float)
    out = out.copy()
    out[..., 2] = wrap_angle(out[..., 2])
    return out


def riemannian_gradient(point, euclidean_grad, params: MetricParams):
    """Convert a Euclidean gradient to the metric gradient g^{-1} grad."""
    ginv = metric_inverse(point, params)
    return np.einsum("...ij,...j->...i", ginv, np.asarray(euclidean_grad, dtype=float))


def flat_log(point, target):
    """Closed-form log at epsilon = 1: coordinate difference with the
    angular component taken along the shortest arc."""
    p = np.asarray(point, dtype=float)
    q = np.asarray(target, dtype=float)
    v = q - p
    v = v.copy()
    v[..., 2] = angle_diff(q[..., 2], p[..., 2])
    return v


def _endpoint_gap(points, vecs, targets, params, integ):
    out = _integrate(points, vecs, params, integ)[..., :3]
    with np.errstate(invalid="ignore"):
        gap = out - targets
        gap[..., 2] = angle_diff(out[..., 2], targets[..., 2])
    bad = ~np.all(np.isfinite(gap), axis=-1)
    gap[bad] = 1e30
    return gap


def connecting_velocity(
    point,
    target,
    params: MetricParams,
    integ: IntegratorConfig | None = None,
    tol: float = 1e-10,
    max_iter: int = 30,
):
    """Solve exp_map(p, v) = q for v by damped Gauss-Newton shooting.

    Initialized at the flat difference; batched over rows.  Returns
    (velocities, endpoint residuals).  Rows that fail to reach `tol` keep
    their best iterate and report their residual; callers decide whether
    that is fatal.
    """
    integ = integ or DEFAULT_INTEGRATOR
    P = np.atleast_2d(np.asarray(point, dtype=float))
    Q = np.atleast_2d(np.asarray(target, dtype=float))
    V = flat_log(P, Q)
    h = 1e-6
    gap = _endpoint_gap(P, V, Q, params, integ)
    eye = 1e-12 * np.eye(3)
    for _ in range(max_iter):
        active = np.abs(gap).max(axis=-1) > tol
        if not active.any():
            break
        Pa, Va, Qa = P[active], V[active], Q[active]
        ga = gap[active]
        n_act = len(Pa)
        Pb = np.repeat(Pa, 6, axis=0)
        Vb = np.repeat(Va, 6, axis=0)
        for i in range(3):
            Vb[i::6, i] += h
            Vb[3 + i::6, i] -= h
        ends = _integrate(Pb, Vb, params, integ)[..., :3].reshape(n_act, 6, 3)
        jac = np.empty((n_act, 3, 3))
        for i in range(3):
            col = (ends[:, i, :] - ends[:, 3 + i, :]) / (2.0 * h)
            col[:, 2] = angle_diff(ends[:, i, 2], ends[:, 3 + i, 2]) / (2.0 * h)
            jac[:, :, i] = col
        bad = ~np.isfinite(jac).all(axis=(1, 2))
        jac[bad] = np.eye(3)
        step = -np.linalg.solve(jac + eye, ga[:, :, None])[:, :, 0]
        step[bad] = 0.0
        lam = np.ones(n_act)
        prev = np.linalg.norm(ga, axis=-1)
        done = np.zeros(n_act, dtype=bool)
        Vc = Va.copy()
        for _ in range(8):
            trial = Vc + np.where(done, 0.0, lam)[:, None] * step
            gt = _endpoint_gap(Pa, trial, Qa, params, integ)
            better = (np.linalg.norm(gt, axis=-1) < prev) & ~done
            Vc[better] = trial[better]
            ga[better] = gt[better]
            done |= better
            lam[~done] *= 0.25
            if done.all():
                break
        V[active] = Vc
        gap[active] = ga
        if not done.any():
            break
    residual = np.abs(gap).max(axis=-1)
    if np.ndim(point) == 1:
        return V[0], float(residual[0])
    return V, residual
