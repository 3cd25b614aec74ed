"""Conditional-gradient solver over measures on curves.

Each outer iteration: build the certificate field of the current
residual, chain its per-slice minimizers into a candidate curve
(best-of-multistart), locally descend the linearized score, test the
certificate stopping bound, re-fit all masses by nonnegative least
squares, jointly slide masses and control points by monotone Adam
descent on the total energy, and prune negligible atoms.

Everything is deterministic given the seed: randomness only enters
through the multistart jitter, drawn from one generator.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import curves as curves_mod
from . import energy as energy_mod
from . import geometry, observation
from .curves import DiscreteCurve, DiscretizationScheme, bernstein_matrix
from .energy import Atom, EnergyConfig, MeasureState
from .exceptions import (
    BarrierViolation,
    ConfigError,
    NoDescentCandidate,
)
from .geometry import IntegratorConfig, MetricParams
from .observation import Certificate, ObservationStack

STOP_CERTIFICATE = "CertificateBound"
STOP_MAX_ITERS = "MaxIters"
STOP_STALLED = "Stalled"


@dataclass
class SolverConfig:
    """Knobs of the outer loop and its inner descents."""

    max_outer_iters: int = 10
    n_controls: int = 5
    scheme: DiscretizationScheme = DiscretizationScheme.BEZIER
    multistart: int = 8
    adam_lr: float = 1e-2
    inner_iters: int = 500
    prune_threshold: float = 1e-3
    sasaki_lambda: float = 10.0
    seed: int = 0
    balanced: bool = True
    certificate_tol: float = 1e-3
    stall_tol: float = 1e-2
    stall_frac: float = 0.05
    fd_step: float = 1e-5
    barrier_fraction: float = 0.9
    precondition: bool = True
    optimizer: str = "riemannian"     # "riemannian" (preconditioned plain
                                      # descent) or "adam"
    oracle_weight_term: bool = True   # add w(gamma)/beta to the oracle
                                      # descent objective (exact per-unit-mass
                                      # linearization of the energy)
    merge_tol: float = 0.1            # planar distance below which two atoms
                                      # are one source split in two; 0 disables
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ConfigError("max_outer_iters must be >= 1")
        if self.n_controls < 2:
            raise ConfigError("n_controls must be >= 2")
        if self.multistart < 1:
            raise ConfigError("multistart must be >= 1")
        if self.inner_iters < 1:
            raise ConfigError("inner_iters must be >= 1")
        if not (0 <= self.prune_threshold < 1):
            raise ConfigError("prune_threshold must lie in [0, 1)")
        if self.optimizer not in ("riemannian", "adam"):
            raise ConfigError("optimizer must be 'riemannian' or 'adam'")
        if self.merge_tol < 0:
            raise ConfigError("merge_tol must be >= 0")


@dataclass
class SolveReport:
    """Outcome of a solve: final measure plus the audit trail."""

    measure: MeasureState
    stop_reason: str
    n_outer: int
    energy_trace: list          # (phase, energy) pairs, accepted steps only
    certificate_trace: list     # scaled oracle scores per outer iteration
    wall_times: dict
    times: np.ndarray
    grid: observation.SensorGrid
    solver_config: SolverConfig
    energy_config: EnergyConfig


# ---------------------------------------------------------------------------
# basis caches for the linear (polygonal / Bezier) schemes


class LinearBasis:
    """Evaluation and quadrature matrices of a linear-in-controls scheme.

    positions(t) = W @ controls; velocities at the Gauss-Legendre nodes
    are Vq @ controls with per-node weights omega summing segment-wise
    to the segment length.
    """

    def __init__(self, scheme, n_controls, times, quad_nodes):
        self.scheme = scheme
        self.n_controls = n_controls
        k = n_controls
        m = k - 1
        nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
        tq = ((np.arange(m)[:, None] + 0.5 * (nodes + 1.0)[None, :]) / m).ravel()
        self.omega = np.tile(0.5 * weights / m, m)
        if scheme is DiscretizationScheme.BEZIER:
            self.W = bernstein_matrix(k - 1, times)
            self.Wq = bernstein_matrix(k - 1, tq)
            diff = m * (np.eye(k, k=1) - np.eye(k))[:-1]
            self.Vq = bernstein_matrix(k - 2, tq) @ diff
        elif scheme is DiscretizationScheme.POLYGONAL:
            self.W = self._hat(times, k)
            self.Wq = self._hat(tq, k)
            idx = np.minimum((tq * m).astype(int), m - 1)
            Vq = np.zeros((len(tq), k))
            Vq[np.arange(len(tq)), idx] = -m
            Vq[np.arange(len(tq)), idx + 1] = m
            self.Vq = Vq
        else:
            raise ConfigError("LinearBasis covers polygonal and Bezier only")

    @staticmethod
    def _hat(t, k):
        m = k - 1
        t = np.asarray(t, dtype=float)
        idx = np.clip((t * m).astype(int), 0, m - 1)
        s = t * m - idx
        W = np.zeros((len(t), k))
        W[np.arange(len(t)), idx] = 1.0 - s
        W[np.arange(len(t)), idx + 1] = s
        return W


def _metric_density_and_grads(theta, vel, params, exponent):
    """Quadrature density f = ||v||_g^exponent and its partials.

    Returns (f, df/dv (Q, 3), df/dtheta (Q,)).
    """
    c, s = np.cos(theta), np.sin(theta)
    ie2 = params.epsilon ** -2
    xi2 = params.xi ** 2
    vx, vy, vt = vel[:, 0], vel[:, 1], vel[:, 2]
    a = c * vx + s * vy
    b = -s * vx + c * vy
    f = a * a + ie2 * b * b + xi2 * vt * vt
    dfdv = np.stack(
        [2.0 * (a * c - ie2 * b * s), 2.0 * (a * s + ie2 * b * c), 2.0 * xi2 * vt],
        axis=-1,
    )
    dfdth = 2.0 * a * b * (1.0 - ie2)
    if exponent == 1:
        root = np.sqrt(np.maximum(f, 1e-300))
        scale = 0.5 / root
        dfdv = dfdv * scale[:, None]
        dfdth = dfdth * scale
        f = root
    return f, dfdv, dfdth


def _path_energy_and_grad(ctrl, basis: LinearBasis, params, exponent):
    """Path energy of a linear-scheme control matrix (k, 3) with the
    gradient with respect to the controls (angles on their stored,
    already-continuous branch)."""
    vel = basis.Vq @ ctrl
    theta = basis.Wq @ ctrl[:, 2]
    f, dfdv, dfdth = _metric_density_and_grads(theta, vel, params, exponent)
    w = basis.omega
    grad = basis.Vq.T @ (w[:, None] * dfdv)
    grad[:, 2] += basis.Wq.T @ (w * dfdth)
    return float(np.sum(w * f)), grad


# ---------------------------------------------------------------------------
# parameter coders: flat vectors <-> curve data


class LinearCoder:
    """Flat parameter layout [ctrl_x, ctrl_y, ctrl_theta, (amps)] of a
    polygonal or Bezier atom; theta coordinates live on an unwrapped
    continuous branch during optimization."""

    def __init__(self, scheme, n_controls, unbalanced):
        self.scheme = scheme
        self.k = n_controls
        self.unbalanced = unbalanced
        self.size = 3 * n_controls + (n_controls if unbalanced else 0)

    def pack(self, curve: DiscreteCurve):
        ctrl = curve.controls.copy()
        ctrl[:, 2] = curves_mod.unwrap_angles(ctrl[:, 2])
        parts = [ctrl[:, 0], ctrl[:, 1], ctrl[:, 2]]
        if self.unbalanced:
            amps = curve.amplitudes
            parts.append(np.zeros(self.k) if amps is None else amps)
        return np.concatenate(parts)

    def controls(self, vec):
        k = self.k
        return np.stack([vec[:k], vec[k : 2 * k], vec[2 * k : 3 * k]], axis=-1)

    def amplitudes(self, vec):
        if not self.unbalanced:
            return None
        return vec[3 * self.k :]

    def unpack(self, vec) -> DiscreteCurve:
        return DiscreteCurve(
            self.scheme,
            self.controls(vec),
            amplitudes=None if not self.unbalanced else self.amplitudes(vec).copy(),
        )

    def clamp(self, vec):
        vec[: 2 * self.k] = np.clip(vec[: 2 * self.k], -1.15, 1.15)
        if self.unbalanced:
            vec[3 * self.k :] = np.maximum(vec[3 * self.k :], 0.0)
        return vec

    def precondition(self, vec, grad, params: MetricParams):
        """Inverse-metric scaling of the gradient at each control point:
        across-heading components shrink by epsilon^2, angular ones by
        1/xi^2.  This is the Riemannian gradient of controls living on
        the roto-translation space and is what steers the descent
        car-like at small epsilon."""
        k = self.k
        th = vec[2 * k : 3 * k]
        c, s = np.cos(th), np.sin(th)
        gx, gy = grad[:k], grad[k : 2 * k]
        along = c * gx + s * gy
        across = (-s * gx + c * gy) * params.epsilon ** 2
        out = grad.copy()
        out[:k] = c * along - s * across
        out[k : 2 * k] = s * along + c * across
        out[2 * k : 3 * k] = grad[2 * k : 3 * k] / params.xi ** 2
        return out


class GeodesicCoder:
    """Flat layout [points (3k), velocities (3(k-1)), (amps k)] of a
    piecewise-geodesic atom."""

    def __init__(self, n_controls, unbalanced):
        self.k = n_controls
        self.unbalanced = unbalanced
        self.size = 3 * n_controls + 3 * (n_controls - 1) + (
            n_controls if unbalanced else 0
        )

    def pack(self, curve: DiscreteCurve):
        parts = [curve.controls.ravel(), curve.velocities.ravel()]
        if self.unbalanced:
            amps = curve.amplitudes
            parts.append(np.zeros(self.k) if amps is None else amps)
        return np.concatenate(parts)

    def points(self, vec):
        return vec[: 3 * self.k].reshape(self.k, 3)

    def velocities(self, vec):
        return vec[3 * self.k : 6 * self.k - 3].reshape(self.k - 1, 3)

    def amplitudes(self, vec):
        if not self.unbalanced:
            return None
        return vec[6 * self.k - 3 :]

    def unpack(self, vec) -> DiscreteCurve:
        amps = self.amplitudes(vec)
        return DiscreteCurve(
            DiscretizationScheme.PIECEWISE_GEODESIC,
            self.points(vec),
            self.velocities(vec).copy(),
            None if amps is None else amps.copy(),
        )

    def clamp(self, vec):
        pts = vec[: 3 * self.k].reshape(self.k, 3)
        pts[:, :2] = np.clip(pts[:, :2], -1.15, 1.15)
        vel = vec[3 * self.k : 6 * self.k - 3]
        np.clip(vel, -4.0, 4.0, out=vel)
        if self.unbalanced:
            vec[6 * self.k - 3 :] = np.maximum(vec[6 * self.k - 3 :], 0.0)
        return vec

    def precondition(self, vec, grad, params: MetricParams):
        """Inverse-metric scaling at each control point; velocity blocks
        are scaled with the metric of their base point."""
        out = grad.copy()
        th = self.points(vec)[:, 2]
        e2 = params.epsilon ** 2
        ixi2 = 1.0 / params.xi ** 2
        for block, angles in ((out[: 3 * self.k].reshape(self.k, 3), th),
                              (out[3 * self.k : 6 * self.k - 3].reshape(self.k - 1, 3),
                               th[:-1])):
            c, s = np.cos(angles), np.sin(angles)
            along = c * block[:, 0] + s * block[:, 1]
            across = (-s * block[:, 0] + c * block[:, 1]) * e2
            block[:, 0] = c * along - s * across
            block[:, 1] = s * along + c * across
            block[:, 2] *= ixi2
        return out


def make_coder(cfg: SolverConfig):
    if cfg.scheme is DiscretizationScheme.PIECEWISE_GEODESIC:
        return GeodesicCoder(cfg.n_controls, not cfg.balanced)
    return LinearCoder(cfg.scheme, cfg.n_controls, not cfg.balanced)


# ---------------------------------------------------------------------------
# geodesic-scheme helpers (batched over parameter variants)


def _geodesic_positions_batch(coder, vecs, times, params, integ):
    """Positions at `times` for B parameter vectors: (B, T, 3)."""
    B = len(vecs)
    T = len(times)
    m = coder.k - 1
    idx = np.minimum((np.asarray(times) * m).astype(int), m - 1)
    s = np.asarray(times) * m - idx
    pts = np.empty((B, T, 3))
    vel = np.empty((B, T, 3))
    for b, vec in enumerate(vecs):  # keep memory modest; T*B stays small
        P = coder.points(vec)[idx]
        V = s[:, None] * coder.velocities(vec)[idx]
        pts[b] = P
        vel[b] = V
    ends = geometry._integrate(
        pts.reshape(-1, 3), vel.reshape(-1, 3), params, integ
    )[..., :3]
    ends = ends.reshape(B, T, 3)
    ends[..., 2] = geometry.wrap_angle(ends[..., 2])
    return ends


def _chain_gaps(points, velocities, params, integ):
    """Chaining residuals Exp_{x_k}(v_k) - x_{k+1}, theta wrapped: (k-1, 3)."""
    ends = geometry._integrate(points[:-1], velocities, params, integ)[..., :3]
    gap = ends - points[1:]
    gap[:, 2] = geometry.angle_diff(ends[:, 2], points[1:, 2])
    bad = ~np.isfinite(gap).all(axis=1)
    gap[bad] = 1e15
    return gap


def sasaki_penalized_energy(
    points,
    velocities,
    cert: Certificate | None,
    times,
    solver_cfg: SolverConfig,
    energy_cfg: EnergyConfig,
    amplitudes=None,
):
    """Oracle objective of the piecewise-geodesic scheme.

    <eta, delta_curve>  +  beta * sum_k dt_k ||v_k||^2_{x_k}
                        +  lambda * sum_k ||Exp_{x_k}(v_k) - x_{k+1}||^2

    `cert` may be None to drop the pairing term (pure penalty).
    """
    points = np.asarray(points, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    k = len(points)
    if velocities.shape != (k - 1, 3):
        raise ConfigError("velocities must be (k-1, 3)")
    params = energy_cfg.metric
    integ = solver_cfg.integrator
    dt = 1.0 / (k - 1)
    kinetic = dt * float(
        np.sum(geometry.metric_norm_sq(points[:-1], velocities, params))
    )
    gaps = _chain_gaps(points.copy(), velocities, params, integ)
    penalty = float(np.sum(gaps * gaps))
    pairing = 0.0
    if cert is not None:
        curve = DiscreteCurve(
            DiscretizationScheme.PIECEWISE_GEODESIC,
            points,
            velocities,
            None if amplitudes is None else np.asarray(amplitudes, dtype=float),
        )
        atom = Atom(1.0, curve)
        pairing = observation.certificate_pairing(
            cert, [atom], times, params, integ
        )
    return pairing + energy_cfg.beta * kinetic + solver_cfg.sasaki_lambda * penalty


# ---------------------------------------------------------------------------
# Adam with monotone backtracking


class _Adam:
    def __init__(self, size, lr):
        self.lr = lr
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.b1, self.b2, self.eps = 0.9, 0.999, 1e-8

    def direction(self, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        mhat = self.m / (1.0 - self.b1 ** self.t)
        vhat = self.v / (1.0 - self.b2 ** self.t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _plain_descent(x0, value_and_grad, iters, lr, clamp=None,
                   transform=None, max_halvings=20):
    """Monotone gradient descent with a self-adapting step.

    The raw gradient is mapped through `transform` (inverse-metric
    preconditioning) and followed with a scalar step that grows on
    accepted iterates and halves on rejections, so the metric scaling
    of the direction is preserved exactly (unlike Adam, which
    renormalizes it away per coordinate).  Returns (x, trace).
    """
    x = np.array(x0, dtype=float)
    if clamp is not None:
        x = clamp(x)
    f, g = value_and_grad(x)
    step = lr
    trace = [f]
    for _ in range(iters):
        d = -(transform(x, g) if transform is not None else g)
        accepted = False
        for _ in range(max_halvings + 1):
            cand = x + step * d
            if clamp is not None:
                cand = clamp(cand)
            fc, gc = value_and_grad(cand)
            if fc <= f and np.isfinite(fc):
                x, f, g = cand, fc, gc
                step = min(step * 1.25, 1e3 * lr)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        trace.append(f)
    return x, trace


def _monotone_descent(x0, value_and_grad, iters, lr, clamp=None,
                      transform=None, max_halvings=20):
    """Adam descent accepting only energy-decreasing iterates.

    `transform` maps the raw gradient to the moment source; the
    per-coordinate RMS normalization of Adam largely removes the
    preconditioning scale, so this variant is kept for the flat,
    well-conditioned cases.  On an energy increase the step is halved
    (up to max_halvings); if no decrease is found the descent
    terminates.  Returns (x, trace).
    """
    x = np.array(x0, dtype=float)
    if clamp is not None:
        x = clamp(x)
    f, g = value_and_grad(x)
    adam = _Adam(len(x), lr)
    trace = [f]
    for _ in range(iters):
        step = adam.direction(transform(x, g) if transform else g)
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = x + scale * step
            if clamp is not None:
                cand = clamp(cand)
            fc, gc = value_and_grad(cand)
            if fc <= f:
                x, f, g = cand, fc, gc
                break
            scale *= 0.5
        else:
            break
        trace.append(f)
    return x, trace


def _descend(scfg: SolverConfig, x0, fun, clamp=None, transform=None):
    if scfg.optimizer == "adam":
        return _monotone_descent(x0, fun, scfg.inner_iters, scfg.adam_lr,
                                 clamp=clamp, transform=transform)
    return _plain_descent(x0, fun, scfg.inner_iters, scfg.adam_lr,
                          clamp=clamp, transform=transform)


# ---------------------------------------------------------------------------
# solve context: precomputed data shared by the inner steps


class _Context:
    def __init__(self, stack: ObservationStack, scfg: SolverConfig, ecfg: EnergyConfig):
        self.stack = stack
        self.scfg = scfg
        self.ecfg = ecfg
        self.times = stack.times
        self.grid = stack.grid
        n = stack.grid.n_side
        self.data_img = stack.frames.reshape(-1, n, n)
        self.axis = stack.grid.axis
        self.sigma2 = stack.grid.sigma_kernel ** 2
        self.coder = make_coder(scfg)
        self.linear = scfg.scheme is not DiscretizationScheme.PIECEWISE_GEODESIC
        if self.linear:
            self.basis = LinearBasis(
                scfg.scheme, scfg.n_controls, stack.times, ecfg.quad_nodes
            )
        self.ball_bound = energy_mod.fw_ball_bound(stack.frames, ecfg.beta)

    # -- forward pieces ----------------------------------------------------

    def profiles(self, coords):
        d = coords[:, None] - self.axis[None, :]
        return np.exp(d * d / (-2.0 * self.sigma2))

    def atom_positions(self, vec):
        """Positions (T, 3) and slice amplitudes (T,) of one atom vector."""
        if self.linear:
            ctrl = self.coder.controls(vec)
            pos = np.empty((len(self.times), 3))
            pos[:, 0] = self.basis.W @ ctrl[:, 0]
            pos[:, 1] = self.basis.W @ ctrl[:, 1]
            pos[:, 2] = geometry.wrap_angle(self.basis.W @ ctrl[:, 2])
        else:
            pos = _geodesic_positions_batch(
                self.coder, vec[None, :], self.times, self.ecfg.metric,
                self.scfg.integrator,
            )[0]
        amps = self.coder.amplitudes(vec)
        if amps is None:
            slice_amps = np.ones(len(self.times))
        elif self.linear:
            slice_amps = self.basis.W @ amps
        else:
            m = self.coder.k - 1
            idx = np.minimum((self.times * m).astype(int), m - 1)
            s = self.times * m - idx
            slice_amps = amps[idx] + s * (amps[idx + 1] - amps[idx])
        return pos, slice_amps

    def model_images(self, masses, vecs):
        T = len(self.times)
        n = self.grid.n_side
        model = np.zeros((T, n, n))
        cache = []
        for mass, vec in zip(masses, vecs):
            pos, amps = self.atom_positions(vec)
            wx = self.profiles(pos[:, 0])
            wy = self.profiles(pos[:, 1])
            intensity = mass * amps
            model += np.einsum("t,ty,tx->tyx", intensity, wy, wx)
            cache.append((pos, amps, wx, wy))
        return model, cache

    # -- total energy with analytic gradient (linear schemes) ---------------

    def energy_value_and_grad(self, masses, vecs):
        """Total energy and gradients for all atoms jointly.

        Returns (E, grad_masses (N,), grad_vecs list).  Linear schemes
        get analytic gradients; the geodesic scheme differentiates its
        curve parameters by batched central differences and adds the
        chaining penalty.
        """
        model, cache = self.model_images(masses, vecs)
        R = model - self.data_img
        if self.ecfg.data_squared:
            E = 0.5 * float(np.sum(R * R))
            slice_scale = np.ones(len(self.times))
        else:
            norms = np.linalg.norm(R.reshape(len(R), -1), axis=1)
            E = float(np.sum(norms))
            slice_scale = 1.0 / np.maximum(norms, 1e-300)
        Rw = R * slice_scale[:, None, None]

        grad_masses = np.empty(len(masses))
        grad_vecs = []
        for a, (mass, vec) in enumerate(zip(masses, vecs)):
            pos, amps, wx, wy = cache[a]
            q = np.einsum("tyx,ty,tx->t", Rw, wy, wx)
            dxs = (self.axis[None, :] - pos[:, 0:1]) / self.sigma2
            dys = (self.axis[None, :] - pos[:, 1:2]) / self.sigma2
            gx = np.einsum("tyx,ty,tx->t", Rw, wy, wx * dxs)
            gy = np.einsum("tyx,ty,tx->t", Rw, wy * dys, wx)
            intensity = mass * amps
            if self.linear:
                g = np.zeros(self.coder.size)
                k = self.coder.k
                g[:k] = self.basis.W.T @ (intensity * gx)
                g[k : 2 * k] = self.basis.W.T @ (intensity * gy)
                ctrl = self.coder.controls(vec)
                pe, pe_grad = _path_energy_and_grad(
                    ctrl, self.basis, self.ecfg.metric, self.ecfg.energy_exponent
                )
                g[: 3 * k] += mass * self.ecfg.beta * pe_grad.T.ravel()
                if self.coder.unbalanced:
                    amp_ctrl = self.coder.amplitudes(vec)
                    g[3 * k :] = self.basis.W.T @ (mass * q)
                    g[3 * k :] += 2.0 * self.ecfg.zeta * amp_ctrl
                    E += self.ecfg.zeta * float(np.sum(amp_ctrl ** 2))
            else:
                pe = self._geodesic_path_energy(vec)
                g = self._geodesic_grad(vec, masses[a], gx, gy, q)
                if self.coder.unbalanced:
                    amp_ctrl = self.coder.amplitudes(vec)
                    E += self.ecfg.zeta * float(np.sum(amp_ctrl ** 2))
                E += self.scfg.sasaki_lambda * self._chain_penalty(vec)
            E += mass * (self.ecfg.alpha_mass + self.ecfg.beta * pe)
            grad_masses[a] = float(np.sum(amps * q)) + (
                self.ecfg.alpha_mass + self.ecfg.beta * pe
            )
            grad_vecs.append(g)
        return E, grad_masses, grad_vecs

    def _geodesic_path_energy(self, vec):
        pts = self.coder.points(vec)
        vel = self.coder.velocities(vec)
        m = self.coder.k - 1
        return m * float(
            np.sum(geometry.metric_norm_sq(pts[:-1], vel, self.ecfg.metric))
        )

    def _chain_penalty(self, vec):
        gaps = _chain_gaps(
            self.coder.points(vec).copy(),
            self.coder.velocities(vec),
            self.ecfg.metric,
            self.scfg.integrator,
        )
        return float(np.sum(gaps * gaps))

    def _geodesic_grad(self, vec, mass, gx, gy, q):
        """Central-difference gradient of the geodesic atom's share of
        the objective (data chain-ruled through positions, regularizer
        and chaining penalty by direct FD)."""
        h = self.scfg.fd_step
        P = len(vec)
        variants = np.repeat(vec[None, :], 2 * P, axis=0)
        for j in range(P):
            variants[2 * j, j] += h
            variants[2 * j + 1, j] -= h
        pos = _geodesic_positions_batch(
            self.coder, variants, self.times, self.ecfg.metric, self.scfg.integrator
        )
        dpos = (pos[0::2] - pos[1::2]) / (2.0 * h)  # (P, T, 3)
        amps0 = self.atom_positions(vec)[1]
        intensity = mass * amps0
        g = np.einsum("ptd,td->p", dpos[:, :, :2],
                      np.stack([intensity * gx, intensity * gy], axis=-1))
        # amplitude columns also move the intensity directly
        if self.coder.unbalanced:
            base = 6 * self.coder.k - 3
            m = self.coder.k - 1
            idx = np.minimum((self.times * m).astype(int), m - 1)
            s = self.times * m - idx
            Wamp = np.zeros((len(self.times), self.coder.k))
            Wamp[np.arange(len(self.times)), idx] = 1.0 - s
            Wamp[np.arange(len(self.times)), idx + 1] = s
            g[base:] += Wamp.T @ (mass * q)
            g[base:] += 2.0 * self.ecfg.zeta * self.coder.amplitudes(vec)
        # regularizer + chaining penalty by scalar FD
        def reg(v):
            val = mass * self.ecfg.beta * self._geodesic_path_energy(v)
            val += self.scfg.sasaki_lambda * self._chain_penalty(v)
            return val

        for j in range(3 * self.coder.k + 3 * (self.coder.k - 1)):
            vp = vec.copy(); vp[j] += h
            vm = vec.copy(); vm[j] -= h
            g[j] += (reg(vp) - reg(vm)) / (2.0 * h)
        return g


# ---------------------------------------------------------------------------
# oracle


def _refine_slice_minimum(cert: Certificate, i, start, max_iter=25):
    """Continuum local minimizer of slice i of the certificate around a
    starting point, by damped Newton on the separable field."""
    p = np.array(start, dtype=float)
    h = 1e-4
    for _ in range(max_iter):
        g = cert.eval(i, np.array([
            p, p + [h, 0], p - [h, 0], p + [0, h], p - [0, h],
            p + [h, h], p + [h, -h], p + [-h, h], p + [-h, -h],
        ]))
        grad = np.array([(g[1] - g[2]) / (2 * h), (g[3] - g[4]) / (2 * h)])
        hxx = (g[1] - 2 * g[0] + g[2]) / h ** 2
        hyy = (g[3] - 2 * g[0] + g[4]) / h ** 2
        hxy = (g[5] - g[6] - g[7] + g[8]) / (4 * h ** 2)
        H = np.array([[hxx, hxy], [hxy, hyy]])
        evals = np.linalg.eigvalsh(H)
        if evals[0] > 1e-12:
            step = -np.linalg.solve(H, grad)
        else:
            step = -grad * (0.5 * cert.grid.sigma_kernel ** 2)
        if np.linalg.norm(step) > 3 * cert.grid.sigma_kernel:
            step *= 3 * cert.grid.sigma_kernel / np.linalg.norm(step)
        val0 = g[0]
        for _ in range(12):
            cand = np.clip(p + step, -1.0, 1.0)
            if cert.eval(i, cand[None, :])[0] < val0:
                p = cand
                break
            step *= 0.5
        else:
            break
        if np.linalg.norm(step) < 1e-12:
            break
    return p


def _theta_refine(ctrl, scheme, params, exponent, iters=150):
    """Replace the theta controls by a local minimizer of the path
    energy with the planar controls held fixed: the cheapest lift of
    the chained positions.  At large xi this flattens the heading
    profile toward a constant; at small epsilon it aligns headings with
    the velocity."""
    if scheme is DiscretizationScheme.PIECEWISE_GEODESIC:
        basis_scheme = DiscretizationScheme.POLYGONAL
    else:
        basis_scheme = scheme
    k = len(ctrl)
    basis = LinearBasis(basis_scheme, k, curves_mod.knots(k), 8)
    fixed = ctrl.copy()
    fixed[:, 2] = curves_mod.unwrap_angles(fixed[:, 2])

    def fun(th):
        c = fixed.copy()
        c[:, 2] = th
        e, grad = _path_energy_and_grad(c, basis, params, exponent)
        return e, grad[:, 2]

    scale = 1.0 / params.xi ** 2
    th, _ = _plain_descent(
        fixed[:, 2], fun, iters, 1e-2, transform=lambda x, g: g * scale
    )
    out = ctrl.copy()
    out[:, 2] = geometry.wrap_angle(th)
    return out


def _chain_controls(times, picks, n_controls):
    """Interpolate chained per-slice picks (T, 2) at the knots and fit
    heading angles from finite differences of the knot chain.

    Headings come from the already-subsampled knot positions, not the
    raw per-slice picks: slice-level pick jitter would otherwise leak
    wild angle swings into the theta channel."""
    tk = curves_mod.knots(n_controls)
    x = np.interp(tk, times, picks[:, 0])
    y = np.interp(tk, times, picks[:, 1])
    dx = np.gradient(x, tk)
    dy = np.gradient(y, tk)
    th = np.unwrap(np.arctan2(dy, dx))
    return np.stack([x, y, geometry.wrap_angle(th)], axis=-1)


def _slice_minima(cert: Certificate, i, grid_img, nodes, kmax=3,
                  significance=0.25):
    """Refined local minima of one certificate slice, deepest first.

    Keeps grid-level local minima at least `significance` times as deep
    as the slice's deepest value, caps at kmax, refines each to the
    continuum, and deduplicates refined picks within one grid spacing.
    Always returns at least the refined global argmin.
    """
    n = cert.grid.n_side
    img = grid_img.reshape(n, n)
    local = img <= ndimage.minimum_filter(img, size=3, mode="nearest")
    flat = np.flatnonzero(local.ravel())
    vals = img.ravel()[flat]
    deepest = vals.min()
    if deepest < 0.0:
        flat = flat[vals <= significance * deepest]
        vals = img.ravel()[flat]
    order = np.argsort(vals)[:kmax]
    picks, out_vals = [], []
    for j in flat[order]:
        p = _refine_slice_minimum(cert, i, nodes[j])
        v = cert.eval(i, p[None, :])[0]
        for q, w in zip(picks, out_vals):
            if np.hypot(*(p - q)) < cert.grid.spacing:
                break
        else:
            picks.append(p)
            out_vals.append(v)
    order = np.argsort(out_vals)
    return [picks[j] for j in order], [out_vals[j] for j in order]


def _link_tracks(slice_picks, slice_vals, memory, spacing):
    """Chain per-slice certificate minima into track trajectories.

    `memory` in [0, 1] is the weight of constant-velocity prediction.
    Above 0.5 the linker assigns picks to tracks by predicted position
    (carrying heading through close encounters); below, tracks keep
    their initial depth order ranked by y and never swap sides, the
    myopic nearest-structure behaviour of a planar method.  A track
    whose nearest admissible pick lies outside its capture radius
    coasts on its prediction with zero matched value, so a source
    fading out does not drag its track onto a surviving neighbour.
    Returns (tracks (K, T, 2), vals (K, T)).
    """
    T = len(slice_picks)
    counts = [len(p) for p in slice_picks]
    K = int(np.clip(round(float(np.median(counts))), 1, max(counts)))
    first = slice_picks[0]
    rank0 = np.argsort([p[1] for p in first])
    tracks = np.empty((K, T, 2))
    vals = np.empty((K, T))
    vel = np.zeros((K, 2))
    seeded = np.zeros(K, dtype=bool)
    for j in range(K):
        src = rank0[min(j, len(first) - 1)] if memory < 0.5 else min(
            j, len(first) - 1
        )
        tracks[j, 0] = first[src]
        vals[j, 0] = slice_vals[0][src]

    for t in range(1, T):
        picks = np.asarray(slice_picks[t])
        m = len(picks)
        radius = np.maximum(4.0 * spacing,
                            2.0 * np.hypot(vel[:, 0], vel[:, 1]))
        # before the first exclusive capture there is no velocity
        # estimate, so open the gate rather than losing a fast source
        radius[~seeded] = np.maximum(radius[~seeded], 8.0 * spacing)
        if memory >= 0.5:
            pred = tracks[:, t - 1] + memory * vel
            if m >= K:
                best, assign = np.inf, None
                for perm in itertools.permutations(range(m), K):
                    cost = sum(
                        np.hypot(*(picks[perm[j]] - pred[j])) ** 2
                        for j in range(K)
                    )
                    if cost < best:
                        best, assign = cost, perm
                assign = list(assign)
            else:
                assign = [
                    int(np.argmin(np.hypot(*(picks - pred[j]).T)))
                    for j in range(K)
                ]
        else:
            pred = tracks[:, t - 1]
            by_y = np.argsort(picks[:, 1])
            if K > 1:
                assign = [by_y[round(j * (m - 1) / (K - 1))] for j in range(K)]
            else:
                assign = [int(np.argmin(slice_vals[t]))]
        snapped = [
            j for j in range(K)
            if np.hypot(*(picks[assign[j]] - pred[j])) <= radius[j]
        ]
        taken = [assign[j] for j in snapped]
        for j in range(K):
            if j in snapped:
                tracks[j, t] = picks[assign[j]]
                vals[j, t] = slice_vals[t][assign[j]]
                # A shared pick (sources blended into one blob) carries
                # no per-track direction: keep the incoming velocity so
                # it survives the encounter.
                if taken.count(assign[j]) == 1:
                    vel[j] = tracks[j, t] - tracks[j, t - 1]
                    seeded[j] = True
            else:
                tracks[j, t] = pred[j]
                vals[j, t] = 0.0
    return tracks, vals


def oracle_init(
    cert: Certificate,
    stack: ObservationStack,
    scfg: SolverConfig,
    ecfg: EnergyConfig,
    rng: np.random.Generator,
) -> DiscreteCurve:
    """Best-of-multistart candidate curve from the certificate field.

    Chains the continuum per-slice minimizers of the field into one
    track per detected source (headings from finite differences of the
    chain), adds seeded jitters, and returns the candidate with the
    lowest linearized score.  Raises NoDescentCandidate when no
    candidate scores negative.
    """
    times = stack.times
    grid_vals = cert.on_grid()
    nodes = stack.grid.nodes()
    slice_picks, slice_vals = [], []
    for i in range(len(times)):
        p, v = _slice_minima(cert, i, grid_vals[i], nodes)
        slice_picks.append(p)
        slice_vals.append(v)
    # A weakly anisotropic metric (sideways cost under 100x the aligned
    # cost) cannot carry heading information through close encounters,
    # so the linker degrades to the side-preserving planar behaviour.
    memory = 1.0 / (1.0 + (ecfg.metric.epsilon / 0.1) ** 2)
    tracks, track_vals = _link_tracks(slice_picks, slice_vals, memory,
                                      stack.grid.spacing)

    unbalanced = not scfg.balanced
    tk = curves_mod.knots(scfg.n_controls)
    bases, amp_ctrls = [], []
    for j in range(len(tracks)):
        bases.append(_chain_controls(times, tracks[j], scfg.n_controls))
        amp_ctrl = None
        if unbalanced:
            norms_sq = np.sum(
                stack.grid.point_kernels(tracks[j]) ** 2, axis=1
            )
            matched = np.maximum(
                -track_vals[j] * cert.weight / np.maximum(norms_sq, 1e-12),
                0.0,
            )
            amp_ctrl = np.interp(tk, times, matched)
        amp_ctrls.append(amp_ctrl)

    def build(ctrl, amps):
        ctrl = _theta_refine(ctrl, scfg.scheme, ecfg.metric,
                             ecfg.energy_exponent)
        if scfg.scheme is DiscretizationScheme.PIECEWISE_GEODESIC:
            vel = geometry.flat_log(ctrl[:-1], ctrl[1:])
            return DiscreteCurve(scfg.scheme, ctrl, vel, amps)
        return DiscreteCurve(scfg.scheme, ctrl, amplitudes=amps)

    candidates = [build(b, a) for b, a in zip(bases, amp_ctrls)]
    jitter_xy = 1.5 * stack.grid.spacing
    for i in range(max(0, scfg.multistart - len(bases))):
        base = bases[i % len(bases)]
        amp_ctrl = amp_ctrls[i % len(bases)]
        ctrl = base.copy()
        ctrl[:, :2] += rng.normal(scale=jitter_xy, size=(len(ctrl), 2))
        ctrl[:, 2] = geometry.wrap_angle(
            ctrl[:, 2] + rng.normal(scale=0.3, size=len(ctrl))
        )
        amps = None
        if unbalanced:
            amps = amp_ctrl * rng.uniform(0.6, 1.4, size=len(amp_ctrl))
        candidates.append(build(ctrl, amps))

    scores = [
        observation.certificate_pairing(
            cert, [Atom(1.0, c)], times, ecfg.metric, scfg.integrator
        )
        for c in candidates
    ]
    best = int(np.argmin(scores))
    if scores[best] >= 0.0:
        raise NoDescentCandidate(
            f"best linearized score {scores[best]:.3g} is nonnegative"
        )
    return candidates[best]


def _oracle_value_and_grad_linear(ctx: _Context, cert, vec, kappa):
    """Oracle descent objective with gradient for polygonal/Bezier
    candidates: linearized score, optionally the per-unit-mass weight
    w(gamma)/beta (the exact energy change rate of inserting the atom),
    and the regularizer-ball barrier."""
    coder = ctx.coder
    pos, amps = ctx.atom_positions(vec)
    vals = cert.eval_each(pos[:, :2])
    grads = cert.grad_each(pos[:, :2])
    score = float(np.sum(amps * vals))
    g = np.zeros(coder.size)
    k = coder.k
    g[:k] = ctx.basis.W.T @ (amps * grads[:, 0])
    g[k : 2 * k] = ctx.basis.W.T @ (amps * grads[:, 1])
    if coder.unbalanced:
        g[3 * k :] = ctx.basis.W.T @ vals
    pe, pe_grad = _path_energy_and_grad(
        coder.controls(vec), ctx.basis, ctx.ecfg.metric, ctx.ecfg.energy_exponent
    )
    if ctx.scfg.oracle_weight_term:
        score += ctx.ecfg.alpha_mass / ctx.ecfg.beta + pe
        g[: 3 * k] += pe_grad.T.ravel()
    w = ctx.ecfg.alpha_mass + ctx.ecfg.beta * pe
    act = ctx.scfg.barrier_fraction
    slack = w / ctx.ball_bound - act
    if slack > 0.0:
        denom = 1.0 - act
        score += kappa * (slack / denom) ** 2
        scale = kappa * 2.0 * slack / denom ** 2 / ctx.ball_bound * ctx.ecfg.beta
        g[: 3 * k] += scale * pe_grad.T.ravel()
    return score, g


def _oracle_value_and_grad_geodesic(ctx: _Context, cert, vec, kappa):
    """Sasaki-penalized oracle objective with batched-FD gradient."""
    def value(v):
        coder = ctx.coder
        val = sasaki_penalized_energy(
            coder.points(v), coder.velocities(v), cert, ctx.times,
            ctx.scfg, ctx.ecfg, coder.amplitudes(v),
        )
        pe = ctx._geodesic_path_energy(v)
        if ctx.scfg.oracle_weight_term:
            val += ctx.ecfg.alpha_mass / ctx.ecfg.beta + pe
        w = ctx.ecfg.alpha_mass + ctx.ecfg.beta * pe
        act = ctx.scfg.barrier_fraction
        slack = w / ctx.ball_bound - act
        if slack > 0.0:
            val += kappa * (slack / (1.0 - act)) ** 2
        return val

    f = value(vec)
    h = ctx.scfg.fd_step
    g = np.empty(len(vec))
    for j in range(len(vec)):
        vp = vec.copy(); vp[j] += h
        vm = vec.copy(); vm[j] -= h
        g[j] = (value(vp) - value(vm)) / (2.0 * h)
    return f, g


def oracle_descend(
    candidate: DiscreteCurve,
    cert: Certificate,
    stack: ObservationStack,
    scfg: SolverConfig,
    ecfg: EnergyConfig,
    ctx: _Context | None = None,
) -> DiscreteCurve:
    """Local monotone descent of the oracle objective.

    Polygonal/Bezier candidates descend the linearized score (plus,
    when configured, the per-unit-mass curve weight) under a smooth
    quadratic barrier that activates above barrier_fraction of the
    regularizer ball; piecewise-geodesic candidates descend the
    Sasaki-penalized objective.  The returned curve never scores worse
    than the input.  Raises BarrierViolation if no iterate ever
    enters the regularizer ball.
    """
    ctx = ctx or _Context(stack, scfg, ecfg)
    coder = ctx.coder
    vec0 = coder.pack(candidate)
    score0 = observation.certificate_pairing(
        cert, [Atom(1.0, candidate)], stack.times, ecfg.metric, scfg.integrator
    )
    kappa = 10.0 * (1.0 + abs(score0))

    if ctx.linear:
        fun = lambda v: _oracle_value_and_grad_linear(ctx, cert, v, kappa)
    else:
        fun = lambda v: _oracle_value_and_grad_geodesic(ctx, cert, v, kappa)
    transform = None
    if scfg.precondition:
        transform = lambda v, g: coder.precondition(v, g, ecfg.metric)

    vec, _ = _descend(scfg, vec0, fun, clamp=coder.clamp, transform=transform)
    refined = coder.unpack(vec)
    weight = energy_mod.curve_regularizer_weight(refined, ecfg, scfg.integrator)
    if weight > ctx.ball_bound:
        w0 = energy_mod.curve_regularizer_weight(candidate, ecfg, scfg.integrator)
        if w0 > ctx.ball_bound:
            raise BarrierViolation(
                f"no feasible iterate: weight {weight:.3g} > bound "
                f"{ctx.ball_bound:.3g}"
            )
        return candidate
    score1 = observation.certificate_pairing(
        cert, [Atom(1.0, refined)], stack.times, ecfg.metric, scfg.integrator
    )
    return refined if score1 <= score0 else candidate


# ---------------------------------------------------------------------------
# amplitude step (nonnegative least squares on masses)


def amplitude_step(atom_curves, stack: ObservationStack, ecfg: EnergyConfig,
                   integ: IntegratorConfig | None = None,
                   start=None, tol: float = 1e-9, max_iter: int = 200000):
    """Masses minimizing 0.5 ||sum_a m_a Phi(curve_a) - data||^2 +
    sum_a m_a w(curve_a) over m >= 0, w the full curve weight.

    Projected gradient with the exact 1/L step on the quadratic; stops
    at natural-residual (KKT) accuracy `tol`.  Returns the mass vector
    (exact zeros are meaningful: the atom is inactive).
    """
    N = len(atom_curves)
    if N == 0:
        return np.zeros(0)
    cols = np.stack([
        observation.forward_stack(
            [Atom(1.0, c)], stack.times, stack.grid, ecfg.metric, integ
        ).ravel()
        for c in atom_curves
    ])
    w_vec = np.array([
        energy_mod.curve_regularizer_weight(c, ecfg, integ) for c in atom_curves
    ])
    M = cols @ cols.T
    target = cols @ stack.frames.ravel()
    c = target - w_vec  # w already carries the beta factor
    L = float(np.linalg.eigvalsh(M)[-1])
    if L <= 0.0:
        return np.zeros(N)
    a = np.zeros(N) if start is None else np.maximum(np.asarray(start, float), 0.0)
    step = 1.0 / L
    for _ in range(max_iter):
        grad = M @ a - c
        nxt = np.maximum(a - step * grad, 0.0)
        if np.max(np.abs(nxt - a)) * L <= tol:
            a = nxt
            break
        a = nxt
    return a


# ---------------------------------------------------------------------------
# sliding step


def sliding_step(measure: MeasureState, stack: ObservationStack,
                 scfg: SolverConfig, ecfg: EnergyConfig,
                 ctx: _Context | None = None):
    """Joint monotone Adam descent of the total energy over all masses,
    control points, velocities and amplitude controls.  Returns the
    refined measure and the accepted-energy trace."""
    ctx = ctx or _Context(stack, scfg, ecfg)
    coder = ctx.coder
    N = measure.n_atoms
    if N == 0:
        return measure, []
    sizes = [1 + coder.size] * N

    def pack_all():
        parts = []
        for atom in measure.atoms:
            parts.append(np.concatenate([[atom.mass], coder.pack(atom.curve)]))
        return np.concatenate(parts)

    def split(z):
        masses = np.empty(N)
        vecs = []
        off = 0
        for a in range(N):
            masses[a] = z[off]
            vecs.append(z[off + 1 : off + sizes[a]])
            off += sizes[a]
        return masses, vecs

    def clamp(z):
        off = 0
        for a in range(N):
            z[off] = max(z[off], 0.0)
            coder.clamp(z[off + 1 : off + sizes[a]])
            off += sizes[a]
        return z

    def value_and_grad(z):
        masses, vecs = split(z)
        E, gm, gv = ctx.energy_value_and_grad(masses, vecs)
        g = np.concatenate([
            np.concatenate([[gm[a]], gv[a]]) for a in range(N)
        ])
        return E, g

    transform = None
    if scfg.precondition:
        def transform(z, g):
            out = g.copy()
            off = 0
            for a in range(N):
                blk = slice(off + 1, off + sizes[a])
                out[blk] = coder.precondition(z[blk], g[blk], ecfg.metric)
                off += sizes[a]
            return out

    z0 = pack_all()
    z, trace = _descend(scfg, z0, value_and_grad, clamp=clamp,
                        transform=transform)
    masses, vecs = split(z)
    refined = MeasureState(
        [Atom(float(masses[a]), coder.unpack(vecs[a])) for a in range(N)]
    )
    return refined, trace


# ---------------------------------------------------------------------------
# prune and the outer loop


def _merge_duplicates(measure: MeasureState, stack: ObservationStack,
                      scfg: SolverConfig, ecfg: EnergyConfig) -> MeasureState:
    """Combine atoms whose planar trajectories coincide within merge_tol.

    Near-duplicate atoms are a conditional-gradient artifact: one
    source's mass split over curves the sensor kernel cannot tell
    apart.  Clusters by the max instantaneous planar distance, keeps
    the heaviest curve of each cluster, then re-fits all masses.
    """
    n = measure.n_atoms
    if n < 2 or scfg.merge_tol <= 0.0:
        return measure
    pts = [
        curves_mod.eval_curve(a.curve, stack.times, ecfg.metric,
                              scfg.integrator)[:, :2]
        for a in measure.atoms
    ]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if np.max(np.hypot(*(pts[i] - pts[j]).T)) < scfg.merge_tol:
                parent[find(j)] = find(i)
    roots = [find(i) for i in range(n)]
    if len(set(roots)) == n:
        return measure
    clusters = {}
    for i, r in enumerate(roots):
        clusters.setdefault(r, []).append(i)
    kept_curves = []
    start = []
    for members in clusters.values():
        best = max(members, key=lambda i: measure.atoms[i].mass)
        kept_curves.append(measure.atoms[best].curve)
        start.append(sum(measure.atoms[i].mass for i in members))
    masses = amplitude_step(kept_curves, stack, ecfg, scfg.integrator,
                            start=np.array(start))
    return MeasureState(
        [Atom(float(m), c) for m, c in zip(masses, kept_curves)]
    )


def prune(measure: MeasureState, threshold: float) -> MeasureState:
    """Drop exact-zero masses and masses below threshold * max mass."""
    if measure.n_atoms == 0:
        return measure
    masses = np.array([a.mass for a in measure.atoms])
    if np.all(masses <= 0.0):
        return MeasureState([])
    cut = threshold * float(masses.max())
    keep = [a for a in measure.atoms if a.mass > 0.0 and a.mass >= cut]
    return MeasureState(keep)


def solve(stack: ObservationStack, scfg: SolverConfig, ecfg: EnergyConfig) -> SolveReport:
    """Run the full conditional-gradient loop on an observation stack."""
    rng = np.random.default_rng(scfg.seed)
    ctx = _Context(stack, scfg, ecfg)
    measure = MeasureState([])
    walls = {"oracle": 0.0, "amplitude": 0.0, "sliding": 0.0}
    energy_trace = [("init", energy_mod.total_energy(measure, stack, ecfg,
                                                     scfg.integrator))]
    cert_trace = []
    stop = STOP_MAX_ITERS
    n_outer = 0
    prev_energy = energy_trace[0][1]
    prev_gain = np.inf

    for it in range(scfg.max_outer_iters):
        n_outer = it + 1
        t0 = time.perf_counter()
        model = observation.forward_stack(
            measure, stack.times, stack.grid, ecfg.metric, scfg.integrator
        )
        residual = model - stack.frames
        cert = observation.certificate_field(residual, stack.grid, ecfg.beta)
        try:
            cand = oracle_init(cert, stack, scfg, ecfg, rng)
        except NoDescentCandidate:
            stop = STOP_CERTIFICATE
            n_outer = it
            break
        cand = oracle_descend(cand, cert, stack, scfg, ecfg, ctx)
        score = observation.certificate_pairing(
            cert, [Atom(1.0, cand)], stack.times, ecfg.metric, scfg.integrator
        )
        scaled = abs(score) / len(stack.times)
        cert_trace.append(scaled)
        walls["oracle"] += time.perf_counter() - t0
        if scaled <= 1.0 + scfg.certificate_tol:
            stop = STOP_CERTIFICATE
            n_outer = it
            break

        t0 = time.perf_counter()
        curves_now = [a.curve for a in measure.atoms] + [cand]
        start = np.array([a.mass for a in measure.atoms] + [0.0])
        masses = amplitude_step(
            curves_now, stack, ecfg, scfg.integrator, start=start
        )
        measure_new = MeasureState(
            [Atom(float(m), c) for m, c in zip(masses, curves_now)]
        )
        e_amp = energy_mod.total_energy(measure_new, stack, ecfg, scfg.integrator)
        energy_trace.append(("amplitude", e_amp))
        walls["amplitude"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        measure_new, _ = sliding_step(measure_new, stack, scfg, ecfg, ctx)
        e_slid = energy_mod.total_energy(measure_new, stack, ecfg, scfg.integrator)
        energy_trace.append(("sliding", e_slid))
        walls["sliding"] += time.perf_counter() - t0

        measure_new = _merge_duplicates(measure_new, stack, scfg, ecfg)
        measure_new = prune(measure_new, scfg.prune_threshold)

        # Stall when the iteration's energy gain collapses, either
        # against the energy scale or against the previous gain: past
        # that point the oracle is fitting the noise floor.
        gain = prev_energy - e_slid
        if (gain <= scfg.stall_tol * max(1.0, abs(prev_energy))
                or (np.isfinite(prev_gain)
                    and gain <= scfg.stall_frac * prev_gain)):
            energy_trace = energy_trace[:-2]
            stop = STOP_STALLED
            n_outer = it
            break
        measure = measure_new
        prev_energy = e_slid
        prev_gain = gain

    return SolveReport(
        measure=measure,
        stop_reason=stop,
        n_outer=n_outer,
        energy_trace=energy_trace,
        certificate_trace=cert_trace,
        wall_times=walls,
        times=stack.times,
        grid=stack.grid,
        solver_config=scfg,
        energy_config=ecfg,
    )
