"""Forward observation model, phantoms and the dual certificate field.

A sensor grid covers the square [-1, 1]^2 with n_side x n_side uniform
nodes (endpoints included) carrying unnormalized Gaussian test functions
exp(-||x - node||^2 / (2 sigma^2)) of unit peak.  An observation stack
holds T frames at uniform times spanning [0, 1]; frame j is the vector
of test-function integrals against the sources at time t_j.

The separable structure of the kernels is exploited throughout: a frame
of a point source is the flattened outer product of two 1-d Gaussian
profiles, so grids of size 64 stay cheap inside solver loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import curves
from .curves import DiscreteCurve, DiscretizationScheme
from .exceptions import ConfigError
from .geometry import IntegratorConfig, MetricParams, wrap_angle


@dataclass(frozen=True)
class SensorGrid:
    """Uniform sensor layout on [-1, 1]^2.

    Nodes are ordered row-major with x fastest: node j = (axis[j % n],
    axis[j // n]), matching frame.reshape(n, n)[iy, ix].
    """

    n_side: int = 64
    sigma_kernel: float = 0.05

    def __post_init__(self):
        if self.n_side < 2:
            raise ConfigError("n_side must be >= 2")
        if not (self.sigma_kernel > 0.0):
            raise ConfigError("sigma_kernel must be positive")

    @property
    def axis(self):
        return np.linspace(-1.0, 1.0, self.n_side)

    @property
    def spacing(self) -> float:
        return 2.0 / (self.n_side - 1)

    @property
    def n_nodes(self) -> int:
        return self.n_side * self.n_side

    def nodes(self):
        ax = self.axis
        xg, yg = np.meshgrid(ax, ax)
        return np.stack([xg.ravel(), yg.ravel()], axis=-1)

    def profile_1d(self, coords):
        """Gaussian profile of each coordinate against the axis, (m, n)."""
        coords = np.atleast_1d(np.asarray(coords, dtype=float))
        d = coords[:, None] - self.axis[None, :]
        return np.exp(d * d / (-2.0 * self.sigma_kernel ** 2))

    def point_kernels(self, points):
        """Kernel vectors of planar points, shape (m, n_side^2)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        wx = self.profile_1d(points[:, 0])
        wy = self.profile_1d(points[:, 1])
        return (wy[:, :, None] * wx[:, None, :]).reshape(len(points), self.n_nodes)


def kernel_value(grid: SensorGrid, node_xy, point_xy):
    """Unit-peak Gaussian kernel of a node evaluated at a point."""
    node = np.asarray(node_xy, dtype=float)
    x = np.asarray(point_xy, dtype=float)
    d2 = np.sum((x - node) ** 2, axis=-1)
    return np.exp(d2 / (-2.0 * grid.sigma_kernel ** 2))


def forward_frame(points, intensities, grid: SensorGrid):
    """One frame of point sources: sum_i intensity_i * kernel(., p_i)."""
    k = grid.point_kernels(points)
    return np.asarray(intensities, dtype=float) @ k


@dataclass
class ObservationStack:
    """T frames at uniform times on [0, 1].

    frames has shape (T, n_side^2); times must be uniformly spaced with
    times[0] = 0 and times[-1] = 1.
    """

    times: np.ndarray
    frames: np.ndarray
    grid: SensorGrid

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.frames = np.asarray(self.frames, dtype=float)
        T = len(self.times)
        if T < 2:
            raise ConfigError("a stack needs at least 2 frames")
        if self.frames.shape != (T, self.grid.n_nodes):
            raise ConfigError(
                f"frames must be (T, n_side^2), got {self.frames.shape}"
            )
        gaps = np.diff(self.times)
        if (
            abs(self.times[0]) > 1e-12
            or abs(self.times[-1] - 1.0) > 1e-12
            or np.max(np.abs(gaps - gaps[0])) > 1e-9
        ):
            raise ConfigError("times must be uniform over [0, 1]")

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def copy(self) -> "ObservationStack":
        return ObservationStack(self.times.copy(), self.frames.copy(), self.grid)


def stack_times(n_frames: int):
    return np.linspace(0.0, 1.0, n_frames)


def forward_stack(
    atoms,
    times,
    grid: SensorGrid,
    params: MetricParams | None = None,
    integ: IntegratorConfig | None = None,
):
    """Frames of a measure: each atom contributes mass * amplitude(t) *
    kernel(., position(t)) per frame.

    `atoms` is any iterable of objects with .mass and .curve (or a
    measure exposing .atoms).
    """
    atoms = getattr(atoms, "atoms", atoms)
    times = np.asarray(times, dtype=float)
    out = np.zeros((len(times), grid.n_nodes))
    for atom in atoms:
        pts, amps = curves.sample_curve(atom.curve, times, params, integ)
        intensity = atom.mass * (amps if amps is not None else np.ones(len(times)))
        out += intensity[:, None] * grid.point_kernels(pts[:, :2])
    return out


def add_noise(stack: ObservationStack, level: float, seed: int):
    """Additive Gaussian noise scaled to an exact relative Frobenius level.

    w = level * ||frames||_F / ||n||_F * n with n drawn standard normal
    from a fresh generator seeded with `seed`; level 0 (or a zero stack)
    returns an identical copy.
    """
    if level < 0:
        raise ConfigError("noise level must be >= 0")
    noisy = stack.copy()
    if level == 0.0:
        return noisy
    rng = np.random.default_rng(seed)
    n = rng.standard_normal(stack.frames.shape)
    data_norm = np.linalg.norm(stack.frames)
    if data_norm == 0.0:
        return noisy
    noisy.frames = stack.frames + (level * data_norm / np.linalg.norm(n)) * n
    return noisy


class Certificate:
    """Continuum dual-certificate field of a residual stack.

    eta_i(x) = (1/weight) * sum_j residual[i, j] * kernel_j(x); most
    negative where unexplained positive mass sits.  Evaluation and
    gradient use the separable kernel structure.
    """

    def __init__(self, residual, grid: SensorGrid, weight: float):
        if not (weight > 0.0):
            raise ConfigError("certificate weight must be positive")
        self.grid = grid
        self.weight = float(weight)
        n = grid.n_side
        self.images = np.asarray(residual, dtype=float).reshape(-1, n, n) / weight

    @property
    def n_slices(self) -> int:
        return len(self.images)

    def eval(self, i: int, points):
        """Values of slice i at planar points, shape (m,)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        wx = self.grid.profile_1d(points[:, 0])
        wy = self.grid.profile_1d(points[:, 1])
        return np.einsum("my,yx,mx->m", wy, self.images[i], wx)

    def eval_each(self, positions):
        """Slice-wise values: positions (T, 2) -> (T,), slice i at row i."""
        positions = np.asarray(positions, dtype=float)
        wx = self.grid.profile_1d(positions[:, 0])
        wy = self.grid.profile_1d(positions[:, 1])
        return np.einsum("my,myx,mx->m", wy, self.images, wx)

    def grad_each(self, positions):
        """Planar gradients per slice: positions (T, 2) -> (T, 2)."""
        positions = np.asarray(positions, dtype=float)
        s2 = self.grid.sigma_kernel ** 2
        wx = self.grid.profile_1d(positions[:, 0])
        wy = self.grid.profile_1d(positions[:, 1])
        dx = (self.grid.axis[None, :] - positions[:, 0:1]) / s2
        dy = (self.grid.axis[None, :] - positions[:, 1:2]) / s2
        gx = np.einsum("my,myx,mx->m", wy, self.images, wx * dx)
        gy = np.einsum("my,myx,mx->m", wy * dy, self.images, wx)
        return np.stack([gx, gy], axis=-1)

    def on_grid(self):
        """Field values at the sensor nodes, shape (T, n_side^2)."""
        g = self.grid.profile_1d(self.grid.axis)
        vals = np.einsum("ya,tyx,xb->tab", g, self.images, g)
        return vals.reshape(self.n_slices, -1)


def certificate_field(residual, grid: SensorGrid, weight: float) -> Certificate:
    """Build the certificate of a residual stack (Phi m - data)."""
    return Certificate(residual, grid, weight)


def certificate_pairing(
    cert: Certificate,
    atoms,
    times,
    params: MetricParams | None = None,
    integ: IntegratorConfig | None = None,
):
    """Pairing <eta, m> = sum_atoms mass * sum_i amp(t_i) eta_i(pos(t_i)).

    With weight 1 this is the adjoint of the forward map applied to the
    residual, evaluated on the measure.
    """
    atoms = getattr(atoms, "atoms", atoms)
    times = np.asarray(times, dtype=float)
    total = 0.0
    for atom in atoms:
        pts, amps = curves.sample_curve(atom.curve, times, params, integ)
        vals = cert.eval_each(pts[:, :2])
        if amps is not None:
            vals = vals * amps
        total += atom.mass * float(np.sum(vals))
    return total


@dataclass
class GroundTruth:
    """Reference trajectories and masses behind a phantom stack."""

    curves: list
    masses: list

    def __post_init__(self):
        if len(self.curves) != len(self.masses):
            raise ConfigError("curves and masses must align")
        if any(m <= 0 for m in self.masses):
            raise ConfigError("truth masses must be positive")


def _heading(dx, dy):
    return wrap_angle(np.arctan2(dy, dx))


def _polygonal_truth(times, xy, amps=None):
    th = _heading(np.gradient(xy[:, 0], times), np.gradient(xy[:, 1], times))
    controls = np.column_stack([xy, th])
    return DiscreteCurve(
        DiscretizationScheme.POLYGONAL, controls, amplitudes=amps
    )


def make_phantom(
    name: str,
    n_frames: int,
    grid: SensorGrid | None = None,
    unbalanced: bool = False,
):
    """Construct a named synthetic scene: (noiseless stack, ground truth).

    "crossing2": two straight unit-speed trajectories crossing at the
    origin at t = 0.5.  "triple3": three sources traversing one shared
    arc at staggered offsets, so their paths overlap as point sets while
    their instantaneous positions never meet.  Unbalanced variants carry
    smoothly varying amplitudes, one of them fading out near its end.
    """
    grid = grid or SensorGrid()
    t = stack_times(n_frames)
    if name == "crossing2":
        a_xy = np.column_stack([-0.7 + 1.4 * t, -0.5 + 1.0 * t])
        b_xy = np.column_stack([-0.7 + 1.4 * t, 0.5 - 1.0 * t])
        if unbalanced:
            amp_a = 0.6 + 0.9 * t
            amp_b = 1.4 * (1.0 - t) + 0.05
        else:
            amp_a = amp_b = None
        truth_curves = [
            _polygonal_truth(t, a_xy, amp_a),
            _polygonal_truth(t, b_xy, amp_b),
        ]
    elif name == "triple3":
        offsets = (0.0, 0.2, 0.4)
        span = 1.0 + offsets[-1]

        def arc(s):
            u = s / span
            x = -0.8 + 1.6 * u
            y = 0.5 * np.sin(np.pi * u) - 0.1
            return np.column_stack([x, y])

        truth_curves = []
        for off in offsets:
            xy = arc(t + off)
            amps = (0.7 + 0.6 * np.sin(np.pi * t)) if unbalanced else None
            truth_curves.append(_polygonal_truth(t, xy, amps))
    else:
        raise ConfigError(f"unknown phantom {name!r}")

    # unit masses throughout: time variation lives in the amplitude
    # channel, and the truth records exactly what generated the frames
    atoms = [_TruthAtom(1.0, c) for c in truth_curves]
    frames = forward_stack(atoms, t, grid)
    stack = ObservationStack(t, frames, grid)
    return stack, GroundTruth(truth_curves, [1.0] * len(truth_curves))


@dataclass
class _TruthAtom:
    mass: float
    curve: DiscreteCurve
