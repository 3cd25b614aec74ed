"""Scikit-learn style facade over the solver.

TrajectoryRecovery holds flat hyperparameters (mirroring the solver and
energy configs), fits an observation stack, and predicts reconstructed
frames at requested times.  It follows the estimator contract: bare
attribute storage in __init__, validation and work in fit, fitted state
in trailing-underscore attributes, get_params/set_params/clone support
via BaseEstimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .curves import DiscretizationScheme, eval_curve
from .energy import EnergyConfig
from .exceptions import ConfigError
from .geometry import MetricParams
from .observation import ObservationStack, SensorGrid, forward_stack
from .solver import SolverConfig, solve


class TrajectoryRecovery(BaseEstimator):
    """Recover weighted point-source trajectories from a frame stack.

    Parameters mirror the energy weights (beta, zeta, alpha_mass,
    energy_exponent), the metric (epsilon, xi), and the solver knobs
    (scheme, n_controls, multistart, max_outer_iters, balanced, seed).
    """

    def __init__(
        self,
        beta: float = 1e-2,
        epsilon: float = 1.0,
        xi: float = 1.0,
        zeta: float = 0.0,
        alpha_mass: float = 0.0,
        energy_exponent: int = 2,
        scheme: str = "bezier",
        n_controls: int = 5,
        multistart: int = 8,
        max_outer_iters: int = 10,
        balanced: bool = True,
        seed: int = 0,
    ):
        self.beta = beta
        self.epsilon = epsilon
        self.xi = xi
        self.zeta = zeta
        self.alpha_mass = alpha_mass
        self.energy_exponent = energy_exponent
        self.scheme = scheme
        self.n_controls = n_controls
        self.multistart = multistart
        self.max_outer_iters = max_outer_iters
        self.balanced = balanced
        self.seed = seed

    def _configs(self):
        ecfg = EnergyConfig(
            beta=self.beta,
            metric=MetricParams(epsilon=self.epsilon, xi=self.xi),
            zeta=self.zeta,
            alpha_mass=self.alpha_mass,
            energy_exponent=self.energy_exponent,
        )
        scfg = SolverConfig(
            scheme=DiscretizationScheme(self.scheme),
            n_controls=self.n_controls,
            multistart=self.multistart,
            max_outer_iters=self.max_outer_iters,
            balanced=self.balanced,
            seed=self.seed,
        )
        return scfg, ecfg

    @staticmethod
    def _as_stack(X) -> ObservationStack:
        if isinstance(X, ObservationStack):
            return X
        frames = np.asarray(X, dtype=float)
        if frames.ndim != 2:
            raise ConfigError("X must be an ObservationStack or a (T, n^2) array")
        n_side = int(round(np.sqrt(frames.shape[1])))
        if n_side * n_side != frames.shape[1]:
            raise ConfigError(f"{frames.shape[1]} pixels is not a square grid")
        grid = SensorGrid(n_side=n_side)
        return ObservationStack(
            np.linspace(0.0, 1.0, frames.shape[0]), frames, grid
        )

    def fit(self, X, y=None):
        """Run the reconstruction on a stack (or raw (T, n^2) frames)."""
        del y
        stack = self._as_stack(X)
        scfg, ecfg = self._configs()
        self.report_ = solve(stack, scfg, ecfg)
        self.measure_ = self.report_.measure
        self.n_atoms_ = self.measure_.n_atoms
        self.stop_reason_ = self.report_.stop_reason
        return self

    def _check_fitted(self):
        if not hasattr(self, "report_"):
            raise ConfigError("estimator is not fitted; call fit first")

    def predict(self, T):
        """Reconstructed frames at times T (values in [0, 1]), (len(T), n^2)."""
        self._check_fitted()
        times = np.atleast_1d(np.asarray(T, dtype=float)).ravel()
        scfg, ecfg = self._configs()
        return forward_stack(
            self.measure_, times, self.report_.grid, ecfg.metric, scfg.integrator
        )

    def trajectories(self, T):
        """Recovered states at times T: array (n_atoms, len(T), 3)."""
        self._check_fitted()
        times = np.atleast_1d(np.asarray(T, dtype=float)).ravel()
        scfg, ecfg = self._configs()
        return np.stack(
            [
                eval_curve(atom.curve, times, ecfg.metric, scfg.integrator)
                for atom in self.measure_.atoms
            ]
        ) if self.measure_.atoms else np.zeros((0, len(times), 3))

    def score(self, X, y=None):
        """Negative residual energy of the fit on X (higher is better)."""
        del y
        self._check_fitted()
        stack = self._as_stack(X)
        model = self.predict(stack.times)
        return -0.5 * float(np.sum((model - stack.frames) ** 2))
