"""Variational energy over measures on curves.

The objective splits into a data term (squared or plain Frobenius
mismatch summed over frames) and a regularizer that charges each atom
mass * (alpha_mass + beta * path_energy) plus, in unbalanced mode,
zeta * ||amplitude controls||^2 per atom (not weighted by mass).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import curves as curves_mod
from . import observation
from .curves import DiscreteCurve
from .exceptions import ConfigError, NegativeMass
from .geometry import IntegratorConfig, MetricParams
from .observation import ObservationStack


@dataclass
class EnergyConfig:
    """Weights of the energy functional.

    beta scales the path energy, zeta the amplitude-channel penalty,
    alpha_mass a flat per-unit-mass charge.  energy_exponent selects
    between squared velocity norm (2, the default) and plain norm (1)
    inside the path integral; data_squared selects 0.5*s^2 versus s for
    the per-frame mismatch rho(s).
    """

    beta: float = 1e-2
    metric: MetricParams = field(default_factory=MetricParams)
    zeta: float = 0.0
    alpha_mass: float = 0.0
    energy_exponent: int = 2
    data_squared: bool = True
    quad_nodes: int = 8

    def __post_init__(self):
        if not (self.beta > 0.0):
            raise ConfigError("beta must be positive")
        if self.zeta < 0.0 or self.alpha_mass < 0.0:
            raise ConfigError("zeta and alpha_mass must be >= 0")
        if self.energy_exponent not in (1, 2):
            raise ConfigError("energy_exponent must be 1 or 2")
        if self.quad_nodes < 1:
            raise ConfigError("quad_nodes must be >= 1")


@dataclass
class Atom:
    """A weighted curve: one spike of the measure."""

    mass: float
    curve: DiscreteCurve

    def __post_init__(self):
        if not np.isfinite(self.mass):
            raise ConfigError("atom mass must be finite")

    def copy(self) -> "Atom":
        return Atom(self.mass, self.curve.copy())


@dataclass
class MeasureState:
    """A finite collection of atoms; the solver's iterate."""

    atoms: list

    def __post_init__(self):
        self.atoms = list(self.atoms)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def total_mass(self) -> float:
        return float(sum(a.mass for a in self.atoms))

    def copy(self) -> "MeasureState":
        return MeasureState([a.copy() for a in self.atoms])

    def validate_masses(self, strict: bool = True):
        for a in self.atoms:
            if a.mass < 0 and strict:
                raise NegativeMass(f"atom mass {a.mass} < 0")


def curve_regularizer_weight(
    curve: DiscreteCurve,
    cfg: EnergyConfig,
    integ: IntegratorConfig | None = None,
) -> float:
    """Per-unit-mass regularizer cost of a curve:
    alpha_mass + beta * path_energy."""
    w = curves_mod.path_energy(
        curve, cfg.metric, cfg.quad_nodes, cfg.energy_exponent, integ
    )
    return cfg.alpha_mass + cfg.beta * w


def data_term(
    measure,
    stack: ObservationStack,
    cfg: EnergyConfig,
    integ: IntegratorConfig | None = None,
) -> float:
    """Sum over frames of rho(||Phi m - frame||_2)."""
    model = observation.forward_stack(
        measure, stack.times, stack.grid, cfg.metric, integ
    )
    return residual_data_term(model - stack.frames, cfg)


def residual_data_term(residual, cfg: EnergyConfig) -> float:
    norms = np.linalg.norm(np.asarray(residual, dtype=float), axis=-1)
    if cfg.data_squared:
        return float(0.5 * np.sum(norms * norms))
    return float(np.sum(norms))


def regularizer(
    measure,
    cfg: EnergyConfig,
    integ: IntegratorConfig | None = None,
) -> float:
    """sum_atoms mass * (alpha_mass + beta * path_energy)
    + zeta * sum_atoms ||amplitude controls||^2."""
    atoms = getattr(measure, "atoms", measure)
    total = 0.0
    for atom in atoms:
        total += atom.mass * curve_regularizer_weight(atom.curve, cfg, integ)
        if cfg.zeta > 0.0 and atom.curve.amplitudes is not None:
            total += cfg.zeta * float(np.sum(atom.curve.amplitudes ** 2))
    return total


def total_energy(
    measure,
    stack: ObservationStack,
    cfg: EnergyConfig,
    integ: IntegratorConfig | None = None,
) -> float:
    return data_term(measure, stack, cfg, integ) + regularizer(measure, cfg, integ)


def fw_ball_bound(frames, beta: float) -> float:
    """Radius of the search ball of the conditional-gradient oracle:
    ||data||_F / (2 beta)."""
    if not (beta > 0.0):
        raise ConfigError("beta must be positive")
    return float(np.linalg.norm(np.asarray(frames, dtype=float)) / (2.0 * beta))
