"""Reconstruction quality metrics against a known ground truth.

Atoms are matched to truth curves by exhaustive optimal assignment, then
scored: planar RMSE over the matched pairs, endpoint error, a symmetric
mass error, and a topological crossing flag (paths intersect AND the
matched endpoints agree with the truth's, which separates a genuine
crossing from a bounce-off whose tips merely touch).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .curves import DiscreteCurve, sample_curve
from .energy import MeasureState
from .geometry import IntegratorConfig, MetricParams
from .observation import GroundTruth

# Matched endpoints farther than this from the truth's are treated as a
# topology mismatch (swap or bounce).  Good reconstructions land within a
# few grid spacings (~0.05); a bounce-off ends a full branch width (~1.0)
# away, so the gap is wide.
ENDPOINT_MATCH_RADIUS = 0.25

# Samples per path for the pairwise segment-intersection test.
INTERSECT_SAMPLES = 200


@dataclass
class TrajectoryMetrics:
    """Scores of a recovered measure against the generating truth.

    mass_relative_error is symmetric-multiplicative: max(r/t, t/r) - 1
    over matched pairs, so "within a factor F" reads as <= F - 1.
    """

    matched_rmse: float
    endpoint_error: float
    crossing_detected: bool
    mass_relative_error: float


def polyline_intersects(a, b) -> bool:
    """True iff planar polylines a, b (each (m, 2)) share a point.

    Inclusive test: touching endpoints count.  Vectorized orientation
    predicate over all segment pairs.
    """
    a = np.asarray(a, dtype=float)[:, :2]
    b = np.asarray(b, dtype=float)[:, :2]
    p, r = a[:-1], a[1:] - a[:-1]
    q, s = b[:-1], b[1:] - b[:-1]

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    # Pairwise (i, j): segment i of a against segment j of b.
    qp = q[None, :, :] - p[:, None, :]
    rxs = cross(r[:, None, :], s[None, :, :])
    qpxr = cross(qp, r[:, None, :])
    qpxs = cross(qp, s[None, :, :])

    tiny = 1e-12
    general = np.abs(rxs) > tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(general, qpxs / rxs, np.nan)
        u = np.where(general, qpxr / rxs, np.nan)
    hit = general & (t >= -tiny) & (t <= 1 + tiny) & (u >= -tiny) & (u <= 1 + tiny)
    if np.any(hit):
        return True

    # Collinear overlap: project onto the segment direction.
    collinear = (~general) & (np.abs(qpxr) <= tiny)
    if np.any(collinear):
        rr = np.sum(r * r, axis=-1)[:, None]
        t0 = np.sum(qp * r[:, None, :], axis=-1)
        t1 = t0 + np.sum(s[None, :, :] * r[:, None, :], axis=-1)
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        overlap = collinear & (hi >= -tiny) & (lo <= rr + tiny) & (rr > tiny)
        if np.any(overlap):
            return True
    return False


def _planar(curve: DiscreteCurve, t, params, integ):
    pts, _ = sample_curve(curve, t, params, integ)
    return pts[:, :2]


def _intensity(curve: DiscreteCurve, mass: float, t) -> float:
    """Observable source intensity: mass times the mean amplitude.

    The mass/amplitude split is scale-degenerate (only their product is
    seen by the forward operator), so comparisons use the product.
    """
    pts, amps = sample_curve(curve, t)
    del pts
    if amps is None:
        return float(mass)
    return float(mass * np.mean(amps))


def truth_crossing_pairs(truth: GroundTruth, n_samples: int = INTERSECT_SAMPLES):
    """Index pairs (i, j), i < j, of truth curves whose paths intersect."""
    t = np.linspace(0.0, 1.0, n_samples)
    paths = [_planar(c, t, None, None) for c in truth.curves]
    pairs = []
    for i, j in itertools.combinations(range(len(paths)), 2):
        if polyline_intersects(paths[i], paths[j]):
            pairs.append((i, j))
    return pairs


def _best_assignment(cost):
    """Minimal-cost injective matching, exhaustive over permutations.

    cost is (n_truth, n_atoms); returns matched (truth_i, atom_j) pairs
    covering the smaller side.
    """
    n_truth, n_atoms = cost.shape
    best, best_pairs = np.inf, []
    if n_atoms >= n_truth:
        for perm in itertools.permutations(range(n_atoms), n_truth):
            c = float(sum(cost[i, perm[i]] for i in range(n_truth)))
            if c < best:
                best = c
                best_pairs = [(i, perm[i]) for i in range(n_truth)]
    else:
        for perm in itertools.permutations(range(n_truth), n_atoms):
            c = float(sum(cost[perm[j], j] for j in range(n_atoms)))
            if c < best:
                best = c
                best_pairs = [(perm[j], j) for j in range(n_atoms)]
    return best_pairs


def compute_metrics(
    recovered: MeasureState,
    truth: GroundTruth,
    stack_times,
    params: MetricParams | None = None,
    integ: IntegratorConfig | None = None,
) -> TrajectoryMetrics:
    """Score a recovered measure against the ground truth.

    Matching minimizes the summed per-slice planar distance over all
    injective assignments of truth curves to atoms; surplus atoms stay
    unmatched and do not enter the scores.  With no atoms the RMSE and
    errors are infinite and crossing_detected is false.
    """
    times = np.asarray(stack_times, dtype=float)
    n_truth = len(truth.curves)
    if recovered.n_atoms == 0 or n_truth == 0:
        return TrajectoryMetrics(np.inf, np.inf, False, np.inf)

    rec_paths = [_planar(a.curve, times, params, integ) for a in recovered.atoms]
    tru_paths = [_planar(c, times, None, None) for c in truth.curves]

    cost = np.empty((n_truth, recovered.n_atoms))
    for i, tp in enumerate(tru_paths):
        for j, rp in enumerate(rec_paths):
            cost[i, j] = np.sum(np.hypot(*(rp - tp).T))
    pairs = _best_assignment(cost)
    atom_of = {i: j for i, j in pairs}

    sq = [np.sum((rec_paths[j] - tru_paths[i]) ** 2, axis=1) for i, j in pairs]
    matched_rmse = float(np.sqrt(np.mean(np.concatenate(sq))))

    end_d = {}
    for i, j in pairs:
        rp, tp = rec_paths[j], tru_paths[i]
        end_d[i] = (np.hypot(*(rp[0] - tp[0])), np.hypot(*(rp[-1] - tp[-1])))
    endpoint_error = float(np.mean([d for ds in end_d.values() for d in ds]))

    mass_err = 0.0
    for i, j in pairs:
        atom = recovered.atoms[j]
        r = _intensity(atom.curve, atom.mass, times)
        t = _intensity(truth.curves[i], truth.masses[i], times)
        if r <= 0.0 or t <= 0.0:
            mass_err = np.inf
        else:
            mass_err = max(mass_err, max(r / t, t / r) - 1.0)

    dense = np.linspace(0.0, 1.0, INTERSECT_SAMPLES)
    crossing = False
    for i, j in truth_crossing_pairs(truth):
        if i not in atom_of or j not in atom_of:
            continue
        if max(end_d[i] + end_d[j]) > ENDPOINT_MATCH_RADIUS:
            continue
        pi = _planar(recovered.atoms[atom_of[i]].curve, dense, params, integ)
        pj = _planar(recovered.atoms[atom_of[j]].curve, dense, params, integ)
        if polyline_intersects(pi, pj):
            crossing = True
            break

    return TrajectoryMetrics(matched_rmse, endpoint_error, crossing, mass_err)
