"""Pairwise spectrogram losses and output-to-speaker assignment criteria.

PIT scans every permutation of a precomputed pairwise-loss matrix;
location-based criteria pair outputs with speakers sorted by azimuth or
distance and evaluate only the N matched pairs. Every report carries exact
evaluation counters so the factorial/linear cost difference can be checked.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_PIT_SPEAKERS = 8
DEFAULT_THRESHOLD = 20.0


class Criterion(str, enum.Enum):
    PIT = "pit"
    AZIMUTH = "azimuth"
    DISTANCE = "distance"
    COMBINED = "combined"


@dataclass(frozen=True)
class Assignment:
    pairing: tuple  # pairing[n] = speaker assigned to output n (0-based)
    criterion: Criterion

    def __post_init__(self):
        if sorted(self.pairing) != list(range(len(self.pairing))):
            raise ValueError(f"pairing {self.pairing} is not a permutation")


@dataclass(frozen=True)
class CriterionReport:
    total_loss: float
    assignment: Assignment
    pairwise_evals: int
    permutations_scanned: int
    per_pair_losses: tuple

    def to_json(self) -> dict:
        return {
            "criterion": self.assignment.criterion.value,
            "loss": self.total_loss,
            "pairing": [p + 1 for p in self.assignment.pairing],
            "pairwise_evals": self.pairwise_evals,
            "permutations_scanned": self.permutations_scanned,
            "per_pair_losses": list(self.per_pair_losses),
        }


def _pair(est, ref):
    est = np.asarray(est)
    ref = np.asarray(ref)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    return est, ref


def loss_ri(est, ref) -> float:
    """Mean absolute error of the real parts plus that of the imaginary parts."""
    est, ref = _pair(est, ref)
    diff = est - ref
    return float(np.mean(np.abs(diff.real)) + np.mean(np.abs(diff.imag)))


def loss_ri_mag(est, ref) -> float:
    """:func:`loss_ri` plus the mean absolute magnitude error."""
    est, ref = _pair(est, ref)
    return loss_ri(est, ref) + float(np.mean(np.abs(np.abs(est) - np.abs(ref))))


def _check_lists(estimates, targets):
    if len(estimates) != len(targets):
        raise ValueError(f"{len(estimates)} estimates for {len(targets)} targets")
    if len(estimates) == 0:
        raise ValueError("no speakers")


def pairwise_matrix(estimates, targets, pairwise_loss=loss_ri_mag) -> np.ndarray:
    """``M[n, k] = pairwise_loss(estimates[n], targets[k])``."""
    _check_lists(estimates, targets)
    n = len(estimates)
    return np.array([[pairwise_loss(estimates[i], targets[k]) for k in range(n)] for i in range(n)])


@lru_cache(maxsize=MAX_PIT_SPEAKERS)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.intp).reshape(-1, n)


def pit_assign(estimates, targets, pairwise_loss=loss_ri_mag) -> CriterionReport:
    """Utterance-level permutation-invariant assignment.

    Builds the N x N loss matrix once (N**2 loss evaluations) and scans all
    N! permutations for the smallest summed loss. Ties keep the
    lexicographically first permutation. The reported loss is the summed
    loss divided by N.
    """
    _check_lists(estimates, targets)
    n = len(estimates)
    if n > MAX_PIT_SPEAKERS:
        raise ValueError(f"PIT limited to {MAX_PIT_SPEAKERS} speakers, got {n}")
    matrix = pairwise_matrix(estimates, targets, pairwise_loss)
    perms = _permutations(n)
    totals = matrix[np.arange(n), perms].sum(axis=1)
    # permutations are in lexicographic order and argmin keeps the first minimum
    best = int(np.argmin(totals))
    best_perm = tuple(int(k) for k in perms[best])
    per_pair = tuple(float(matrix[r, best_perm[r]]) for r in range(n))
    return CriterionReport(
        float(totals[best]) / n, Assignment(best_perm, Criterion.PIT), n * n, len(perms), per_pair
    )


def lbt_assign(estimates, targets, order, pairwise_loss=loss_ri_mag, criterion=Criterion.AZIMUTH) -> CriterionReport:
    """Location-based assignment: output ``n`` is paired with speaker ``order[n]``.

    ``order`` comes from :func:`locsep.acoustics.geometry_truth`. Exactly N
    pairwise losses are evaluated.
    """
    _check_lists(estimates, targets)
    order = tuple(int(i) for i in order)
    if len(order) != len(targets):
        raise ValueError("order length does not match speaker count")
    assignment = Assignment(order, Criterion(criterion))
    per_pair = tuple(pairwise_loss(estimates[n], targets[order[n]]) for n in range(len(order)))
    return CriterionReport(sum(per_pair) / len(order), assignment, len(order), 1, per_pair)


def circular_diff(a, b):
    """Absolute angular difference in degrees, folded into [0, 180]."""
    d = np.mod(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)), 360.0)
    out = np.minimum(d, 360.0 - d)
    return float(out) if np.ndim(out) == 0 else out


def min_azimuth_gap(azimuths) -> float:
    az = np.asarray(azimuths, dtype=float)
    if az.size < 2:
        raise ValueError("need at least two azimuths")
    i, j = np.triu_indices(az.size, 1)
    return float(np.min(circular_diff(az[i], az[j])))


def dynamic_select(azimuths, threshold: float = DEFAULT_THRESHOLD) -> Criterion:
    """Azimuth when every pair of estimates is more than ``threshold`` degrees apart, else Distance."""
    if hasattr(azimuths, "azimuths"):
        azimuths = azimuths.azimuths
    return Criterion.AZIMUTH if min_azimuth_gap(azimuths) > threshold else Criterion.DISTANCE
