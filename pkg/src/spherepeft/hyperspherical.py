"""Hyperspherical energy of a weight matrix.

Neurons are the columns of ``W``: a left-multiplied orthogonal ``R`` rotates
every column alike, so ``HE(R @ W) == HE(W)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["EnergyReport", "hyperspherical_energy", "energy_gap", "normalized_neurons"]

DISTANCE_GUARD = 1e-12


@dataclass(frozen=True)
class EnergyReport:
    energy: float
    pair_count: int
    min_pair_distance: float
    clipped_pairs: int

    def to_dict(self) -> dict:
        return asdict(self)


def normalized_neurons(W) -> np.ndarray:
    """Columns of ``W`` scaled to unit L2 norm."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {W.shape}")
    if W.shape[1] < 2:
        raise ValueError("hyperspherical energy needs at least 2 neurons")
    sq = np.zeros(W.shape[1])
    for row in W:
        sq += row * row
    norms = np.sqrt(sq)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"zero-norm neuron(s) at column(s) {zero.tolist()}")
    return np.ascontiguousarray(W / norms)


def hyperspherical_energy(W) -> EnergyReport:
    """Sum of inverse distances over ordered pairs of normalized neurons.

    Distances below ``DISTANCE_GUARD`` are clamped to it and counted in
    ``clipped_pairs``.
    """
    U = normalized_neurons(W)
    N = U.shape[1]
    # accumulate one coordinate at a time: every pair sees the same summation
    # order wherever it sits, and the matrix is exactly symmetric
    sq = np.zeros((N, N))
    for row in U:
        diff = row[:, None] - row[None, :]
        sq += diff * diff
    dist = np.sqrt(sq)
    off = ~np.eye(N, dtype=bool)
    pair_dist = dist[off]
    clipped = pair_dist < DISTANCE_GUARD
    pair_dist = np.where(clipped, DISTANCE_GUARD, pair_dist)
    # fsum is correctly rounded, so neuron order cannot change the result
    energy = math.fsum(1.0 / pair_dist)
    return EnergyReport(
        energy=float(energy),
        pair_count=N * (N - 1),
        min_pair_distance=float(pair_dist.min()),
        clipped_pairs=int(clipped.sum()),
    )


def energy_gap(W, W0) -> float:
    """``|HE(W) - HE(W0)|``."""
    W = np.asarray(W, dtype=np.float64)
    W0 = np.asarray(W0, dtype=np.float64)
    if W.shape != W0.shape:
        raise ValueError(f"shape mismatch: {W.shape} vs {W0.shape}")
    return abs(hyperspherical_energy(W).energy - hyperspherical_energy(W0).energy)
