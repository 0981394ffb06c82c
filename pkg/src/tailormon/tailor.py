"""Ranking principal axes by the probability of being the most sensitive.

Monte Carlo draws from a change distribution estimate, for every
principal axis of the pre-change correlation matrix, the probability that
its projection is the single most sensitive one. A minimal set of axes
whose probabilities accumulate past a cutoff is then selected for
monitoring; 1 - cutoff bounds the probability of omitting the maximally
sensitive projection for a future change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .changemodel import (
    CHANGE_TYPES,
    ChangeDistributionSpec,
    Divergence,
    apply_change,
    apply_change_lagged,
    projection_sensitivities,
    sample_change,
)
from .corrcore import CorrelationMatrix, EigenSystem, eigensystem
from .errors import DimensionMismatch

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ProjectionSelection:
    """A chosen set of principal axes together with ranking diagnostics.

    ``indices`` are 0-based axis positions in descending-eigenvalue order
    (index 0 is the most varying axis, index D-1 the least varying),
    listed in selection order. ``argmax_probs`` and ``mean_sensitivity``
    cover all D axes. ``by_type`` optionally breaks ``argmax_probs`` down
    into per-change-type contributions.
    """

    indices: tuple[int, ...]
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    argmax_probs: np.ndarray
    cutoff: float
    draws: int
    mean_sensitivity: np.ndarray
    by_type: dict | None = field(default=None, compare=False)
    identity: bool = False

    def __post_init__(self):
        probs = np.asarray(self.argmax_probs, dtype=float)
        sens = np.asarray(self.mean_sensitivity, dtype=float)
        lam = np.asarray(self.eigenvalues, dtype=float)
        vec = np.asarray(self.eigenvectors, dtype=float)
        d = probs.shape[0]
        j = len(self.indices)
        if sens.shape != (d,):
            raise DimensionMismatch("mean_sensitivity must cover all axes")
        if lam.shape != (j,) or vec.shape[1] != j:
            raise DimensionMismatch("eigenpairs must match the selected indices")
        if len(set(self.indices)) != j or any(not 0 <= i < vec.shape[0] for i in self.indices):
            raise DimensionMismatch("selected indices must be unique and in range")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError("argmax probabilities must sum to 1")
        if not 0.0 <= self.cutoff <= 1.0:
            raise ValueError("cutoff must lie in [0, 1]")
        for arr in (probs, sens, lam, vec):
            arr.setflags(write=False)
        object.__setattr__(self, "argmax_probs", probs)
        object.__setattr__(self, "mean_sensitivity", sens)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", vec)
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def n_axes(self) -> int:
        return len(self.indices)


def _as_correlation(base) -> CorrelationMatrix:
    # Covariance matrices without a unit diagonal are rejected by the
    # CorrelationMatrix validator, never silently normalized.
    if isinstance(base, CorrelationMatrix):
        return base
    return CorrelationMatrix(base)


def estimate_argmax_probabilities(
    base,
    spec: ChangeDistributionSpec,
    draws: int,
    rng: np.random.Generator,
    divergence: Divergence | None = None,
    raw_dim: int | None = None,
    lag: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate of each axis's argmax probability.

    For each of ``draws`` sampled changes, the most sensitive projection
    gets one indicator count; the estimates are the normalized counts.
    Also returns the Monte Carlo mean sensitivity of every axis. Ties in
    the argmax (probability zero under continuous change sizes) resolve
    to the lowest axis index.

    With ``lag > 0``, ``base`` is a lag-extended correlation matrix of
    dimension ``raw_dim * (lag + 1)``; scenarios are sampled on the raw
    streams and duplicated across the stacked blocks.
    """
    phat, hbar, _ = _argmax_mc(base, spec, draws, rng, divergence, raw_dim, lag, by_type=False)
    return phat, hbar


def _argmax_mc(base, spec, draws, rng, divergence, raw_dim, lag, by_type: bool):
    base = _as_correlation(base)
    if draws < 1:
        raise ValueError("draws must be at least 1")
    if lag < 0:
        raise ValueError("lag must be non-negative")
    if lag > 0 and (raw_dim is None or base.dim != raw_dim * (lag + 1)):
        raise DimensionMismatch("lag > 0 needs raw_dim with base.dim == raw_dim * (lag + 1)")
    es = eigensystem(base)
    d = base.dim
    counts = np.zeros(d)
    hsum = np.zeros(d)
    type_counts = {c: np.zeros(d) for c in CHANGE_TYPES}
    type_hsum = {c: np.zeros(d) for c in CHANGE_TYPES}
    type_draws = {c: 0 for c in CHANGE_TYPES}
    if lag > 0:
        # scenarios are sampled against the raw-stream correlation, read off
        # the first diagonal block of the extended matrix
        block = base.values[:raw_dim, :raw_dim].copy()
        np.fill_diagonal(block, 1.0)
        sample_base = CorrelationMatrix(block)
    else:
        sample_base = base
    for _ in range(draws):
        sc = sample_change(spec, sample_base, rng)
        if lag > 0:
            post = apply_change_lagged(base, sc, raw_dim, lag)
        else:
            post = apply_change(base, sc)
        h = projection_sensitivities(es, post, divergence=divergence)
        j = int(np.argmax(h))
        counts[j] += 1.0
        hsum += h
        if by_type:
            type_counts[sc.ctype][j] += 1.0
            type_hsum[sc.ctype] += h
            type_draws[sc.ctype] += 1
    phat = counts / draws
    hbar = hsum / draws
    breakdown = None
    if by_type:
        breakdown = {
            c: {
                "draws": type_draws[c],
                "argmax_contribution": (type_counts[c] / draws).tolist(),
                "mean_sensitivity": (type_hsum[c] / type_draws[c]).tolist() if type_draws[c] else None,
            }
            for c in CHANGE_TYPES
        }
    return phat, hbar, breakdown


def select_axes(argmax_probs, cutoff: float) -> tuple[int, ...]:
    """Minimal axis set whose argmax probabilities accumulate past the cutoff.

    Axes are taken in decreasing probability order, ties broken toward
    the larger (less varying) axis index. A cutoff of 0 returns the
    single top axis so monitoring is never vacuous.
    """
    p = np.asarray(argmax_probs, dtype=float)
    if p.ndim != 1 or np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("argmax_probs must be a probability vector")
    if not 0.0 <= cutoff <= 1.0:
        raise ValueError("cutoff must lie in [0, 1]")
    d = p.shape[0]
    order = np.lexsort((-np.arange(d), -p))
    if cutoff <= 0.0:
        return (int(order[0]),)
    csum = np.cumsum(p[order])
    n = int(np.searchsorted(csum, cutoff - PROB_SUM_TOL) + 1)
    n = min(n, d)
    return tuple(int(i) for i in order[:n])


def tailor(
    base,
    spec: ChangeDistributionSpec,
    cutoff: float,
    draws: int = 10_000,
    rng: np.random.Generator | None = None,
    divergence: Divergence | None = None,
    raw_dim: int | None = None,
    lag: int = 0,
) -> ProjectionSelection:
    """Select the monitoring axes for a given change distribution.

    Composes the eigensystem, the Monte Carlo argmax-probability
    estimate and the cutoff selection. Deterministic for a fixed
    generator state.
    """
    base = _as_correlation(base)
    if rng is None:
        rng = np.random.default_rng()
    phat, hbar, breakdown = _argmax_mc(base, spec, draws, rng, divergence, raw_dim, lag, by_type=True)
    indices = select_axes(phat, cutoff)
    es = eigensystem(base)
    idx = np.asarray(indices, dtype=int)
    return ProjectionSelection(
        indices=indices,
        eigenvalues=es.values[idx],
        eigenvectors=es.vectors[:, idx],
        argmax_probs=phat,
        cutoff=float(cutoff),
        draws=int(draws),
        mean_sensitivity=hbar,
        by_type=breakdown,
    )


def manual_selection(es: EigenSystem, indices) -> ProjectionSelection:
    """Selection of explicitly chosen axes (e.g. the J most/least varying).

    The argmax probabilities of a manual selection carry no ranking
    information and are set uniform over all axes.
    """
    indices = tuple(int(i) for i in indices)
    d = es.dim
    idx = np.asarray(indices, dtype=int)
    return ProjectionSelection(
        indices=indices,
        eigenvalues=es.values[idx],
        eigenvectors=es.vectors[:, idx],
        argmax_probs=np.full(d, 1.0 / d),
        cutoff=0.0,
        draws=0,
        mean_sensitivity=np.zeros(d),
    )


def min_variance_selection(es: EigenSystem, n_axes: int) -> ProjectionSelection:
    """The ``n_axes`` least varying axes (largest indices)."""
    d = es.dim
    return manual_selection(es, range(d - n_axes, d))


def max_variance_selection(es: EigenSystem, n_axes: int) -> ProjectionSelection:
    """The ``n_axes`` most varying axes (smallest indices)."""
    return manual_selection(es, range(n_axes))


def identity_selection(dim: int) -> ProjectionSelection:
    """Identity projection: monitor every standardized raw stream.

    Used by the raw-data mixture baseline; the monitor code path is
    identical to axis monitoring with unit eigenvalues and unit vectors.
    """
    return ProjectionSelection(
        indices=tuple(range(dim)),
        eigenvalues=np.ones(dim),
        eigenvectors=np.eye(dim),
        argmax_probs=np.full(dim, 1.0 / dim),
        cutoff=0.0,
        draws=0,
        mean_sensitivity=np.zeros(dim),
        identity=True,
    )
