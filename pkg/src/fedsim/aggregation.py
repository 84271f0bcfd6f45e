"""Server-side aggregation: FedAvg, coordinate-wise Median, Trimmed-mean,
the norm-clipping pre-step, and the global model update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vectors import NonFiniteError, ParamVector, check_finite, l2_norm

VARIANTS = ("fedavg", "median", "trimmed_mean")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    fake: bool
    update: ParamVector
    n_examples: int = 1  # only consulted by weighted FedAvg


@dataclass(frozen=True)
class AggregationRule:
    variant: str  # one of VARIANTS
    trim_k: int | None = None  # None: per-round oracle k = fake clients selected;
    # a fixed value expresses a defender keyed to the total fake count instead
    clip_bound: float | None = None  # None or inf: no clipping
    weighted: bool = False  # FedAvg only: weight clients by example count

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.trim_k is not None and self.trim_k < 0:
            raise ValueError("trim_k must be >= 0")
        if self.clip_bound is not None and not self.clip_bound > 0:
            raise ValueError("clip_bound must be > 0")
        if self.weighted and self.variant != "fedavg":
            raise ValueError("example-count weighting applies to fedavg only")


def _stack(updates: list[ClientUpdate]) -> np.ndarray:
    if not updates:
        raise ValueError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    dim = ordered[0].update.shape
    for u in ordered:
        if u.update.shape != dim:
            raise ValueError(f"dimension mismatch for client {u.client_id}")
        check_finite(u.update, f"update from client {u.client_id}")
    return np.stack([u.update for u in ordered])


def clip_update(g: ParamVector, bound: float | None) -> ParamVector:
    """Rescale g so its norm is at most bound; below-bound vectors pass through."""
    if bound is None or np.isinf(bound):
        return g
    if bound <= 0:
        raise ValueError("clip bound must be > 0")
    norm = l2_norm(g)
    if norm <= bound:
        return g
    return g * (bound / norm)


def agg_fedavg(updates: list[ClientUpdate], weighted: bool = False) -> ParamVector:
    """Coordinate-wise mean in ascending client-id order; unweighted by default,
    optionally weighted by each client's claimed example count."""
    stacked = _stack(updates)
    # overflow to inf here is legal: apply_global turns it into a hard error
    with np.errstate(over="ignore", invalid="ignore"):
        if not weighted:
            return stacked.mean(axis=0)
        counts = np.array([u.n_examples for u in sorted(updates, key=lambda u: u.client_id)], dtype=np.float64)
        if np.any(counts <= 0):
            raise ValueError("example counts must be positive for weighted fedavg")
        return (stacked * counts[:, None]).sum(axis=0) / counts.sum()


def agg_median(updates: list[ClientUpdate]) -> ParamVector:
    """Coordinate-wise median; even counts average the two central values."""
    return np.median(_stack(updates), axis=0)


def agg_trimmed_mean(updates: list[ClientUpdate], k: int) -> ParamVector:
    """Per coordinate, drop the k largest and k smallest values, then average."""
    stacked = _stack(updates)
    count = stacked.shape[0]
    if k < 0:
        raise ValueError("trim count must be >= 0")
    if 2 * k >= count:
        raise ValueError(f"trim count {k} leaves nothing from {count} updates")
    if k == 0:
        return stacked.mean(axis=0)
    return np.sort(stacked, axis=0)[k : count - k].mean(axis=0)


def aggregate(
    rule: AggregationRule, updates: list[ClientUpdate], fake_selected: int
) -> tuple[ParamVector, int, list[str]]:
    """Clip (if configured) then aggregate; returns (g, effective k, warnings).

    Trimmed-mean falls back to the coordinate-wise median when 2k would
    consume every value, which can happen under low sample rates.
    """
    warnings: list[str] = []
    if rule.clip_bound is not None:
        updates = [
            ClientUpdate(u.client_id, u.fake, clip_update(u.update, rule.clip_bound), u.n_examples)
            for u in updates
        ]
    if rule.variant == "fedavg":
        return agg_fedavg(updates, rule.weighted), 0, warnings
    if rule.variant == "median":
        return agg_median(updates), 0, warnings
    k = rule.trim_k if rule.trim_k is not None else fake_selected
    if 2 * k >= len(updates):
        warnings.append(f"trim k={k} >= half of {len(updates)} updates; fell back to median")
        return agg_median(updates), k, warnings
    return agg_trimmed_mean(updates, k), k, warnings


def apply_global(w_t: ParamVector, g_t: ParamVector, eta: float) -> ParamVector:
    """Global update step: w + eta * g. Non-finite results are a hard error,
    the symptom of unclipped scaled updates blowing up under FedAvg."""
    if w_t.shape != g_t.shape:
        raise ValueError("dimension mismatch between model and update")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    with np.errstate(over="ignore", invalid="ignore"):
        out = w_t + eta * g_t
    if not np.all(np.isfinite(out)):
        idx = int(np.flatnonzero(~np.isfinite(out))[0])
        raise NonFiniteError(f"global model overflowed at index {idx}")
    return out
