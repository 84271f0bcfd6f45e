"""Fake-client update crafting.

The attacker's knowledge boundary is enforced by these signatures: nothing
here sees training data, genuine updates, the learning rate, or the
aggregation rule. Inputs are the attack parameters, the global models the
fake clients actually received, and a random stream.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model
from .vectors import ParamVector, RngStream, gaussian_vector, linear_combine

VARIANTS = ("none", "random", "history", "mpaf")


@dataclass(frozen=True)
class AttackSpec:
    variant: str = "none"
    lam: float = 1e6  # scaling factor applied to crafted updates
    attacker_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant != "none" and not self.lam > 0:
            raise ValueError("lam must be > 0 for an active attack")


@dataclass(frozen=True)
class AttackerState:
    """Global models observed by fake clients, plus the fixed base model."""

    latest: ParamVector | None = None
    previous: ParamVector | None = None
    base_model: ParamVector | None = None


def make_base_model(spec: model.MlpSpec, attacker_seed: int) -> ParamVector:
    """Randomly initialized base model; chance-level accuracy by construction.

    Drawn from an attacker-owned stream so it never collides with the
    server's initialization, and fixed for the whole run.
    """
    from .vectors import derive_stream

    stream = derive_stream(attacker_seed, -1, 1)
    return model.init_params(spec, stream)


def attacker_observe(state: AttackerState, w_t: ParamVector) -> AttackerState:
    """Record a newly received global model; called only in rounds where at
    least one fake client was selected."""
    return replace(state, previous=state.latest, latest=w_t)


def craft_random(lam: float, dim: int, stream: RngStream) -> ParamVector:
    """Scaled Gaussian noise, -lam * eps with eps ~ N(0, I); fresh per client."""
    return -lam * gaussian_vector(stream, dim)


def craft_history(lam: float, w_t: ParamVector, w_prev: ParamVector) -> ParamVector:
    """Reverse the estimated benign direction: -lam * (w_t - w_prev)."""
    return linear_combine(-lam, w_t, lam, w_prev)


def craft_mpaf(lam: float, base: ParamVector, w_t: ParamVector) -> ParamVector:
    """Point at the base model: lam * (base - w_t); identical for every fake client."""
    return linear_combine(lam, base, -lam, w_t)


def craft_update(
    attack: AttackSpec, state: AttackerState, dim: int, stream: RngStream
) -> ParamVector:
    """The update one fake client submits this round."""
    if attack.variant == "random":
        return craft_random(attack.lam, dim, stream)
    if attack.variant == "history":
        if state.previous is None:
            # No direction estimate exists before the second observation.
            return np.zeros(dim)
        return craft_history(attack.lam, state.latest, state.previous)
    if attack.variant == "mpaf":
        return craft_mpaf(attack.lam, state.base_model, state.latest)
    raise ValueError(f"no update to craft for variant {attack.variant!r}")
