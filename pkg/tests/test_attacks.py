"""Crafted-update construction and the attacker's knowledge boundary."""

import inspect

import numpy as np
import pytest

from fedsim import attacks
from fedsim.attacks import (
    AttackerState,
    AttackSpec,
    attacker_observe,
    craft_history,
    craft_mpaf,
    craft_random,
    craft_update,
    make_base_model,
)
from fedsim.model import MlpSpec
from fedsim.vectors import derive_stream


def _spec():
    return MlpSpec((20, 64, 10))


def test_attack_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec("gradient_inversion")
    with pytest.raises(ValueError):
        AttackSpec("mpaf", lam=0.0)
    with pytest.raises(ValueError):
        AttackSpec("mpaf", lam=-1.0)
    AttackSpec("none", lam=-1.0)  # lam unused when inactive


def test_base_model_fixed_and_attacker_owned():
    b1 = make_base_model(_spec(), 7)
    b2 = make_base_model(_spec(), 7)
    np.testing.assert_array_equal(b1, b2)
    assert not np.array_equal(b1, make_base_model(_spec(), 8))


def test_observe_tracks_last_two_models():
    s = AttackerState()
    w1, w2, w3 = np.ones(4), 2 * np.ones(4), 3 * np.ones(4)
    s = attacker_observe(s, w1)
    assert s.previous is None and s.latest is w1
    s = attacker_observe(s, w2)
    assert s.previous is w1 and s.latest is w2
    s = attacker_observe(s, w3)
    assert s.previous is w2 and s.latest is w3


def test_craft_mpaf_direction_invariant():
    # lam * (base - w): adding the update moves the model exactly toward base
    rng = np.random.default_rng(0)
    base, w = rng.standard_normal(30), rng.standard_normal(30)
    upd = craft_mpaf(2.5, base, w)
    np.testing.assert_allclose(upd, 2.5 * (base - w), rtol=1e-12)
    np.testing.assert_allclose(w + upd / 2.5, base, rtol=1e-12)
    # at the base model the crafted update vanishes
    np.testing.assert_array_equal(craft_mpaf(2.5, base, base), np.zeros(30))


def test_craft_history_reverses_the_trajectory():
    rng = np.random.default_rng(1)
    w_prev, w_t = rng.standard_normal(10), rng.standard_normal(10)
    upd = craft_history(3.0, w_t, w_prev)
    np.testing.assert_allclose(upd, -3.0 * (w_t - w_prev), rtol=1e-12)


def test_craft_random_scale_and_freshness():
    u1 = craft_random(1e6, 5000, derive_stream(9, 0, 101))
    u2 = craft_random(1e6, 5000, derive_stream(9, 0, 102))
    assert not np.array_equal(u1, u2)  # per-client streams differ
    assert abs(u1.std() - 1e6) / 1e6 < 0.05
    assert abs(u1.mean()) < 0.05 * 1e6
    np.testing.assert_array_equal(u1, craft_random(1e6, 5000, derive_stream(9, 0, 101)))


def test_craft_update_dispatch():
    rng = np.random.default_rng(2)
    base, w_prev, w_t = (rng.standard_normal(8) for _ in range(3))
    state = AttackerState(latest=w_t, previous=w_prev, base_model=base)
    stream = derive_stream(0, 0, 0)
    np.testing.assert_array_equal(
        craft_update(AttackSpec("mpaf", 2.0, 1), state, 8, stream), craft_mpaf(2.0, base, w_t)
    )
    np.testing.assert_array_equal(
        craft_update(AttackSpec("history", 2.0, 1), state, 8, stream),
        craft_history(2.0, w_t, w_prev),
    )
    with pytest.raises(ValueError):
        craft_update(AttackSpec("none"), state, 8, stream)


def test_history_before_second_observation_is_zero():
    state = AttackerState(latest=np.ones(6), previous=None)
    upd = craft_update(AttackSpec("history", 1e6, 1), state, 6, derive_stream(0, 0, 0))
    np.testing.assert_array_equal(upd, np.zeros(6))


def test_knowledge_boundary_of_crafting_signatures():
    """No crafting entry point accepts genuine updates, training data, shards,
    learning rates, or the aggregation rule; the attacker sees only received
    global models, its own parameters, and its own randomness."""
    allowed = {
        "attack", "state", "dim", "stream", "lam",
        "base", "w_t", "w_prev",
    }
    for fn in (craft_update, craft_random, craft_history, craft_mpaf):
        params = set(inspect.signature(fn).parameters)
        assert params <= allowed, f"{fn.__name__} leaks knowledge: {params - allowed}"
    forbidden = {"shard", "batch", "data", "updates", "rule", "lr", "eta"}
    for fn in (craft_update, craft_random, craft_history, craft_mpaf):
        assert not (set(inspect.signature(fn).parameters) & forbidden)
    # the attacker state itself holds nothing beyond observed models
    assert set(AttackerState.__dataclass_fields__) == {"latest", "previous", "base_model"}


def test_module_does_not_import_server_side_code():
    for name in ("aggregation", "engine", "data"):
        assert not hasattr(attacks, name), f"attacks module imports fedsim.{name}"
