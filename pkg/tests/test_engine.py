"""Round loop: sampling, attack injection, telemetry, determinism, aborts."""

import numpy as np
import pytest

from fedsim.aggregation import AggregationRule
from fedsim.attacks import AttackSpec
from fedsim.engine import (
    DataConfig,
    SimConfig,
    final_accuracies,
    init_state,
    run_simulation,
    sample_clients,
    summarize,
)
from fedsim.vectors import derive_stream


def tiny_config(**over):
    defaults = dict(
        n_genuine=6,
        n_fake=2,
        rounds=6,
        eta=0.5,
        attack=AttackSpec("none"),
        rule=AggregationRule("fedavg"),
        model=__import__("fedsim.model", fromlist=["MlpSpec"]).MlpSpec((5, 8, 3)),
        data=DataConfig(classes=3, features=5, per_class=20, partition="uniform"),
        local_lr=0.05,
        batch_size=8,
        local_epochs=1,
        eval_every=2,
        master_seed=0,
    )
    defaults.update(over)
    return SimConfig(**defaults)


def test_sample_clients_beta_one_selects_everyone():
    sel = sample_clients(100, 10, 1.0, derive_stream(0, 0, 110))
    np.testing.assert_array_equal(sel, np.arange(110))


def test_sample_clients_rounding_and_bounds():
    sel = sample_clients(100, 10, 0.1, derive_stream(0, 3, 110))
    assert sel.size == 11  # round(0.1 * 110)
    assert len(set(sel.tolist())) == 11
    assert sel.min() >= 0 and sel.max() < 110
    assert np.all(np.diff(sel) > 0)  # sorted
    # a tiny beta still selects at least one client
    assert sample_clients(3, 0, 0.01, derive_stream(0, 0, 3)).size == 1


def test_run_is_deterministic_and_thread_invariant():
    cfg = tiny_config(attack=AttackSpec("mpaf", lam=1.0, attacker_seed=7))
    a = run_simulation(cfg)
    b = run_simulation(cfg)
    c = run_simulation(cfg, n_threads=4)
    assert a == b == c


def test_eval_cadence_and_final_round():
    cfg = tiny_config(rounds=7, eval_every=3)
    records = run_simulation(cfg)
    assert len(records) == 7
    evaluated = [r.round for r in records if r.accuracy is not None]
    assert evaluated == [2, 5, 6]  # every 3rd round plus the last


def test_inactive_attack_fakes_submit_nothing():
    cfg = tiny_config(attack=AttackSpec("none"))
    records = run_simulation(cfg)
    assert all(r.fake_selected == 0 for r in records)
    # fake ids still occupy the sampling pool
    assert any(c >= cfg.n_genuine for r in records for c in r.selected)


def test_active_attack_counts_fakes_and_oracle_k():
    cfg = tiny_config(
        attack=AttackSpec("mpaf", lam=1.0, attacker_seed=7),
        rule=AggregationRule("trimmed_mean"),
    )
    records = run_simulation(cfg)
    for r in records:
        expect = sum(1 for c in r.selected if c >= cfg.n_genuine)
        assert r.fake_selected == expect
        assert r.trim_k == expect
        if 2 * expect >= len(r.selected):
            assert any("fell back to median" in w for w in r.warnings)


def test_attack_changes_trajectory_but_not_data():
    base = tiny_config()
    attacked = tiny_config(attack=AttackSpec("mpaf", lam=1.0, attacker_seed=7))
    s0 = init_state(base)
    s1 = init_state(attacked)
    np.testing.assert_array_equal(s0.weights, s1.weights)
    np.testing.assert_array_equal(s0.test.features, s1.test.features)
    acc0 = final_accuracies([run_simulation(base)])
    acc1 = final_accuracies([run_simulation(attacked)])
    assert acc0.shape == acc1.shape == (1,)


def test_fedavg_overflow_aborts_with_partial_records():
    cfg = tiny_config(
        rounds=100,
        eta=1.0,
        attack=AttackSpec("mpaf", lam=1e6, attacker_seed=7),
        rule=AggregationRule("fedavg"),
    )
    records = run_simulation(cfg)
    assert len(records) < 100
    last = records[-1]
    assert last.accuracy is not None  # evaluated on the last finite model
    assert any(w.startswith("aborted:") for w in last.warnings)
    assert np.isinf(last.update_norm)


def test_attacker_seed_must_differ_for_active_attacks():
    with pytest.raises(ValueError, match="attacker_seed"):
        tiny_config(attack=AttackSpec("mpaf", lam=1.0, attacker_seed=0), master_seed=0)
    # fine when the attack is inactive
    tiny_config(attack=AttackSpec("none"), master_seed=0)


def test_history_attack_runs_and_observes_only_when_selected():
    cfg = tiny_config(attack=AttackSpec("history", lam=1.0, attacker_seed=7), beta=0.5, rounds=12)
    records = run_simulation(cfg)
    assert len(records) == 12
    assert any(r.fake_selected > 0 for r in records)


def test_summarize_means_and_stds():
    cfg = tiny_config()
    runs = [run_simulation(SimConfig(**{**cfg.__dict__, "master_seed": s})) for s in (0, 1, 2)]
    summary = summarize(runs)
    rounds = [r for r, _, _ in summary]
    assert rounds == [r.round for r in runs[0] if r.accuracy is not None]
    for rnd, mean, std in summary:
        vals = [next(rec.accuracy for rec in run if rec.round == rnd) for run in runs]
        assert mean == pytest.approx(np.mean(vals))
        assert std == pytest.approx(np.std(vals))


def test_summarize_rejects_mismatched_cadences():
    a = run_simulation(tiny_config(eval_every=2))
    b = run_simulation(tiny_config(eval_every=3, master_seed=1))
    with pytest.raises(ValueError, match="cadence"):
        summarize([a, b])


def test_summarize_aligns_on_common_rounds_after_abort():
    good = tiny_config(rounds=100, eval_every=5)
    bad = SimConfig(
        **{
            **good.__dict__,
            "master_seed": 1,
            "eta": 1.0,
            "attack": AttackSpec("mpaf", lam=1e6, attacker_seed=7),
        }
    )
    runs = [run_simulation(good), run_simulation(bad)]
    assert any(w.startswith("aborted") for r in runs[1] for w in r.warnings)
    summary = summarize(runs)
    assert summary  # non-empty intersection of evaluated rounds
    assert max(r for r, _, _ in summary) <= runs[1][-1].round


def test_final_accuracies():
    runs = [run_simulation(tiny_config(master_seed=s)) for s in (0, 1)]
    finals = final_accuracies(runs)
    assert finals.shape == (2,)
    for f, run in zip(finals, runs):
        assert f == [r.accuracy for r in run if r.accuracy is not None][-1]


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(beta=0.0)
    with pytest.raises(ValueError):
        tiny_config(beta=1.5)
    with pytest.raises(ValueError):
        tiny_config(rounds=0)
    with pytest.raises(ValueError):
        tiny_config(eta=0.0)
    with pytest.raises(ValueError):
        tiny_config(n_genuine=0)
    assert tiny_config().fake_fraction == pytest.approx(2 / 6)
