"""The round loop: sampling, local training, attack injection, aggregation,
and telemetry. A simulation is a pure function of its config, bit-identical
across re-runs and worker-thread counts."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import aggregation, attacks, data, model
from .vectors import NonFiniteError, ParamVector, derive_stream, l2_norm

# Reserved actor ids on the setup round (-1). Clients own actors 0..n+m-1
# on training rounds; the sampler uses actor n+m.
_ACTOR_SERVER_INIT = 0
_ACTOR_DATA = 2
_ACTOR_PARTITION = 3


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # synthetic | idx | csv
    classes: int = 10
    features: int = 20
    per_class: int = 120
    spread: float = 0.1
    train_images: str | None = None  # idx paths
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_csv: str | None = None  # csv paths
    test_csv: str | None = None
    label_column: int = 0
    partition: str = "noniid"  # noniid | uniform
    q: float = 0.5

    def __post_init__(self):
        if self.source not in ("synthetic", "idx", "csv"):
            raise ValueError("data source must be synthetic, idx, or csv")
        if self.partition not in ("noniid", "uniform"):
            raise ValueError("partition must be noniid or uniform")


@dataclass(frozen=True)
class SimConfig:
    n_genuine: int = 100
    n_fake: int = 10
    beta: float = 1.0
    rounds: int = 200
    eta: float = 0.00925
    attack: attacks.AttackSpec = field(default_factory=attacks.AttackSpec)
    rule: aggregation.AggregationRule = field(
        default_factory=lambda: aggregation.AggregationRule("fedavg")
    )
    model: model.MlpSpec = field(default_factory=lambda: model.MlpSpec((20, 64, 10)))
    data: DataConfig = field(default_factory=DataConfig)
    # Tuned for the default synthetic corpus: local SGD runs near its
    # stability edge, where poisoning pressure separates the rules.
    local_lr: float = 9.0
    batch_size: int = 10
    local_epochs: int = 5
    eval_every: int | None = None  # None: max(1, rounds // 100)
    master_seed: int = 0

    def __post_init__(self):
        if self.n_genuine < 1 or self.n_fake < 0:
            raise ValueError("need n_genuine >= 1 and n_fake >= 0")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.attack.variant != "none" and self.attack.attacker_seed == self.master_seed:
            raise ValueError("attacker_seed must differ from master_seed")

    @property
    def fake_fraction(self) -> float:
        return self.n_fake / self.n_genuine

    @property
    def eval_cadence(self) -> int:
        return self.eval_every if self.eval_every is not None else max(1, self.rounds // 100)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    selected: tuple[int, ...]
    fake_selected: int
    trim_k: int
    update_norm: float
    accuracy: float | None
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class SimState:
    round: int
    weights: ParamVector
    attacker: attacks.AttackerState
    shards: tuple  # per-genuine-client Batch or None when empty
    test: model.Batch


def sample_clients(n: int, m: int, beta: float, stream) -> np.ndarray:
    """Uniform sample without replacement of round(beta*(n+m)) ids, minimum 1.

    Ids 0..n-1 are genuine, n..n+m-1 are fake; both populate the pool.
    """
    pool = n + m
    count = max(1, int(round(beta * pool)))
    return np.sort(stream.choice(pool, size=count, replace=False))


def build_data(config: SimConfig) -> tuple[data.Dataset, data.Dataset]:
    dc = config.data
    if dc.source == "synthetic":
        stream = derive_stream(config.master_seed, -1, _ACTOR_DATA)
        return data.gen_synthetic(dc.classes, dc.features, dc.per_class, dc.spread, stream)
    if dc.source == "idx":
        paths = (dc.train_images, dc.train_labels, dc.test_images, dc.test_labels)
        if any(p is None for p in paths):
            raise ValueError("idx source requires all four image/label paths")
        blobs = [open(p, "rb").read() for p in paths]
        return data.idx_to_dataset(blobs[0], blobs[1]), data.idx_to_dataset(blobs[2], blobs[3])
    if dc.train_csv is None or dc.test_csv is None:
        raise ValueError("csv source requires train_csv and test_csv")
    return (
        data.load_dense_csv(dc.train_csv, dc.label_column),
        data.load_dense_csv(dc.test_csv, dc.label_column),
    )


def build_partition(config: SimConfig, train: data.Dataset) -> data.PartitionPlan:
    stream = derive_stream(config.master_seed, -1, _ACTOR_PARTITION)
    if config.data.partition == "noniid":
        return data.partition_noniid(train, config.n_genuine, config.data.q, stream)
    return data.partition_uniform(train, config.n_genuine, stream)


def init_state(config: SimConfig, datasets=None) -> SimState:
    """Fresh global model, attacker state, and client shards for round 0."""
    train, test = datasets if datasets is not None else build_data(config)
    plan = build_partition(config, train)
    shards = tuple(
        train.batch(idx) if len(idx) else None for idx in plan.shards
    )
    w0 = model.init_params(config.model, derive_stream(config.master_seed, -1, _ACTOR_SERVER_INIT))
    attacker = attacks.AttackerState()
    if config.attack.variant == "mpaf":
        base = attacks.make_base_model(config.model, config.attack.attacker_seed)
        attacker = replace(attacker, base_model=base)
    return SimState(0, w0, attacker, shards, test.batch())


def run_round(
    state: SimState, config: SimConfig, executor: ThreadPoolExecutor | None = None
) -> tuple[SimState, RoundRecord]:
    """One FL round: broadcast, local/fake updates, clip + aggregate, update."""
    t = state.round
    n, m = config.n_genuine, config.n_fake
    sampler = derive_stream(config.master_seed, t, n + m)
    selected = sample_clients(n, m, config.beta, sampler)
    genuine_ids = [int(c) for c in selected if c < n and state.shards[c] is not None]
    fake_ids = [int(c) for c in selected if c >= n]

    def train_one(cid: int) -> aggregation.ClientUpdate:
        upd = model.local_train(
            config.model,
            state.weights,
            state.shards[cid],
            config.local_lr,
            config.batch_size,
            config.local_epochs,
            derive_stream(config.master_seed, t, cid),
        )
        return aggregation.ClientUpdate(cid, False, upd, len(state.shards[cid]))

    if executor is not None:
        updates = list(executor.map(train_one, genuine_ids))
    else:
        updates = [train_one(cid) for cid in genuine_ids]

    attacker = state.attacker
    if fake_ids and config.attack.variant != "none":
        attacker = attacks.attacker_observe(attacker, state.weights)
        dim = config.model.param_count
        for cid in fake_ids:
            stream = derive_stream(config.attack.attacker_seed, t, cid)
            updates.append(
                aggregation.ClientUpdate(
                    cid, True, attacks.craft_update(config.attack, attacker, dim, stream)
                )
            )
    elif fake_ids:
        # Inactive attacker: fake ids exist in the pool but submit nothing.
        fake_ids = []

    if not updates:
        # Every sampled client was fake-but-inactive or had an empty shard.
        record = RoundRecord(t, tuple(int(c) for c in selected), 0, 0, 0.0, None, ("no updates submitted",))
        return replace(state, round=t + 1, attacker=attacker), record

    g_t, k_eff, warnings = aggregation.aggregate(config.rule, updates, len(fake_ids))
    w_next = aggregation.apply_global(state.weights, g_t, config.eta)
    record = RoundRecord(
        t,
        tuple(int(c) for c in selected),
        len(fake_ids),
        k_eff,
        l2_norm(g_t),
        None,
        tuple(warnings),
    )
    return replace(state, round=t + 1, weights=w_next, attacker=attacker), record


def run_simulation(config: SimConfig, n_threads: int = 1, datasets=None) -> list[RoundRecord]:
    """T rounds from a fresh model; evaluates every eval_every rounds and at
    the end. A non-finite blow-up (the FedAvg overflow signature under huge
    scaling factors) ends the run early with partial records preserved, the
    last of them carrying the final evaluation of the last finite model."""
    state = init_state(config, datasets=datasets)
    cadence = config.eval_cadence
    records: list[RoundRecord] = []
    executor = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    try:
        for t in range(config.rounds):
            try:
                state, record = run_round(state, config, executor)
            except NonFiniteError as exc:
                acc = model.evaluate(config.model, state.weights, state.test)
                records.append(
                    RoundRecord(t, (), 0, 0, float("inf"), acc, (f"aborted: {exc}",))
                )
                return records
            if (t + 1) % cadence == 0 or t == config.rounds - 1:
                acc = model.evaluate(config.model, state.weights, state.test)
                record = replace(record, accuracy=acc)
            records.append(record)
    finally:
        if executor is not None:
            executor.shutdown()
    return records


def summarize(runs: list[list[RoundRecord]]) -> list[tuple[int, float, float]]:
    """Per evaluated round: (round, mean accuracy, population std) across runs."""
    if not runs:
        raise ValueError("no runs to summarize")
    keys = []
    aborted = False
    for run in runs:
        keys.append(tuple(r.round for r in run if r.accuracy is not None))
        aborted = aborted or any(w.startswith("aborted") for r in run for w in r.warnings)
    if not aborted and any(k != keys[0] for k in keys):
        raise ValueError("mismatched evaluation cadences across runs")
    # Aborted runs stop evaluating early; align on rounds every run reached.
    common = sorted(set(keys[0]).intersection(*map(set, keys[1:]))) if len(keys) > 1 else list(keys[0])
    if not common:
        raise ValueError("runs share no evaluated rounds")
    by_round = [
        {r.round: r.accuracy for r in run if r.accuracy is not None} for run in runs
    ]
    out = []
    for rnd in common:
        vals = np.array([m[rnd] for m in by_round])
        out.append((int(rnd), float(vals.mean()), float(vals.std())))
    return out


def final_accuracies(runs: list[list[RoundRecord]]) -> np.ndarray:
    """Last evaluated accuracy of each run (aborted runs report at abort time)."""
    finals = []
    for run in runs:
        accs = [r.accuracy for r in run if r.accuracy is not None]
        if not accs:
            raise ValueError("run has no evaluated rounds")
        finals.append(accs[-1])
    return np.array(finals)
