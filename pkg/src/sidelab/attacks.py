"""Cache timing attacks driven slot by slot against a victim timeline.

Every strategy follows the same three stages: a pre-attack step (eviction-set
construction, initial prime or flush), an attack loop that interleaves the
attacker's measurement with one victim slot at a time, and a hand-off of the
raw latencies to :mod:`sidelab.analysis`.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cache import Actor, CacheConfig, CacheState, set_index
from .errors import InvalidConfig, UnsupportedInstruction
from .victims import AesTableConfig, VictimTimeline, run_aes_first_round


class Strategy(enum.Enum):
    PRIME_PROBE = "PRIME_PROBE"
    FLUSH_RELOAD = "FLUSH_RELOAD"
    EVICT_RELOAD = "EVICT_RELOAD"
    FLUSH_FLUSH = "FLUSH_FLUSH"

    @property
    def needs_shared_address(self) -> bool:
        return self is not Strategy.PRIME_PROBE

    @property
    def needs_line_flush(self) -> bool:
        return self in (Strategy.FLUSH_RELOAD, Strategy.FLUSH_FLUSH)


@dataclass(frozen=True)
class AttackConfig:
    """Attack-loop parameters.

    ``target_sets=None`` primes every set of the cache. ``noise_sigma`` is the
    standard deviation, in cycles, of Gaussian jitter added to each recorded
    measurement; ``victim_start`` is the attack slot in which the victim's first
    slot runs.
    """

    strategy: Strategy = Strategy.PRIME_PROBE
    target_sets: Optional[tuple[int, ...]] = None
    num_slots: int = 300
    shuffle_probe_order: bool = False
    shared_address: Optional[int] = None
    rng_seed: int = 0
    noise_sigma: float = 0.0
    noise_seed: int = 0
    victim_start: int = 0

    def validate(self, cache_config: Optional[CacheConfig] = None) -> None:
        if self.num_slots < 1:
            raise InvalidConfig(f"num_slots must be positive, got {self.num_slots}")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be non-negative")
        if self.victim_start < 0:
            raise InvalidConfig("victim_start must be non-negative")
        if self.strategy.needs_shared_address and self.shared_address is None:
            raise InvalidConfig(f"{self.strategy.value} requires a shared_address")
        if self.target_sets is not None:
            if not self.target_sets:
                raise InvalidConfig("target_sets must not be empty")
            if len(set(self.target_sets)) != len(self.target_sets):
                raise InvalidConfig("target_sets contains duplicates")
            if cache_config is not None:
                bad = [s for s in self.target_sets if not 0 <= s < cache_config.num_sets]
                if bad:
                    raise InvalidConfig(f"target_sets out of range: {bad}")

    def sets_for(self, config: CacheConfig) -> tuple[int, ...]:
        if self.target_sets is None:
            return tuple(range(config.num_sets))
        return tuple(self.target_sets)


@dataclass(frozen=True)
class EvictionSet:
    set: int
    addresses: tuple[int, ...]


@dataclass
class ProbeMatrix:
    """Slot x column grid of measured latencies.

    For PRIME+PROBE each column is one monitored set and each entry is the sum of
    the per-way probe latencies. Shared-address strategies have one column
    holding the reload (or flush) latency of the shared line. ``occupied_high``
    says which side of the threshold means "the victim was here": high for
    probe and flush timings, low for reloads.
    """

    latency: np.ndarray
    sets: tuple[int, ...]
    strategy: Strategy
    occupied_high: bool = True
    hit_latency: int = 4
    miss_latency: int = 100
    ways: int = 8
    extras: dict = field(default_factory=dict)

    @property
    def num_slots(self) -> int:
        return int(self.latency.shape[0])

    def column(self, set_id: int) -> np.ndarray:
        return self.latency[:, self.sets.index(set_id)]


def build_eviction_set(config: CacheConfig, set_id: int) -> EvictionSet:
    """``ways`` addresses that all index into ``set_id`` under the architectural map."""
    if not 0 <= set_id < config.num_sets:
        raise InvalidConfig(f"set {set_id} out of range [0, {config.num_sets})")
    stride = config.num_sets * config.line_size
    base = set_id * config.line_size
    return EvictionSet(set_id, tuple(base + k * stride for k in range(config.ways)))


def _visit_order(evsets: Sequence[EvictionSet], descending: bool) -> list[tuple[int, int]]:
    order = sorted((a, col) for col, ev in enumerate(evsets) for a in ev.addresses)
    if descending:
        order.reverse()
    return order


def _sweep(cache: CacheState, order, ncols: int) -> list[int]:
    totals = [0] * ncols
    latencies = cache.sweep([a for a, _ in order], Actor.ATTACKER)
    for (_, col), lat in zip(order, latencies):
        totals[col] += lat
    return totals


def prime(cache: CacheState, evsets: Sequence[EvictionSet], shuffle: bool = False,
          rng: Optional[random.Random] = None) -> int:
    """Fill every set in ``evsets`` with attacker lines; returns cycles spent.

    Without shuffling the attacker sweeps its buffer in ascending address order,
    which is exactly the sequential stream a next-line prefetcher locks onto.
    With shuffling the visit order over all addresses is a seeded permutation.
    """
    order = _visit_order(evsets, descending=False)
    if shuffle:
        (rng or random.Random(0)).shuffle(order)
    before = cache.clock
    _sweep(cache, order, len(evsets))
    return cache.clock - before


def probe(cache: CacheState, evsets: Sequence[EvictionSet], descending: bool = True,
          shuffle: bool = False, rng: Optional[random.Random] = None) -> list[int]:
    """Time a re-access of every eviction-set line; returns per-set totals.

    The default descending order is the reverse of :func:`prime`, so a single
    victim eviction under LRU costs exactly one miss instead of cascading. The
    probe leaves every set re-primed.
    """
    order = _visit_order(evsets, descending)
    if shuffle:
        (rng or random.Random(0)).shuffle(order)
    return _sweep(cache, order, len(evsets))


def _victim_slot(cache: CacheState, timeline: VictimTimeline, slot: int) -> None:
    if 0 <= slot < len(timeline.slots):
        for ev in timeline.slots[slot]:
            cache.access(ev.address, Actor.VICTIM)


def _add_noise(latency: np.ndarray, config: AttackConfig) -> np.ndarray:
    if config.noise_sigma <= 0:
        return latency
    rng = np.random.default_rng(config.noise_seed)
    jitter = rng.normal(0.0, config.noise_sigma, size=latency.shape)
    return np.rint(latency + jitter).astype(np.int64)


def _matrix(cache: CacheState, rows, sets, strategy, occupied_high, config: AttackConfig, **extras) -> ProbeMatrix:
    cfg = cache.config
    latency = _add_noise(np.asarray(rows, dtype=np.int64).reshape(len(rows), len(sets)), config)
    return ProbeMatrix(latency, tuple(sets), strategy, occupied_high,
                       cfg.hit_latency, cfg.miss_latency, cfg.ways, dict(extras))


def run_prime_probe(cache: CacheState, timeline: VictimTimeline, config: AttackConfig) -> ProbeMatrix:
    """PRIME+PROBE over ``config.num_slots`` slots.

    Each slot runs the victim's slot, then probes every monitored set. The probe
    doubles as the next slot's prime and walks the buffer in the reverse of the
    previous walk. With ``shuffle_probe_order`` the walk is one seeded
    permutation of all buffer lines instead of ascending address order, still
    alternated with its reverse so that LRU never cascades inside a set.
    """
    if config.strategy is not Strategy.PRIME_PROBE:
        raise InvalidConfig(f"run_prime_probe cannot run {config.strategy.value}")
    config.validate(cache.config)
    sets = config.sets_for(cache.config)
    evsets = [build_eviction_set(cache.config, s) for s in sets]
    forward = _visit_order(evsets, descending=False)
    if config.shuffle_probe_order:
        random.Random(config.rng_seed).shuffle(forward)
    backward = forward[::-1]
    ncols = len(evsets)
    _sweep(cache, forward, ncols)
    rows = []
    for t in range(config.num_slots):
        _victim_slot(cache, timeline, t - config.victim_start)
        rows.append(_sweep(cache, backward if t % 2 == 0 else forward, ncols))
    return _matrix(cache, rows, sets, Strategy.PRIME_PROBE, True, config)


def _require_flush(cache: CacheState, strategy: Strategy) -> None:
    if not cache.config.isa.has_line_flush:
        raise UnsupportedInstruction(
            f"{strategy.value} needs a line-flush instruction, which this ISA lacks"
        )


def run_flush_reload(cache: CacheState, timeline: VictimTimeline, config: AttackConfig) -> ProbeMatrix:
    """FLUSH+RELOAD on ``config.shared_address``: flush, victim slot, timed reload."""
    if config.strategy is not Strategy.FLUSH_RELOAD:
        raise InvalidConfig(f"run_flush_reload cannot run {config.strategy.value}")
    _require_flush(cache, config.strategy)
    config.validate(cache.config)
    shared = config.shared_address
    rows = []
    for t in range(config.num_slots):
        cache.flush_line(shared)
        _victim_slot(cache, timeline, t - config.victim_start)
        rows.append(cache.load(shared, Actor.ATTACKER))
    return _matrix(cache, rows, (set_index(cache.config, shared),), config.strategy, False, config)


def run_evict_reload(cache: CacheState, timeline: VictimTimeline, config: AttackConfig) -> ProbeMatrix:
    """EVICT+RELOAD: like FLUSH+RELOAD but evicts by walking the shared line's eviction set."""
    if config.strategy is not Strategy.EVICT_RELOAD:
        raise InvalidConfig(f"run_evict_reload cannot run {config.strategy.value}")
    config.validate(cache.config)
    shared = config.shared_address
    target = set_index(cache.config, shared)
    evset = [build_eviction_set(cache.config, target)]
    rows = []
    for t in range(config.num_slots):
        prime(cache, evset)
        _victim_slot(cache, timeline, t - config.victim_start)
        rows.append(cache.load(shared, Actor.ATTACKER))
    return _matrix(cache, rows, (target,), config.strategy, False, config)


def run_flush_flush(cache: CacheState, timeline: VictimTimeline, config: AttackConfig) -> ProbeMatrix:
    """FLUSH+FLUSH: records the flush latency of the shared line after each victim slot."""
    if config.strategy is not Strategy.FLUSH_FLUSH:
        raise InvalidConfig(f"run_flush_flush cannot run {config.strategy.value}")
    _require_flush(cache, config.strategy)
    config.validate(cache.config)
    shared = config.shared_address
    cache.flush_line(shared)
    rows = []
    for t in range(config.num_slots):
        _victim_slot(cache, timeline, t - config.victim_start)
        rows.append(cache.flush_line(shared))
    occupied_high = cache.config.flush_present_costs_miss
    return _matrix(cache, rows, (set_index(cache.config, shared),), config.strategy, occupied_high, config)


_RUNNERS = {
    Strategy.PRIME_PROBE: run_prime_probe,
    Strategy.FLUSH_RELOAD: run_flush_reload,
    Strategy.EVICT_RELOAD: run_evict_reload,
    Strategy.FLUSH_FLUSH: run_flush_flush,
}


def run_attack(cache: CacheState, timeline: VictimTimeline, config: AttackConfig) -> ProbeMatrix:
    """Dispatch on ``config.strategy``."""
    return _RUNNERS[config.strategy](cache, timeline, config)


def with_shared_victim(config: AttackConfig, timeline: VictimTimeline) -> AttackConfig:
    """Point a shared-address strategy at the victim's multiply line."""
    if config.strategy.needs_shared_address and config.shared_address is None:
        return replace(config, shared_address=timeline.shared_address)
    return config


def table_sets(config: CacheConfig, table: AesTableConfig) -> tuple[int, ...]:
    lines = 256 // table.entries_per_line
    return tuple(set_index(config, table.entry_address(i * table.entries_per_line))
                 for i in range(lines))


def run_aes_prime_probe(cache: CacheState, key_byte: int, table: AesTableConfig,
                        config: AttackConfig) -> tuple[ProbeMatrix, list[int]]:
    """PRIME+PROBE on the S-box table lines during random first-round lookups.

    One random plaintext byte per slot, drawn from ``config.rng_seed``. Returns
    the matrix (one column per table line) and the plaintexts used.
    """
    config.validate(cache.config)
    if table.entries_per_line != cache.config.line_size:
        raise InvalidConfig("table entries_per_line must equal the cache line size (1-byte entries)")
    sets = table_sets(cache.config, table)
    evsets = [build_eviction_set(cache.config, s) for s in sets]
    rng = random.Random(config.rng_seed)
    prime(cache, evsets, config.shuffle_probe_order, rng)
    rows, plaintexts = [], []
    for t in range(config.num_slots):
        p = rng.randrange(256)
        plaintexts.append(p)
        run_aes_first_round(p, key_byte, table, cache)
        rows.append(probe(cache, evsets, descending=t % 2 == 0,
                          shuffle=config.shuffle_probe_order, rng=rng))
    return _matrix(cache, rows, sets, Strategy.PRIME_PROBE, True, config), plaintexts
