"""Microarchitectural isolation: static way partitioning and randomized set indexing.

Both defenses return a new :class:`~sidelab.cache.CacheConfig`; the cache model
enforces them. :func:`evaluate_defense` measures what is left of the attack.
"""

from __future__ import annotations

import random
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence, Union

from .analysis import SingleClusterWarning
from .cache import Actor, CacheConfig
from .errors import InfeasiblePartition, InvalidConfig

# seed value that yields the identity permutation in every domain
IDENTITY_SEED = 0

PARTITIONED_ACTORS = (Actor.ATTACKER, Actor.VICTIM)


@dataclass(frozen=True)
class PartitionPolicy:
    """Contiguous, disjoint way ranges ``[lo, hi)`` per actor."""

    ways_for: Mapping[Actor, tuple[int, int]]

    @classmethod
    def even(cls, ways: int, attacker_ways: Optional[int] = None) -> "PartitionPolicy":
        if ways < len(PARTITIONED_ACTORS):
            raise InfeasiblePartition(
                f"{ways} way(s) cannot be split between {len(PARTITIONED_ACTORS)} actors"
            )
        split = ways // 2 if attacker_ways is None else attacker_ways
        return cls({Actor.ATTACKER: (0, split), Actor.VICTIM: (split, ways)})

    def validate(self, ways: int) -> None:
        if ways < len(PARTITIONED_ACTORS):
            raise InfeasiblePartition(
                f"{ways} way(s) cannot be split between {len(PARTITIONED_ACTORS)} actors"
            )
        missing = [a.value for a in PARTITIONED_ACTORS if a not in self.ways_for]
        if missing:
            raise InvalidConfig(f"partition has no ways for {missing}")
        spans = sorted(self.ways_for.values())
        covered = 0
        for lo, hi in spans:
            if hi - lo < 1:
                raise InfeasiblePartition("every actor needs at least one way")
            if lo != covered:
                raise InvalidConfig(f"way ranges {spans} overlap or leave a hole")
            covered = hi
        if covered != ways:
            raise InvalidConfig(f"way ranges {spans} do not cover [0, {ways})")


def apply_way_partition(config: CacheConfig, policy: Optional[PartitionPolicy] = None) -> CacheConfig:
    """Restrict hits and replacement to each actor's own ways."""
    policy = policy or PartitionPolicy.even(config.ways)
    policy.validate(config.ways)
    triples = tuple((a, lo, hi) for a, (lo, hi) in sorted(policy.ways_for.items(), key=lambda kv: kv[1]))
    defended = replace(config, way_partition=triples)
    defended.validate()
    return defended


@dataclass(frozen=True)
class IndexRandomization:
    """Keyed set-index permutation, one independent table per security domain."""

    permutation_seed: int
    active: bool = True

    def permutation(self, num_sets: int, domain: Actor) -> tuple[int, ...]:
        """Seeded Fisher-Yates shuffle of ``range(num_sets)`` for ``domain``."""
        table = list(range(num_sets))
        if self.permutation_seed == IDENTITY_SEED:
            return tuple(table)
        rng = random.Random(f"{self.permutation_seed}:{domain.value}")
        for i in range(num_sets - 1, 0, -1):
            j = rng.randint(0, i)
            table[i], table[j] = table[j], table[i]
        return tuple(table)


def apply_index_randomization(config: CacheConfig, rand: IndexRandomization) -> CacheConfig:
    """Route every domain's base set index through its own secret permutation.

    The attacker's stride-built eviction sets still agree with each other, but
    they land in a set unrelated to where the victim's lines go.
    """
    if not rand.active:
        return config
    perms = tuple((a, rand.permutation(config.num_sets, a)) for a in PARTITIONED_ACTORS)
    defended = replace(config, set_permutations=perms)
    defended.validate()
    return defended


DEFENSES = ("none", "partition", "randomize", "both", "constant_time")


@dataclass
class DefenseReport:
    baseline_accuracy: float
    defended_accuracy: float
    keys_evaluated: int
    defense: str
    single_cluster_runs: int = 0
    no_signal_runs: int = 0
    per_key: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "defense": self.defense,
            "baseline_accuracy": self.baseline_accuracy,
            "defended_accuracy": self.defended_accuracy,
            "keys_evaluated": self.keys_evaluated,
            "single_cluster_runs": self.single_cluster_runs,
            "no_signal_runs": self.no_signal_runs,
        }


def evaluate_defense(scenario, defense: str, num_keys: int,
                     seeds: Union[int, Iterable[int]] = 0) -> DefenseReport:
    """Run the attack pipeline per random key with and without ``defense``.

    ``scenario`` is a :class:`~sidelab.scenario.ScenarioConfig` used as the
    template; ``seeds`` is either a base seed (key ``i`` uses ``base + i``) or an
    explicit sequence of key seeds. ``defense`` is one of :data:`DEFENSES`;
    ``constant_time`` swaps the victim for square-and-always-multiply.
    """
    return evaluate_defenses(scenario, [defense], num_keys, seeds)[defense]


def evaluate_defenses(scenario, defenses: Sequence[str], num_keys: int,
                      seeds: Union[int, Iterable[int]] = 0) -> dict[str, DefenseReport]:
    """:func:`evaluate_defense` for several defenses sharing one baseline run per key."""
    from .pipeline import run_pipeline
    from .scenario import with_defense, with_seed_offset

    if num_keys < 1:
        raise InvalidConfig("num_keys must be >= 1")
    for d in defenses:
        if d not in DEFENSES:
            raise InvalidConfig(f"unknown defense {d!r}; expected one of {DEFENSES}")
    if isinstance(seeds, int):
        key_seeds = [seeds + i for i in range(num_keys)]
    else:
        key_seeds = list(seeds)[:num_keys]
        if len(key_seeds) < num_keys:
            raise InvalidConfig(f"need {num_keys} seeds, got {len(key_seeds)}")

    per_key = {d: [] for d in defenses}
    single = dict.fromkeys(defenses, 0)
    no_signal = dict.fromkeys(defenses, 0)
    for seed in key_seeds:
        base = with_seed_offset(with_defense(scenario, "none"), seed)
        b = run_pipeline(base).report.accuracy
        for d in defenses:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SingleClusterWarning)
                rep = run_pipeline(with_defense(base, d)).report
            per_key[d].append((b, rep.accuracy))
            single[d] += rep.single_cluster
            no_signal[d] += rep.no_signal
    out = {}
    for d, rows in per_key.items():
        n = len(rows)
        out[d] = DefenseReport(
            baseline_accuracy=sum(b for b, _ in rows) / n,
            defended_accuracy=sum(x for _, x in rows) / n,
            keys_evaluated=n,
            defense=d,
            single_cluster_runs=single[d],
            no_signal_runs=no_signal[d],
            per_key=rows,
        )
    return out
