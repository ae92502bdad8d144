"""Deterministic set-associative cache model.

One level, no coherence. Every line remembers which actor installed it so that
attacks, defenses and tests can reason about who evicted whom. Latencies are
bimodal: a lookup costs either ``hit_latency`` or ``miss_latency`` cycles.

The model carries two defense hooks that the ``defenses`` module fills in:
a static way partition per actor and a per-domain set-index permutation.
"""

from __future__ import annotations

import enum
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from .errors import InvalidConfig, UnsupportedInstruction


class Actor(enum.Enum):
    ATTACKER = "attacker"
    VICTIM = "victim"
    PREFETCHER = "prefetcher"

    # members are singletons; identity hashing keeps the access path cheap
    __hash__ = object.__hash__


class Replacement(enum.Enum):
    LRU = "LRU"
    RANDOM = "RANDOM"


class PrefetchPolicy(enum.Enum):
    OFF = "OFF"
    NEXT_LINE = "NEXT_LINE"


class IndexMode(enum.Enum):
    VIRTUAL = "VIRTUAL"
    PHYSICAL_IDENTITY = "PHYSICAL_IDENTITY"


@dataclass(frozen=True)
class IsaCapabilities:
    has_line_flush: bool = True


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    """Cache geometry, timing and capability flags.

    ``way_partition`` holds ``(actor, first_way, end_way)`` triples and
    ``set_permutations`` holds ``(actor, permutation)`` pairs; both are normally
    produced by :mod:`sidelab.defenses` rather than written by hand.
    ``flush_present_costs_miss`` picks the sign of the flush-timing differential.
    """

    num_sets: int = 256
    ways: int = 8
    line_size: int = 64
    replacement: Replacement = Replacement.LRU
    hit_latency: int = 4
    miss_latency: int = 100
    prefetcher: PrefetchPolicy = PrefetchPolicy.OFF
    index_mode: IndexMode = IndexMode.VIRTUAL
    isa: IsaCapabilities = field(default_factory=IsaCapabilities)
    flush_present_costs_miss: bool = True
    way_partition: Optional[tuple] = None
    set_permutations: Optional[tuple] = None

    def validate(self) -> None:
        if not _is_pow2(self.num_sets):
            raise InvalidConfig(f"num_sets must be a power of two >= 1, got {self.num_sets}")
        if self.ways < 1:
            raise InvalidConfig(f"ways must be >= 1, got {self.ways}")
        if self.line_size < 4 or not _is_pow2(self.line_size):
            raise InvalidConfig(f"line_size must be a power of two >= 4, got {self.line_size}")
        if self.hit_latency < 0:
            raise InvalidConfig("hit_latency must be non-negative")
        if self.miss_latency <= self.hit_latency:
            raise InvalidConfig(
                f"miss_latency ({self.miss_latency}) must exceed hit_latency ({self.hit_latency})"
            )
        if self.way_partition is not None:
            spans = sorted((lo, hi) for _, lo, hi in self.way_partition)
            covered = 0
            for lo, hi in spans:
                if lo != covered or hi <= lo:
                    raise InvalidConfig(f"way partition {self.way_partition} is not a tiling of the ways")
                covered = hi
            if covered != self.ways:
                raise InvalidConfig(f"way partition does not cover all {self.ways} ways")
        if self.set_permutations is not None:
            for actor, perm in self.set_permutations:
                if sorted(perm) != list(range(self.num_sets)):
                    raise InvalidConfig(f"set permutation for {actor.value} is not a bijection")

    @property
    def capacity(self) -> int:
        return self.num_sets * self.ways

    def ways_for(self, actor: Actor) -> tuple[int, int]:
        if self.way_partition is None:
            return 0, self.ways
        for who, lo, hi in self.way_partition:
            if who is actor:
                return lo, hi
        raise InvalidConfig(f"way partition has no range for {actor.value}")

    def permutation_for(self, actor: Optional[Actor]) -> Optional[tuple]:
        if self.set_permutations is None or actor is None:
            return None
        for who, perm in self.set_permutations:
            if who is actor:
                return perm
        return None

    def with_isa(self, **flags) -> "CacheConfig":
        return replace(self, isa=replace(self.isa, **flags))


def set_index(config: CacheConfig, address: int, domain: Optional[Actor] = None) -> int:
    """Set selected by ``address``.

    The base map is ``floor(address / line_size) mod num_sets``. When the config
    carries a set permutation for ``domain`` the base index is remapped through it;
    ``domain=None`` always gives the architectural (unrandomized) index.
    """
    base = (address // config.line_size) % config.num_sets
    perm = config.permutation_for(domain)
    return base if perm is None else perm[base]


@dataclass(frozen=True)
class CacheLine:
    valid: bool
    tag: int
    owner: Optional[Actor]
    recency: int


class AccessResult(NamedTuple):
    hit: bool
    latency: int
    evicted_address: Optional[int] = None


@dataclass
class CacheStats:
    hits: Counter = field(default_factory=Counter)
    misses: Counter = field(default_factory=Counter)
    flushes: int = 0
    prefetches: Counter = field(default_factory=Counter)
    # (cause, evicted owner) -> count; prefetches are charged to the actor they serve
    evictions: Counter = field(default_factory=Counter)


class CacheState:
    """Mutable cache contents. Build with :func:`new_cache`."""

    def __init__(self, config: CacheConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.rng_seed = seed
        self._rng = random.Random(seed)
        n, w = config.num_sets, config.ways
        self._tags: list[list[Optional[int]]] = [[None] * w for _ in range(n)]
        self._owners: list[list[Optional[Actor]]] = [[None] * w for _ in range(n)]
        self._recency: list[list[int]] = [[0] * w for _ in range(n)]
        self._tick = 0
        self.clock = 0
        self.stats = CacheStats()
        self._last_line: dict[Actor, int] = {}
        self._domain = {a: (*config.ways_for(a), config.permutation_for(a))
                        for a in (Actor.ATTACKER, Actor.VICTIM)}
        self._hit = config.hit_latency
        self._miss = config.miss_latency
        self._line_shift = config.line_size.bit_length() - 1
        self._set_mask = config.num_sets - 1
        self._lru = config.replacement is Replacement.LRU
        self._prefetch = config.prefetcher is PrefetchPolicy.NEXT_LINE

    # -- internals -------------------------------------------------------

    def _locate(self, line: int, actor: Actor) -> int:
        perm = self._domain[actor][2]
        base = line & self._set_mask
        return base if perm is None else perm[base]

    def _find(self, s: int, line: int, lo: int, hi: int) -> int:
        tags = self._tags[s]
        if line not in tags:
            return -1
        w = tags.index(line)
        if lo <= w < hi:
            return w
        try:
            return tags.index(line, lo, hi)
        except ValueError:
            return -1

    def _install(self, s: int, line: int, owner: Actor, cause: Actor, lo: int, hi: int) -> Optional[int]:
        tags = self._tags[s]
        span = tags[lo:hi]
        if None in span:
            w = lo + span.index(None)
        elif self._lru:
            rec = self._recency[s][lo:hi]
            w = lo + rec.index(min(rec))
        else:
            w = self._rng.randrange(lo, hi)
        old = tags[w]
        evicted = None
        if old is not None:
            evicted = old << self._line_shift
            self.stats.evictions[(cause, self._owners[s][w])] += 1
        self._tick += 1
        tags[w] = line
        self._owners[s][w] = owner
        self._recency[s][w] = self._tick
        return evicted

    def _prefetch_next(self, line: int, actor: Actor) -> None:
        nxt = line + 1
        s = self._locate(nxt, actor)
        lo, hi, _ = self._domain[actor]
        if self._find(s, nxt, lo, hi) >= 0:
            return
        self.stats.prefetches[actor] += 1
        self._install(s, nxt, Actor.PREFETCHER, actor, lo, hi)

    # -- operations ------------------------------------------------------

    def access(self, address: int, actor: Actor) -> AccessResult:
        """Demand load of ``address`` by ``actor``.

        The next-line prefetcher fires only once it has seen the same actor walk
        onto this line from the line just below it (a confirmed ascending
        stream); its install never changes the latency returned here.
        """
        if actor is Actor.PREFETCHER:
            raise ValueError("prefetcher accesses are internal to the cache")
        line = address >> self._line_shift
        lo, hi, perm = self._domain[actor]
        s = line & self._set_mask
        if perm is not None:
            s = perm[s]
        tags = self._tags[s]
        if line in tags:
            w = tags.index(line)
            if not lo <= w < hi:
                w = self._find(s, line, lo, hi)
        else:
            w = -1
        if w >= 0:
            self._tick += 1
            self._recency[s][w] = self._tick
            owners = self._owners[s]
            if owners[w] is Actor.PREFETCHER:
                owners[w] = actor
            self.stats.hits[actor] += 1
            result = AccessResult(True, self._hit, None)
        else:
            self.stats.misses[actor] += 1
            result = AccessResult(False, self._miss, self._install(s, line, actor, actor, lo, hi))
        if self._prefetch:
            if self._last_line.get(actor) == line - 1:
                self._prefetch_next(line, actor)
            self._last_line[actor] = line
        self.clock += result.latency
        return result

    def load(self, address: int, actor: Actor) -> int:
        """Latency-only form of :meth:`access`."""
        return self.access(address, actor).latency

    def sweep(self, addresses, actor: Actor) -> list[int]:
        """Latencies of ``access`` over ``addresses`` in order.

        Same state transitions as calling :meth:`access` per address; the loop is
        inlined because probe sweeps dominate simulation time.
        """
        if actor is Actor.PREFETCHER:
            raise ValueError("prefetcher accesses are internal to the cache")
        lo, hi, perm = self._domain[actor]
        full_range = lo == 0 and hi == self.config.ways
        shift, mask = self._line_shift, self._set_mask
        all_tags, all_owners, all_rec = self._tags, self._owners, self._recency
        hit_lat, miss_lat = self._hit, self._miss
        prefetch = self._prefetch
        last_line = self._last_line
        fetcher = Actor.PREFETCHER
        tick = self._tick
        lru, rng = self._lru, self._rng
        evicted: dict = {}
        hits = misses = 0
        out = []
        append = out.append
        for address in addresses:
            line = address >> shift
            s = line & mask
            if perm is not None:
                s = perm[s]
            tags = all_tags[s]
            w = -1
            if line in tags:
                w = tags.index(line)
                if not full_range and not lo <= w < hi:
                    w = self._find(s, line, lo, hi)
            if w >= 0:
                tick += 1
                all_rec[s][w] = tick
                owners = all_owners[s]
                if owners[w] is fetcher:
                    owners[w] = actor
                hits += 1
                append(hit_lat)
            else:
                # inlined _install
                misses += 1
                span = tags[lo:hi]
                if None in span:
                    w = lo + span.index(None)
                elif lru:
                    rec = all_rec[s][lo:hi]
                    w = lo + rec.index(min(rec))
                else:
                    w = rng.randrange(lo, hi)
                owners = all_owners[s]
                if tags[w] is not None:
                    victim_owner = owners[w]
                    evicted[victim_owner] = evicted.get(victim_owner, 0) + 1
                tick += 1
                tags[w] = line
                owners[w] = actor
                all_rec[s][w] = tick
                append(miss_lat)
            if prefetch:
                if last_line.get(actor) == line - 1:
                    self._tick = tick
                    self._prefetch_next(line, actor)
                    tick = self._tick
                last_line[actor] = line
        self._tick = tick
        for owner, n in evicted.items():
            self.stats.evictions[(actor, owner)] += n
        self.stats.hits[actor] += hits
        self.stats.misses[actor] += misses
        self.clock += hits * hit_lat + misses * miss_lat
        return out

    def flush_line(self, address: int) -> int:
        """Invalidate the line holding ``address`` and return the flush latency.

        Raises :class:`UnsupportedInstruction` when the ISA has no line flush.
        """
        cfg = self.config
        if not cfg.isa.has_line_flush:
            raise UnsupportedInstruction("line flush is not available on this ISA")
        line = address >> self._line_shift
        present = False
        # a flush is by address, so every domain's copy goes
        for s in {self._locate(line, a) for a in self._domain}:
            tags = self._tags[s]
            for w, tag in enumerate(tags):
                if tag == line:
                    tags[w] = None
                    self._owners[s][w] = None
                    self._recency[s][w] = 0
                    present = True
        self.stats.flushes += 1
        slow = present == cfg.flush_present_costs_miss
        latency = cfg.miss_latency if slow else cfg.hit_latency
        self.clock += latency
        return latency

    def snapshot_set(self, s: int) -> list[tuple[Optional[Actor], bool]]:
        if not 0 <= s < self.config.num_sets:
            raise IndexError(f"set {s} out of range [0, {self.config.num_sets})")
        return [(owner if tag is not None else None, tag is not None)
                for tag, owner in zip(self._tags[s], self._owners[s])]

    def lines(self, s: int) -> list[CacheLine]:
        return [CacheLine(tag is not None, tag if tag is not None else 0, owner, rec)
                for tag, owner, rec in zip(self._tags[s], self._owners[s], self._recency[s])]

    def contains(self, address: int, actor: Actor = Actor.ATTACKER) -> bool:
        line = address >> self._line_shift
        return line in self._tags[self._locate(line, actor)]

    def valid_lines(self) -> int:
        return sum(w is not None for tags in self._tags for w in tags)


def new_cache(config: CacheConfig, seed: int = 0) -> CacheState:
    """Empty cache: all lines invalid, clock at zero."""
    return CacheState(config, seed)
