import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from sidelab.cache import (Actor, CacheConfig, IsaCapabilities, PrefetchPolicy, Replacement,
                           new_cache, set_index)
from sidelab.errors import InvalidConfig, UnsupportedInstruction

A, V = Actor.ATTACKER, Actor.VICTIM


class LruOracle:
    """Brute-force model: per set, a list of lines ordered oldest to newest."""

    def __init__(self, num_sets, ways, line_size):
        self.sets = [[] for _ in range(num_sets)]
        self.num_sets, self.ways, self.line_size = num_sets, ways, line_size

    def access(self, address):
        line = address // self.line_size
        rec = self.sets[line % self.num_sets]
        if line in rec:
            rec.remove(line)
            rec.append(line)
            return True
        rec.append(line)
        if len(rec) > self.ways:
            rec.pop(0)
        return False


def small(**kw):
    base = dict(num_sets=4, ways=2, line_size=64)
    base.update(kw)
    return CacheConfig(**base)


# -- construction ----------------------------------------------------------

def test_new_cache_is_empty():
    c = new_cache(CacheConfig(), seed=42)
    assert c.valid_lines() == 0
    assert all(not valid for _, valid in c.snapshot_set(0))


@pytest.mark.parametrize("field,value", [
    ("num_sets", 0), ("num_sets", 3), ("ways", 0), ("line_size", 48), ("miss_latency", 4),
])
def test_invalid_geometry_rejected(field, value):
    with pytest.raises(InvalidConfig):
        new_cache(replace(CacheConfig(), **{field: value}))


def test_snapshot_out_of_range():
    with pytest.raises(IndexError):
        new_cache(CacheConfig()).snapshot_set(256)


# -- set index ---------------------------------------------------------------

def test_set_index_examples():
    cfg = CacheConfig()
    assert set_index(cfg, 0x0) == 0
    assert set_index(cfg, 0x1040) == 65
    assert set_index(cfg, 0x40) == set_index(cfg, 0x4040) == 1


@given(st.integers(0, 2**64 - 1))
def test_set_index_matches_formula(addr):
    cfg = CacheConfig()
    assert set_index(cfg, addr) == (addr // 64) % 256


# -- access ----------------------------------------------------------------------

def test_cold_miss_then_hit():
    c = new_cache(CacheConfig())
    r = c.access(0x1234, A)
    assert (r.hit, r.latency) == (False, 100)
    r = c.access(0x1234, A)
    assert (r.hit, r.latency) == (True, 4)


def test_two_way_lru_evicts_oldest():
    c = new_cache(small())
    a, b, cc = 0x0, 4 * 64, 8 * 64  # all set 0
    c.access(a, A)
    c.access(b, A)
    r = c.access(cc, A)
    assert not r.hit and r.evicted_address == a
    assert not c.contains(a) and c.contains(b) and c.contains(cc)


def test_lru_touch_protects_line():
    c = new_cache(small())
    a, b, cc = 0x0, 4 * 64, 8 * 64
    for addr in (a, b, a, cc):
        c.access(addr, A)
    assert c.contains(a) and c.contains(cc) and not c.contains(b)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=1000), st.integers(1, 4))
def test_lru_matches_brute_force(lines, ways):
    cfg = small(ways=ways)
    c = new_cache(cfg)
    oracle = LruOracle(cfg.num_sets, ways, cfg.line_size)
    for ln in lines:
        addr = ln * 64 + 7
        assert c.access(addr, A).hit == oracle.access(addr)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60), st.booleans()), max_size=400))
def test_sweep_equals_repeated_access(ops):
    cfg = small(prefetcher=PrefetchPolicy.NEXT_LINE)
    c1, c2 = new_cache(cfg), new_cache(cfg)
    addrs = [ln * 64 for ln, _ in ops]
    assert c1.sweep(addrs, A) == [c2.access(x, A).latency for x in addrs]
    assert c1._tags == c2._tags and c1.clock == c2.clock


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.tuples(st.integers(0, 200), st.sampled_from([A, V]), st.booleans()),
                                      max_size=300))
def test_determinism_and_capacity(seed, ops):
    cfg = small(replacement=Replacement.RANDOM)
    c1, c2 = new_cache(cfg, seed), new_cache(cfg, seed)
    for ln, actor, flush in ops:
        addr = ln * 64
        if flush:
            assert c1.flush_line(addr) == c2.flush_line(addr)
        else:
            r1, r2 = c1.access(addr, actor), c2.access(addr, actor)
            assert r1 == r2
            assert r1.latency in (cfg.hit_latency, cfg.miss_latency)
        assert c1.valid_lines() <= cfg.capacity


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 64), max_size=300))
def test_prefetcher_never_changes_triggering_latency(lines):
    """Same latency for the access itself; only later residency may differ."""
    on = new_cache(small(prefetcher=PrefetchPolicy.NEXT_LINE))
    for ln in lines:
        snapshot = [list(t) for t in on._tags]
        off = new_cache(small())
        off._tags = [list(t) for t in snapshot]
        off._owners = [list(o) for o in on._owners]
        off._recency = [list(r) for r in on._recency]
        assert on.access(ln * 64, A).latency == off.access(ln * 64, A).latency


def test_prefetcher_needs_confirmed_stream():
    c = new_cache(small(num_sets=16, prefetcher=PrefetchPolicy.NEXT_LINE))
    c.access(5 * 64, A)
    assert not c.contains(6 * 64)  # single access: no stream yet
    c.access(6 * 64, A)
    assert c.contains(7 * 64)
    assert any(o is Actor.PREFETCHER for o, _ in c.snapshot_set(7))
    assert c.access(7 * 64, A).hit


# -- flush ---------------------------------------------------------------------

def test_flush_cached_line():
    c = new_cache(CacheConfig())
    c.access(0x1040, V)
    assert c.flush_line(0x1040) == 100
    assert not c.contains(0x1040, V)
    assert c.access(0x1040, V).latency == 100


def test_flush_absent_line_is_fast_and_harmless():
    c = new_cache(CacheConfig())
    c.access(0x80, A)
    before = [list(t) for t in c._tags]
    assert c.flush_line(0x1040) == 4
    assert c._tags == before


def test_flush_convention_flag():
    c = new_cache(CacheConfig(flush_present_costs_miss=False))
    c.access(0x40, A)
    assert c.flush_line(0x40) == 4
    assert c.flush_line(0x40) == 100


def test_flush_needs_isa_support():
    c = new_cache(CacheConfig(isa=IsaCapabilities(has_line_flush=False)))
    with pytest.raises(UnsupportedInstruction):
        c.flush_line(0)


# -- snapshots ---------------------------------------------------------------------

def test_prime_then_one_victim_access():
    cfg = CacheConfig()
    c = new_cache(cfg)
    stride = cfg.num_sets * cfg.line_size
    for k in range(cfg.ways):
        c.access(65 * 64 + k * stride, A)
    assert c.snapshot_set(65) == [(A, True)] * 8
    c.access(65 * 64 + 100 * stride, V)
    owners = [o for o, _ in c.snapshot_set(65)]
    assert owners.count(V) == 1 and owners.count(A) == 7


def test_random_replacement_reproducible():
    cfg = small(replacement=Replacement.RANDOM)
    rng = random.Random(3)
    seq = [rng.randrange(50) * 64 for _ in range(200)]
    runs = []
    for _ in range(2):
        c = new_cache(cfg, seed=7)
        runs.append([c.access(x, A) for x in seq])
    assert runs[0] == runs[1]
