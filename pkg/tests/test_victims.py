import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sidelab.cache import Actor, CacheConfig, new_cache, set_index
from sidelab.errors import InvalidConfig
from sidelab.victims import (AES_SBOX, AesTableConfig, ModExpParams, Purpose, VictimKey, modexp_reference,
                             run_aes_first_round, run_modexp_constant_time, run_modexp_victim)

CFG = CacheConfig()


def key(text):
    return VictimKey.from_string(text)


# -- oracle ----------------------------------------------------------------------

def test_reference_examples():
    assert modexp_reference(3, 5, 7) == 5
    assert modexp_reference(123, 0, 11) == 1
    assert modexp_reference(123, 1, 11) == 123 % 11


@given(st.integers(0, 2**64 - 1), st.integers(0, 3000), st.integers(2, 2**64 - 1))
def test_reference_agrees_with_builtin_pow(b, e, m):
    assert modexp_reference(b, e, m) == pow(b, e, m)


def test_reference_rejects_bad_domain():
    with pytest.raises(InvalidConfig):
        modexp_reference(2, 3, 1)
    with pytest.raises(InvalidConfig):
        modexp_reference(2, 1 << 20, 7)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 2**20 - 1), st.integers(2, 2**64 - 1))
def test_victim_result_matches_reference(b, e, m):
    params = ModExpParams(b, m, VictimKey.from_int(e, e.bit_length()))
    assert run_modexp_victim(params, 2, 5, 65, CFG).result == modexp_reference(b, e, m)
    assert run_modexp_constant_time(params, 5, 65, CFG).result == modexp_reference(b, e, m)


# -- keys ---------------------------------------------------------------------------

def test_key_parsing():
    assert key("0xA").bits == (1, 0, 1, 0)
    assert key("0x0f").bits == (0, 0, 0, 0, 1, 1, 1, 1)
    assert key("101").to_int() == 5
    assert str(VictimKey.from_int(5, 4)) == "0101"
    with pytest.raises(InvalidConfig):
        key("12")
    with pytest.raises(InvalidConfig):
        VictimKey(())
    with pytest.raises(InvalidConfig):
        VictimKey((1,) * 65)


def test_random_key_is_seeded():
    a = VictimKey.random(32, np.random.default_rng(9))
    b = VictimKey.random(32, np.random.default_rng(9))
    assert a == b and len(a) == 32


# -- leaky timeline ---------------------------------------------------------------------

def test_timeline_1010():
    t = run_modexp_victim(ModExpParams(3, 7, key("1010")), 2, 5, 65, CFG)
    assert t.busy_slots == 5 + 2 + 5 + 2
    assert t.occupancy() == [5, 2, 5, 2]
    assert len(t.slots) == t.busy_slots + t.gap * 4


def test_timeline_all_zero_key():
    t = run_modexp_victim(ModExpParams(3, 7, key("0000")), 2, 5, 65, CFG)
    assert t.occupancy() == [2, 2, 2, 2]
    assert t.result == 1
    assert all(ev.purpose is Purpose.SQUARE for slot in t.slots for ev in slot)


def test_timeline_result_101():
    assert run_modexp_victim(ModExpParams(3, 7, key("101")), 2, 5, 65, CFG).result == 5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=64), st.integers(1, 5), st.integers(1, 5))
def test_occupancy_law(bits, d0, extra):
    d1 = d0 + extra
    k = VictimKey(tuple(bits))
    t = run_modexp_victim(ModExpParams(5, 1009, k), d0, d1, 65, CFG)
    assert t.occupancy() == [d1 if b else d0 for b in bits]
    ct = run_modexp_constant_time(ModExpParams(5, 1009, k), d1, 65, CFG)
    assert ct.occupancy() == [d1] * len(bits)


def test_one_target_set_line_per_busy_slot():
    t = run_modexp_victim(ModExpParams(3, 7, key("1101")), 2, 5, 65, CFG)
    busy = [slot for slot in t.slots if slot]
    assert len(busy) == t.busy_slots
    for slot in busy:
        assert len(slot) == 1 and set_index(CFG, slot[0].address) == 65
    assert set_index(CFG, t.shared_address) == 65
    assert t.square_address != t.multiply_address


def test_constant_time_1010():
    t = run_modexp_constant_time(ModExpParams(3, 7, key("1010")), 5, 65, CFG)
    assert t.busy_slots == 20
    assert len(set(t.occupancy())) == 1
    assert run_modexp_constant_time(ModExpParams(3, 7, key("101")), 5, 65, CFG).result == 5


def test_timeline_is_deterministic():
    p = ModExpParams(0xDEADBEEF, 0xFFFFFFFB, key("0x1234abcd"))
    a, b = run_modexp_victim(p, 2, 5, 65, CFG), run_modexp_victim(p, 2, 5, 65, CFG)
    assert a.slots == b.slots and a.result == b.result


@pytest.mark.parametrize("d0,d1", [(0, 5), (5, 5), (6, 5)])
def test_bad_durations(d0, d1):
    with pytest.raises(InvalidConfig):
        run_modexp_victim(ModExpParams(3, 7, key("1")), d0, d1, 65, CFG)


def test_bad_modulus():
    with pytest.raises(InvalidConfig):
        ModExpParams(3, 1, key("1"))


# -- AES -------------------------------------------------------------------------------------

def test_aes_lookup_address():
    t = AesTableConfig()
    assert run_aes_first_round(0x00, 0x00, t).address == t.table_base
    assert run_aes_first_round(0x53, 0x3C, t).address == t.table_base + 0x6F


@given(st.integers(0, 255))
def test_aes_index_bijection(k):
    t = AesTableConfig()
    assert len({run_aes_first_round(p, k, t).address for p in range(256)}) == 256


def test_aes_lookup_touches_cache():
    t = AesTableConfig()
    c = new_cache(CFG)
    run_aes_first_round(0x53, 0x3C, t, c)
    assert c.contains(t.table_base + 0x6F, Actor.VICTIM)


def test_sbox_must_be_bijection():
    assert sorted(AES_SBOX) == list(range(256))
    with pytest.raises(InvalidConfig):
        AesTableConfig(sbox=(0,) * 256)
