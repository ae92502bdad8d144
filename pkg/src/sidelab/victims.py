"""Cryptographic victims whose secret drives control flow or table indices.

The modular-exponentiation victims do not touch the cache themselves. They lay
out a slot-by-slot schedule of memory events that the attack scheduler replays
in lockstep with the attacker. The AES victim is a single first-round lookup
and accesses the cache directly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .cache import Actor, CacheConfig, CacheState
from .errors import InvalidConfig

# victim data lives far above the attacker's buffer; any power of two >= num_sets*line_size works
VICTIM_BASE = 1 << 32
ORACLE_EXPONENT_LIMIT = 1 << 20

AES_SBOX = (
    0x63, 0x7C, 0x77, 0x7B, 0xF2, 0x6B, 0x6F, 0xC5, 0x30, 0x01, 0x67, 0x2B, 0xFE, 0xD7, 0xAB, 0x76,
    0xCA, 0x82, 0xC9, 0x7D, 0xFA, 0x59, 0x47, 0xF0, 0xAD, 0xD4, 0xA2, 0xAF, 0x9C, 0xA4, 0x72, 0xC0,
    0xB7, 0xFD, 0x93, 0x26, 0x36, 0x3F, 0xF7, 0xCC, 0x34, 0xA5, 0xE5, 0xF1, 0x71, 0xD8, 0x31, 0x15,
    0x04, 0xC7, 0x23, 0xC3, 0x18, 0x96, 0x05, 0x9A, 0x07, 0x12, 0x80, 0xE2, 0xEB, 0x27, 0xB2, 0x75,
    0x09, 0x83, 0x2C, 0x1A, 0x1B, 0x6E, 0x5A, 0xA0, 0x52, 0x3B, 0xD6, 0xB3, 0x29, 0xE3, 0x2F, 0x84,
    0x53, 0xD1, 0x00, 0xED, 0x20, 0xFC, 0xB1, 0x5B, 0x6A, 0xCB, 0xBE, 0x39, 0x4A, 0x4C, 0x58, 0xCF,
    0xD0, 0xEF, 0xAA, 0xFB, 0x43, 0x4D, 0x33, 0x85, 0x45, 0xF9, 0x02, 0x7F, 0x50, 0x3C, 0x9F, 0xA8,
    0x51, 0xA3, 0x40, 0x8F, 0x92, 0x9D, 0x38, 0xF5, 0xBC, 0xB6, 0xDA, 0x21, 0x10, 0xFF, 0xF3, 0xD2,
    0xCD, 0x0C, 0x13, 0xEC, 0x5F, 0x97, 0x44, 0x17, 0xC4, 0xA7, 0x7E, 0x3D, 0x64, 0x5D, 0x19, 0x73,
    0x60, 0x81, 0x4F, 0xDC, 0x22, 0x2A, 0x90, 0x88, 0x46, 0xEE, 0xB8, 0x14, 0xDE, 0x5E, 0x0B, 0xDB,
    0xE0, 0x32, 0x3A, 0x0A, 0x49, 0x06, 0x24, 0x5C, 0xC2, 0xD3, 0xAC, 0x62, 0x91, 0x95, 0xE4, 0x79,
    0xE7, 0xC8, 0x37, 0x6D, 0x8D, 0xD5, 0x4E, 0xA9, 0x6C, 0x56, 0xF4, 0xEA, 0x65, 0x7A, 0xAE, 0x08,
    0xBA, 0x78, 0x25, 0x2E, 0x1C, 0xA6, 0xB4, 0xC6, 0xE8, 0xDD, 0x74, 0x1F, 0x4B, 0xBD, 0x8B, 0x8A,
    0x70, 0x3E, 0xB5, 0x66, 0x48, 0x03, 0xF6, 0x0E, 0x61, 0x35, 0x57, 0xB9, 0x86, 0xC1, 0x1D, 0x9E,
    0xE1, 0xF8, 0x98, 0x11, 0x69, 0xD9, 0x8E, 0x94, 0x9B, 0x1E, 0x87, 0xE9, 0xCE, 0x55, 0x28, 0xDF,
    0x8C, 0xA1, 0x89, 0x0D, 0xBF, 0xE6, 0x42, 0x68, 0x41, 0x99, 0x2D, 0x0F, 0xB0, 0x54, 0xBB, 0x16,
)


class Purpose(enum.Enum):
    SQUARE = "square"
    MULTIPLY = "multiply"
    TABLE_LOOKUP = "table_lookup"


@dataclass(frozen=True)
class MemoryEvent:
    address: int
    purpose: Purpose


@dataclass(frozen=True)
class VictimKey:
    """Secret bit vector, most significant bit first."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if not 1 <= len(self.bits) <= 64:
            raise InvalidConfig(f"key length must be in 1..64, got {len(self.bits)}")
        if any(b not in (0, 1) for b in self.bits):
            raise InvalidConfig("key bits must be 0 or 1")

    @classmethod
    def from_int(cls, value: int, length: int) -> "VictimKey":
        if value < 0 or value >= 1 << length:
            raise InvalidConfig(f"{value} does not fit in {length} bits")
        return cls(tuple((value >> (length - 1 - i)) & 1 for i in range(length)))

    @classmethod
    def from_string(cls, text: str) -> "VictimKey":
        """Parse ``0x``-prefixed hex (4 bits per digit) or a plain ``0``/``1`` string."""
        text = text.strip().replace("_", "")
        if text.lower().startswith("0x"):
            digits = text[2:]
            return cls.from_int(int(digits, 16), 4 * len(digits))
        if text and set(text) <= {"0", "1"}:
            return cls(tuple(int(c) for c in text))
        raise InvalidConfig(f"cannot parse key {text!r}; use 0x-hex or a bit string")

    @classmethod
    def random(cls, length: int, rng) -> "VictimKey":
        """Uniform key drawn from a numpy ``Generator``."""
        return cls(tuple(int(b) for b in rng.integers(0, 2, size=length)))

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    def to_int(self) -> int:
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return value

    def popcount(self) -> int:
        return sum(self.bits)


@dataclass(frozen=True)
class ModExpParams:
    base: int
    modulus: int
    key: VictimKey

    def __post_init__(self):
        if self.modulus < 2:
            raise InvalidConfig(f"modulus must be >= 2, got {self.modulus}")
        if not 0 <= self.base < 1 << 64 or self.modulus >= 1 << 64:
            raise InvalidConfig("base and modulus must be unsigned 64-bit values")

    @property
    def reduced_base(self) -> int:
        return self.base % self.modulus


@dataclass
class VictimTimeline:
    """Slot schedule of a modexp victim.

    ``slots`` includes the idle release slots that follow every key bit, so
    ``len(slots) == busy_slots + gap * len(key)``. ``bit_spans[i]`` is the
    (first slot, busy length) of key bit ``i``. Slot lists are shared between
    slots with identical events; treat them as read-only.
    """

    slots: list[list[MemoryEvent]]
    result: int
    occupancy_per_bit: dict[int, int]
    bit_spans: list[tuple[int, int]]
    key: VictimKey
    square_address: int
    multiply_address: int
    gap: int = 1

    @property
    def busy_slots(self) -> int:
        return sum(n for _, n in self.bit_spans)

    @property
    def shared_address(self) -> int:
        return self.multiply_address

    def occupancy(self) -> list[int]:
        return [n for _, n in self.bit_spans]


def idle_timeline(num_slots: int = 0) -> VictimTimeline:
    """A victim that never touches memory; for baselines."""
    return VictimTimeline([[] for _ in range(num_slots)], 1, {}, [], VictimKey((0,)), -1, -1, 0)


def modexp_reference(b: int, e: int, m: int) -> int:
    """``b**e mod m`` by e-fold repeated multiplication.

    Deliberately naive so it shares nothing with square-and-multiply.
    """
    if m < 2:
        raise InvalidConfig(f"modulus must be >= 2, got {m}")
    if not 0 <= e < ORACLE_EXPONENT_LIMIT:
        raise InvalidConfig(f"oracle exponent must be in [0, 2**20), got {e}")
    r = 1 % m
    b %= m
    for _ in range(e):
        r = r * b % m
    return r


def victim_addresses(config: CacheConfig, target_set: int) -> tuple[int, int]:
    """Square and multiply data lines, both indexing into ``target_set``."""
    if not 0 <= target_set < config.num_sets:
        raise InvalidConfig(f"target_set {target_set} out of range [0, {config.num_sets})")
    stride = config.num_sets * config.line_size
    square = VICTIM_BASE + target_set * config.line_size
    return square, square + stride


def _config_of(cache: Union[CacheState, CacheConfig]) -> CacheConfig:
    return cache.config if isinstance(cache, CacheState) else cache


def _check_durations(d0: int, d1: int, gap: int) -> None:
    if not d1 > d0 >= 1:
        raise InvalidConfig(f"slot durations need d1 > d0 >= 1, got d0={d0}, d1={d1}")
    if gap < 0:
        raise InvalidConfig(f"gap must be >= 0, got {gap}")


def _schedule(params: ModExpParams, d0: int, d1: int, target_set: int, cache,
              gap: int, always_multiply: bool) -> VictimTimeline:
    config = _config_of(cache)
    sq_addr, mul_addr = victim_addresses(config, target_set)
    sq_slot = [MemoryEvent(sq_addr, Purpose.SQUARE)]
    mul_slot = [MemoryEvent(mul_addr, Purpose.MULTIPLY)]
    zero_bit = [sq_slot] * d0 + ([mul_slot] * (d1 - d0) if always_multiply else []) + [[]] * gap
    one_bit = [sq_slot] * d0 + [mul_slot] * (d1 - d0) + [[]] * gap
    zero_busy = d1 if always_multiply else d0

    m = params.modulus
    b = params.reduced_base
    r = 1 % m
    slots: list[list[MemoryEvent]] = []
    spans = []
    for bit in params.key.bits:
        r = r * r % m
        spans.append((len(slots), d1 if bit else zero_busy))
        if bit:
            r = r * b % m
            slots.extend(one_bit)
        else:
            if always_multiply:
                _ = r * b % m  # dummy multiply, result discarded
            slots.extend(zero_bit)
    return VictimTimeline(slots, r, {0: zero_busy, 1: d1}, spans, params.key, sq_addr, mul_addr, gap)


def run_modexp_victim(params: ModExpParams, d0: int, d1: int, target_set: int,
                      cache: Union[CacheState, CacheConfig], gap: int = 1) -> VictimTimeline:
    """Left-to-right square-and-multiply.

    Each key bit keeps ``target_set`` busy for ``d0`` slots of squaring, plus
    ``d1 - d0`` slots of multiplying when the bit is set, then releases the set
    for ``gap`` idle slots.
    """
    _check_durations(d0, d1, gap)
    return _schedule(params, d0, d1, target_set, cache, gap, always_multiply=False)


def run_modexp_constant_time(params: ModExpParams, d1: int, target_set: int,
                             cache: Union[CacheState, CacheConfig], gap: int = 1,
                             d0: int = 2) -> VictimTimeline:
    """Square-and-always-multiply: every bit is busy for exactly ``d1`` slots."""
    d0 = min(d0, d1 - 1)
    _check_durations(d0, d1, gap)
    return _schedule(params, d0, d1, target_set, cache, gap, always_multiply=True)


@dataclass(frozen=True)
class AesTableConfig:
    sbox: Sequence[int] = AES_SBOX
    table_base: int = VICTIM_BASE + (1 << 24)
    entries_per_line: int = 64

    def __post_init__(self):
        if sorted(self.sbox) != list(range(256)):
            raise InvalidConfig("sbox must be a bijection on bytes")

    def entry_address(self, index: int) -> int:
        return self.table_base + index

    def line_of(self, index: int) -> int:
        return index // self.entries_per_line


def run_aes_first_round(plaintext_byte: int, key_byte: int, table: AesTableConfig,
                        cache: Optional[CacheState] = None) -> MemoryEvent:
    """First-round S-box lookup at ``table_base + (p XOR k)``."""
    event = MemoryEvent(table.entry_address((plaintext_byte ^ key_byte) & 0xFF), Purpose.TABLE_LOOKUP)
    if cache is not None:
        cache.access(event.address, Actor.VICTIM)
    return event
