"""Scenario documents: YAML in, fully validated :class:`ScenarioConfig` out.

A scenario has the top-level sections ``cache``, ``victim``, ``attack``,
``power``, ``seeds`` plus the scalars ``noise_sigma``, ``defenses`` and
``output_dir``. Every field is optional; an empty document is the default
experiment (256 sets x 8 ways x 64 B, 300 slots, 32-bit random key, d0=2, d1=5).
Unknown keys are rejected. See README.md for the full schema.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

from .attacks import AttackConfig, Strategy
from .cache import CacheConfig, IndexMode, IsaCapabilities, PrefetchPolicy, Replacement
from .defenses import DEFENSES, PartitionPolicy
from .errors import InvalidConfig, ScenarioError
from .victims import ModExpParams, VictimKey

VICTIM_KINDS = ("modexp", "modexp_ct", "aes")
SCENARIO_DEFENSES = ("partition", "randomize")


@dataclass(frozen=True)
class VictimSpec:
    kind: str = "modexp"
    key: str = "random"
    key_bits: int = 32
    b: int = 0x2545F4914F6CDD1D
    m: int = 0xFFFFFFFFFFFFFFC5  # largest 64-bit prime
    d0: int = 2
    d1: int = 5
    gap: int = 1
    target_set: int = 65


@dataclass(frozen=True)
class Seeds:
    cache: int = 0
    attack: int = 0
    noise: int = 0
    key: int = 0
    defense: int = 1  # 0 would select the identity permutation


@dataclass(frozen=True)
class PowerSpec:
    base_power: float = 1.0
    op_weight: float = 1.0
    noise_sigma: float = 0.0
    masked: bool = False
    spa_traces: int = 1
    dpa_repeats: int = 16
    aes_key: str = "random"


@dataclass(frozen=True)
class ScenarioConfig:
    cache: CacheConfig = field(default_factory=CacheConfig)
    victim: VictimSpec = field(default_factory=VictimSpec)
    attack: AttackConfig = field(default_factory=AttackConfig)
    noise_sigma: float = 0.0
    defenses: tuple[str, ...] = ()
    seeds: Seeds = field(default_factory=Seeds)
    power: PowerSpec = field(default_factory=PowerSpec)
    output_dir: str = "sidelab-out"

    def to_document(self) -> dict:
        """Plain-data form that :func:`parse_scenario_dict` accepts back."""
        c, a = self.cache, self.attack
        return {
            "cache": {
                "num_sets": c.num_sets, "ways": c.ways, "line_size": c.line_size,
                "replacement": c.replacement.value, "hit_latency": c.hit_latency,
                "miss_latency": c.miss_latency, "prefetcher": c.prefetcher.value,
                "index_mode": c.index_mode.value,
                "flush_present_costs_miss": c.flush_present_costs_miss,
                "isa": {"has_line_flush": c.isa.has_line_flush},
            },
            "victim": _plain(self.victim),
            "attack": {
                "strategy": a.strategy.value,
                "target_sets": None if a.target_sets is None else list(a.target_sets),
                "num_slots": a.num_slots,
                "shuffle_probe_order": a.shuffle_probe_order,
                "shared_address": a.shared_address,
                "victim_start": a.victim_start,
            },
            "noise_sigma": self.noise_sigma,
            "defenses": list(self.defenses),
            "seeds": _plain(self.seeds),
            "power": _plain(self.power),
            "output_dir": self.output_dir,
        }

    def resolved_key(self) -> VictimKey:
        """Secret exponent; ``"random"`` draws ``key_bits`` bits from ``seeds.key``."""
        v = self.victim
        if v.key == "random":
            return VictimKey.random(v.key_bits, np.random.default_rng(self.seeds.key))
        try:
            return VictimKey.from_string(v.key)
        except (InvalidConfig, ValueError) as exc:
            raise ScenarioError(f"victim.key: cannot parse {v.key!r}: {exc}") from None

    def resolved_aes_key(self) -> int:
        text = self.victim.key if self.victim.kind == "aes" else self.power.aes_key
        if text == "random":
            return int(np.random.default_rng(self.seeds.key).integers(0, 256))
        return _parse_byte(text, "victim.key")

    def modexp_params(self) -> ModExpParams:
        return ModExpParams(self.victim.b, self.victim.m, self.resolved_key())


def _plain(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _parse_byte(text: str, where: str) -> int:
    try:
        value = int(str(text), 0)
    except ValueError:
        raise ScenarioError(f"{where}: expected a byte like 0x3c or 'random', got {text!r}") from None
    if not 0 <= value < 256:
        raise ScenarioError(f"{where}: byte out of range: {text!r}")
    return value


# ---------------------------------------------------------------------------
# parsing


def _expect_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ScenarioError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(data: dict, allowed, where: str) -> None:
    unknown = sorted(set(map(str, data)) - set(allowed))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ScenarioError(f"unknown field(s): {', '.join(prefix + u for u in unknown)}")


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ScenarioError(f"{where}: expected an integer, got {value!r}")
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            raise ScenarioError(f"{where}: expected an integer, got {value!r}") from None
    return value


def _float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _bool(value, where: str) -> bool:
    if not isinstance(value, bool):
        raise ScenarioError(f"{where}: expected true/false, got {value!r}")
    return value


def _enum(cls: type[enum.Enum], value, where: str):
    # YAML 1.1 reads a bare OFF as false
    if value is False and "OFF" in cls.__members__:
        return cls.OFF
    try:
        return cls(str(value).upper())
    except ValueError:
        names = ", ".join(m.value for m in cls)
        raise ScenarioError(f"{where}: {value!r} is not one of {names}") from None


def _convert(value, kind, where: str):
    if kind is int:
        return _int(value, where)
    if kind is float:
        return _float(value, where)
    if kind is bool:
        return _bool(value, where)
    if kind is str:
        if isinstance(value, bool) or not isinstance(value, (str, int)):
            raise ScenarioError(f"{where}: expected a string, got {value!r}")
        return value if isinstance(value, str) else hex(value)
    if isinstance(kind, type) and issubclass(kind, enum.Enum):
        return _enum(kind, value, where)
    raise AssertionError(kind)


_CACHE_FIELDS = {
    "num_sets": int, "ways": int, "line_size": int, "replacement": Replacement,
    "hit_latency": int, "miss_latency": int, "prefetcher": PrefetchPolicy,
    "index_mode": IndexMode, "flush_present_costs_miss": bool,
}
_ATTACK_FIELDS = {
    "strategy": Strategy, "num_slots": int, "shuffle_probe_order": bool, "victim_start": int,
}
_VICTIM_FIELDS = {f.name: (str if f.name in ("kind", "key") else int) for f in fields(VictimSpec)}
_SEED_FIELDS = {f.name: int for f in fields(Seeds)}
_POWER_FIELDS = {
    "base_power": float, "op_weight": float, "noise_sigma": float, "masked": bool,
    "spa_traces": int, "dpa_repeats": int, "aes_key": str,
}
TOP_LEVEL = ("cache", "victim", "attack", "noise_sigma", "defenses", "seeds", "power", "output_dir")


def _section(data: dict, spec: dict, where: str) -> dict:
    return {k: _convert(v, spec[k], f"{where}.{k}") for k, v in data.items() if k in spec}


def parse_scenario_dict(doc: Any) -> ScenarioConfig:
    """Build and validate a scenario from already-loaded plain data."""
    doc = _expect_mapping(doc, "scenario")
    _reject_unknown(doc, TOP_LEVEL, "")

    raw = _expect_mapping(doc.get("cache"), "cache")
    _reject_unknown(raw, list(_CACHE_FIELDS) + ["isa"], "cache")
    isa_raw = _expect_mapping(raw.get("isa"), "cache.isa")
    _reject_unknown(isa_raw, ["has_line_flush"], "cache.isa")
    isa = IsaCapabilities(**{k: _bool(v, f"cache.isa.{k}") for k, v in isa_raw.items()})
    cache = CacheConfig(isa=isa, **_section(raw, _CACHE_FIELDS, "cache"))

    raw = _expect_mapping(doc.get("victim"), "victim")
    _reject_unknown(raw, _VICTIM_FIELDS, "victim")
    if "key" in raw and not isinstance(raw["key"], str):
        # YAML turns 0x0F into 15 and 0101 into 101; only a quoted key keeps its length
        raise ScenarioError(f"victim.key: quote the key (e.g. '0x0f' or '0101'), got {raw['key']!r}")
    victim = VictimSpec(**_section(raw, _VICTIM_FIELDS, "victim"))

    raw = _expect_mapping(doc.get("attack"), "attack")
    _reject_unknown(raw, list(_ATTACK_FIELDS) + ["target_sets", "shared_address"], "attack")
    attack_kw = _section(raw, _ATTACK_FIELDS, "attack")
    ts = raw.get("target_sets")
    if ts is not None and ts != "all":
        if not isinstance(ts, list):
            raise ScenarioError(f"attack.target_sets: expected a list of set indices or 'all', got {ts!r}")
        attack_kw["target_sets"] = tuple(_int(s, f"attack.target_sets[{i}]") for i, s in enumerate(ts))
    if raw.get("shared_address") is not None:
        attack_kw["shared_address"] = _int(raw["shared_address"], "attack.shared_address")

    raw = _expect_mapping(doc.get("seeds"), "seeds")
    _reject_unknown(raw, _SEED_FIELDS, "seeds")
    seeds = Seeds(**_section(raw, _SEED_FIELDS, "seeds"))

    raw = _expect_mapping(doc.get("power"), "power")
    _reject_unknown(raw, _POWER_FIELDS, "power")
    power = PowerSpec(**_section(raw, _POWER_FIELDS, "power"))

    noise = _float(doc.get("noise_sigma", 0.0), "noise_sigma")
    defenses = doc.get("defenses") or []
    if not isinstance(defenses, list):
        raise ScenarioError(f"defenses: expected a list, got {defenses!r}")
    defenses = tuple(str(d).lower() for d in defenses)
    out = doc.get("output_dir", ScenarioConfig.output_dir)
    if not isinstance(out, str):
        raise ScenarioError(f"output_dir: expected a path string, got {out!r}")

    sc = ScenarioConfig(cache=cache, victim=victim, attack=AttackConfig(**attack_kw),
                        noise_sigma=noise, defenses=defenses, seeds=seeds,
                        power=power, output_dir=out)
    validate_scenario(sc)
    return sc


def validate_scenario(sc: ScenarioConfig) -> None:
    """Check every cross-module invariant up front; raises :class:`ScenarioError`."""
    try:
        for name in ("cache", "attack", "noise", "key", "defense"):
            if getattr(sc.seeds, name) < 0:
                raise ScenarioError(f"seeds.{name} must be >= 0")
        sc.cache.validate()
        v = sc.victim
        if v.kind not in VICTIM_KINDS:
            raise ScenarioError(f"victim.kind: {v.kind!r} is not one of {', '.join(VICTIM_KINDS)}")
        if not 0 <= v.target_set < sc.cache.num_sets:
            raise ScenarioError(f"victim.target_set: {v.target_set} outside [0, {sc.cache.num_sets})")
        if not v.d1 > v.d0 >= 1:
            raise ScenarioError(f"victim: slot durations need d1 > d0 >= 1, got d0={v.d0}, d1={v.d1}")
        if v.gap < 0:
            raise ScenarioError("victim.gap must be >= 0")
        if v.kind == "aes":
            if sc.attack.strategy is not Strategy.PRIME_PROBE:
                raise ScenarioError("victim.kind aes supports only attack.strategy PRIME_PROBE")
            if sc.cache.line_size > 256:
                raise ScenarioError("aes victim needs line_size <= 256")
            sc.resolved_aes_key()
        else:
            if v.key == "random" and not 1 <= v.key_bits <= 64:
                raise ScenarioError(f"victim.key_bits must be in [1, 64], got {v.key_bits}")
            sc.modexp_params()
        attack = sc.attack
        if attack.strategy.needs_line_flush and not sc.cache.isa.has_line_flush:
            raise ScenarioError(
                f"attack.strategy {attack.strategy.value} needs a line-flush instruction "
                "but cache.isa.has_line_flush is false"
            )
        # the shared line defaults to the victim's multiply line, filled in at run time
        probe = attack if attack.shared_address is not None else replace(attack, shared_address=0)
        replace(probe, noise_sigma=sc.noise_sigma).validate(sc.cache)
        for d in sc.defenses:
            if d not in SCENARIO_DEFENSES:
                raise ScenarioError(f"defenses: {d!r} is not one of {', '.join(SCENARIO_DEFENSES)}")
        if len(set(sc.defenses)) != len(sc.defenses):
            raise ScenarioError("defenses: duplicate entries")
        if "partition" in sc.defenses:
            PartitionPolicy.even(sc.cache.ways).validate(sc.cache.ways)
        p = sc.power
        if p.noise_sigma < 0 or p.spa_traces < 1 or p.dpa_repeats < 1:
            raise ScenarioError("power: noise_sigma >= 0, spa_traces >= 1 and dpa_repeats >= 1 required")
        if p.aes_key != "random":
            _parse_byte(p.aes_key, "power.aes_key")
    except ScenarioError:
        raise
    except (InvalidConfig, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def load_document(text: str, source: str = "<string>") -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"{where}: YAML parse error: {problem}") from exc


def parse_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario_dict(load_document(text, str(path)))


def parse_scenario_text(text: str) -> ScenarioConfig:
    return parse_scenario_dict(load_document(text))


def dump_scenario(sc: ScenarioConfig) -> str:
    return yaml.safe_dump(sc.to_document(), sort_keys=False)


# ---------------------------------------------------------------------------
# derived scenarios (sweeps, defense evaluation)


def with_seed_offset(sc: ScenarioConfig, offset: int) -> ScenarioConfig:
    """Shift the per-trial seeds by ``offset``. The defense seed is a property of
    the hardware, not of the trial, and stays fixed."""
    s = sc.seeds
    return replace(sc, seeds=replace(s, cache=s.cache + offset, attack=s.attack + offset,
                                     noise=s.noise + offset, key=s.key + offset))


def with_defense(sc: ScenarioConfig, defense: str) -> ScenarioConfig:
    """Scenario with exactly one named defense from :data:`~sidelab.defenses.DEFENSES`."""
    if defense not in DEFENSES:
        raise InvalidConfig(f"unknown defense {defense!r}; expected one of {DEFENSES}")
    victim = sc.victim
    if victim.kind == "modexp_ct" and defense != "constant_time":
        victim = replace(victim, kind="modexp")
    if defense == "constant_time":
        return replace(sc, defenses=(), victim=replace(victim, kind="modexp_ct"))
    chosen = {"none": (), "partition": ("partition",), "randomize": ("randomize",),
              "both": ("partition", "randomize")}[defense]
    return replace(sc, defenses=chosen, victim=victim)


def set_path(doc: dict, dotted: str, value) -> dict:
    """Set ``a.b.c`` in a nested scenario document, refusing unknown paths."""
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ScenarioError(f"unknown sweep axis {dotted!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ScenarioError(f"unknown sweep axis {dotted!r}")
    node[parts[-1]] = value
    return doc


def with_value(sc: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Scenario with one sweepable parameter changed.

    ``axis`` is ``defense`` (a name from :data:`DEFENSES`) or a dotted field path
    of the scenario document such as ``noise_sigma`` or ``attack.shuffle_probe_order``.
    """
    if axis == "defense":
        return with_defense(sc, str(value))
    if axis.split(".")[0] in ("seeds", "output_dir"):
        raise ScenarioError(f"axis {axis!r} is not sweepable")
    doc = set_path(sc.to_document(), axis, value)
    return parse_scenario_dict(doc)


def check_axis(sc: ScenarioConfig, axis: str) -> None:
    if axis == "defense":
        return
    if axis.split(".")[0] in ("seeds", "output_dir"):
        raise ScenarioError(f"axis {axis!r} is not sweepable")
    set_path(sc.to_document(), axis, None)
