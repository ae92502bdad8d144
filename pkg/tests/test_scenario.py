import pytest

from sidelab.attacks import Strategy
from sidelab.cache import PrefetchPolicy
from sidelab.errors import ScenarioError
from sidelab.scenario import (ScenarioConfig, check_axis, dump_scenario, parse_scenario, parse_scenario_dict,
                              parse_scenario_text, with_defense, with_seed_offset, with_value)


def test_empty_document_gives_defaults():
    sc = parse_scenario_text("")
    assert sc == ScenarioConfig()
    c, a, v = sc.cache, sc.attack, sc.victim
    assert (c.num_sets, c.ways, c.line_size, c.hit_latency, c.miss_latency) == (256, 8, 64, 4, 100)
    assert (a.num_slots, v.d0, v.d1, v.key) == (300, 2, 5, "random")
    assert len(sc.resolved_key()) == 32


def test_random_key_follows_seed():
    a = parse_scenario_text("seeds: {key: 1}").resolved_key()
    b = parse_scenario_text("seeds: {key: 1}").resolved_key()
    c = parse_scenario_text("seeds: {key: 2}").resolved_key()
    assert a == b != c


def test_flush_strategy_without_flush_is_rejected_at_parse():
    text = "cache: {isa: {has_line_flush: false}}\nattack: {strategy: FLUSH_RELOAD}\n"
    with pytest.raises(ScenarioError, match="has_line_flush"):
        parse_scenario_text(text)
    parse_scenario_text("cache: {isa: {has_line_flush: false}}\nattack: {strategy: EVICT_RELOAD}\n")


@pytest.mark.parametrize("text,needle", [
    ("attack: {num_slots: 0}", "num_slots"),
    ("attack: {bogus: 1}", "attack.bogus"),
    ("surprise: 1", "surprise"),
    ("victim: {kind: rsa}", "victim.kind"),
    ("victim: {d0: 5, d1: 5}", "d1 > d0"),
    ("victim: {target_set: 256}", "target_set"),
    ("victim: {key: 1011}", "quote"),
    ("victim: {key: '0xZZ'}", "key"),
    ("cache: {num_sets: 100}", "power of two"),
    ("cache: {ways: 1}\ndefenses: [partition]", "way"),
    ("cache: {replacement: FIFO}", "cache.replacement"),
    ("cache: {ways: true}", "cache.ways"),
    ("defenses: [moat]", "defenses"),
    ("noise_sigma: -1", "noise_sigma"),
    ("attack: {target_sets: [1, 1]}", "duplicates"),
    ("victim: {kind: aes}\nattack: {strategy: FLUSH_RELOAD}", "aes"),
    ("seeds: {key: -1}", "seeds.key"),
    ("- just\n- a list", "mapping"),
])
def test_validation_errors_name_the_problem(text, needle):
    with pytest.raises(ScenarioError, match=needle):
        parse_scenario_text(text)


def test_yaml_error_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("attack:\n  num_slots: [1,\n: x\n")
    with pytest.raises(ScenarioError, match=r"bad.yaml:\d+:\d+"):
        parse_scenario(p)


def test_missing_file():
    with pytest.raises(ScenarioError, match="cannot read"):
        parse_scenario("/nonexistent/scenario.yaml")


def test_bare_off_is_prefetcher_off():
    assert parse_scenario_text("cache: {prefetcher: OFF}").cache.prefetcher is PrefetchPolicy.OFF
    assert parse_scenario_text("cache: {prefetcher: next_line}").cache.prefetcher is PrefetchPolicy.NEXT_LINE


def test_document_round_trip():
    text = """
cache: {prefetcher: NEXT_LINE, isa: {has_line_flush: false}}
victim: {key: '0xdeadbeef', d1: 6, target_set: 10}
attack: {strategy: EVICT_RELOAD, target_sets: [9, 10], num_slots: 200, shuffle_probe_order: true}
noise_sigma: 4.5
defenses: [randomize]
seeds: {cache: 1, attack: 2, noise: 3, key: 4, defense: 5}
"""
    sc = parse_scenario_text(text)
    assert parse_scenario_dict(sc.to_document()) == sc
    assert parse_scenario_text(dump_scenario(sc)) == sc
    assert sc.attack.strategy is Strategy.EVICT_RELOAD and sc.attack.target_sets == (9, 10)


def test_seed_offset_keeps_defense_seed():
    sc = with_seed_offset(ScenarioConfig(), 5)
    assert (sc.seeds.key, sc.seeds.noise, sc.seeds.defense) == (5, 5, 1)


def test_with_defense_variants():
    sc = ScenarioConfig()
    assert with_defense(sc, "both").defenses == ("partition", "randomize")
    ct = with_defense(sc, "constant_time")
    assert ct.victim.kind == "modexp_ct" and ct.defenses == ()
    assert with_defense(ct, "none").victim.kind == "modexp"


def test_sweep_axes():
    sc = ScenarioConfig()
    assert with_value(sc, "noise_sigma", 8).noise_sigma == 8.0
    assert with_value(sc, "attack.shuffle_probe_order", True).attack.shuffle_probe_order
    check_axis(sc, "defense")
    for bad in ("attack.nope", "nope", "seeds.key", "output_dir"):
        with pytest.raises(ScenarioError):
            check_axis(sc, bad)
    with pytest.raises(ScenarioError):
        with_value(sc, "attack.num_slots", 0)
