"""One experiment, end to end and in memory: pre-attack, attack loop, data analysis.

:func:`run_pipeline` is what the harness, sweeps and defense evaluation call; it
never touches the filesystem.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .analysis import (OccupancyMap, RecoveryReport, SingleClusterWarning, aes_key_votes, binarize,
                       recover_key, score_recovery)
from .attacks import AttackConfig, ProbeMatrix, run_aes_prime_probe, run_attack, with_shared_victim
from .cache import CacheConfig, CacheState
from .defenses import IndexRandomization, apply_index_randomization, apply_way_partition
from .errors import DegenerateMatrix
from .scenario import ScenarioConfig
from .victims import AesTableConfig, VictimTimeline, run_modexp_constant_time, run_modexp_victim


@dataclass
class PipelineResult:
    scenario: ScenarioConfig
    cache_config: CacheConfig
    attack_config: AttackConfig
    matrix: ProbeMatrix
    occupancy: Optional[OccupancyMap]
    report: RecoveryReport
    truth: list[int]
    timeline: Optional[VictimTimeline] = None
    victim_result: Optional[int] = None
    plaintexts: Optional[list[int]] = None
    warnings: list[str] = field(default_factory=list)


def build_cache_config(sc: ScenarioConfig) -> CacheConfig:
    """The scenario's cache with its defenses applied."""
    config = sc.cache
    if "partition" in sc.defenses:
        config = apply_way_partition(config)
    if "randomize" in sc.defenses:
        config = apply_index_randomization(config, IndexRandomization(sc.seeds.defense))
    return config


def build_attack_config(sc: ScenarioConfig, timeline: Optional[VictimTimeline] = None) -> AttackConfig:
    attack = replace(sc.attack, rng_seed=sc.seeds.attack, noise_sigma=sc.noise_sigma,
                     noise_seed=sc.seeds.noise)
    if timeline is not None:
        attack = with_shared_victim(attack, timeline)
    return attack


def build_victim(sc: ScenarioConfig, cache_config: CacheConfig) -> VictimTimeline:
    v = sc.victim
    params = sc.modexp_params()
    if v.kind == "modexp_ct":
        return run_modexp_constant_time(params, v.d1, v.target_set, cache_config, gap=v.gap, d0=v.d0)
    return run_modexp_victim(params, v.d0, v.d1, v.target_set, cache_config, gap=v.gap)


def _occupancy(matrix: ProbeMatrix, column: int) -> Optional[OccupancyMap]:
    try:
        return binarize(matrix, columns=[column])
    except DegenerateMatrix:
        return None


def run_pipeline(sc: ScenarioConfig) -> PipelineResult:
    """Run one scenario; a constant-time victim raises :class:`SingleClusterWarning`."""
    if sc.victim.kind == "aes":
        return _run_aes(sc)
    cache_config = build_cache_config(sc)
    timeline = build_victim(sc, cache_config)
    attack = build_attack_config(sc, timeline)
    cache = CacheState(cache_config, seed=sc.seeds.cache)
    matrix = run_attack(cache, timeline, attack)

    truth = list(timeline.key.bits)
    v = sc.victim
    column = matrix.sets[0] if len(matrix.sets) == 1 else v.target_set
    profile = {"d0": v.d0, "d1": v.d1, "gap": v.gap, "start": attack.victim_start}
    report = recover_key(matrix, v.target_set, len(truth), profile=profile, truth=truth)

    notes = []
    if attack.victim_start + len(timeline.slots) > attack.num_slots:
        notes.append(f"victim needs {attack.victim_start + len(timeline.slots)} slots "
                     f"but only {attack.num_slots} were recorded; trailing bits are lost")
    if report.no_signal:
        notes.append(f"set {column} never showed victim activity; recovered bits are a blind guess")
    if report.single_cluster:
        msg = f"all occupied runs in set {column} have the same length (single cluster); no bit signal"
        notes.append(msg)
        warnings.warn(msg, SingleClusterWarning, stacklevel=2)
    return PipelineResult(sc, cache_config, attack, matrix, _occupancy(matrix, column), report,
                          truth, timeline, timeline.result, warnings=notes)


def _run_aes(sc: ScenarioConfig) -> PipelineResult:
    """PRIME+PROBE on the first-round S-box lines; recovers the key byte's line bits."""
    cache_config = build_cache_config(sc)
    attack = build_attack_config(sc)
    table = AesTableConfig(entries_per_line=cache_config.line_size)
    key_byte = sc.resolved_aes_key()
    cache = CacheState(cache_config, seed=sc.seeds.cache)
    attack = replace(attack, target_sets=None)
    matrix, plaintexts = run_aes_prime_probe(cache, key_byte, table, attack)

    nlines = 256 // table.entries_per_line
    nbits = max(1, nlines.bit_length() - 1)
    truth = [(key_byte // table.entries_per_line >> (nbits - 1 - i)) & 1 for i in range(nbits)]
    occ = _occupancy(matrix, matrix.sets[0]) if len(matrix.sets) == 1 else None
    notes = []
    try:
        occ = binarize(matrix)
        votes = aes_key_votes(occ, plaintexts, table.entries_per_line)
        guess = int(np.argmax(votes))
        recovered = [(guess >> (nbits - 1 - i)) & 1 for i in range(nbits)]
        report = score_recovery(recovered, truth)
        report.threshold_used = occ.threshold_used
        report.per_bit_margin = [float(np.sort(votes)[-1] - np.sort(votes)[-2])] * nbits if nlines > 1 else [0.0]
    except DegenerateMatrix:
        report = score_recovery([0] * nbits, truth)
        report.no_signal = True
        notes.append("table sets never showed victim activity; recovered bits are a blind guess")
    return PipelineResult(sc, cache_config, attack, matrix, occ, report, truth,
                          plaintexts=plaintexts, warnings=notes)
