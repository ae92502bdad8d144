"""Desk-scale simulator for cache and power side-channel attacks and defenses."""

from .analysis import RecoveryReport, SingleClusterWarning, recover_key, score_recovery
from .attacks import AttackConfig, ProbeMatrix, Strategy, run_attack
from .cache import Actor, CacheConfig, CacheState, IsaCapabilities, PrefetchPolicy, Replacement, new_cache
from .errors import (DegenerateClusters, DegenerateMatrix, InfeasiblePartition, InsufficientTraces,
                     InvalidConfig, NoOccupancy, ScenarioError, SidelabError, UnsupportedInstruction)
from .defenses import (IndexRandomization, PartitionPolicy, apply_index_randomization, apply_way_partition,
                       evaluate_defense, evaluate_defenses)
from .harness import emit_heatmap_data, run_power, run_scenario, run_sweep
from .pipeline import PipelineResult, run_pipeline
from .power import PowerModel, dpa_attack, spa_extract, trace_modexp
from .scenario import ScenarioConfig, parse_scenario, parse_scenario_text
from .victims import ModExpParams, VictimKey, modexp_reference, run_modexp_constant_time, run_modexp_victim

__version__ = "0.1.0"
