"""Synthetic power traces under a Hamming-weight leakage model, with SPA and DPA."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .clustering import two_means
from .errors import DegenerateClusters, InsufficientTraces, InvalidConfig
from .victims import AesTableConfig, VictimKey

RngLike = Union[np.random.Generator, int, None]

_HW = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def hamming_weight(value: int) -> int:
    return bin(value).count("1")


def _rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class PowerModel:
    base_power: float = 1.0
    op_weight: float = 1.0
    noise_sigma: float = 0.0
    masked: bool = False

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InvalidConfig(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class PowerTrace:
    samples: np.ndarray
    segmentation: Optional[list[tuple[int, int]]] = None  # per key bit, [start, end)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class DpaResult:
    best_hypothesis: int
    scores: np.ndarray
    margin: float

    def rank_of(self, key_byte: int) -> int:
        """1-based rank of ``key_byte`` among all hypotheses (ties broken by index)."""
        order = np.argsort(-self.scores, kind="stable")
        return int(np.flatnonzero(order == key_byte)[0]) + 1


def trace_modexp(key: VictimKey, model: PowerModel, rng: RngLike = None) -> PowerTrace:
    """One sample per square, one more per multiply.

    A square draws ``base_power``; a multiply draws ``base_power + op_weight``.
    With ``model.masked`` the multiply operand is blinded and the data-dependent
    term disappears.
    """
    gen = _rng(rng)
    mul_level = model.base_power + (0.0 if model.masked else model.op_weight)
    levels, segments = [], []
    for bit in key.bits:
        start = len(levels)
        levels.append(model.base_power)
        if bit:
            levels.append(mul_level)
        segments.append((start, len(levels)))
    samples = np.asarray(levels, dtype=float)
    if model.noise_sigma > 0:
        samples = samples + gen.normal(0.0, model.noise_sigma, size=samples.shape)
    return PowerTrace(samples, segments)


def average_traces(traces: Sequence[PowerTrace]) -> PowerTrace:
    """Sample-wise mean of aligned traces of the same key."""
    if not traces:
        raise InsufficientTraces("nothing to average")
    seg = traces[0].segmentation
    if any(t.segmentation != seg or len(t) != len(traces[0]) for t in traces):
        raise ValueError("traces are not aligned")
    return PowerTrace(np.mean([t.samples for t in traces], axis=0), seg)


def spa_extract(trace: PowerTrace) -> list[int]:
    """Read the key off a single trace.

    A segment is a 1-bit iff it holds a sample above the midpoint between the
    two 2-means centres of all samples.
    """
    if trace.segmentation is None:
        raise ValueError("SPA needs a segmented trace")
    centres = two_means(trace.samples)
    if centres is None:
        raise DegenerateClusters("all samples are equal; the trace carries no key information")
    mid = centres.midpoint
    s = trace.samples
    return [int(bool(np.any(s[a:b] > mid))) for a, b in trace.segmentation]


def trace_aes_sbox(plaintext_byte: int, key_byte: int, table: AesTableConfig,
                   model: PowerModel, rng: RngLike = None, mask: Optional[int] = None) -> float:
    """Power sample of the first-round S-box output.

    Leaks the Hamming weight of ``sbox[p ^ k]``, or of ``sbox[p ^ k] ^ r`` for a
    fresh random mask ``r`` when the model is masked. ``mask`` pins ``r`` for
    exhaustive sweeps.
    """
    gen = _rng(rng)
    value = table.sbox[(plaintext_byte ^ key_byte) & 0xFF]
    if model.masked:
        r = int(gen.integers(0, 256)) if mask is None else mask
        value ^= r
    sample = model.base_power + model.op_weight * hamming_weight(value)
    if model.noise_sigma > 0:
        sample += float(gen.normal(0.0, model.noise_sigma))
    return float(sample)


def aes_traces(key_byte: int, table: AesTableConfig, model: PowerModel, rng: RngLike = None,
               plaintexts: Optional[Iterable[int]] = None, repeats: int = 1) -> list[tuple[int, float]]:
    """Acquire one averaged sample per plaintext (all 256 bytes by default).

    ``repeats`` acquisitions of the same plaintext are averaged, the usual
    first step of a DPA campaign against additive noise.
    """
    if repeats < 1:
        raise InvalidConfig("repeats must be >= 1")
    gen = _rng(rng)
    pts = range(256) if plaintexts is None else plaintexts
    out = []
    for p in pts:
        acc = sum(trace_aes_sbox(p, key_byte, table, model, gen) for _ in range(repeats))
        out.append((int(p), acc / repeats))
    return out


def dpa_attack(traces: Sequence[tuple[int, float]], table: AesTableConfig) -> DpaResult:
    """Difference-of-means DPA on the MSB of the first-round S-box output."""
    if len(traces) < 2:
        raise InsufficientTraces(f"DPA needs at least 2 traces, got {len(traces)}")
    pts = np.array([p for p, _ in traces], dtype=np.int64)
    samples = np.array([x for _, x in traces], dtype=float)
    sbox = np.asarray(table.sbox, dtype=np.int64)
    hyps = np.arange(256)
    msb = (sbox[pts[None, :] ^ hyps[:, None]] >> 7) & 1  # hypothesis x trace
    n1 = msb.sum(axis=1)
    n0 = len(traces) - n1
    valid = (n1 > 0) & (n0 > 0)
    if not valid.any():
        raise InsufficientTraces("no hypothesis splits the traces into two non-empty classes")
    s1 = msb @ samples
    s0 = samples.sum() - s1
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(valid, np.abs(s1 / n1 - s0 / n0), 0.0)
    order = np.argsort(-scores, kind="stable")
    best = int(order[0])
    return DpaResult(best, scores, float(scores[order[0]] - scores[order[1]]))


def write_trace_csv(path: Union[str, Path], trace: PowerTrace) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "sample"])
        for i, x in enumerate(trace.samples):
            w.writerow([i, repr(float(x))])
    return path


def write_aes_csv(path: Union[str, Path], traces: Sequence[tuple[int, float]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plaintext", "sample"])
        for p, x in traces:
            w.writerow([p, repr(float(x))])
    return path
