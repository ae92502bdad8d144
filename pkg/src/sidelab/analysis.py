"""Turning raw probe latencies back into key bits.

    ProbeMatrix --binarize--> OccupancyMap --extract_intervals--> IntervalSequence
                --intervals_to_bits--> bits --score_recovery--> RecoveryReport

Both thresholds (latency and run length) come from an exact 1-D 2-means, so
the pipeline has no tuning knobs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attacks import ProbeMatrix
from .cache import CacheConfig
from .clustering import two_means
from .errors import DegenerateMatrix, NoOccupancy


class SingleClusterWarning(UserWarning):
    """All occupied runs have the same length; the trace carries no bit signal."""


@dataclass
class OccupancyMap:
    grid: np.ndarray  # bool, slots x columns; True = victim touched the set
    threshold_used: float
    sets: tuple[int, ...]

    def column(self, set_id: int) -> np.ndarray:
        try:
            return self.grid[:, self.sets.index(set_id)]
        except ValueError:
            raise IndexError(f"set {set_id} is not in this map") from None


@dataclass
class IntervalSequence:
    runs: list[tuple[bool, int]]
    target_set: int

    @property
    def num_slots(self) -> int:
        return sum(n for _, n in self.runs)

    def occupied_lengths(self) -> list[int]:
        return [n for occ, n in self.runs if occ]


@dataclass
class DecodedBits:
    bits: list[int]
    per_bit_margin: list[float]
    threshold: float
    single_cluster: bool = False


@dataclass
class RecoveryReport:
    recovered: list[int]
    truth: Optional[list[int]] = None
    accuracy: Optional[float] = None
    offset: int = 0
    per_bit_margin: list[float] = field(default_factory=list)
    threshold_used: Optional[float] = None
    single_cluster: bool = False
    no_signal: bool = False

    def to_dict(self) -> dict:
        bits = lambda v: None if v is None else "".join(map(str, v))  # noqa: E731
        return {
            "recovered": bits(self.recovered),
            "truth": bits(self.truth),
            "accuracy": self.accuracy,
            "offset": self.offset,
            "per_bit_margin": [round(float(m), 6) for m in self.per_bit_margin],
            "threshold_used": self.threshold_used,
            "single_cluster": self.single_cluster,
            "no_signal": self.no_signal,
        }


def binarize(matrix: ProbeMatrix, config: Optional[CacheConfig] = None,
             columns: Optional[Sequence[int]] = None) -> OccupancyMap:
    """Classify every entry as victim-occupied or not.

    The threshold is the midpoint of the two 2-means centres, fitted over all
    entries or, when ``columns`` (set ids) is given, over those columns only.
    Raises :class:`DegenerateMatrix` if the fitted entries are all the same.
    """
    lat = np.asarray(matrix.latency)
    if lat.size == 0:
        raise DegenerateMatrix("empty probe matrix")
    fit = lat if columns is None else lat[:, [matrix.sets.index(c) for c in columns]]
    centres = two_means(fit)
    if centres is None:
        raise DegenerateMatrix(f"all {fit.size} fitted probe latencies equal {fit.flat[0]}")
    thr = centres.midpoint
    grid = lat > thr if matrix.occupied_high else lat < thr
    return OccupancyMap(grid, thr, tuple(matrix.sets))


def run_lengths(column: Sequence[bool]) -> list[tuple[bool, int]]:
    runs: list[tuple[bool, int]] = []
    for v in column:
        v = bool(v)
        if runs and runs[-1][0] == v:
            runs[-1] = (v, runs[-1][1] + 1)
        else:
            runs.append((v, 1))
    return runs


def extract_intervals(occupancy: OccupancyMap, target_set: int) -> IntervalSequence:
    return IntervalSequence(run_lengths(occupancy.column(target_set)), target_set)


def intervals_to_bits(seq: IntervalSequence) -> DecodedBits:
    """One bit per occupied run: long runs are 1-bits, short runs 0-bits.

    When every occupied run has the same length a :class:`SingleClusterWarning`
    is issued and all-zero bits with zero margins are returned.
    """
    lengths = seq.occupied_lengths()
    if not lengths:
        raise NoOccupancy(f"set {seq.target_set} shows no occupied slots")
    centres = two_means(lengths)
    if centres is None:
        warnings.warn(
            f"all {len(lengths)} occupied runs have length {lengths[0]}; no bit signal",
            SingleClusterWarning, stacklevel=2,
        )
        return DecodedBits([0] * len(lengths), [0.0] * len(lengths), float(lengths[0]), True)
    thr = centres.midpoint
    return DecodedBits([int(n > thr) for n in lengths], [abs(n - thr) for n in lengths], thr)


def windows_to_bits(column: Sequence[bool], key_length: int, d0: int, d1: int,
                    gap: int = 1, start: int = 0) -> DecodedBits:
    """Decode a shared-line trace that lights up only during multiply slots.

    Walks the victim's loop from ``start``: a bit is 1 when the shared line is
    seen in the multiply window ``[d0, d1)`` of the iteration. Slot timings are
    the attacker's offline profile of the victim binary. Bits past the end of
    the trace are reported as 0.
    """
    col = [bool(v) for v in column]
    bits, margins = [], []
    pos = start
    for _ in range(key_length):
        window = col[pos + d0: pos + d1]
        hits = sum(window)
        bit = int(hits > 0)
        bits.append(bit)
        margins.append(float(hits) if bit else float(d1 - d0))
        pos += (d1 if bit else d0) + gap
    return DecodedBits(bits, margins, 0.5)


def score_recovery(recovered: Sequence[int], truth: Sequence[int]) -> RecoveryReport:
    """Fraction of truth bits matched.

    Equal-length vectors are compared position by position. When the lengths
    differ (a bit lost or gained at the edge of the slot window) the best of the
    alignments shifted by -1, 0 and +1 is used; the denominator is always the
    truth length.
    """
    recovered, truth = list(recovered), list(truth)
    if not truth:
        raise ValueError("truth must have at least one bit")
    offsets = (0,) if len(recovered) == len(truth) else (0, -1, 1)
    best, best_off = -1, 0
    for off in offsets:
        matches = sum(
            1 for i, b in enumerate(recovered)
            if 0 <= i + off < len(truth) and truth[i + off] == b
        )
        if matches > best:
            best, best_off = matches, off
    return RecoveryReport(recovered, truth, best / len(truth), best_off)


def recover_key(matrix: ProbeMatrix, target_set: int, key_length: int,
                profile: Optional[dict] = None, truth: Optional[Sequence[int]] = None) -> RecoveryReport:
    """Full data-analysis stage for one attack run.

    PRIME+PROBE matrices are decoded by interval length. Single-column
    shared-line matrices need ``profile`` (keys ``d0``, ``d1``, ``gap``,
    ``start``) for the loop walk. The latency threshold is fitted on the
    monitored column alone: over the whole grid the idle sets outnumber the
    active entries so heavily that, under jitter, 2-means splits the idle
    noise instead. If the monitored set never lights up the attacker falls
    back to guessing all zeros for the (public) key length.
    """
    threshold = None
    try:
        column = matrix.sets[0] if len(matrix.sets) == 1 else target_set
        occ = binarize(matrix, columns=[column])
        threshold = occ.threshold_used
        if len(matrix.sets) == 1 and matrix.strategy.needs_shared_address:
            if profile is None:
                raise ValueError("shared-line decoding needs the victim's slot profile")
            decoded = windows_to_bits(occ.grid[:, 0], key_length, **profile)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SingleClusterWarning)
                decoded = intervals_to_bits(extract_intervals(occ, target_set))
        no_signal = False
    except (DegenerateMatrix, NoOccupancy):
        decoded = DecodedBits([0] * key_length, [0.0] * key_length, 0.0)
        no_signal = True
    if truth is not None:
        report = score_recovery(decoded.bits, truth)
    else:
        report = RecoveryReport(decoded.bits)
    report.per_bit_margin = decoded.per_bit_margin
    report.threshold_used = threshold
    report.single_cluster = decoded.single_cluster
    report.no_signal = no_signal
    return report


def aes_key_votes(occupancy: OccupancyMap, plaintexts: Sequence[int], entries_per_line: int) -> np.ndarray:
    """Votes for the high bits of an AES key byte from first-round table probes.

    A probe miss on table line ``j`` with plaintext ``p`` implies
    ``(p XOR k) // entries_per_line == j``.
    """
    nlines = occupancy.grid.shape[1]
    votes = np.zeros(nlines, dtype=np.int64)
    for row, p in zip(occupancy.grid, plaintexts):
        for j in np.flatnonzero(row):
            votes[(p // entries_per_line) ^ int(j)] += 1
    return votes
