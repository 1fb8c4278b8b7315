"""Shared independent oracles for the test suite.

Everything here recomputes expected values from first principles (exact
rational arithmetic, linear scans, replayed schedules) without touching the
implementation paths under test.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from star.fxp import FxFormat


def nearest_representable_raw(x: float, fmt: FxFormat) -> int:
    """Enumerate all representable values, pick the nearest (ties away from
    zero), saturate at the endpoints. Exact via rational arithmetic."""
    xf = Fraction(x)
    step = Fraction(1, 1 << fmt.frac_bits)
    best_raw = None
    best_dist = None
    for raw in range(fmt.raw_min, fmt.raw_max + 1):
        dist = abs(xf - raw * step)
        if (
            best_dist is None
            or dist < best_dist
            or (dist == best_dist and abs(raw) > abs(best_raw))
        ):
            best_raw, best_dist = raw, dist
    return best_raw


def round_half_away_fraction(q: Fraction) -> int:
    """Exact round-to-nearest with ties away from zero."""
    if q >= 0:
        return int((2 * q.numerator + q.denominator) // (2 * q.denominator))
    return -round_half_away_fraction(-q)


def quantize_raw_oracle(x: float, fmt: FxFormat) -> int:
    """Closed-form exact nearest raw (for wide formats where enumeration is
    too slow); agrees with nearest_representable_raw."""
    k = round_half_away_fraction(Fraction(x) * (1 << fmt.frac_bits))
    return min(max(k, fmt.raw_min), fmt.raw_max)


def direct_softmax_raws(x, input_fmt: FxFormat, domain_fmt: FxFormat, out_frac: int, div_frac: int):
    """Host-side composition of the whole pipeline: quantize, max, subtract,
    clamp magnitude, exp-then-quantize, direct sum, exact rounding division.
    Plain Python ints and math.exp only; no engine code."""
    raws = [quantize_raw_oracle(float(v), input_fmt) for v in x]
    max_raw = max(raws)
    mags = [min(max_raw - r, domain_fmt.raw_max) for r in raws]
    step = domain_fmt.step
    numerators = [
        round_half_away_fraction(Fraction(math.exp(-m * step)) * (1 << out_frac)) for m in mags
    ]
    den = sum(numerators)
    outs = [round_half_away_fraction(Fraction(n << div_frac, den)) for n in numerators]
    return raws, mags, numerators, den, outs


def replay_schedule(entries, stage_times, exclusive: bool, resources: dict[str, str]) -> None:
    """Assert the emitted schedule respects every precedence constraint.

    stage_times: ordered [(stage, duration)]; entries as emitted. Walks the
    records independently of the scheduler's recurrence.
    """
    order = [s for s, _ in stage_times]
    durations = dict(stage_times)
    by_vector: dict[int, dict[str, tuple[float, float]]] = {}
    for e in entries:
        by_vector.setdefault(e.vector_id, {})[e.stage] = (e.start_ns, e.end_ns)
        assert math.isclose(e.end_ns - e.start_ns, durations[e.stage], rel_tol=0, abs_tol=1e-9), (
            f"duration mismatch for v{e.vector_id} {e.stage}"
        )
        assert e.start_ns >= 0.0
    vectors = sorted(by_vector)
    assert vectors == list(range(len(vectors))), "missing vectors"
    for v in vectors:
        stages = by_vector[v]
        assert list(stages) == order, f"vector {v} stage order wrong"
        for i in range(1, len(order)):
            prev_end = stages[order[i - 1]][1]
            start = stages[order[i]][0]
            assert start >= prev_end - 1e-9, f"v{v} {order[i]} starts before {order[i-1]} ends"
        if v > 0:
            for s in order:
                assert stages[s][0] >= by_vector[v - 1][s][1] - 1e-9, (
                    f"v{v} {s} starts before v{v-1} {s} drains"
                )
    if exclusive:
        busy: dict[str, list[tuple[float, float]]] = {}
        for e in entries:
            busy.setdefault(resources[e.stage], []).append((e.start_ns, e.end_ns))
        for res, intervals in busy.items():
            intervals.sort()
            for (s1, e1), (s2, _) in zip(intervals, intervals[1:]):
                assert s2 >= e1 - 1e-9, f"resource {res} double-booked"


def kl_scalar(oracle_row, engine_row, floor: float = 1e-12) -> float:
    """Scalar reimplementation of the per-row KL term."""
    total = 0.0
    for p, q in zip(oracle_row, engine_row):
        if p > 0.0:
            total += p * (math.log(p) - math.log(q if q > 0.0 else floor))
    return max(total, 0.0)
