"""Fixed-point formats, quantization, and saturating arithmetic.

Every quantity that flows through the crossbar models is an integer raw
count scaled by 2**-frac_bits. Rounding is round-to-nearest with ties away
from zero; out-of-range values saturate to the nearest endpoint and the
clamp is reported through a flag on the returned value rather than global
state, so everything here stays safe for parallel use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CROSSBAR_MAX_BITS",
    "FxFormat",
    "FxValue",
    "quantize",
    "quantize_array",
    "dequantize",
    "fx_sub",
]

# Crossbar tables enumerate every representable value as a row, so formats
# that map onto physical arrays must stay small. Wider formats exist only
# for internal headroom: unit-range unsigned outputs (1.0 at f frac bits
# needs f+1 magnitude bits) and the VMM accumulator.
CROSSBAR_MAX_BITS = 16
_MAX_TOTAL_BITS = 64


@dataclass(frozen=True)
class FxFormat:
    """A two's-complement (or unsigned) fixed-point format.

    total_bits includes the sign bit when signed; frac_bits of the total
    are fractional, so the quantization step is 2**-frac_bits.
    """

    total_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self) -> None:
        if not isinstance(self.total_bits, int) or not isinstance(self.frac_bits, int):
            raise ValueError("total_bits and frac_bits must be integers")
        if not 1 <= self.total_bits <= _MAX_TOTAL_BITS:
            raise ValueError(f"total_bits must be in [1, {_MAX_TOTAL_BITS}], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must satisfy 0 <= frac_bits < total_bits, got {self.frac_bits}/{self.total_bits}"
            )

    @property
    def step(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def raw_max(self) -> int:
        if self.signed:
            return (1 << (self.total_bits - 1)) - 1
        return (1 << self.total_bits) - 1

    @property
    def n_values(self) -> int:
        return 1 << self.total_bits

    @property
    def value_min(self) -> float:
        return self.raw_min * self.step

    @property
    def value_max(self) -> float:
        return self.raw_max * self.step

    def widened(self) -> "FxFormat":
        """Format with one extra integer bit: holds any difference of two
        values of this format without saturation."""
        return FxFormat(self.total_bits + 1, self.frac_bits, signed=True)

    def __str__(self) -> str:
        return f"{'s' if self.signed else 'u'}{self.total_bits}.{self.frac_bits}"

    def to_json(self) -> dict:
        return {"total_bits": self.total_bits, "frac_bits": self.frac_bits, "signed": self.signed}

    @classmethod
    def from_json(cls, obj: dict) -> "FxFormat":
        return cls(
            total_bits=obj["total_bits"],
            frac_bits=obj["frac_bits"],
            signed=obj.get("signed", True),
        )


@dataclass(frozen=True)
class FxValue:
    """An integer raw count interpreted as raw * 2**-frac_bits.

    ``saturated`` records whether the producing operation clamped; it is
    carried on the value and excluded from equality.
    """

    raw: int
    fmt: FxFormat
    saturated: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        raw = int(self.raw)
        object.__setattr__(self, "raw", raw)
        if not self.fmt.raw_min <= raw <= self.fmt.raw_max:
            raise ValueError(f"raw {raw} out of range for format {self.fmt}")

    @property
    def value(self) -> float:
        # Exact: |raw| < 2**53 and the scale is a power of two.
        return self.raw * self.fmt.step

    def __float__(self) -> float:
        return self.value

    def __repr__(self) -> str:
        return f"FxValue({self.raw}, {self.fmt}, value={self.value})"


def _round_half_away(scaled: np.ndarray) -> np.ndarray:
    return np.where(scaled >= 0.0, np.floor(scaled + 0.5), np.ceil(scaled - 0.5))


def quantize_array(x, fmt: FxFormat) -> tuple[np.ndarray, int]:
    """Quantize an array of reals; returns (int64 raws, saturation count).

    Multiplying by 2**frac_bits is exact in binary floating point, so the
    rounding decision is made on the exact scaled input.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("quantize requires finite input")
    scaled = arr * float(1 << fmt.frac_bits)
    k = _round_half_away(scaled)
    clipped = np.clip(k, float(fmt.raw_min), float(fmt.raw_max))
    saturated = int(np.count_nonzero(clipped != k))
    return clipped.astype(np.int64), saturated


def quantize(x: float, fmt: FxFormat) -> FxValue:
    """Nearest representable value; ties away from zero; saturates at the
    range endpoints and flags the clamp on the result."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("quantize requires finite input")
    scaled = x * float(1 << fmt.frac_bits)
    # Rounding exceeds the range exactly when scaled reaches the half-step
    # beyond an endpoint (ties round away). Checking first also keeps the
    # scaled product out of math.floor when it overflowed to inf.
    if scaled >= fmt.raw_max + 0.5:
        return FxValue(fmt.raw_max, fmt, saturated=True)
    if scaled <= fmt.raw_min - 0.5:
        return FxValue(fmt.raw_min, fmt, saturated=True)
    k = math.floor(scaled + 0.5) if scaled >= 0.0 else math.ceil(scaled - 0.5)
    return FxValue(k, fmt)


def dequantize(v: FxValue) -> float:
    return v.value


def fx_sub(a: FxValue, b: FxValue) -> FxValue:
    """Difference in the widened format (one extra integer bit); exact."""
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    return FxValue(a.raw - b.raw, a.fmt.widened())
