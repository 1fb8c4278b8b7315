"""The crossbar softmax pipeline.

One vector runs through six stages: quantize, CAM max-find (per-input
searches OR-merged, first set bit = max row), subtraction readout, sign
strip into the unsigned LUT domain, exponential lookup with match counting,
then a single VMM dot product for the denominator and a rounding divider.

Host floating point never touches the datapath: after quantization every
stage is table lookups and integer arithmetic. The float oracle lives in
reference_softmax only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crossbar import (
    DEFAULT_LUT_OUT_FORMAT,
    CamTable,
    LutTable,
    VmmUnit,
    _div_round_away,
    vmm_dot,
)
from .fxp import CROSSBAR_MAX_BITS, FxFormat, FxValue, quantize_array

__all__ = [
    "EngineConfig",
    "EngineTrace",
    "SoftmaxEngine",
    "MaxSubFragment",
    "find_max_and_subtract",
    "strip_sign",
    "exp_stage",
    "divide",
    "softmax",
    "reference_softmax",
]

_MAX_DIVIDER_FRAC_BITS = 30  # keeps the divider numerator inside int64


@dataclass(frozen=True)
class EngineConfig:
    """Formats and limits for one engine instance.

    The LUT domain is derived: the sign bit of the (always non-positive)
    differences is stripped, so the magnitude CAM needs one bit fewer than
    the input format, floored so the format stays valid for tiny inputs.
    """

    input_format: FxFormat = FxFormat(9, 3)
    lut_out_format: FxFormat = DEFAULT_LUT_OUT_FORMAT
    divider_frac_bits: int = 16
    vmm_adc_bits: int | None = None
    max_seq_len: int = 512

    def __post_init__(self) -> None:
        if self.input_format.total_bits > CROSSBAR_MAX_BITS:
            raise ValueError(
                f"input format {self.input_format} too wide for a crossbar table"
                f" (max {CROSSBAR_MAX_BITS} bits)"
            )
        if self.max_seq_len < 1:
            raise ValueError("max_seq_len must be >= 1")
        if not 1 <= self.divider_frac_bits <= _MAX_DIVIDER_FRAC_BITS:
            raise ValueError(f"divider_frac_bits must be in [1, {_MAX_DIVIDER_FRAC_BITS}]")
        if self.lut_out_format.signed or self.lut_out_format.raw_max < (1 << self.lut_out_format.frac_bits):
            raise ValueError(f"lut_out_format {self.lut_out_format} must be unsigned and represent 1.0")

    @property
    def domain_format(self) -> FxFormat:
        f = self.input_format
        return FxFormat(max(f.total_bits - 1, f.frac_bits + 1), f.frac_bits, signed=False)

    @property
    def diff_format(self) -> FxFormat:
        return self.input_format.widened()

    @property
    def output_format(self) -> FxFormat:
        return FxFormat(self.divider_frac_bits + 1, self.divider_frac_bits, signed=False)

    def to_json(self) -> dict:
        return {
            "input_format": self.input_format.to_json(),
            "lut_out_format": self.lut_out_format.to_json(),
            "divider_frac_bits": self.divider_frac_bits,
            "vmm_adc_bits": self.vmm_adc_bits,
            "max_seq_len": self.max_seq_len,
        }


@dataclass(eq=False)
class MaxSubFragment:
    """Per-stage record of the max-find + subtraction phase."""

    per_input_match: np.ndarray  # (n, rows) bool, row i = match vector of x_i
    merged_match: np.ndarray  # (rows,) bool
    max_row: int


@dataclass(eq=False)
class EngineTrace:
    """Everything one softmax execution produced, stage by stage.

    Vector quantities are stored as raw integer arrays; the owning formats
    come from the config, and the float views are exposed as properties.
    """

    cfg: EngineConfig
    quantized_raws: np.ndarray
    per_input_match: np.ndarray
    merged_match: np.ndarray
    max_row: int
    max_value: FxValue
    difference_raws: np.ndarray
    magnitude_raws: np.ndarray
    histogram: np.ndarray
    numerator_raws: np.ndarray
    denominator: FxValue
    output_raws: np.ndarray
    saturation_events: int

    @property
    def quantized_values(self) -> np.ndarray:
        return self.quantized_raws * self.cfg.input_format.step

    @property
    def differences(self) -> np.ndarray:
        return self.difference_raws * self.cfg.diff_format.step

    @property
    def magnitudes(self) -> np.ndarray:
        return self.magnitude_raws * self.cfg.domain_format.step

    @property
    def numerators(self) -> np.ndarray:
        return self.numerator_raws * self.cfg.lut_out_format.step

    @property
    def outputs(self) -> np.ndarray:
        return self.output_raws * self.cfg.output_format.step

    def to_json_dict(self) -> dict:
        return {
            "config": self.cfg.to_json(),
            "quantized_raws": self.quantized_raws.tolist(),
            "quantized_values": self.quantized_values.tolist(),
            "per_input_match": self.per_input_match.astype(int).tolist(),
            "merged_match": self.merged_match.astype(int).tolist(),
            "max_row": self.max_row,
            "max_value": {"raw": self.max_value.raw, "value": self.max_value.value},
            "difference_raws": self.difference_raws.tolist(),
            "difference_values": self.differences.tolist(),
            "magnitude_raws": self.magnitude_raws.tolist(),
            "histogram": self.histogram.tolist(),
            "numerator_raws": self.numerator_raws.tolist(),
            "denominator": {"raw": self.denominator.raw, "value": self.denominator.value},
            "output_raws": self.output_raws.tolist(),
            "output_values": self.outputs.tolist(),
            "saturation_events": self.saturation_events,
        }


def _clamp_magnitudes(diff_raws: np.ndarray, domain_fmt: FxFormat) -> tuple[np.ndarray, int]:
    """Magnitudes of non-positive differences, clamped to the LUT domain."""
    mags = -diff_raws
    clamped = np.minimum(mags, domain_fmt.raw_max)
    return clamped, int(np.count_nonzero(clamped != mags))


class SoftmaxEngine:
    """One engine instance: immutable tables built once, pure runs.

    run() keeps all per-vector state local, so a single instance can be
    shared across parallel workers.
    """

    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg
        self.cam_table = CamTable.full(cfg.input_format)
        self.domain_table = CamTable.full(cfg.domain_format)
        self.lut = LutTable.exponential(cfg.domain_format, cfg.lut_out_format)
        self.vmm = VmmUnit(self.lut, adc_bits=cfg.vmm_adc_bits, max_seq_len=cfg.max_seq_len)

    def _max_sub_batch(self, raw_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Max-find + subtraction over a (V, n) batch of quantized raws.

        Per row: scatter the per-input one-hot matches into the merged
        vector (the OR cascade), take the first set bit (descending storage
        puts the maximum there), then read the differential outputs from
        the stored table values. Returns (rows, merged, max_rows, diffs).
        """
        rows = self.cam_table.row_of_raw(raw_matrix)
        n_vectors = raw_matrix.shape[0]
        merged = np.zeros((n_vectors, self.cam_table.n_rows), dtype=bool)
        merged[np.arange(n_vectors)[:, None], rows] = True
        max_rows = merged.argmax(axis=1)
        table_raws = self.cam_table.raws
        diffs = table_raws[rows] - table_raws[max_rows][:, None]
        return rows, merged, max_rows, diffs

    def max_subtract_raw_batch(self, raw_matrix) -> tuple[np.ndarray, np.ndarray]:
        """Batch form of the CAM/SUB stage on pre-quantized raws.

        Returns (max raws (V,), difference raws (V, n)); used to drive the
        same datapath over exhaustive input enumerations.
        """
        raw_matrix = np.asarray(raw_matrix, dtype=np.int64)
        if raw_matrix.ndim != 2 or raw_matrix.shape[1] < 1:
            raise ValueError("expected a (vectors, length) matrix")
        if raw_matrix.shape[1] > self.cfg.max_seq_len:
            raise ValueError(f"vector length {raw_matrix.shape[1]} exceeds max_seq_len {self.cfg.max_seq_len}")
        fmt = self.cfg.input_format
        if raw_matrix.min() < fmt.raw_min or raw_matrix.max() > fmt.raw_max:
            raise ValueError(f"raw values out of range for {fmt}")
        _, _, max_rows, diffs = self._max_sub_batch(raw_matrix)
        return self.cam_table.raw_of_row(max_rows), diffs

    def find_max_and_subtract(self, x) -> tuple[FxValue, list[FxValue], MaxSubFragment]:
        """CAM/SUB stage on a real vector (quantizes first)."""
        raws, _ = self._quantize_input(x)
        rows, merged, max_rows, diffs = self._max_sub_batch(raws[None, :])
        max_row = int(max_rows[0])
        match = np.zeros((len(raws), self.cam_table.n_rows), dtype=bool)
        match[np.arange(len(raws)), rows[0]] = True
        diff_fmt = self.cfg.diff_format
        diff_values = [FxValue(int(d), diff_fmt) for d in diffs[0]]
        max_value = FxValue(int(self.cam_table.raws[max_row]), self.cfg.input_format)
        return max_value, diff_values, MaxSubFragment(match, merged[0], max_row)

    def _quantize_input(self, x) -> tuple[np.ndarray, int]:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("input must be a 1-D vector")
        n = arr.shape[0]
        if n < 1:
            raise ValueError("input vector is empty")
        if n > self.cfg.max_seq_len:
            raise ValueError(f"vector length {n} exceeds max_seq_len {self.cfg.max_seq_len}")
        return quantize_array(arr, self.cfg.input_format)

    def run(self, x) -> EngineTrace:
        cfg = self.cfg
        raws, saturations = self._quantize_input(x)
        n = len(raws)

        rows_b, merged_b, max_rows_b, diffs_b = self._max_sub_batch(raws[None, :])
        rows, merged, max_row, diffs = rows_b[0], merged_b[0], int(max_rows_b[0]), diffs_b[0]
        match = np.zeros((n, self.cam_table.n_rows), dtype=bool)
        match[np.arange(n), rows] = True
        max_value = FxValue(int(self.cam_table.raws[max_row]), cfg.input_format)

        mags, clamped = _clamp_magnitudes(diffs, cfg.domain_format)
        saturations += clamped

        domain_rows = self.domain_table.row_of_raw(mags)
        numerators = self.lut.entries[domain_rows]
        histogram = np.bincount(domain_rows, minlength=self.lut.n_rows)
        denominator = vmm_dot(self.vmm, histogram)
        if denominator.raw <= 0:
            raise ValueError("denominator quantized to zero by the ADC model; raise vmm_adc_bits")

        dfrac = cfg.divider_frac_bits
        output_raws = (2 * numerators * (1 << dfrac) + denominator.raw) // (2 * denominator.raw)

        return EngineTrace(
            cfg=cfg,
            quantized_raws=raws,
            per_input_match=match,
            merged_match=merged,
            max_row=max_row,
            max_value=max_value,
            difference_raws=diffs,
            magnitude_raws=mags,
            histogram=histogram,
            numerator_raws=numerators,
            denominator=denominator,
            output_raws=output_raws,
            saturation_events=saturations,
        )


def find_max_and_subtract(x, cfg: EngineConfig) -> tuple[FxValue, list[FxValue], MaxSubFragment]:
    return SoftmaxEngine(cfg).find_max_and_subtract(x)


def strip_sign(d: FxValue, domain_fmt: FxFormat) -> FxValue:
    """Magnitude of a non-positive difference, clamped to the LUT domain.

    The clamp is flagged on the result (and counted by the engine); for the
    default formats the clamped magnitude's exponential quantizes to zero,
    so clamping does not change any output.
    """
    if domain_fmt.signed:
        raise ValueError("domain format must be unsigned")
    if d.fmt.frac_bits != domain_fmt.frac_bits:
        raise ValueError(f"fractional bits mismatch: {d.fmt} vs domain {domain_fmt}")
    if d.raw > 0:
        raise ValueError(f"strip_sign requires a non-positive difference, got {d.value}")
    mag = -d.raw
    if mag > domain_fmt.raw_max:
        return FxValue(domain_fmt.raw_max, domain_fmt, saturated=True)
    return FxValue(mag, domain_fmt)


def exp_stage(mags, lut: LutTable, vmm: VmmUnit) -> tuple[list[FxValue], np.ndarray, FxValue]:
    """Exponential lookups with match counting, then the VMM denominator.

    mags are magnitude values in the LUT domain format; the histogram over
    CAM rows replaces per-element accumulation (counting matches of equal
    values is exactly summing equal exponentials).
    """
    mag_list = list(mags)
    if not mag_list:
        raise ValueError("exp_stage requires at least one magnitude")
    for m in mag_list:
        if m.fmt != lut.domain_fmt:
            raise ValueError(f"magnitude format {m.fmt} does not match LUT domain {lut.domain_fmt}")
    mag_raws = np.array([m.raw for m in mag_list], dtype=np.int64)
    domain_rows = lut.domain_fmt.raw_max - mag_raws
    numerators = [FxValue(int(lut.entries[r]), lut.out_fmt) for r in domain_rows]
    histogram = np.bincount(domain_rows, minlength=lut.n_rows)
    denominator = vmm_dot(vmm, histogram)
    return numerators, histogram, denominator


def divide(numerator: FxValue, denominator: FxValue, frac_bits: int) -> FxValue:
    """Round-to-nearest fixed-point quotient with frac_bits of precision.

    Pure integer arithmetic on the raws (numerator and denominator share a
    scale); quotients above the unit-range output saturate with a flag.
    """
    if not 1 <= frac_bits <= _MAX_DIVIDER_FRAC_BITS:
        raise ValueError(f"frac_bits must be in [1, {_MAX_DIVIDER_FRAC_BITS}]")
    if numerator.fmt.frac_bits != denominator.fmt.frac_bits:
        raise ValueError("numerator and denominator scales differ")
    if denominator.raw <= 0:
        raise ValueError("denominator must be positive")
    if numerator.raw < 0:
        raise ValueError("numerator must be non-negative")
    out_fmt = FxFormat(frac_bits + 1, frac_bits, signed=False)
    raw = _div_round_away(numerator.raw << frac_bits, denominator.raw)
    if raw > out_fmt.raw_max:
        return FxValue(out_fmt.raw_max, out_fmt, saturated=True)
    return FxValue(raw, out_fmt)


def softmax(x, cfg: EngineConfig) -> tuple[list[FxValue], EngineTrace]:
    """Full pipeline on one vector; probabilities plus the per-stage trace."""
    trace = SoftmaxEngine(cfg).run(x)
    out_fmt = cfg.output_format
    return [FxValue(int(r), out_fmt) for r in trace.output_raws], trace


def reference_softmax(x) -> np.ndarray:
    """Float64 oracle: max-subtracted softmax in host precision."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("input must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input must be finite")
    shifted = arr - arr.max()
    e = np.exp(shifted)
    return e / e.sum()
