"""Value-level models of the four crossbar primitives.

CAM/SUB: a single array, time-multiplexed between parallel equality search
(one-hot matchline vector per query) and differential readout (positive
drive on the x_i row, negative drive on the max row, so the source lines
carry x_i - x_max). CAM + LUT: the exponential stage, where the match
vector of a magnitude doubles as the read enable of the preloaded exp
table. VMM: a crossbar holding the same exp table, fed with the match-count
histogram to produce the softmax denominator in one dot product.

Tables are immutable after construction; every operation here is a pure
read. A match vector is a plain numpy bool array (one entry per row).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .fxp import FxFormat, FxValue, quantize_array

__all__ = [
    "CamTable",
    "LutTable",
    "VmmUnit",
    "DEFAULT_LUT_OUT_FORMAT",
    "cam_search",
    "merge_matches",
    "first_set_index",
    "sub_drive",
    "lut_read",
    "vmm_dot",
    "accumulator_format",
    "lut_to_csv",
    "lut_from_csv",
]

# Exp-table output: unsigned with 16 fractional bits. One extra integer bit
# so that e**0 = 1.0 is exactly representable (raw 2**16).
DEFAULT_LUT_OUT_FORMAT = FxFormat(total_bits=17, frac_bits=16, signed=False)


@dataclass(frozen=True, eq=False)
class CamTable:
    """All representable values of a format, one per row, sorted descending.

    Because the table is complete, row r stores raw (raw_max - r); the
    search model exploits that to locate the matching row directly. Tests
    cross-check against a linear equality scan.
    """

    fmt: FxFormat
    raws: np.ndarray  # int64, strictly descending, length 2**total_bits

    @classmethod
    def full(cls, fmt: FxFormat) -> "CamTable":
        raws = np.arange(fmt.raw_max, fmt.raw_min - 1, -1, dtype=np.int64)
        table = cls(fmt, raws)
        table.raws.setflags(write=False)
        return table

    @property
    def n_rows(self) -> int:
        return len(self.raws)

    @property
    def values(self) -> np.ndarray:
        return self.raws * self.fmt.step

    def row_of_raw(self, raw):
        """Row index storing the given raw count(s)."""
        return self.fmt.raw_max - raw

    def raw_of_row(self, row):
        return self.fmt.raw_max - row


def cam_search(table: CamTable, x: FxValue) -> np.ndarray:
    """One-hot match vector for a query value (bool, one entry per row)."""
    if x.fmt != table.fmt:
        raise ValueError(f"format mismatch: query {x.fmt} vs table {table.fmt}")
    match = np.zeros(table.n_rows, dtype=bool)
    match[table.row_of_raw(x.raw)] = True
    return match


def merge_matches(vs) -> np.ndarray:
    """Bitwise OR of match vectors (the cascaded OR gates)."""
    vs = list(vs)
    if not vs:
        raise ValueError("merge_matches requires at least one vector")
    length = len(vs[0])
    for v in vs:
        if len(v) != length:
            raise ValueError("match vector length mismatch")
    return np.logical_or.reduce(np.asarray(vs, dtype=bool), axis=0)


def first_set_index(v) -> int:
    """Index of the first set bit; with descending storage this is the row
    holding the maximum of all merged queries."""
    idx = np.flatnonzero(np.asarray(v, dtype=bool))
    if idx.size == 0:
        raise ValueError("match vector has no set bit")
    return int(idx[0])


def sub_drive(table: CamTable, xi_row: int, max_row: int) -> FxValue:
    """Differential readout x_i - x_max, exact in the widened format.

    Equal rows mean the +V and -V drives coincide and cancel: exactly 0.
    """
    n = table.n_rows
    if not (0 <= xi_row < n and 0 <= max_row < n):
        raise ValueError(f"row index out of range for {n}-row table")
    if xi_row < max_row:
        raise ValueError("xi_row above max_row: stored value exceeds the found maximum")
    diff = int(table.raws[xi_row]) - int(table.raws[max_row])
    return FxValue(diff, table.fmt.widened())


@dataclass(frozen=True, eq=False)
class LutTable:
    """Preloaded exp table, row-aligned with the descending-magnitude CAM.

    Row r of the magnitude CAM stores magnitude m_r; entries[r] is
    quantize(e**-m_r) in the output format. Row 0 carries the largest
    magnitude, the last row magnitude 0 (entry exactly 1.0).
    """

    domain_fmt: FxFormat  # unsigned magnitudes |x_i - x_max|
    out_fmt: FxFormat  # unsigned, holds values in (0, 1]
    entries: np.ndarray  # int64 raw entries

    @classmethod
    def exponential(cls, domain_fmt: FxFormat, out_fmt: FxFormat = DEFAULT_LUT_OUT_FORMAT) -> "LutTable":
        if domain_fmt.signed:
            raise ValueError("LUT domain format must be unsigned (sign bit is stripped upstream)")
        if out_fmt.signed:
            raise ValueError("LUT output format must be unsigned")
        if out_fmt.raw_max < (1 << out_fmt.frac_bits):
            raise ValueError(f"output format {out_fmt} cannot represent 1.0 exactly")
        mag_raws = np.arange(domain_fmt.raw_max, -1, -1, dtype=np.int64)
        entries, _ = quantize_array(np.exp(-mag_raws * domain_fmt.step), out_fmt)
        table = cls(domain_fmt, out_fmt, entries)
        table.entries.setflags(write=False)
        return table

    @property
    def n_rows(self) -> int:
        return len(self.entries)

    @property
    def magnitude_raws(self) -> np.ndarray:
        return np.arange(self.domain_fmt.raw_max, -1, -1, dtype=np.int64)

    @property
    def magnitudes(self) -> np.ndarray:
        return self.magnitude_raws * self.domain_fmt.step


def lut_read(lut: LutTable, match) -> FxValue:
    """Entry selected by a one-hot match vector."""
    match = np.asarray(match, dtype=bool)
    if len(match) != lut.n_rows:
        raise ValueError("match vector length mismatch")
    set_rows = np.flatnonzero(match)
    if set_rows.size != 1:
        raise ValueError(f"match vector must be one-hot, has {set_rows.size} set bits")
    return FxValue(int(lut.entries[set_rows[0]]), lut.out_fmt)


def accumulator_format(out_fmt: FxFormat, max_seq_len: int) -> FxFormat:
    """Unsigned format wide enough for max_seq_len entries of at most 1.0."""
    bits = (max_seq_len << out_fmt.frac_bits).bit_length()
    return FxFormat(bits, out_fmt.frac_bits, signed=False)


@dataclass(frozen=True, eq=False)
class VmmUnit:
    """Dot-product crossbar storing the LUT entries bit-identically.

    adc_bits=None models an ideal readout (exact integer dot product); a
    set value requantizes the sum to 2**adc_bits uniform levels over the
    full scale max_seq_len * 1.0.
    """

    weights: LutTable
    adc_bits: int | None = None
    max_seq_len: int = 512

    def __post_init__(self) -> None:
        if self.max_seq_len < 1:
            raise ValueError("max_seq_len must be >= 1")
        if self.adc_bits is not None and self.adc_bits < 1:
            raise ValueError("adc_bits must be >= 1 when set")


def _div_round_away(num: int, den: int) -> int:
    """round(num/den) with ties away from zero, exact integer arithmetic.

    Requires num >= 0, den > 0.
    """
    return (2 * num + den) // (2 * den)


def vmm_dot(vmm: VmmUnit, counts) -> FxValue:
    """Histogram-weighted sum of the exp table: the softmax denominator.

    Exact by construction (counts <= max_seq_len, entries <= 2**frac_bits,
    so the dot product fits comfortably in the wide accumulator); the
    optional ADC requantization is applied afterwards.
    """
    counts = np.asarray(counts)
    if counts.shape != (vmm.weights.n_rows,):
        raise ValueError(f"counts length {counts.shape} does not match {vmm.weights.n_rows} rows")
    if not np.issubdtype(counts.dtype, np.integer):
        raise ValueError("counts must be integers")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    total = int(counts.sum())
    if total > vmm.max_seq_len:
        raise ValueError(f"count total {total} exceeds max_seq_len {vmm.max_seq_len}")
    acc = int(np.dot(counts.astype(np.int64), vmm.weights.entries))
    fmt = accumulator_format(vmm.weights.out_fmt, vmm.max_seq_len)
    if vmm.adc_bits is not None:
        full_scale = vmm.max_seq_len << vmm.weights.out_fmt.frac_bits
        levels = (1 << vmm.adc_bits) - 1
        code = min(_div_round_away(acc * levels, full_scale), levels)
        acc = _div_round_away(code * full_scale, levels)
    return FxValue(acc, fmt)


def lut_to_csv(lut: LutTable, path) -> None:
    """Write (row_index, stored magnitude, raw entry) rows; formats go in a
    header comment so the file round-trips."""
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# star-lut domain_total={lut.domain_fmt.total_bits} domain_frac={lut.domain_fmt.frac_bits}"
            f" out_total={lut.out_fmt.total_bits} out_frac={lut.out_fmt.frac_bits}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["row_index", "magnitude", "raw_entry"])
        for r, (mag, entry) in enumerate(zip(lut.magnitudes, lut.entries)):
            writer.writerow([r, repr(float(mag)), int(entry)])


def lut_from_csv(path) -> LutTable:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if not header.startswith("# star-lut "):
            raise ValueError("not a LUT csv: missing format header")
        fields = dict(kv.split("=") for kv in header[len("# star-lut "):].split())
        domain_fmt = FxFormat(int(fields["domain_total"]), int(fields["domain_frac"]), signed=False)
        out_fmt = FxFormat(int(fields["out_total"]), int(fields["out_frac"]), signed=False)
        reader = csv.reader(fh)
        next(reader)  # column header
        rows = [(int(r), float(mag), int(entry)) for r, mag, entry in reader]
    if len(rows) != domain_fmt.n_values:
        raise ValueError(f"expected {domain_fmt.n_values} rows, got {len(rows)}")
    entries = np.empty(len(rows), dtype=np.int64)
    for r, mag, entry in rows:
        expected_mag = (domain_fmt.raw_max - r) * domain_fmt.step
        if not math.isclose(mag, expected_mag, rel_tol=0.0, abs_tol=0.0):
            raise ValueError(f"row {r}: magnitude {mag} does not match the descending layout")
        entries[r] = entry
    table = LutTable(domain_fmt, out_fmt, entries)
    table.entries.setflags(write=False)
    return table
