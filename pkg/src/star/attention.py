"""Attention layer wired through the crossbar softmax row by row.

Score and value matmuls are exact host arithmetic (the matrix engine is
modeled as an opaque tiled unit), evaluated in fixed tile order so results
are deterministic and tile operations are countable. Error metrics compare
the engine's probabilities against the float oracle, and the bitwidth
sweep reruns a shared logit corpus across input formats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .fxp import FxFormat, _round_half_away
from .softmax_engine import EngineConfig, EngineTrace, SoftmaxEngine, reference_softmax

__all__ = [
    "AttentionConfig",
    "ErrorReport",
    "SweepRow",
    "SweepResult",
    "tiled_matmul",
    "attention_forward",
    "reference_attention",
    "error_metrics",
    "bitwidth_sweep",
    "min_integer_bits",
    "synth_logits",
]

KL_FLOOR = 1e-12


@dataclass(frozen=True)
class AttentionConfig:
    seq_len: int
    d_model: int
    n_heads: int = 1
    matmul_tile: int = 128
    scale_scores: bool = True  # multiply scores by 1/sqrt(d_head)

    def __post_init__(self) -> None:
        if self.seq_len < 1 or self.d_model < 1 or self.n_heads < 1:
            raise ValueError("seq_len, d_model, and n_heads must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.matmul_tile < 1:
            raise ValueError("matmul_tile must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_json(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "matmul_tile": self.matmul_tile,
            "scale_scores": self.scale_scores,
        }


@dataclass(frozen=True)
class ErrorReport:
    """Row-wise probability errors, aggregated over a matrix of rows."""

    max_abs_error: float
    mean_abs_error: float
    mean_kl_divergence: float
    argmax_agreement: float

    def to_json(self) -> dict:
        return {
            "max_abs_error": self.max_abs_error,
            "mean_abs_error": self.mean_abs_error,
            "mean_kl_divergence": self.mean_kl_divergence,
            "argmax_agreement": self.argmax_agreement,
        }


def tiled_matmul(a: np.ndarray, b: np.ndarray, tile: int) -> tuple[np.ndarray, int]:
    """a @ b evaluated in fixed-order square tiles; returns (product, tiles).

    The tile count is what the cost model charges for the matrix engine.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"incompatible shapes {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    tiles = 0
    for i in range(0, a.shape[0], tile):
        for j in range(0, b.shape[1], tile):
            for k in range(0, a.shape[1], tile):
                out[i : i + tile, j : j + tile] += a[i : i + tile, k : k + tile] @ b[k : k + tile, j : j + tile]
                tiles += 1
    return out, tiles


def _check_qkv(q, k, v, acfg: AttentionConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    expected = (acfg.seq_len, acfg.d_model)
    for name, m in (("Q", q), ("K", k), ("V", v)):
        if m.shape != expected:
            raise ValueError(f"{name} shape {m.shape} does not match {expected}")
    return q, k, v


def attention_forward(
    q, k, v, acfg: AttentionConfig, ecfg: EngineConfig
) -> tuple[np.ndarray, list[list[EngineTrace]]]:
    """Single attention layer with the engine softmax applied per score row.

    Returns the output matrix and the engine traces, indexed [head][row].
    Rows are independent and the engine run is pure, so evaluation order
    cannot affect the results.
    """
    q, k, v = _check_qkv(q, k, v, acfg)
    if acfg.seq_len > ecfg.max_seq_len:
        raise ValueError(f"seq_len {acfg.seq_len} exceeds engine max_seq_len {ecfg.max_seq_len}")
    engine = SoftmaxEngine(ecfg)
    out = np.empty((acfg.seq_len, acfg.d_model))
    traces: list[list[EngineTrace]] = []
    dh = acfg.d_head
    scale = 1.0 / math.sqrt(dh) if acfg.scale_scores else 1.0
    for h in range(acfg.n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores, _ = tiled_matmul(q[:, cols], k[:, cols].T, acfg.matmul_tile)
        if acfg.scale_scores:
            scores = scores * scale
        head_traces = [engine.run(scores[i]) for i in range(acfg.seq_len)]
        probs = np.stack([t.outputs for t in head_traces])
        out[:, cols], _ = tiled_matmul(probs, v[:, cols], acfg.matmul_tile)
        traces.append(head_traces)
    return out, traces


def reference_attention(q, k, v, acfg: AttentionConfig) -> np.ndarray:
    """Float64 oracle for the full layer (plain matmuls, stable softmax)."""
    q, k, v = _check_qkv(q, k, v, acfg)
    out = np.empty((acfg.seq_len, acfg.d_model))
    dh = acfg.d_head
    for h in range(acfg.n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = q[:, cols] @ k[:, cols].T
        if acfg.scale_scores:
            scores = scores / math.sqrt(dh)
        probs = np.stack([reference_softmax(row) for row in scores])
        out[:, cols] = probs @ v[:, cols]
    return out


def error_metrics(engine_probs, oracle_probs) -> ErrorReport:
    """Row-wise metrics aggregated over the matrix (max of maxes, mean of
    means). KL uses the oracle as reference, flooring engine zeros at 1e-12;
    a row agrees on the argmax when the oracle's argmax position attains the
    engine row's maximum (quantization ties count as agreement).
    """
    e = np.atleast_2d(np.asarray(engine_probs, dtype=np.float64))
    o = np.atleast_2d(np.asarray(oracle_probs, dtype=np.float64))
    if e.shape != o.shape:
        raise ValueError(f"shape mismatch: {e.shape} vs {o.shape}")
    if not np.allclose(o.sum(axis=1), 1.0, rtol=0.0, atol=1e-8):
        raise ValueError("oracle rows must sum to 1")
    abs_err = np.abs(e - o)
    floored = np.where(e <= 0.0, KL_FLOOR, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(o > 0.0, o * (np.log(o) - np.log(floored)), 0.0)
    kl_rows = np.maximum(terms.sum(axis=1), 0.0)
    oracle_argmax = o.argmax(axis=1)
    row_idx = np.arange(e.shape[0])
    agree = e[row_idx, oracle_argmax] == e.max(axis=1)
    return ErrorReport(
        max_abs_error=float(abs_err.max()),
        mean_abs_error=float(abs_err.mean(axis=1).mean()),
        mean_kl_divergence=float(kl_rows.mean()),
        argmax_agreement=float(agree.mean()),
    )


def min_integer_bits(corpus: np.ndarray, frac_bits: int) -> int:
    """Smallest integer-bit count (sign included) whose signed format covers
    the corpus without saturation at the given fractional precision."""
    arr = np.asarray(corpus, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValueError("corpus must be finite")
    raws = _round_half_away(arr * float(1 << frac_bits))
    need = max(int(raws.max()) + 1, -int(raws.min()), 1)
    return max((need - 1).bit_length() + 1 - frac_bits, 1)


@dataclass(frozen=True)
class SweepRow:
    fmt: FxFormat
    report: ErrorReport
    saturation_events: int
    min_integer_bits: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    logit_min: float
    logit_max: float


def bitwidth_sweep(corpus, formats, base_cfg: EngineConfig) -> SweepResult:
    """Error reports for each input format on a shared logit corpus.

    Also reports the observed logit range and, per format, the minimal
    integer bits that would cover it without saturation at that format's
    fractional precision.
    """
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.float64))
    if corpus.size == 0:
        raise ValueError("corpus is empty")
    oracle = np.stack([reference_softmax(row) for row in corpus])
    rows = []
    for fmt in formats:
        cfg = replace(base_cfg, input_format=fmt)
        engine = SoftmaxEngine(cfg)
        traces = [engine.run(row) for row in corpus]
        probs = np.stack([t.outputs for t in traces])
        rows.append(
            SweepRow(
                fmt=fmt,
                report=error_metrics(probs, oracle),
                saturation_events=sum(t.saturation_events for t in traces),
                min_integer_bits=min_integer_bits(corpus, fmt.frac_bits),
            )
        )
    return SweepResult(tuple(rows), float(corpus.min()), float(corpus.max()))


def synth_logits(spec: dict, seq_len: int, seed: int) -> np.ndarray:
    """Deterministic synthetic logit corpus, shape (vectors, seq_len).

    spec: {"kind": "gaussian", "mean": m, "std": s} or
          {"kind": "uniform", "lo": a, "hi": b}, plus optional "vectors"
          (default 64).
    """
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("distribution spec must be a dict with a 'kind'")
    vectors = int(spec.get("vectors", 64))
    if vectors < 1:
        raise ValueError("vectors must be >= 1")
    rng = np.random.default_rng(seed)
    kind = spec["kind"]
    if kind == "gaussian":
        std = float(spec.get("std", 1.0))
        if std < 0:
            raise ValueError("std must be non-negative")
        return rng.normal(float(spec.get("mean", 0.0)), std, size=(vectors, seq_len))
    if kind == "uniform":
        lo = float(spec.get("lo", 0.0))
        hi = float(spec.get("hi", 1.0))
        if hi < lo:
            raise ValueError("uniform spec requires lo <= hi")
        return rng.uniform(lo, hi, size=(vectors, seq_len))
    raise ValueError(f"unknown distribution kind {kind!r}")
