"""Unified command-line entry point.

Subcommands: softmax, attention, sweep, cost, pipeline. Configuration is a
single JSON file merged over shipped defaults; unknown keys are rejected
and validation errors name the offending field. Every output file is
written atomically and embeds the tool version and a digest of the
resolved config, so identical (config, seed, inputs) produce byte-identical
outputs regardless of STAR_THREADS.

Exit codes: 0 success, 1 experiment failure, 2 config parse error,
3 validation error, 4 unknown config key.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import __version__
from .attention import (
    AttentionConfig,
    attention_forward,
    bitwidth_sweep,
    error_metrics,
    reference_attention,
    reference_softmax,
    synth_logits,
)
from .costmodel import (
    Baselines,
    CostParams,
    DEFAULT_STAGE_MODEL,
    cost_report,
    pipeline_schedule,
    softmax_latency,
)
from .fxp import FxFormat
from .softmax_engine import EngineConfig, SoftmaxEngine

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_UNKNOWN_KEY = 4


class ConfigParseError(Exception):
    pass


class ConfigValidationError(Exception):
    pass


class UnknownKeyError(Exception):
    pass


_OUTPUT_KEYS = ("probabilities", "trace", "report", "sweep", "schedule", "cost")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    engine: EngineConfig
    attention: AttentionConfig
    cost_params_path: str | None
    baselines_path: str | None
    corpus: dict
    seed: int
    outputs: dict[str, str]
    resolved: dict  # fully-merged plain dict, the digest source


def _default_config_dict() -> dict:
    text = resources.files("star").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def _shipped_path(name: str) -> str:
    return str(resources.files("star").joinpath(f"data/{name}"))


def _expect_keys(obj: dict, allowed, path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise UnknownKeyError(f"unknown key {path}{key}")


def _merge_section(defaults: dict, user: dict, allowed, path: str) -> dict:
    _expect_keys(user, allowed, path)
    merged = dict(defaults)
    merged.update(user)
    return merged


def _require_int(value, path: str, minimum=None, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigValidationError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigValidationError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _require_number(value, path: str):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _require_bool(value, path: str):
    if not isinstance(value, bool):
        raise ConfigValidationError(f"{path}: expected a boolean, got {value!r}")
    return value


def _format_from(obj, path: str) -> FxFormat:
    if not isinstance(obj, dict):
        raise ConfigValidationError(f"{path}: expected an object")
    _expect_keys(obj, ("total_bits", "frac_bits", "signed"), f"{path}.")
    try:
        return FxFormat(
            total_bits=_require_int(obj.get("total_bits"), f"{path}.total_bits"),
            frac_bits=_require_int(obj.get("frac_bits"), f"{path}.frac_bits"),
            signed=_require_bool(obj.get("signed", True), f"{path}.signed"),
        )
    except ValueError as exc:
        raise ConfigValidationError(f"{path}: {exc}") from exc


def _corpus_from(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigValidationError(f"{path}: expected an object")
    kind = obj.get("kind")
    if kind == "gaussian":
        _expect_keys(obj, ("kind", "mean", "std", "vectors"), f"{path}.")
        _require_number(obj.get("mean", 0.0), f"{path}.mean")
        if _require_number(obj.get("std", 1.0), f"{path}.std") < 0:
            raise ConfigValidationError(f"{path}.std: must be non-negative")
    elif kind == "uniform":
        _expect_keys(obj, ("kind", "lo", "hi", "vectors"), f"{path}.")
        lo = _require_number(obj.get("lo", 0.0), f"{path}.lo")
        hi = _require_number(obj.get("hi", 1.0), f"{path}.hi")
        if hi < lo:
            raise ConfigValidationError(f"{path}.hi: must be >= lo")
    else:
        raise ConfigValidationError(f"{path}.kind: expected 'gaussian' or 'uniform', got {kind!r}")
    _require_int(obj.get("vectors", 64), f"{path}.vectors", minimum=1)
    return dict(obj)


def load_config(path: str | None) -> RunConfig:
    """Parse, merge over defaults, and validate a run configuration."""
    defaults = _default_config_dict()
    user: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigParseError(f"config {path}: top level must be a JSON object")

    _expect_keys(
        user,
        ("engine", "attention", "cost_params", "baselines", "corpus", "seed", "outputs"),
        "",
    )

    engine_dict = _merge_section(
        defaults["engine"],
        user.get("engine", {}),
        ("input_format", "lut_out_format", "divider_frac_bits", "vmm_adc_bits", "max_seq_len"),
        "engine.",
    )
    attention_dict = _merge_section(
        defaults["attention"],
        user.get("attention", {}),
        ("seq_len", "d_model", "n_heads", "matmul_tile", "scale_scores"),
        "attention.",
    )

    try:
        engine = EngineConfig(
            input_format=_format_from(engine_dict["input_format"], "engine.input_format"),
            lut_out_format=_format_from(engine_dict["lut_out_format"], "engine.lut_out_format"),
            divider_frac_bits=_require_int(engine_dict["divider_frac_bits"], "engine.divider_frac_bits", minimum=1),
            vmm_adc_bits=_require_int(engine_dict["vmm_adc_bits"], "engine.vmm_adc_bits", minimum=1, allow_none=True),
            max_seq_len=_require_int(engine_dict["max_seq_len"], "engine.max_seq_len", minimum=1),
        )
    except ValueError as exc:
        raise ConfigValidationError(f"engine: {exc}") from exc

    try:
        attention = AttentionConfig(
            seq_len=_require_int(attention_dict["seq_len"], "attention.seq_len", minimum=1),
            d_model=_require_int(attention_dict["d_model"], "attention.d_model", minimum=1),
            n_heads=_require_int(attention_dict["n_heads"], "attention.n_heads", minimum=1),
            matmul_tile=_require_int(attention_dict["matmul_tile"], "attention.matmul_tile", minimum=1),
            scale_scores=_require_bool(attention_dict["scale_scores"], "attention.scale_scores"),
        )
    except ValueError as exc:
        raise ConfigValidationError(f"attention: {exc}") from exc

    if attention.seq_len > engine.max_seq_len:
        raise ConfigValidationError(
            f"attention.seq_len: {attention.seq_len} exceeds engine.max_seq_len {engine.max_seq_len}"
        )

    corpus = _corpus_from(user.get("corpus", defaults["corpus"]), "corpus")
    seed = _require_int(user.get("seed", defaults["seed"]), "seed", minimum=0)

    for key in ("cost_params", "baselines"):
        value = user.get(key, defaults[key])
        if value is not None and not isinstance(value, str):
            raise ConfigValidationError(f"{key}: expected a path string or null")
    cost_params_path = user.get("cost_params", defaults["cost_params"])
    baselines_path = user.get("baselines", defaults["baselines"])

    outputs = user.get("outputs", defaults["outputs"])
    if not isinstance(outputs, dict):
        raise ConfigValidationError("outputs: expected an object")
    _expect_keys(outputs, _OUTPUT_KEYS, "outputs.")
    for key, value in outputs.items():
        if not isinstance(value, str):
            raise ConfigValidationError(f"outputs.{key}: expected a path string")

    resolved = {
        "engine": engine.to_json(),
        "attention": attention.to_json(),
        "cost_params": cost_params_path,
        "baselines": baselines_path,
        "corpus": corpus,
        "seed": seed,
        "outputs": dict(outputs),
    }
    return RunConfig(engine, attention, cost_params_path, baselines_path, corpus, seed, dict(outputs), resolved)


def _with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    _require_int(seed, "seed", minimum=0)
    resolved = dict(cfg.resolved)
    resolved["seed"] = seed
    return dataclasses.replace(cfg, seed=seed, resolved=resolved)


def config_digest(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _thread_count() -> int:
    raw = os.environ.get("STAR_THREADS")
    if raw is None or raw == "":
        return min(os.cpu_count() or 1, 8)
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigValidationError(f"STAR_THREADS: expected an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigValidationError("STAR_THREADS: must be >= 0")
    return min(os.cpu_count() or 1, 8) if n == 0 else n


def parallel_map(fn, items):
    """Order-preserving map; worker count capped by STAR_THREADS."""
    items = list(items)
    workers = min(_thread_count(), max(len(items), 1))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _atomic_write(path: str, data: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".star-tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_output(payload: dict, digest: str) -> str:
    payload = {"_meta": {"tool": "star", "version": __version__, "config_digest": digest}, **payload}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _csv_meta(digest: str) -> str:
    return f"# star {__version__} config={digest}\n"


def _out_path(flag_value: str | None, cfg: RunConfig, key: str, out_dir: str, default_name: str) -> str:
    if flag_value:
        return flag_value
    if key in cfg.outputs:
        return cfg.outputs[key]
    return os.path.join(out_dir, default_name)


def _read_logits_csv(path: str) -> list[np.ndarray]:
    rows = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    rows.append(np.array([float(tok) for tok in line.split(",")]))
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ValueError(f"cannot read logits {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"no logit vectors found in {path}")
    return rows


def _load_json_file(path: str, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read {what} {path}: {exc}") from exc


def _load_cost_params(cfg: RunConfig, flag_value: str | None) -> tuple[CostParams, str]:
    path = flag_value or cfg.cost_params_path or _shipped_path("calibration_params.json")
    return CostParams.from_json(_load_json_file(path, "cost params")), path


def _load_baselines(cfg: RunConfig, flag_value: str | None) -> Baselines:
    path = flag_value or cfg.baselines_path or _shipped_path("baselines.json")
    return Baselines.from_json(_load_json_file(path, "baselines"))


def _parse_formats(text: str) -> list[FxFormat]:
    formats = []
    for item in text.split(","):
        item = item.strip()
        try:
            total, frac = item.split(":")
            formats.append(FxFormat(int(total), int(frac)))
        except ValueError as exc:
            raise ValueError(f"bad format spec {item!r} (expected TOTAL:FRAC): {exc}") from exc
    return formats


def _summary(args, message: str) -> None:
    if not args.quiet:
        print(message)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_softmax(args, cfg: RunConfig) -> int:
    digest = config_digest(cfg)
    vectors = _read_logits_csv(args.input)
    engine = SoftmaxEngine(cfg.engine)
    traces = parallel_map(engine.run, vectors)

    lines = [_csv_meta(digest)]
    for trace in traces:
        lines.append(",".join(repr(float(p)) for p in trace.outputs) + "\n")
    out_path = _out_path(args.out, cfg, "probabilities", args.out_dir, "probabilities.csv")
    _atomic_write(out_path, "".join(lines))

    if args.trace:
        trace_payload = {"traces": [t.to_json_dict() for t in traces]}
        _atomic_write(args.trace, _json_output(trace_payload, digest))

    total_sat = sum(t.saturation_events for t in traces)
    _summary(args, f"softmax: {len(vectors)} vector(s), {total_sat} saturation(s) -> {out_path}")
    return EXIT_OK


def _cmd_attention(args, cfg: RunConfig) -> int:
    digest = config_digest(cfg)
    acfg, ecfg = cfg.attention, cfg.engine
    rng = np.random.default_rng(cfg.seed)
    q, k, v = (rng.normal(size=(acfg.seq_len, acfg.d_model)) for _ in range(3))

    out, traces = attention_forward(q, k, v, acfg, ecfg)
    oracle_out = reference_attention(q, k, v, acfg)

    engine_probs = np.vstack([t.outputs for head in traces for t in head])
    scale = 1.0 / np.sqrt(acfg.d_head) if acfg.scale_scores else 1.0
    oracle_rows = []
    for h in range(acfg.n_heads):
        cols = slice(h * acfg.d_head, (h + 1) * acfg.d_head)
        scores = (q[:, cols] @ k[:, cols].T) * scale
        oracle_rows.extend(reference_softmax(row) for row in scores)
    report = error_metrics(engine_probs, np.vstack(oracle_rows))

    payload = {
        "engine_config": ecfg.to_json(),
        "attention_config": acfg.to_json(),
        "seed": cfg.seed,
        "softmax_errors": report.to_json(),
        "output_max_abs_error": float(np.abs(out - oracle_out).max()),
        "saturation_events": int(sum(t.saturation_events for head in traces for t in head)),
    }
    out_path = _out_path(args.report, cfg, "report", args.out_dir, "attention_report.json")
    _atomic_write(out_path, _json_output(payload, digest))
    _summary(
        args,
        f"attention: seq {acfg.seq_len} d_model {acfg.d_model}, "
        f"max_abs_err {report.max_abs_error:.3e} -> {out_path}",
    )
    return EXIT_OK


def _cmd_sweep(args, cfg: RunConfig) -> int:
    digest = config_digest(cfg)
    formats = _parse_formats(args.formats)
    corpus_spec = _corpus_from(_load_json_file(args.corpus, "corpus spec"), "corpus") if args.corpus else cfg.corpus
    corpus = synth_logits(corpus_spec, cfg.attention.seq_len, cfg.seed)

    base = cfg.engine
    rows = parallel_map(lambda fmt: bitwidth_sweep(corpus, [fmt], base).rows[0], formats)
    logit_min, logit_max = float(corpus.min()), float(corpus.max())

    lines = [_csv_meta(digest)]
    lines.append(f"# logit_range=[{logit_min!r},{logit_max!r}]\n")
    for row in rows:
        lines.append(f"# min_integer_bits {row.fmt.total_bits}:{row.fmt.frac_bits}={row.min_integer_bits}\n")
    lines.append("total_bits,frac_bits,max_abs_err,mean_abs_err,mean_kl,argmax_agreement,saturation_events\n")
    for row in rows:
        r = row.report
        lines.append(
            f"{row.fmt.total_bits},{row.fmt.frac_bits},{r.max_abs_error!r},{r.mean_abs_error!r},"
            f"{r.mean_kl_divergence!r},{r.argmax_agreement!r},{row.saturation_events}\n"
        )
    out_path = _out_path(args.out, cfg, "sweep", args.out_dir, "sweep.csv")
    _atomic_write(out_path, "".join(lines))
    _summary(args, f"sweep: {len(formats)} format(s) on {corpus.shape[0]}x{corpus.shape[1]} corpus -> {out_path}")
    return EXIT_OK


def _cmd_cost(args, cfg: RunConfig) -> int:
    digest = config_digest(cfg)
    params, params_path = _load_cost_params(cfg, args.params)
    baselines = _load_baselines(cfg, None)
    acfg = cfg.attention
    if args.attention:
        obj = _load_json_file(args.attention, "attention config")
        merged = _merge_section(cfg.attention.to_json(), obj, tuple(cfg.attention.to_json()), "attention.")
        acfg = AttentionConfig(**merged)
    report = cost_report(cfg.engine, acfg, params, baselines)
    payload = {"params_source": params_path, "report": report.to_json_dict()}
    out_path = _out_path(args.out, cfg, "cost", args.out_dir, "cost_report.json")
    _atomic_write(out_path, _json_output(payload, digest))
    _summary(
        args,
        f"cost: efficiency {report.efficiency_gops_per_watt:.2f} GOPs/s/W, "
        f"engine area {report.engine_area_um2:.1f} um^2 -> {out_path}",
    )
    return EXIT_OK


def _cmd_pipeline(args, cfg: RunConfig) -> int:
    digest = config_digest(cfg)
    params, _ = _load_cost_params(cfg, args.params)
    entries = pipeline_schedule(
        args.vectors, args.length, DEFAULT_STAGE_MODEL, params, exclusive_crossbars=args.exclusive_crossbars
    )
    makespan = max(e.end_ns for e in entries)
    serial = softmax_latency(args.length, DEFAULT_STAGE_MODEL, params, pipelined=False, vectors=args.vectors)

    lines = [_csv_meta(digest), "vector_id,stage,start_ns,end_ns\n"]
    for e in entries:
        lines.append(f"{e.vector_id},{e.stage},{e.start_ns!r},{e.end_ns!r}\n")
    out_path = _out_path(args.schedule, cfg, "schedule", args.out_dir, "schedule.csv")
    _atomic_write(out_path, "".join(lines))
    _summary(
        args,
        f"pipeline: {args.vectors} vector(s) of length {args.length}, "
        f"makespan {makespan!r} ns vs serial {serial!r} ns -> {out_path}",
    )
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file merged over shipped defaults")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", default=".", help="directory for default-named outputs")
    common.add_argument("--quiet", action="store_true", help="suppress the one-line summary")

    parser = argparse.ArgumentParser(
        prog="star",
        description="Crossbar softmax engine simulator and cost model. "
        "Defaults ship in star/data/default_config.json (9-bit/3-frac engine input).",
    )
    parser.add_argument("--version", action="version", version=f"star {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("softmax", parents=[common], help="run the engine on logit vectors from a CSV")
    p.add_argument("--input", required=True, help="CSV with one logit vector per line")
    p.add_argument("--out", help="probabilities CSV (default: out-dir/probabilities.csv)")
    p.add_argument("--trace", help="optional JSON dump of per-stage traces")
    p.set_defaults(func=_cmd_softmax)

    p = sub.add_parser("attention", parents=[common], help="one attention layer on synthetic Q/K/V")
    p.add_argument("--report", help="report JSON (default: out-dir/attention_report.json)")
    p.set_defaults(func=_cmd_attention)

    p = sub.add_parser("sweep", parents=[common], help="error metrics across input bit widths")
    p.add_argument("--formats", default="7:2,8:2,9:3", help="comma list of TOTAL:FRAC formats")
    p.add_argument("--corpus", help="JSON distribution spec (default: config corpus)")
    p.add_argument("--out", help="sweep CSV (default: out-dir/sweep.csv)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("cost", parents=[common], help="area/power/latency/efficiency report")
    p.add_argument("--params", help="cost parameter JSON (default: shipped calibration)")
    p.add_argument("--attention", help="JSON overriding the attention section")
    p.add_argument("--out", help="report JSON (default: out-dir/cost_report.json)")
    p.set_defaults(func=_cmd_cost)

    p = sub.add_parser("pipeline", parents=[common], help="emit the pipelined stage schedule")
    p.add_argument("--vectors", type=int, required=True, help="number of score rows")
    p.add_argument("--length", type=int, required=True, help="vector length n")
    p.add_argument("--params", help="cost parameter JSON (default: shipped calibration)")
    p.add_argument("--schedule", help="schedule CSV (default: out-dir/schedule.csv)")
    p.add_argument("--exclusive-crossbars", action="store_true",
                   help="serialize search/subtract on the shared CAM/SUB array across vectors")
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _with_seed(load_config(args.config), args.seed)
        return args.func(args, cfg)
    except ConfigParseError as exc:
        print(f"star: config parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigValidationError as exc:
        print(f"star: config validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except UnknownKeyError as exc:
        print(f"star: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_KEY
    except Exception as exc:  # experiment failure
        print(f"star: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
