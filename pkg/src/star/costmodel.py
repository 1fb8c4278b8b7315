"""Parameterized area/power/latency accounting and the row-vector pipeline.

Crossbar-backed components carry per-cell parameters and scale with the
geometry the engine config implies; the divider, counter, and ADC are
lumped units. Latency follows a five-stage model per softmax vector
(search, subtract, exp lookup with the counter overlapped, one VMM step,
divide), pipelined across successive score rows.

Absolute numbers are only as good as the parameter file. The shipped
calibration file is solved against published ratios, so reports produced
from it echo those ratios by construction; the structural properties
(additivity, scaling, pipeline dominance) are what the model validates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .attention import AttentionConfig
from .softmax_engine import EngineConfig

__all__ = [
    "COMPONENTS",
    "ENGINE_COMPONENTS",
    "ComponentParams",
    "CostParams",
    "Baselines",
    "StageLatencyModel",
    "DEFAULT_STAGE_MODEL",
    "ScheduleEntry",
    "component_costs",
    "crossbar_geometry",
    "matmul_tile_count",
    "op_count",
    "component_activity",
    "softmax_latency",
    "pipeline_schedule",
    "attention_latency",
    "efficiency",
    "CostReport",
    "cost_report",
]

COMPONENTS = (
    "cam_search_step",
    "sub_readout_step",
    "lut_read_step",
    "vmm_step",
    "divider_step",
    "counter_step",
    "matmul_tile_step",
    "adc_conversion",
)

# Softmax-engine components; the rest belong to the matrix engine.
ENGINE_COMPONENTS = (
    "cam_search_step",
    "sub_readout_step",
    "lut_read_step",
    "vmm_step",
    "divider_step",
    "counter_step",
)

STAGES = ("cam_search", "subtract", "exp_lookup", "vmm", "divide")
STAGE_COMPONENT = {
    "cam_search": "cam_search_step",
    "subtract": "sub_readout_step",
    "exp_lookup": "lut_read_step",
    "vmm": "vmm_step",
    "divide": "divider_step",
}
# The CAM/SUB crossbar is time-multiplexed between search and subtract;
# the exp CAM and LUT act as one lookup unit.
STAGE_RESOURCE = {
    "cam_search": "cam_sub_xbar",
    "subtract": "cam_sub_xbar",
    "exp_lookup": "exp_lut_xbar",
    "vmm": "vmm_xbar",
    "divide": "divider",
}


@dataclass(frozen=True)
class ComponentParams:
    """Per-cell figures for crossbar components, per-unit for lumped ones."""

    area_um2: float = 0.0
    energy_per_op_pj: float = 0.0
    latency_per_step_ns: float = 0.0
    static_power_mw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("area_um2", "energy_per_op_pj", "latency_per_step_ns", "static_power_mw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_json(self) -> dict:
        return {
            "area_um2": self.area_um2,
            "energy_per_op_pj": self.energy_per_op_pj,
            "latency_per_step_ns": self.latency_per_step_ns,
            "static_power_mw": self.static_power_mw,
        }


@dataclass(frozen=True)
class CostParams:
    components: dict[str, ComponentParams] = field(default_factory=dict)
    geometry: dict[str, tuple[int, int]] | None = None  # optional expected (rows, cols)

    def __post_init__(self) -> None:
        for name in self.components:
            if name not in COMPONENTS:
                raise ValueError(f"unknown component {name!r}")

    def get(self, name: str) -> ComponentParams:
        if name not in COMPONENTS:
            raise ValueError(f"unknown component {name!r}")
        return self.components.get(name, ComponentParams())

    def latency_ns(self, component: str) -> float:
        return self.get(component).latency_per_step_ns

    def to_json(self) -> dict:
        obj: dict = {"components": {k: v.to_json() for k, v in self.components.items()}}
        if self.geometry is not None:
            obj["geometry"] = {k: list(v) for k, v in self.geometry.items()}
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CostParams":
        components = {
            name: ComponentParams(**fields) for name, fields in obj.get("components", {}).items()
        }
        geometry = obj.get("geometry")
        if geometry is not None:
            geometry = {k: (int(v[0]), int(v[1])) for k, v in geometry.items()}
        return cls(components=components, geometry=geometry)


@dataclass(frozen=True)
class Baselines:
    """External reference points; measurements we echo, never recompute."""

    cmos_softmax_area_um2: float
    cmos_softmax_power_mw: float
    softermax_area_um2: float
    softermax_power_mw: float
    gpu_efficiency_gops_per_watt: float
    pipelayer_efficiency_gops_per_watt: float
    retransformer_efficiency_gops_per_watt: float

    @classmethod
    def from_json(cls, obj: dict) -> "Baselines":
        return cls(
            cmos_softmax_area_um2=obj["cmos_softmax"]["area_um2"],
            cmos_softmax_power_mw=obj["cmos_softmax"]["power_mw"],
            softermax_area_um2=obj["softermax"]["area_um2"],
            softermax_power_mw=obj["softermax"]["power_mw"],
            gpu_efficiency_gops_per_watt=obj["gpu"]["efficiency_gops_per_watt"],
            pipelayer_efficiency_gops_per_watt=obj["pipelayer"]["efficiency_gops_per_watt"],
            retransformer_efficiency_gops_per_watt=obj["retransformer"]["efficiency_gops_per_watt"],
        )


def crossbar_geometry(ecfg: EngineConfig, acfg: AttentionConfig | None = None) -> dict[str, tuple[int, int]]:
    """(rows, cols) per crossbar. Rows enumerate representable values; the
    column count models two cells per stored bit (complementary encoding)."""
    bits = ecfg.input_format.total_bits
    cols = 2 * bits
    geom = {
        "cam_sub": (ecfg.input_format.n_values, cols),
        "exp_cam": (ecfg.domain_format.n_values, cols),
        "lut": (ecfg.domain_format.n_values, cols),
        "vmm": (ecfg.domain_format.n_values, cols),
    }
    if acfg is not None:
        geom["matmul_tile"] = (acfg.matmul_tile, acfg.matmul_tile)
    return geom


def _component_cells(ecfg: EngineConfig, acfg: AttentionConfig | None) -> dict[str, int]:
    geom = crossbar_geometry(ecfg, acfg)

    def cells(name: str) -> int:
        rows, cols = geom[name]
        return rows * cols

    counts = {
        "cam_search_step": cells("cam_sub"),
        "sub_readout_step": cells("cam_sub"),
        "lut_read_step": cells("exp_cam") + cells("lut"),
        "vmm_step": cells("vmm"),
        "divider_step": 1,
        "counter_step": 1,
        "adc_conversion": 1,
    }
    counts["matmul_tile_step"] = cells("matmul_tile") if acfg is not None else 0
    return counts


def component_costs(
    ecfg: EngineConfig, acfg: AttentionConfig | None, params: CostParams
) -> dict[str, dict[str, float]]:
    """Area and static power per component, scaled by cell count.

    cam_search_step carries the CAM/SUB array, sub_readout_step its
    subtraction periphery (same cell count), lut_read_step the exp CAM plus
    LUT pair, vmm_step the VMM array, matmul_tile_step one matrix tile;
    divider, counter, and ADC are lumped single units.
    """
    if params.geometry is not None:
        derived = crossbar_geometry(ecfg, acfg)
        for name, expected in params.geometry.items():
            if name not in derived:
                raise ValueError(f"unknown crossbar {name!r} in geometry")
            if tuple(expected) != derived[name]:
                raise ValueError(
                    f"geometry mismatch for {name}: params expect {tuple(expected)},"
                    f" formats imply {derived[name]}"
                )
    counts = _component_cells(ecfg, acfg)
    out = {}
    for name in COMPONENTS:
        p = params.get(name)
        n = counts[name]
        out[name] = {
            "cells": n,
            "area_um2": p.area_um2 * n,
            "static_power_mw": p.static_power_mw * n,
        }
    return out


def matmul_tile_count(acfg: AttentionConfig) -> int:
    """Tiles for the two score/value matmuls across all heads."""
    t = acfg.matmul_tile
    per_head = math.ceil(acfg.seq_len / t) ** 2 * math.ceil(acfg.d_head / t)
    return 2 * acfg.n_heads * per_head


@dataclass(frozen=True)
class StageLatencyModel:
    """Step counts per stage as a function of the vector length n.

    Per-element stages take n steps (one search/readout/lookup/divide per
    input, the counter overlapped with the lookups); the VMM fires once
    after the last lookup.
    """

    stages: tuple[tuple[str, bool], ...] = (
        ("cam_search", True),
        ("subtract", True),
        ("exp_lookup", True),
        ("vmm", False),
        ("divide", True),
    )

    def step_counts(self, n: int) -> dict[str, int]:
        if n < 1:
            raise ValueError("vector length must be >= 1")
        return {name: (n if per_element else 1) for name, per_element in self.stages}

    def stage_times_ns(
        self, n: int, params: CostParams, include_adc: bool = False
    ) -> list[tuple[str, float]]:
        counts = self.step_counts(n)
        times = []
        for name, _ in self.stages:
            t = counts[name] * params.latency_ns(STAGE_COMPONENT[name])
            if include_adc and name == "vmm":
                t += params.latency_ns("adc_conversion")
            times.append((name, t))
        return times


DEFAULT_STAGE_MODEL = StageLatencyModel()


@dataclass(frozen=True)
class ScheduleEntry:
    vector_id: int
    stage: str
    start_ns: float
    end_ns: float


def pipeline_schedule(
    vectors: int,
    n: int,
    model: StageLatencyModel,
    params: CostParams,
    exclusive_crossbars: bool = False,
    include_adc: bool = False,
) -> list[ScheduleEntry]:
    """ASAP schedule of the stage pipeline over successive vectors.

    A stage starts once the previous stage of its own vector is done and
    the same stage of the previous vector has drained; with
    exclusive_crossbars the search and subtract phases additionally
    serialize on the shared CAM/SUB array across vectors.
    """
    if vectors < 1:
        raise ValueError("vectors must be >= 1")
    times = model.stage_times_ns(n, params, include_adc)
    prev_stage_end: dict[str, float] = {}
    resource_free: dict[str, float] = {}
    entries = []
    for v in range(vectors):
        t_prev = 0.0
        for stage, dur in times:
            start = max(t_prev, prev_stage_end.get(stage, 0.0))
            if exclusive_crossbars:
                start = max(start, resource_free.get(STAGE_RESOURCE[stage], 0.0))
            end = start + dur
            entries.append(ScheduleEntry(v, stage, start, end))
            prev_stage_end[stage] = end
            if exclusive_crossbars:
                resource_free[STAGE_RESOURCE[stage]] = end
            t_prev = end
    return entries


def softmax_latency(
    n: int,
    model: StageLatencyModel,
    params: CostParams,
    pipelined: bool,
    vectors: int = 1,
    exclusive_crossbars: bool = False,
    include_adc: bool = False,
) -> float:
    """Latency in ns for `vectors` softmax vectors of length n.

    Unpipelined runs each vector through all stages alone; pipelined
    overlaps stages across vectors.
    """
    if n < 1 or vectors < 1:
        raise ValueError("n and vectors must be >= 1")
    per_vector = sum(t for _, t in model.stage_times_ns(n, params, include_adc))
    if not pipelined:
        return vectors * per_vector
    entries = pipeline_schedule(vectors, n, model, params, exclusive_crossbars, include_adc)
    return max(e.end_ns for e in entries)


def op_count(acfg: AttentionConfig, model: StageLatencyModel = DEFAULT_STAGE_MODEL) -> dict[str, int]:
    """Operation counts for one attention layer.

    Convention: one MAC = 2 ops, so the two seq x seq x d_model matmuls
    contribute 2*(2*seq^2*d_model); softmax ops are the stage step counts
    summed over the seq score rows.
    """
    matmul_ops = 2 * (2 * acfg.seq_len**2 * acfg.d_model)
    softmax_ops = acfg.seq_len * sum(model.step_counts(acfg.seq_len).values())
    return {"matmul_ops": matmul_ops, "softmax_ops": softmax_ops, "total": matmul_ops + softmax_ops}


def component_activity(
    acfg: AttentionConfig, ecfg: EngineConfig, model: StageLatencyModel = DEFAULT_STAGE_MODEL
) -> dict[str, int]:
    """Per-component step counts over one attention layer (for energy).

    Stage components fire their per-row step count once per score row; the
    counter ticks with every exp lookup; the ADC converts once per VMM sum
    when the softmax ADC is modeled, plus once per matrix tile.
    """
    rows = acfg.seq_len
    counts = model.step_counts(acfg.seq_len)
    activity = {name: 0 for name in COMPONENTS}
    for stage, comp in STAGE_COMPONENT.items():
        activity[comp] += rows * counts[stage]
    activity["counter_step"] = rows * counts["exp_lookup"]
    tiles = matmul_tile_count(acfg)
    activity["matmul_tile_step"] = tiles
    activity["adc_conversion"] = tiles + (rows if ecfg.vmm_adc_bits is not None else 0)
    return activity


def attention_latency(
    acfg: AttentionConfig,
    ecfg: EngineConfig,
    params: CostParams,
    model: StageLatencyModel = DEFAULT_STAGE_MODEL,
    pipelined: bool = True,
    exclusive_crossbars: bool = False,
) -> float:
    """ns for one layer: score matmul, softmax phase over all rows, value
    matmul. The softmax rows pipeline; the matmul phases are sequential."""
    tile_ns = params.latency_ns("matmul_tile_step")
    half_tiles = matmul_tile_count(acfg) // 2
    softmax_ns = softmax_latency(
        acfg.seq_len,
        model,
        params,
        pipelined=pipelined,
        vectors=acfg.seq_len,
        exclusive_crossbars=exclusive_crossbars,
        include_adc=ecfg.vmm_adc_bits is not None,
    )
    return half_tiles * tile_ns + softmax_ns + half_tiles * tile_ns


def efficiency(op_count: float, time_s: float, power_w: float) -> float:
    """GOPs/s/W: operations per unit time per watt."""
    if time_s <= 0 or power_w <= 0:
        raise ValueError("time and power must be positive")
    if op_count < 0:
        raise ValueError("op_count must be non-negative")
    return op_count / time_s / power_w / 1e9


@dataclass(frozen=True)
class CostReport:
    components: dict[str, dict[str, float]]
    total_area_um2: float
    engine_area_um2: float
    total_static_power_mw: float
    engine_static_power_mw: float
    total_energy_pj: float
    softmax_latency_ns: float  # one vector of length seq_len, no overlap
    softmax_pipelined_ns: float  # all seq_len score rows, pipelined
    attention_latency_ns: float
    ops: dict[str, int]
    avg_power_mw: float
    engine_avg_power_mw: float
    throughput_gops: float
    efficiency_gops_per_watt: float
    ratios: dict[str, float] | None
    notes: str

    def to_json_dict(self) -> dict:
        return {
            "components": self.components,
            "total_area_um2": self.total_area_um2,
            "engine_area_um2": self.engine_area_um2,
            "total_static_power_mw": self.total_static_power_mw,
            "engine_static_power_mw": self.engine_static_power_mw,
            "total_energy_pj": self.total_energy_pj,
            "softmax_latency_ns": self.softmax_latency_ns,
            "softmax_pipelined_ns": self.softmax_pipelined_ns,
            "attention_latency_ns": self.attention_latency_ns,
            "ops": self.ops,
            "avg_power_mw": self.avg_power_mw,
            "engine_avg_power_mw": self.engine_avg_power_mw,
            "throughput_gops": self.throughput_gops,
            "efficiency_gops_per_watt": self.efficiency_gops_per_watt,
            "ratios": self.ratios,
            "notes": self.notes,
        }


_NOTES = (
    "Ops convention: 1 MAC = 2 ops for the two seq x seq x d_model matmuls; "
    "softmax ops are stage step counts (n per per-element stage, 1 per VMM) summed over rows. "
    "Crossbar area/power scale per cell from the parameter file. "
    "Ratios against named baselines are calibration echoes when produced from the shipped "
    "calibration parameters: the baseline figures are published measurements, not remodeled here."
)


def cost_report(
    ecfg: EngineConfig,
    acfg: AttentionConfig,
    params: CostParams,
    baselines: Baselines | None = None,
    model: StageLatencyModel = DEFAULT_STAGE_MODEL,
    pipelined: bool = True,
    exclusive_crossbars: bool = False,
) -> CostReport:
    costs = component_costs(ecfg, acfg, params)
    activity = component_activity(acfg, ecfg, model)
    for name in COMPONENTS:
        costs[name]["ops"] = activity[name]
        costs[name]["energy_pj"] = params.get(name).energy_per_op_pj * activity[name]

    total_area = sum(c["area_um2"] for c in costs.values())
    engine_area = sum(costs[n]["area_um2"] for n in ENGINE_COMPONENTS)
    total_static = sum(c["static_power_mw"] for c in costs.values())
    engine_static = sum(costs[n]["static_power_mw"] for n in ENGINE_COMPONENTS)
    total_energy = sum(c["energy_pj"] for c in costs.values())
    engine_energy = sum(costs[n]["energy_pj"] for n in ENGINE_COMPONENTS)

    att_ns = attention_latency(acfg, ecfg, params, model, pipelined, exclusive_crossbars)
    ops = op_count(acfg, model)
    # pJ / ns = mW
    avg_power = total_static + (total_energy / att_ns if att_ns > 0 else 0.0)
    engine_avg_power = engine_static + (engine_energy / att_ns if att_ns > 0 else 0.0)
    throughput = ops["total"] / att_ns if att_ns > 0 else float("inf")  # ops/ns == GOPS
    eff = (
        efficiency(ops["total"], att_ns * 1e-9, avg_power * 1e-3)
        if att_ns > 0 and avg_power > 0
        else float("inf")
    )

    ratios = None
    if baselines is not None:
        ratios = {
            "area_vs_cmos_softmax": engine_area / baselines.cmos_softmax_area_um2,
            "power_vs_cmos_softmax": engine_avg_power / baselines.cmos_softmax_power_mw,
            "area_vs_softermax": engine_area / baselines.softermax_area_um2,
            "power_vs_softermax": engine_avg_power / baselines.softermax_power_mw,
            "efficiency_vs_gpu": eff / baselines.gpu_efficiency_gops_per_watt,
            "efficiency_vs_pipelayer": eff / baselines.pipelayer_efficiency_gops_per_watt,
            "efficiency_vs_retransformer": eff / baselines.retransformer_efficiency_gops_per_watt,
        }

    return CostReport(
        components=costs,
        total_area_um2=total_area,
        engine_area_um2=engine_area,
        total_static_power_mw=total_static,
        engine_static_power_mw=engine_static,
        total_energy_pj=total_energy,
        softmax_latency_ns=softmax_latency(
            acfg.seq_len, model, params, pipelined=False, include_adc=ecfg.vmm_adc_bits is not None
        ),
        softmax_pipelined_ns=softmax_latency(
            acfg.seq_len,
            model,
            params,
            pipelined=True,
            vectors=acfg.seq_len,
            exclusive_crossbars=exclusive_crossbars,
            include_adc=ecfg.vmm_adc_bits is not None,
        ),
        attention_latency_ns=att_ns,
        ops=ops,
        avg_power_mw=avg_power,
        engine_avg_power_mw=engine_avg_power,
        throughput_gops=throughput,
        efficiency_gops_per_watt=eff,
        ratios=ratios,
        notes=_NOTES,
    )
