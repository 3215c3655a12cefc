"""Microbenchmark sweeps: precision, sequence length, block geometry.

Each sweep runs both kernels on identical seeded inputs across one axis and
records deviation reports. Inputs are drawn once per seed in the carrier
and quantized per format, so every format sees the same underlying sample;
the golden reference is baseline attention at FP64, by default on the same
quantized inputs the kernels consumed (golden_inputs="carrier" instead
compares against the unquantized draw, folding the input-quantization error
into every report).

Results are pure functions of the spec: re-running yields bit-identical
rows regardless of thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import backend
from .attention import (
    AttentionConfig,
    BlockGeometry,
    baseline_attention,
    flash_attention,
    perturb_geometry,
)
from .formats import BF16, FP16, FP32, FP64, FloatFormat
from .matrix import Matrix
from .metrics import DeviationReport, golden_deviation

__all__ = [
    "SweepSpec",
    "SweepRow",
    "SweepResult",
    "run_precision_sweep",
    "run_seqlen_sweep",
    "run_block_sweep",
    "summarize",
]

BLOCK_SWEEP_FORMATS = (BF16, FP16, FP32, FP64)


@dataclass(frozen=True)
class SweepSpec:
    axis: str  # precision | seq_len | block_area
    values: tuple
    base: AttentionConfig
    seeds: tuple[int, ...]
    perturbation: str = "none"
    input_scale: float = 1.0
    golden_inputs: str = "format"  # format | carrier

    def __post_init__(self) -> None:
        if self.axis not in ("precision", "seq_len", "block_area"):
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            raise ValueError("values must be nonempty")
        if self.axis == "precision":
            names = [v.name for v in self.values]
            if len(set(names)) != len(names):
                raise ValueError("precision values must be unique formats")
        elif any(a >= b for a, b in zip(self.values, self.values[1:])):
            raise ValueError("values must be strictly increasing")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.golden_inputs not in ("format", "carrier"):
            raise ValueError("golden_inputs must be 'format' or 'carrier'")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: object
    seed: int
    variant: str
    format: str
    block_rows: int
    block_cols: int
    report: DeviationReport
    vs: str  # golden | paired


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow]
    metadata: dict[str, Any] = field(default_factory=dict)


def _draw_carrier(n: int, d: int, seed: int, scale: float, distribution: str):
    """Q, K, V carrier draws on streams 0/1/2 of the seed."""
    out = []
    for stream in range(3):
        if distribution == "normal":
            z = backend.active.standard_normal(seed, stream, n * d)
        elif distribution == "uniform":
            z = 2.0 * backend.active.uniform01(seed, stream, n * d) - 1.0
        else:
            raise ValueError(f"unknown distribution {distribution!r}")
        out.append((scale * z).reshape(n, d))
    return out


def _golden_for(qc, kc, vc, qf, kf, vf, mode: str, carrier_acc: bool) -> Matrix:
    if mode == "carrier":
        mats = [Matrix(m, FP64) for m in (qc, kc, vc)]
    else:
        mats = [m.astype(FP64) for m in (qf, kf, vf)]
    return baseline_attention(*mats, FP64, carrier_acc)


def _parallel(fn: Callable, keys: list, threads: int) -> dict:
    """Apply fn over keys, optionally threaded; assembly order is by key."""
    if threads <= 1:
        return {k: fn(k) for k in keys}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        vals = pool.map(fn, keys)
        return dict(zip(keys, vals))


def run_precision_sweep(spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Figs. 3-4 protocol: both kernels at each format vs the FP64 golden,
    plus the direct flash-vs-baseline comparison."""
    if spec.axis != "precision":
        raise ValueError("spec.axis must be 'precision'")
    base = spec.base
    n, d = base.seq_len, base.head_dim
    geom = base.geometry.clamped(n)

    def one_seed(seed: int) -> list[SweepRow]:
        qc, kc, vc = _draw_carrier(n, d, seed, spec.input_scale, base.distribution)
        rows = []
        golden_carrier = None
        if spec.golden_inputs == "carrier":
            golden_carrier = _golden_for(qc, kc, vc, None, None, None, "carrier",
                                         base.accumulate_in_carrier)
        for fmt in spec.values:
            qf, kf, vf = (Matrix(m, fmt) for m in (qc, kc, vc))
            if spec.golden_inputs == "carrier":
                golden = golden_carrier
            else:
                golden = _golden_for(qc, kc, vc, qf, kf, vf, "format",
                                     base.accumulate_in_carrier)
            b = baseline_attention(qf, kf, vf, fmt, base.accumulate_in_carrier)
            f = flash_attention(qf, kf, vf, fmt, geom, base.accumulate_in_carrier)
            ctx = {"axis": "precision", "value": fmt.name, "seed": seed}
            rows.append(SweepRow("precision", fmt.name, seed, "baseline", fmt.name,
                                 0, 0, golden_deviation(b, golden, ctx), "golden"))
            rows.append(SweepRow("precision", fmt.name, seed, "flash", fmt.name,
                                 geom.block_rows, geom.block_cols,
                                 golden_deviation(f, golden, ctx), "golden"))
            rows.append(SweepRow("precision", fmt.name, seed, "flash", fmt.name,
                                 geom.block_rows, geom.block_cols,
                                 golden_deviation(f, b, ctx), "paired"))
        return rows

    per_seed = _parallel(one_seed, list(spec.seeds), threads)
    rows = []
    for fmt in spec.values:
        for seed in spec.seeds:
            rows.extend(r for r in per_seed[seed] if r.value == fmt.name)
    return SweepResult(spec, rows, _meta(spec, geom))


def run_seqlen_sweep(spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Fig. 5 protocol: flash vs baseline directly, geometry held fixed."""
    if spec.axis != "seq_len":
        raise ValueError("spec.axis must be 'seq_len'")
    base = spec.base
    fmt = base.format
    geom = base.geometry

    def one_point(key) -> list[SweepRow]:
        n, seed = key
        if n < 1:
            raise ValueError("seq_len values must be >= 1")
        g = geom.clamped(n)
        qc, kc, vc = _draw_carrier(n, base.head_dim, seed, spec.input_scale, base.distribution)
        qf, kf, vf = (Matrix(m, fmt) for m in (qc, kc, vc))
        b = baseline_attention(qf, kf, vf, fmt, base.accumulate_in_carrier)
        f = flash_attention(qf, kf, vf, fmt, geom, base.accumulate_in_carrier)
        ctx = {"axis": "seq_len", "value": n, "seed": seed}
        return [SweepRow("seq_len", n, seed, "flash", fmt.name,
                         g.block_rows, g.block_cols,
                         golden_deviation(f, b, ctx), "paired")]

    keys = [(n, seed) for n in spec.values for seed in spec.seeds]
    per_key = _parallel(one_point, keys, threads)
    rows = []
    for key in keys:
        rows.extend(per_key[key])
    return SweepResult(spec, rows, _meta(spec, geom))


def run_block_sweep(spec: SweepSpec, threads: int = 1) -> SweepResult:
    """Fig. 6 protocol: flash vs golden across block areas at four formats.

    values are area factors applied to the base geometry via scale_area,
    then the spec's perturbation; the row value is the resulting block area.
    Geometry exceeding the sequence is clamped and flagged in metadata.
    """
    if spec.axis != "block_area":
        raise ValueError("spec.axis must be 'block_area'")
    base = spec.base
    n, d = base.seq_len, base.head_dim
    geoms = []
    clamped = []
    for factor in spec.values:
        g = perturb_geometry(base.geometry, "scale_area", factor)
        if spec.perturbation != "none":
            g = perturb_geometry(g, spec.perturbation)
        gc = g.clamped(n)
        if gc != g:
            clamped.append({"factor": factor, "requested": [g.block_rows, g.block_cols],
                            "clamped": [gc.block_rows, gc.block_cols]})
        geoms.append(gc)

    def one_seed(seed: int) -> list[SweepRow]:
        qc, kc, vc = _draw_carrier(n, d, seed, spec.input_scale, base.distribution)
        rows = []
        for fmt in BLOCK_SWEEP_FORMATS:
            qf, kf, vf = (Matrix(m, fmt) for m in (qc, kc, vc))
            golden = _golden_for(qc, kc, vc, qf, kf, vf, spec.golden_inputs,
                                 base.accumulate_in_carrier)
            for factor, g in zip(spec.values, geoms):
                f = flash_attention(qf, kf, vf, fmt, g, base.accumulate_in_carrier)
                ctx = {"axis": "block_area", "factor": factor, "seed": seed,
                       "perturbation": spec.perturbation}
                rows.append(SweepRow("block_area", g.area, seed, "flash", fmt.name,
                                     g.block_rows, g.block_cols,
                                     golden_deviation(f, golden, ctx), "golden"))
        return rows

    per_seed = _parallel(one_seed, list(spec.seeds), threads)
    rows = []
    for i, factor in enumerate(spec.values):
        for seed in spec.seeds:
            for fmt in BLOCK_SWEEP_FORMATS:
                rows.extend(
                    r for r in per_seed[seed]
                    if r.format == fmt.name and r.report.context.get("factor") == factor
                )
    meta = _meta(spec, base.geometry)
    meta["clamped_points"] = clamped
    return SweepResult(spec, rows, meta)


def _meta(spec: SweepSpec, geom: BlockGeometry) -> dict[str, Any]:
    return {
        "axis": spec.axis,
        "values": [v.name if isinstance(v, FloatFormat) else v for v in spec.values],
        "seeds": list(spec.seeds),
        "perturbation": spec.perturbation,
        "input_scale": spec.input_scale,
        "distribution": spec.base.distribution,
        "golden_inputs": spec.golden_inputs,
        "accumulate_in_carrier": spec.base.accumulate_in_carrier,
        "seq_len": spec.base.seq_len,
        "head_dim": spec.base.head_dim,
        "base_geometry": [geom.block_rows, geom.block_cols],
    }


def summarize(result: SweepResult) -> dict[str, Any]:
    """Medians and quartiles of max_abs_diff per (value, variant, format, vs)."""
    groups: dict[tuple, list[float]] = {}
    for r in result.rows:
        groups.setdefault((str(r.value), r.variant, r.format, r.vs), []).append(
            r.report.max_abs_diff
        )
    points = []
    for key in sorted(groups):
        vals = np.array(groups[key])
        points.append({
            "value": key[0], "variant": key[1], "format": key[2], "vs": key[3],
            "n_seeds": int(vals.size),
            "median_max_abs_diff": float(np.median(vals)),
            "q1": float(np.percentile(vals, 25)),
            "q3": float(np.percentile(vals, 75)),
        })
    return {"metadata": result.metadata, "axis_points": points}
