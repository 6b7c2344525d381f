"""Trace and summary emission.

Traces are line-delimited JSON, one record per training step, with fixed
field names (step, loss, layer, k, S, macs_sparse, macs_dense) where layer,
k, and S are per-layer arrays, plus a phase marker.  Trace lines carry no
wall-time fields, so two runs with the same config and seed produce
byte-identical traces; summaries carry the timing and are compared with the
time fields stripped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .train import RunReport, StepMetrics

TRACE_FIELDS = ("step", "loss", "layer", "k", "S", "macs_sparse", "macs_dense", "phase")

# Keys holding wall-clock measurements; excluded from determinism comparisons.
TIME_KEY_MARKERS = ("time", "elapsed")


def trace_record(sm: StepMetrics) -> dict:
    return {
        "step": sm.step,
        "loss": sm.loss,
        "layer": list(range(1, len(sm.k) + 1)),
        "k": list(sm.k),
        "S": list(sm.s),
        "macs_sparse": sm.macs_sparse,
        "macs_dense": sm.macs_dense,
        "phase": sm.phase,
    }


class TraceWriter:
    """Streams one JSON line per step to an open text file."""

    def __init__(self, fh):
        self.fh = fh

    def __call__(self, sm: StepMetrics) -> None:
        self.fh.write(json.dumps(trace_record(sm), sort_keys=True))
        self.fh.write("\n")


SUMMARY_REQUIRED = {
    "engine": str,
    "mode": str,
    "seed": int,
    "layer_widths": list,
    "accuracy": float,
    "mean_backprop_ratio": float,
    "acceleration_analytic": float,
    "epoch_time_mean_s": float,
    "epoch_times_s": list,
    "steps": int,
    "pretrain_steps": int,
    "final_loss": float,
}

COMPARE_ROW_REQUIRED = {
    "engine": str,
    "accuracy": float,
    "mean_backprop_ratio": float,
    "acceleration_analytic": float,
    "epoch_time_mean_s": float,
}

SWEEP_ROW_REQUIRED = {
    "s_min": float,
    "s_max": float,
    "zeta": float,
    "runs": int,
    "accuracy_mean": float,
    "accuracy_std": float,
    "ratio_mean": float,
    "ratio_std": float,
}


class SchemaError(ValueError):
    pass


def _check_fields(obj: dict, required: dict, where: str) -> None:
    for key, typ in required.items():
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
        if not isinstance(obj[key], typ):
            raise SchemaError(
                f"{where}: field {key!r} has type {type(obj[key]).__name__}, "
                f"expected {typ.__name__}"
            )


def validate_summary(obj: dict) -> None:
    _check_fields(obj, SUMMARY_REQUIRED, "summary")


def validate_compare(obj: dict) -> None:
    if "rows" not in obj or not isinstance(obj["rows"], list):
        raise SchemaError("compare report: missing rows")
    if "init_sha256" not in obj:
        raise SchemaError("compare report: missing init_sha256")
    for i, row in enumerate(obj["rows"]):
        if "error" in row:
            if "engine" not in row:
                raise SchemaError(f"compare row {i}: failed row must name its engine")
            continue
        _check_fields(row, COMPARE_ROW_REQUIRED, f"compare row {i}")


def validate_sweep(obj: dict) -> None:
    if "rows" not in obj or not isinstance(obj["rows"], list):
        raise SchemaError("sweep report: missing rows")
    for i, row in enumerate(obj["rows"]):
        _check_fields(row, SWEEP_ROW_REQUIRED, f"sweep row {i}")


def summary_dict(report: RunReport) -> dict:
    out = {
        "engine": report.engine,
        "mode": report.mode,
        "seed": report.seed,
        "layer_widths": report.layer_widths,
        "accuracy": report.final_accuracy,
        "mean_backprop_ratio": report.mean_backprop_ratio,
        "acceleration_analytic": report.acceleration_analytic,
        "epoch_time_mean_s": report.epoch_time_mean_s,
        "epoch_times_s": report.epoch_times_s,
        "steps": len(report.steps),
        "pretrain_steps": report.pretrain_steps,
        "final_loss": report.final_loss,
        "s_mean_per_epoch": report.s_mean_per_epoch,
    }
    validate_summary(out)
    return out


def write_json(path, obj: dict) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def strip_time_fields(obj):
    """Recursively drop wall-clock keys; used for determinism comparisons."""
    if isinstance(obj, dict):
        return {
            k: strip_time_fields(v)
            for k, v in obj.items()
            if not any(marker in k.lower() for marker in TIME_KEY_MARKERS)
        }
    if isinstance(obj, list):
        return [strip_time_fields(v) for v in obj]
    return obj
