"""CSV and JSON file formats used by the command-line tools.

Dataset CSV: header ``y,x1,...,xP``; the intercept column is added when
reading and never stored.  Floats in CSV files are written with 17
significant digits; JSON uses Python's shortest exact representation.
Both round-trip 64-bit values exactly.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .core import Component, Dataset, MixtureModel

SCHEMA_DATASET = "robmix.dataset/1"
SCHEMA_TRUTH = "robmix.truth/1"
SCHEMA_FIT = "robmix.fit/1"
SCHEMA_REPORT = "robmix.report/1"
SCHEMA_MANIFEST = "robmix.manifest/1"


class DataFormatError(ValueError):
    """Malformed input file; message carries the offending line number."""


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_dataset_csv(path, data: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{j}" for j in range(1, data.p + 1)])
        for i in range(data.n):
            writer.writerow([_fmt(data.y[i])] + [_fmt(v) for v in data.x[i, 1:]])


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: line 1: empty file") from None
        header = [h.strip() for h in header]
        p = len(header) - 1
        if not header or header[0] != "y" or \
                header[1:] != [f"x{j}" for j in range(1, p + 1)]:
            raise DataFormatError(
                f"{path}: line 1: expected header 'y,x1,...,xP', got {header!r}"
            )
        ys, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 1:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {p + 1} fields, got {len(row)}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}: line {lineno}: non-finite value")
            ys.append(vals[0])
            rows.append(vals[1:])
    if not ys:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset.from_covariates(np.asarray(ys), np.asarray(rows))


def _json_ready(obj):
    """Recursively convert numpy scalars/arrays and NaN for JSON emission."""
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_json_ready(payload), fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def model_to_dict(model: MixtureModel) -> dict:
    return {
        "components": [
            {"pi": c.pi, "beta": list(c.beta), "sigma2": c.sigma2}
            for c in model.components
        ]
    }


def model_from_dict(payload: dict) -> MixtureModel:
    return MixtureModel(tuple(
        Component(pi=c["pi"], beta=np.asarray(c["beta"], dtype=float),
                  sigma2=c["sigma2"])
        for c in payload["components"]
    ))


def write_truth_json(path, sim, spec) -> None:
    write_json(path, {
        "schema": SCHEMA_TRUTH,
        "scenario": {
            "model": spec.model,
            "scenario": spec.scenario,
            "n": spec.n,
            "priors": list(spec.priors),
            "seed": spec.seed,
        },
        "true_z": [int(z) for z in sim.true_z],
        "true_outlier": [bool(b) for b in sim.true_outlier],
        "true_model": model_to_dict(sim.true_model),
    })


def write_fit_json(path, result, cfg) -> None:
    write_json(path, {
        "schema": SCHEMA_FIT,
        "solver": cfg.solver.value,
        "k": cfg.k,
        "seed": cfg.seed,
        "converged": result.converged,
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "objective": result.objective,
        "n_restarts": result.n_restarts,
        "model": model_to_dict(result.model),
        "outliers": [int(i) for i in result.outliers],
    })


def write_assignments_csv(path, result) -> None:
    """Per-observation table: 1-based index, hard assignment, posterior
    columns, outlier flag."""
    w = result.posterior.w
    outliers = set(int(i) for i in result.outliers)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "assignment"]
                        + [f"posterior_{k}" for k in range(1, w.shape[1] + 1)]
                        + ["outlier"])
        for i in range(w.shape[0]):
            writer.writerow(
                [i + 1, int(result.partition.z[i])]
                + [_fmt(v) for v in w[i]]
                + [int((i + 1) in outliers)]
            )


def write_trace_csv(path, result) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective"])
        for i, v in enumerate(result.trace, start=1):
            writer.writerow([i, _fmt(v)])


def write_report_csv(path, report) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "truth", "bias", "mse"])
        for name, t, b, m in zip(report.names, report.truth, report.bias, report.mse):
            writer.writerow([name, _fmt(t), _fmt(b), _fmt(m)])


def report_to_dict(report, spec, cfg, reps: int) -> dict:
    return {
        "schema": SCHEMA_REPORT,
        "scenario": {
            "model": spec.model,
            "scenario": spec.scenario,
            "n": spec.n,
            "priors": list(spec.priors),
            "seed": spec.seed,
        },
        "config": {
            "solver": cfg.solver.value,
            "k": cfg.k,
            "n_starts": cfg.n_starts,
            "max_iter": cfg.max_iter,
            "tol": cfg.tol,
            "outlier_cutoff": cfg.outlier_cutoff,
            "seed": cfg.seed,
        },
        "n_reps": reps,
        "n_failed": report.n_failed,
        "rows": [
            {"parameter": n, "truth": t, "bias": b, "mse": m}
            for n, t, b, m in zip(report.names, report.truth, report.bias, report.mse)
        ],
        "outlier_precision": report.outlier_precision,
        "outlier_recall": report.outlier_recall,
        "per_rep_precision": report.per_rep_precision,
        "per_rep_recall": report.per_rep_recall,
    }
