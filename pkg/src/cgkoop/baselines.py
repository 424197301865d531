"""Spatial-interpolation baseline and shared evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, ShapeError

METRICS_SCHEMA = 1


@dataclass
class MetricReport:
    method: str
    da_mse: float
    forecast_mse: float = None
    per_step_mse: np.ndarray = field(default=None)
    wall_time_s: float = 0.0

    def to_json(self):
        return {
            "schema": METRICS_SCHEMA,
            "method": self.method,
            "da_mse": self.da_mse,
            "forecast_mse": self.forecast_mse,
            "per_step_mse": None if self.per_step_mse is None
            else [float(v) for v in self.per_step_mse],
            "wall_time_s": self.wall_time_s,
        }

    @staticmethod
    def from_json(obj):
        if obj.get("schema") != METRICS_SCHEMA:
            raise ConfigError(f"unsupported metrics schema {obj.get('schema')}")
        per_step = obj.get("per_step_mse")
        return MetricReport(
            method=obj["method"], da_mse=obj["da_mse"],
            forecast_mse=obj.get("forecast_mse"),
            per_step_mse=None if per_step is None else np.asarray(per_step),
            wall_time_s=obj.get("wall_time_s", 0.0))

    def csv_row(self):
        fmse = "" if self.forecast_mse is None else repr(float(self.forecast_mse))
        return f"{self.method},{self.da_mse!r},{fmse},{self.wall_time_s!r}"

    @staticmethod
    def csv_header():
        return "method,da_mse,forecast_mse,wall_time_s"


def write_metrics(path, report):
    with open(path, "w") as f:
        f.write(MetricReport.csv_header() + "\n" + report.csv_row() + "\n")
    with open(str(path) + ".json", "w") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)


def interpolate_field(u1, obs_indices, d, l_x=1.0):
    """Periodic cubic spline through the observed points, on all d points."""
    u1 = np.asarray(u1, dtype=np.float64)
    obs = np.asarray(obs_indices)
    if len(obs) < 2:
        raise ConfigError("interpolation needs at least two observed points")
    dx = l_x / d
    x_obs = obs * dx
    x_ext = np.append(x_obs, x_obs[0] + l_x)
    y_ext = np.append(u1, u1[0])
    spline = CubicSpline(x_ext, y_ext, bc_type="periodic")
    x_all = np.arange(d) * dx
    # wrap evaluation points below the first knot into the period
    out = spline(np.where(x_all < x_obs[0], x_all + l_x, x_all))
    out[obs] = u1  # observed entries are reproduced exactly
    return out


def mse(truth, estimate):
    """Mean squared error over all entries of two same-shape tensors."""
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise ShapeError(f"mse shapes differ: {truth.shape} vs {estimate.shape}")
    diff = truth - estimate
    return float(np.mean(diff * diff))


def evaluate(method, truth_unobs, da_estimates, warmup,
             forecast_truth=None, forecast_pred=None, wall_time_s=0.0):
    """Standard report: DA MSE on unobserved dims with the first ``warmup``
    steps excluded, plus one-step forecast MSE on the full state when given.

    truth_unobs and da_estimates have shape (R, T, d2); forecast arrays,
    when present, are (R, S, d) pairs of one-step targets and predictions.
    """
    truth_unobs = np.asarray(truth_unobs, dtype=np.float64)
    da_estimates = np.asarray(da_estimates, dtype=np.float64)
    if truth_unobs.shape != da_estimates.shape:
        raise ShapeError(f"evaluate shapes differ: {truth_unobs.shape} vs "
                         f"{da_estimates.shape}")
    if warmup >= truth_unobs.shape[1]:
        raise ConfigError(f"warmup {warmup} leaves no evaluation steps")
    kept_t = truth_unobs[:, warmup:, :]
    kept_e = da_estimates[:, warmup:, :]
    da = mse(kept_t, kept_e)
    per_step = np.mean((kept_t - kept_e) ** 2, axis=(0, 2))
    forecast = None
    if forecast_truth is not None:
        forecast = mse(forecast_truth, forecast_pred)
    return MetricReport(method=method, da_mse=da, forecast_mse=forecast,
                        per_step_mse=per_step, wall_time_s=wall_time_s)
