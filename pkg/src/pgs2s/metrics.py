"""Accuracy measures for H-step prediction sequences.

SMAPE here is ``mean(|y - yhat| / |y + yhat|)`` without the usual factor
of two.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ContractError, MetricUndefinedError


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ContractError(f"shape mismatch {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ContractError("empty prediction sequence")
    return y, yhat


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def mape(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    zero = np.flatnonzero(y.reshape(-1) == 0)
    if zero.size:
        raise MetricUndefinedError(f"MAPE undefined: y is zero at step {int(zero[0]) + 1}")
    return float(np.mean(np.abs((y - yhat) / y)))


def smape(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    den = np.abs(y + yhat)
    zero = np.flatnonzero(den.reshape(-1) == 0)
    if zero.size:
        raise MetricUndefinedError(f"SMAPE undefined: y + yhat is zero at step {int(zero[0]) + 1}")
    return float(np.mean(np.abs(y - yhat) / den))


@dataclass
class MetricReport:
    rmse: float
    mape: float
    smape: float
    per_step_rmse: np.ndarray
    n_samples: int

    def to_dict(self):
        d = asdict(self)
        d["per_step_rmse"] = [float(v) for v in self.per_step_rmse]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["rmse"], d["mape"], d["smape"], np.asarray(d["per_step_rmse"]), d["n_samples"])


def evaluate(Y, Yhat) -> MetricReport:
    """Aggregate over (n, H) arrays of targets and predictions.

    MAPE and SMAPE are unweighted means over samples of the per-sequence
    values. RMSE is averaged over samples in the MSE domain, i.e.
    ``sqrt(mean_i MSE_i)``, so ``mean(per_step_rmse**2) == rmse**2``.
    """
    Y, Yhat = _pair(Y, Yhat)
    if Y.ndim == 1:
        Y, Yhat = Y[None], Yhat[None]
    err = Y - Yhat
    if np.any(Y == 0):
        i, k = np.argwhere(Y == 0)[0]
        raise MetricUndefinedError(f"MAPE undefined: sample {i}, step {k + 1} has y == 0")
    den = np.abs(Y + Yhat)
    if np.any(den == 0):
        i, k = np.argwhere(den == 0)[0]
        raise MetricUndefinedError(f"SMAPE undefined: sample {i}, step {k + 1} has y + yhat == 0")
    per_sample_mse = np.mean(err ** 2, axis=1)
    report = MetricReport(
        rmse=float(np.sqrt(np.mean(per_sample_mse))),
        mape=float(np.mean(np.mean(np.abs(err / Y), axis=1))),
        smape=float(np.mean(np.mean(np.abs(err) / den, axis=1))),
        per_step_rmse=np.sqrt(np.mean(err ** 2, axis=0)),
        n_samples=int(Y.shape[0]),
    )
    if not all(np.isfinite([report.rmse, report.mape, report.smape])):
        raise MetricUndefinedError("non-finite metric value")
    return report
