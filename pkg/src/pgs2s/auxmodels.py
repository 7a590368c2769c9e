"""Auxiliary forecasters for the model pool and the forecast cache.

Both models use the direct multi-output strategy: one call maps an
(L, m) window to all H future values. They work in scaled units; the
:class:`ForecastCube` stores their predictions in original units.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from .data import ScalerParams, WindowedDataset
from .errors import ContractError, DimensionError, DivergenceError, NumericError
from .numcore import Adam, ParamBlock, check_finite_grads, make_rng, sigmoid, uniform_init

log = logging.getLogger(__name__)


def _flatten(windows) -> np.ndarray:
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    return w.reshape(w.shape[0], -1)


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


# ---------------------------------------------------------------- MSVR

def msvr_objective(beta, bias, K, Y, C: float, eps: float) -> float:
    """Primal objective 1/2 sum_j beta_j' K beta_j + C sum_i L(||e_i||),
    L(u) = (u - eps)^2 for u > eps else 0."""
    E = Y - K @ beta - bias
    u = np.sqrt(np.sum(E * E, axis=1))
    loss = np.where(u > eps, (u - eps) ** 2, 0.0)
    return float(0.5 * np.sum(beta * (K @ beta)) + C * np.sum(loss))


def _weights(u, C, eps):
    a = np.zeros_like(u)
    sv = u > eps
    a[sv] = 2.0 * C * (u[sv] - eps) / u[sv]
    return a


def msvr_objective_grad(beta, bias, K, Y, C: float, eps: float):
    """Analytic gradient of :func:`msvr_objective` w.r.t. (beta, bias)."""
    E = Y - K @ beta - bias
    u = np.sqrt(np.sum(E * E, axis=1))
    aE = _weights(u, C, eps)[:, None] * E
    return K @ (beta - aE), -aE.sum(axis=0)


def irwls_direction(beta, bias, K, Y, C: float, eps: float):
    """Weighted least-squares solution restricted to the support set.

    Returns the proposed (beta, bias); the IRWLS search direction is the
    difference to the current iterate.
    """
    E = Y - K @ beta - bias
    u = np.sqrt(np.sum(E * E, axis=1))
    a = _weights(u, C, eps)
    sv = np.flatnonzero(a > 0)
    new_beta = np.zeros_like(beta)
    if sv.size == 0:
        return new_beta, bias.copy()
    Ks = K[np.ix_(sv, sv)]
    asv = a[sv]
    n = sv.size
    M = np.empty((n + 1, n + 1))
    M[:n, :n] = Ks + np.diag(1.0 / asv)
    M[:n, n] = 1.0
    M[n, :n] = asv @ Ks
    M[n, n] = asv.sum()
    rhs = np.vstack([Y[sv], asv @ Y[sv]])
    try:
        sol = lu_solve(lu_factor(M, check_finite=True), rhs)
    except (LinAlgError, ValueError) as exc:
        raise NumericError(f"singular regularised kernel system: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise NumericError("singular regularised kernel system (non-finite solution)")
    new_beta[sv] = sol[:n]
    return new_beta, sol[n]


@dataclass
class MsvrModel:
    gamma_k: float
    C: float
    eps: float
    coef: np.ndarray
    bias: np.ndarray
    support_inputs: np.ndarray
    objective_trace: list = field(default_factory=list)

    name = "MSVR"

    @property
    def H(self) -> int:
        return self.coef.shape[1]

    def predict(self, windows) -> np.ndarray:
        X = _flatten(windows)
        if X.shape[1] != self.support_inputs.shape[1]:
            raise DimensionError(f"window size {X.shape[1]} != training size {self.support_inputs.shape[1]}")
        out = np.empty((X.shape[0], self.H))
        for lo in range(0, X.shape[0], 2048):
            Kx = rbf_kernel(X[lo:lo + 2048], self.support_inputs, self.gamma_k)
            out[lo:lo + 2048] = Kx @ self.coef + self.bias
        return out

    def arrays(self) -> dict:
        return {"coef": self.coef, "bias": self.bias, "support_inputs": self.support_inputs,
                "hyper": np.array([self.gamma_k, self.C, self.eps])}

    @classmethod
    def from_arrays(cls, d) -> "MsvrModel":
        g, C, e = d["hyper"]
        return cls(float(g), float(C), float(e), d["coef"], d["bias"], d["support_inputs"])


def train_msvr(train: WindowedDataset, C: float = 10.0, eps: float = 0.01, gamma_k: float | None = None,
               max_iter: int = 200, tol: float = 1e-6, max_samples: int | None = None) -> MsvrModel:
    """Fit a multi-output SVR by iterative re-weighted least squares.

    Each iteration solves the weighted system on the current support set
    and backtracks along the resulting direction until the primal
    objective does not increase. ``gamma_k`` defaults to 1/(L*m).
    ``max_samples`` keeps an evenly strided subset to bound the O(n^3)
    solves.
    """
    if len(train) == 0:
        raise ContractError("empty training set")
    if C <= 0 or eps < 0:
        raise ContractError("need C > 0 and eps >= 0")
    X = _flatten(train.inputs)
    Y = np.asarray(train.targets, dtype=np.float64)
    if max_samples is not None and len(X) > max_samples:
        idx = np.unique(np.linspace(0, len(X) - 1, max_samples).round().astype(int))
        X, Y = X[idx], Y[idx]
    if gamma_k is None:
        gamma_k = 1.0 / X.shape[1]
    if gamma_k <= 0:
        raise ContractError("gamma_k must be positive")
    K = rbf_kernel(X, X, gamma_k)
    beta = np.zeros_like(Y)
    bias = np.zeros(Y.shape[1])
    lp = msvr_objective(beta, bias, K, Y, C, eps)
    trace = [lp]
    for it in range(max_iter):
        nb, nbias = irwls_direction(beta, bias, K, Y, C, eps)
        d_beta, d_bias = nb - beta, nbias - bias
        step = 1.0
        accepted = False
        for _ in range(30):
            cb, cbias = beta + step * d_beta, bias + step * d_bias
            cand = msvr_objective(cb, cbias, K, Y, C, eps)
            if cand <= lp:
                accepted = True
                break
            step *= 0.1
        if not accepted:
            warnings.warn("MSVR line search exhausted without decrease; returning current iterate",
                          RuntimeWarning, stacklevel=2)
            break
        beta, bias = cb, cbias
        prev, lp = lp, cand
        trace.append(lp)
        if prev == 0.0 or (prev - lp) / abs(prev) < tol:
            break
    log.debug("msvr: %d iterations, objective %.6g", len(trace) - 1, lp)
    return MsvrModel(gamma_k, C, eps, beta, bias, X, trace)


# ---------------------------------------------------------------- MLP

class DirectMlpModel:
    """L*m -> hidden -> H feed-forward network."""

    name = "MLP"

    def __init__(self, n_in: int, n_hidden: int, H: int, activation: str = "sigmoid", rng=None):
        if n_hidden < 1:
            raise ContractError("hidden_size must be >= 1")
        if activation not in ("sigmoid", "tanh"):
            raise ContractError(f"unknown activation {activation!r}")
        self.activation = activation
        if rng is None:
            rng = make_rng(0, "mlp-init")
        self.W1 = ParamBlock("mlp.W1", uniform_init(rng, (n_hidden, n_in), n_in))
        self.b1 = ParamBlock("mlp.b1", np.zeros(n_hidden))
        self.W2 = ParamBlock("mlp.W2", uniform_init(rng, (H, n_hidden), n_hidden))
        self.b2 = ParamBlock("mlp.b2", np.zeros(H))
        self.best_epoch = 0
        self.history: list[tuple[float, float]] = []

    @property
    def H(self) -> int:
        return self.W2.shape[0]

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]

    def blocks(self) -> list[ParamBlock]:
        return [self.W1, self.b1, self.W2, self.b2]

    def _act(self, z):
        return sigmoid(z) if self.activation == "sigmoid" else np.tanh(z)

    def _forward(self, X):
        hid = self._act(X @ self.W1.value.T + self.b1.value)
        return hid @ self.W2.value.T + self.b2.value, hid

    def predict(self, windows) -> np.ndarray:
        X = _flatten(windows)
        if X.shape[1] != self.n_in:
            raise DimensionError(f"window size {X.shape[1]} != {self.n_in}")
        return self._forward(X)[0]

    def loss_and_grad(self, windows, targets) -> float:
        """Mean over samples and outputs of the squared error; grads written."""
        X = _flatten(windows)
        Y = np.asarray(targets, dtype=np.float64)
        out, hid = self._forward(X)
        err = out - Y
        loss = float(np.mean(err ** 2))
        d = 2.0 * err / err.size
        self.W2.grad[...] = d.T @ hid
        self.b2.grad[...] = d.sum(axis=0)
        dh = d @ self.W2.value
        dpre = dh * (hid * (1.0 - hid) if self.activation == "sigmoid" else 1.0 - hid * hid)
        self.W1.grad[...] = dpre.T @ X
        self.b1.grad[...] = dpre.sum(axis=0)
        return loss

    def arrays(self) -> dict:
        d = {b.name.split(".")[1]: b.value for b in self.blocks()}
        d["activation"] = np.array([0.0 if self.activation == "sigmoid" else 1.0])
        return d

    @classmethod
    def from_arrays(cls, d) -> "DirectMlpModel":
        act = "sigmoid" if float(d["activation"][0]) == 0.0 else "tanh"
        m = cls(d["W1"].shape[1], d["W1"].shape[0], d["W2"].shape[0], act)
        for b in m.blocks():
            b.value[...] = d[b.name.split(".")[1]]
        return m


def train_direct_mlp(train: WindowedDataset, val: WindowedDataset | None, hidden_size: int = 32,
                     lr: float = 1e-3, epochs: int = 200, patience: int = 20, batch_size: int = 32,
                     activation: str = "sigmoid", seed: int = 0) -> DirectMlpModel:
    """Adam on the mean squared error; keeps the best validation epoch."""
    n_in = train.inputs.shape[1] * train.inputs.shape[2]
    model = DirectMlpModel(n_in, hidden_size, train.H, activation, make_rng(seed, "mlp-init"))
    opt = Adam(lr=lr)
    shuffle = make_rng(seed, "mlp-shuffle")
    X = _flatten(train.inputs)
    Y = train.targets
    best = (np.inf, [b.value.copy() for b in model.blocks()], 0)
    since = 0
    for ep in range(1, epochs + 1):
        order = shuffle.permutation(len(X))
        tot = 0.0
        for lo in range(0, len(X), batch_size):
            idx = order[lo:lo + batch_size]
            loss = model.loss_and_grad(train.inputs[idx], Y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"MLP loss became non-finite at epoch {ep}")
            check_finite_grads(model.blocks(), f"mlp epoch {ep}")
            opt.step(model.blocks())
            tot += loss * len(idx)
        train_mse = tot / len(X)
        ref = val if val is not None and len(val) else train
        val_mse = float(np.mean((model.predict(ref.inputs) - ref.targets) ** 2))
        model.history.append((train_mse, val_mse))
        if val_mse < best[0]:
            best = (val_mse, [b.value.copy() for b in model.blocks()], ep)
            since = 0
        else:
            since += 1
            if since >= patience:
                break
    for b, v in zip(model.blocks(), best[1]):
        b.value[...] = v
    model.best_epoch = best[2]
    return model


# ---------------------------------------------------------------- cube

class NaiveModel:
    """Repeats the last observation; a reference, not a pool member."""
    name = "Naive"

    def __init__(self, H: int):
        self._H = H

    @property
    def H(self):
        return self._H

    def predict(self, windows) -> np.ndarray:
        w = np.asarray(windows, dtype=np.float64)
        if w.ndim == 2:
            w = w[None]
        return np.repeat(w[:, -1, :1], self._H, axis=1)


@dataclass
class ForecastCube:
    """Pool predictions (n_samples, n_pool, H) in original units.

    The last pool slot belongs to the decoder and stays NaN here; it is
    filled per episode during decoding.
    """
    values: np.ndarray
    names: list[str]

    @property
    def n_aux(self) -> int:
        return len(self.names) - 1

    @property
    def aux_values(self) -> np.ndarray:
        return self.values[:, :self.n_aux, :]

    def scaled(self, scaler: ScalerParams) -> np.ndarray:
        """Auxiliary slots in model units, ready to feed the decoder."""
        return scaler.apply_target(self.aux_values)

    def take(self, idx) -> "ForecastCube":
        return ForecastCube(self.values[idx], self.names)


def build_cube(pool, dataset: WindowedDataset, scaler: ScalerParams) -> ForecastCube:
    """Evaluate every auxiliary model on every window of ``dataset``."""
    n, H = len(dataset), dataset.H
    vals = np.full((n, len(pool) + 1, H), np.nan)
    for j, model in enumerate(pool):
        if model.H != H:
            raise DimensionError(f"pool model {model.name} predicts {model.H} steps, task needs {H}")
        vals[:, j, :] = scaler.invert_target(model.predict(dataset.inputs))
    if not np.all(np.isfinite(vals[:, :len(pool)])):
        raise NumericError("pool predictions contain non-finite values")
    return ForecastCube(vals, [m.name for m in pool] + ["Decoder"])
