"""Training loops: baseline regimes, alternating policy/RNN rounds, search."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import rlpolicy as rl
from .auxmodels import ForecastCube, build_cube, train_direct_mlp, train_msvr
from .data import PreparedData, WindowedDataset
from .errors import ConfigError, ContractError, NumericError, PGS2SError, SearchExhaustedError
from .metrics import MetricReport, evaluate
from .numcore import SGD, clip_grad_norm, digest, make_optimizer, make_rng
from .s2s import EncoderOutput, Regime, SeqParams, bptt, decode_sequence, encode

log = logging.getLogger(__name__)

REGIMES = ("FR", "TF", "SS", "PG", "TEACH_MSVR", "TEACH_MLP")


@dataclass
class TrainConfig:
    L: int = 50
    H: int = 12
    n_enc: int = 32
    n_dec: int = 32
    n_policy: int = 16
    cell: str = "lstm"
    regime: str = "PG"
    lr_policy: float = 0.5
    lr_rnn: float = 3e-3
    optimizer: str = "adam"
    alpha: float = 0.5
    beta: float = 0.05
    gamma: float = 0.9
    epsilon: float = 0.1
    batch_size: int = 32
    policy_epochs: int = 10
    rnn_epochs: int = 2
    max_rounds: int = 15
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    ss_p0: float = 1.0
    ss_pmin: float = 0.05
    sample_actions: bool = True
    exclude_explored: bool = False
    clip_norm: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for k in ("L", "H", "n_enc", "n_dec", "n_policy", "batch_size", "policy_epochs",
                  "rnn_epochs", "epochs"):
            if int(getattr(self, k)) < 1:
                raise ConfigError(f"{k} must be >= 1")
        for k in ("max_rounds", "patience"):
            if int(getattr(self, k)) < 0:
                raise ConfigError(f"{k} must be >= 0")
        if self.cell not in ("lstm", "ernn", "gru"):
            raise ConfigError(f"cell must be lstm, ernn or gru, not {self.cell!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, not {self.regime!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be adam or sgd")
        if self.n_dec != self.n_enc:
            raise ConfigError("n_dec must equal n_enc (decoder starts from the encoder state)")
        if not (0 <= self.ss_pmin <= 1 and 0 <= self.ss_p0 <= 1):
            raise ConfigError("SS probabilities must lie in [0, 1]")
        if self.lr_policy <= 0 or self.lr_rnn <= 0:
            raise ConfigError("learning rates must be positive")
        try:
            self.reward_config()
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    def reward_config(self) -> rl.RewardConfig:
        return rl.RewardConfig(self.alpha, self.beta, self.gamma, self.epsilon)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown TrainConfig key(s): {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            typ = type(getattr(cls(), k))
            try:
                kw[k] = typ(v) if typ is not bool else (v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes"))
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {k}: {v!r}") from None
        return cls(**kw)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    @property
    def teacher_name(self) -> str | None:
        return self.regime.split("_", 1)[1] if self.regime.startswith("TEACH_") else None


def ss_probability(config: TrainConfig, epoch: int) -> float:
    """Linear decay from ss_p0 at epoch 0 to ss_pmin at the last epoch."""
    if config.epochs <= 1:
        return config.ss_p0
    frac = min(max(epoch, 0), config.epochs - 1) / (config.epochs - 1)
    return config.ss_p0 + (config.ss_pmin - config.ss_p0) * frac


# ---------------------------------------------------------------- task bundle

@dataclass
class TaskData:
    """Prepared splits plus (optionally) the pool forecast cubes per split."""
    prepared: PreparedData
    cubes: dict[str, ForecastCube] | None = None

    @property
    def scaler(self):
        return self.prepared.scaler

    def split(self, name: str) -> WindowedDataset:
        return self.prepared.split(name)

    def aux(self, name: str):
        if self.cubes is None:
            return None
        return self.cubes[name].scaled(self.scaler)

    @property
    def pool_names(self) -> list[str]:
        return self.cubes["train"].names if self.cubes else []

    def original_targets(self, name: str) -> np.ndarray:
        ds = self.split(name)
        y = self.prepared.series.values
        idx = ds.anchor[:, None] + 1 + np.arange(ds.H)[None, :]
        return y[idx]


def make_task(prepared: PreparedData, pool=None) -> TaskData:
    cubes = None
    if pool:
        cubes = {s: build_cube(pool, prepared.split(s), prepared.scaler) for s in ("train", "val", "test")}
    return TaskData(prepared, cubes)


def init_seq_params(config: TrainConfig, m: int) -> SeqParams:
    """Deterministic in (seed, architecture) only, so every regime starts alike."""
    return SeqParams.init(config.cell, m, config.n_enc, config.n_dec, make_rng(config.seed, "seq-init"))


def init_policy(config: TrainConfig, n_actions: int) -> rl.PolicyParams:
    return rl.PolicyParams.init(config.n_dec, config.n_policy, n_actions, make_rng(config.seed, "policy-init"))


# ---------------------------------------------------------------- evaluation

def _regime_kwargs(config: TrainConfig, task: TaskData, split: str, policy=None, idx=None):
    regime = config.regime
    kw: dict = {}
    if regime == "PG":
        aux = task.aux(split)
        kw["aux"] = aux if idx is None else aux[idx]
        kw["selector"] = rl.make_selector(policy, 0.0, None, "eval")
        return Regime.PG, kw
    if regime.startswith("TEACH_"):
        aux = task.aux(split)
        if aux is None:
            raise ContractError(f"{regime} needs the pool forecast cube")
        try:
            kw["teacher"] = task.pool_names.index(config.teacher_name)
        except ValueError:
            raise ConfigError(f"pool has no model named {config.teacher_name!r}") from None
        kw["aux"] = aux if idx is None else aux[idx]
        return Regime.TEACH, kw
    return Regime(regime), kw


def predict_split(seq: SeqParams, config: TrainConfig, task: TaskData, split: str, policy=None):
    """Test-time decoding of a whole split; returns the DecodeResult."""
    ds = task.split(split)
    regime, kw = _regime_kwargs(config, task, split, policy)
    enc = encode(seq, ds.inputs)
    return decode_sequence(seq, enc, ds.last_observed, ds.H, regime, training=False, **kw)


def evaluate_split(seq: SeqParams, config: TrainConfig, task: TaskData, split: str,
                   policy=None) -> tuple[MetricReport, object]:
    res = predict_split(seq, config, task, split, policy)
    yhat = task.scaler.invert_target(res.predictions)
    return evaluate(task.original_targets(split), yhat), res


# ---------------------------------------------------------------- baselines

@dataclass
class TrainResult:
    seq: SeqParams
    policy: rl.PolicyParams | None
    config: TrainConfig
    history: list = field(default_factory=list)
    logs: list = field(default_factory=list)
    best_index: int = 0
    best_val_rmse: float = math.inf


def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _rnn_step(seq, opt, config, X, Y, regime, **kw):
    res = bptt(seq, X, Y, regime, **kw)
    if not math.isfinite(res.loss):
        raise NumericError("non-finite training loss")
    if config.clip_norm:
        clip_grad_norm(seq.blocks(), config.clip_norm)
    opt.step(seq.blocks())
    return res.loss


def train_baseline(config: TrainConfig, task: TaskData, init: SeqParams | None = None) -> TrainResult:
    """Epoch loop on the sequence MSE under FR/TF/SS/TEACH_* feeding.

    Validation RMSE (original units, test-time feeding) drives early
    stopping; the best-validation parameters are returned.
    """
    if config.regime == "PG":
        raise ContractError("use train_pg for the PG regime")
    train = task.split("train")
    seq = init.copy() if init is not None else init_seq_params(config, train.m)
    opt = make_optimizer(config.optimizer, config.lr_rnn)
    shuffle = make_rng(config.seed, "shuffle")
    coin = make_rng(config.seed, "ss-coin")
    out = TrainResult(seq, None, config)
    best = seq.copy()
    since = 0
    for epoch in range(config.epochs):
        p = ss_probability(config, epoch)
        losses = []
        for idx in _batches(len(train), config.batch_size, shuffle):
            regime, kw = _regime_kwargs(config, task, "train", idx=idx)
            if regime is Regime.SS:
                kw.update(p=p, rng=coin)
            try:
                losses.append(_rnn_step(seq, opt, config, train.inputs[idx], train.targets[idx], regime, **kw))
            except NumericError as exc:
                raise NumericError(f"{config.regime} epoch {epoch}: {exc}") from exc
        val, _ = evaluate_split(seq, config, task, "val")
        out.history.append({"epoch": epoch, "p": p, "train_loss": float(np.mean(losses)),
                            "val_rmse": val.rmse})
        if val.rmse < out.best_val_rmse:
            out.best_val_rmse, out.best_index = val.rmse, epoch
            best = seq.copy()
            since = 0
        else:
            since += 1
            if config.patience and since >= config.patience:
                break
    seq.load_values(best)
    return out


# ---------------------------------------------------------------- PG

@dataclass
class RoundLog:
    round: int
    pool_rmse_train: dict
    pool_rmse_val: dict
    selection_train: list
    selection_val: list
    policy_return: float
    rnn_loss: float
    val_rmse: float
    seq_frozen_ok: bool
    policy_frozen_ok: bool
    seconds: float = 0.0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _pool_snapshot(seq, policy, config, task, split):
    """Pool RMSEs (original units) and greedy selection percentages."""
    res = predict_split(seq, config, task, split, policy)
    truth = task.original_targets(split)
    names = task.pool_names
    cube = task.cubes[split].aux_values
    pool = {n: float(np.sqrt(np.mean((cube[:, j] - truth) ** 2))) for j, n in enumerate(names[:-1])}
    dec = task.scaler.invert_target(res.predictions)
    pool[names[-1]] = float(np.sqrt(np.mean((dec - truth) ** 2)))
    sel = rl.selection_percentages(res.actions, len(names))
    rmse = evaluate(truth, dec).rmse
    return pool, sel.tolist(), rmse


def train_pg(config: TrainConfig, task: TaskData, init: SeqParams | None = None,
             policy_init: rl.PolicyParams | None = None,
             callback: Callable[[RoundLog], None] | None = None) -> TrainResult:
    """Alternate policy rounds (decoder frozen) and RNN rounds (policy frozen).

    Each round: encode the training set once, run ``policy_epochs`` passes
    of epsilon-greedy trajectory collection + REINFORCE ascent, then
    ``rnn_epochs`` passes of sequence-MSE descent with greedy policy
    feeding. Parameter digests are compared across each phase to prove the
    frozen side did not move. Stops on validation patience or
    ``max_rounds``; returns the best-validation parameters.
    """
    if task.cubes is None:
        raise ContractError("PG training needs a trained pool (forecast cubes)")
    if config.regime != "PG":
        config = config.with_(regime="PG")
    train = task.split("train")
    n_actions = len(task.pool_names)
    seq = init.copy() if init is not None else init_seq_params(config, train.m)
    policy = policy_init.copy() if policy_init is not None else init_policy(config, n_actions)
    if policy.n_actions != n_actions or policy.n_state != seq.n_dec:
        raise ContractError("policy shape does not match pool size / decoder width")
    rnn_opt = make_optimizer(config.optimizer, config.lr_rnn)
    pol_opt = SGD(config.lr_policy, ascent=True)
    shuffle = make_rng(config.seed, "shuffle")
    pshuffle = make_rng(config.seed, "policy-shuffle")
    explore = make_rng(config.seed, "explore")
    rcfg = config.reward_config()
    scale = task.scaler.target_span
    aux_train = task.aux("train")
    out = TrainResult(seq, policy, config)
    best_seq, best_pol = seq.copy(), policy.copy()
    if config.max_rounds == 0:
        return out
    pool_tr, _, _ = _pool_snapshot(seq, policy, config, task, "train")
    pool_va, _, val_rmse = _pool_snapshot(seq, policy, config, task, "val")
    out.best_val_rmse = val_rmse
    out.best_index = -1
    since = 0
    for r in range(config.max_rounds):
        t0 = time.perf_counter()
        # policy phase: decoder frozen
        seq_before = digest(seq.blocks())
        enc_all = encode(seq, train.inputs)
        rets = []
        for _ in range(config.policy_epochs):
            for idx in _batches(len(train), config.batch_size, pshuffle):
                traj = rl.collect_trajectories(policy, seq, enc_all.take(idx), train.last_observed[idx],
                                               aux_train[idx], train.targets[idx], rcfg, explore,
                                               scale, "train", config.sample_actions)
                rl.reinforce_gradient(policy, traj, rcfg.gamma, config.exclude_explored)
                pol_opt.step(policy.blocks())
                rets.append(float(np.mean(traj.total_reward(rcfg.gamma))))
        seq_ok = digest(seq.blocks()) == seq_before
        # RNN phase: policy frozen
        pol_before = digest(policy.blocks())
        selector = rl.make_selector(policy, 0.0, None, "eval")
        losses = []
        for _ in range(config.rnn_epochs):
            for idx in _batches(len(train), config.batch_size, shuffle):
                try:
                    losses.append(_rnn_step(seq, rnn_opt, config, train.inputs[idx], train.targets[idx],
                                            Regime.PG, aux=aux_train[idx], selector=selector))
                except NumericError as exc:
                    raise NumericError(f"PG round {r}: {exc}") from exc
        pol_ok = digest(policy.blocks()) == pol_before
        new_tr, sel_tr, _ = _pool_snapshot(seq, policy, config, task, "train")
        new_va, sel_va, val_rmse = _pool_snapshot(seq, policy, config, task, "val")
        entry = RoundLog(r, pool_tr, pool_va, sel_tr, sel_va, float(np.mean(rets)),
                         float(np.mean(losses)), val_rmse, seq_ok, pol_ok, time.perf_counter() - t0)
        out.logs.append(entry)
        if callback:
            callback(entry)
        log.info("round %d val_rmse=%.5g decoder-share(a1)=%.1f%%", r, val_rmse, sel_tr[0][-1])
        pool_tr, pool_va = new_tr, new_va
        if not (seq_ok and pol_ok):
            raise NumericError(f"asynchronous separation violated in round {r}")
        if val_rmse < out.best_val_rmse:
            out.best_val_rmse, out.best_index = val_rmse, r
            best_seq, best_pol = seq.copy(), policy.copy()
            since = 0
        else:
            since += 1
            if config.patience and since >= config.patience:
                break
    seq.load_values(best_seq)
    policy.load_values(best_pol)
    return out


def train(config: TrainConfig, task: TaskData, init: SeqParams | None = None) -> TrainResult:
    if config.regime == "PG":
        return train_pg(config, task, init)
    return train_baseline(config, task, init)


# ---------------------------------------------------------------- random search

class Uniform:
    def __init__(self, lo, hi):
        self.lo, self.hi = float(lo), float(hi)

    def sample(self, rng):
        return float(rng.uniform(self.lo, self.hi))


class LogUniform(Uniform):
    def sample(self, rng):
        return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))


class IntRange:
    def __init__(self, lo, hi):
        self.lo, self.hi = int(lo), int(hi)

    def sample(self, rng):
        return int(rng.integers(self.lo, self.hi + 1))


class Choice:
    def __init__(self, options):
        self.options = list(options)

    def sample(self, rng):
        return self.options[int(rng.integers(len(self.options)))]


@dataclass
class SearchResult:
    best: dict
    best_score: float
    trials: list

    @property
    def scores(self) -> list[float]:
        return [t["score"] for t in self.trials if t["ok"]]


def random_search(space: dict, budget: int, evaluate_fn: Callable[[dict], float], seed: int = 0) -> SearchResult:
    """Sample ``budget`` points from ``space`` and keep the lowest score.

    Failed trials (library errors) are logged in the trial table with
    ``ok=False``; if every trial fails :class:`SearchExhaustedError` is
    raised.
    """
    if budget < 1:
        raise ConfigError("search budget must be >= 1")
    rng = make_rng(seed, "search")
    trials = []
    for t in range(budget):
        params = {k: dist.sample(rng) for k, dist in space.items()}
        try:
            score = float(evaluate_fn(params))
            ok = math.isfinite(score)
            err = "" if ok else "non-finite score"
        except PGS2SError as exc:
            score, ok, err = math.inf, False, f"{type(exc).__name__}: {exc}"
        trials.append({"trial": t, "params": params, "score": score, "ok": ok, "error": err})
        log.info("search trial %d %s -> %s", t, params, score)
    good = [t for t in trials if t["ok"]]
    if not good:
        raise SearchExhaustedError(f"all {budget} search trials failed")
    best = min(good, key=lambda t: t["score"])
    return SearchResult(best["params"], best["score"], trials)


def search_train_config(base: TrainConfig, space: dict, budget: int, task: TaskData,
                        seed: int = 0) -> tuple[TrainConfig, SearchResult]:
    def objective(params):
        return train(base.with_(**params), task).best_val_rmse
    res = random_search(space, budget, objective, seed)
    return base.with_(**res.best), res


MSVR_SPACE = {"C": LogUniform(0.1, 100.0), "eps": LogUniform(1e-3, 3e-2), "gamma_scale": LogUniform(0.1, 10.0)}
MLP_SPACE = {"hidden_size": Choice([16, 32, 64]), "lr": LogUniform(1e-3, 1e-2)}


def _val_rmse(model, prepared: PreparedData) -> float:
    val = prepared.val
    yhat = prepared.scaler.invert_target(model.predict(val.inputs))
    ytrue = prepared.scaler.invert_target(val.targets)
    return float(np.sqrt(np.mean((yhat - ytrue) ** 2)))


def fit_pool(prepared: PreparedData, budget: int = 8, seed: int = 0, msvr_max_samples: int = 800,
             mlp_epochs: int = 150, mlp_patience: int = 15):
    """Random-search and fit the MSVR and MLP auxiliary models.

    Returns ``([msvr, mlp], {"MSVR": SearchResult, "MLP": SearchResult})``.
    """
    n_in = prepared.train.L * prepared.train.m

    def fit_msvr(p):
        return train_msvr(prepared.train, C=p["C"], eps=p["eps"], gamma_k=p["gamma_scale"] / n_in,
                          max_samples=msvr_max_samples)

    def fit_mlp(p):
        return train_direct_mlp(prepared.train, prepared.val, hidden_size=int(p["hidden_size"]), lr=p["lr"],
                                epochs=mlp_epochs, patience=mlp_patience, seed=seed)

    s_msvr = random_search(MSVR_SPACE, budget, lambda p: _val_rmse(fit_msvr(p), prepared), seed)
    s_mlp = random_search(MLP_SPACE, budget, lambda p: _val_rmse(fit_mlp(p), prepared), seed + 1)
    return [fit_msvr(s_msvr.best), fit_mlp(s_mlp.best)], {"MSVR": s_msvr, "MLP": s_mlp}
