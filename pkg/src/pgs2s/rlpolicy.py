"""Input-selection agent: policy network, rewards, trajectories, REINFORCE.

The policy maps the decoder hidden state s_k to a distribution over pool
members (auxiliary models first, the decoder itself last). Rewards blend
a rank term (how good the chosen candidate was among the pool) with an
accuracy term (how good the decoder's next prediction was after consuming
it).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .numcore import (ParamBlock, check_finite_grads, log_softmax_rows, sigmoid,
                      softmax_rows, uniform_init, zero_grads)
from .s2s import EncoderOutput, Regime, SeqParams, decode_sequence


class PolicyParams:
    """Single hidden layer (sigmoid) with a softmax head."""

    def __init__(self, W1, b1, W2, b2):
        self.W1 = ParamBlock("pol.W1", W1)
        self.b1 = ParamBlock("pol.b1", b1)
        self.W2 = ParamBlock("pol.W2", W2)
        self.b2 = ParamBlock("pol.b2", b2)
        n_p, n_d = self.W1.shape
        if self.b1.shape != (n_p,) or self.W2.shape[1] != n_p or self.b2.shape != (self.W2.shape[0],):
            raise ContractError("inconsistent policy parameter shapes")

    @classmethod
    def init(cls, n_state: int, n_hidden: int, n_actions: int = 3, rng=None) -> "PolicyParams":
        if rng is None:
            return cls(np.zeros((n_hidden, n_state)), np.zeros(n_hidden),
                       np.zeros((n_actions, n_hidden)), np.zeros(n_actions))
        return cls(uniform_init(rng, (n_hidden, n_state), n_state), np.zeros(n_hidden),
                   uniform_init(rng, (n_actions, n_hidden), n_hidden), np.zeros(n_actions))

    @property
    def n_actions(self) -> int:
        return self.W2.shape[0]

    @property
    def n_state(self) -> int:
        return self.W1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[0]

    def blocks(self) -> list[ParamBlock]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.W1.value.copy(), self.b1.value.copy(),
                            self.W2.value.copy(), self.b2.value.copy())

    def load_values(self, other: "PolicyParams") -> None:
        for dst, src in zip(self.blocks(), other.blocks()):
            dst.value[...] = src.value


def policy_logits(theta: PolicyParams, s):
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    hid = sigmoid(s @ theta.W1.value.T + theta.b1.value)
    return hid @ theta.W2.value.T + theta.b2.value, hid


def policy_forward(theta: PolicyParams, s) -> np.ndarray:
    """Action probabilities, (B, n_actions) for (B, N^d) states."""
    logits, _ = policy_logits(theta, s)
    return softmax_rows(logits)


def log_prob_and_grad(theta: PolicyParams, states, actions, weights) -> float:
    """Return sum_i w_i log pi(a_i|s_i) and add its gradient into ``theta``.

    d log pi_a / d logits = onehot(a) - pi.
    """
    states = np.atleast_2d(states)
    actions = np.asarray(actions, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    logits, hid = policy_logits(theta, states)
    logp = log_softmax_rows(logits)
    rows = np.arange(len(actions))
    total = float(np.sum(weights * logp[rows, actions]))
    dlogits = -np.exp(logp) * weights[:, None]
    dlogits[rows, actions] += weights
    theta.W2.grad += dlogits.T @ hid
    theta.b2.grad += dlogits.sum(axis=0)
    dpre = (dlogits @ theta.W2.value) * hid * (1.0 - hid)
    theta.W1.grad += dpre.T @ states
    theta.b1.grad += dpre.sum(axis=0)
    return total


def select_action(probs, epsilon: float, rng=None, mode: str = "train", sample: bool = False):
    """epsilon-greedy over argmax (ties go to the lowest index).

    Returns ``(actions, explored)`` for a (B, n) probability matrix. With
    ``sample=True`` the non-exploring branch draws from ``probs`` instead
    of taking the argmax.
    """
    probs = np.atleast_2d(probs)
    B, n = probs.shape
    greedy = np.argmax(probs, axis=1)
    if mode == "eval" or (epsilon <= 0.0 and not sample):
        return greedy, np.zeros(B, dtype=bool)
    if rng is None:
        raise ContractError("training-mode action selection needs an rng")
    explore_draw = rng.random(B)
    random_action = rng.integers(0, n, size=B)
    base = greedy
    if sample:
        u = rng.random(B)[:, None]
        base = np.minimum((u > np.cumsum(probs, axis=1)).sum(axis=1), n - 1)
    explored = explore_draw < epsilon
    return np.where(explored, random_action, base), explored


def make_selector(theta: PolicyParams, epsilon: float = 0.0, rng=None, mode: str = "eval",
                  sample: bool = False, forced: int | None = None):
    """Adapter from the policy to the decoder's selector hook."""
    def selector(states, k):
        pr = policy_forward(theta, states)
        if forced is not None:
            a = np.full(len(states), forced, dtype=np.int64)
            return a, np.zeros(len(states), dtype=bool), pr
        a, ex = select_action(pr, epsilon, rng, mode, sample)
        return a, ex, pr
    return selector


# ---------------------------------------------------------------- rewards

@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.5
    beta: float = 1.0
    gamma: float = 0.9
    epsilon: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError("alpha must be in [0, 1]")
        if not self.beta > 0.0:
            raise ContractError("beta must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError("gamma must be in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ContractError("epsilon must be in [0, 1]")


def pool_ranks(pool_errors) -> np.ndarray:
    """1-based ranks by ascending error; ties favour the earlier index."""
    e = np.atleast_2d(pool_errors)
    order = np.argsort(e, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(e.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, e.shape[1] + 1)[None, :]
    return ranks


def rank_reward(pool_errors, chosen) -> np.ndarray:
    e = np.atleast_2d(pool_errors)
    chosen = np.atleast_1d(chosen)
    r = pool_ranks(e)[np.arange(e.shape[0]), chosen]
    return 1.0 - r / e.shape[1]


def accuracy_reward(beta: float, abs_error, terminal) -> np.ndarray:
    err = np.asarray(abs_error, dtype=np.float64)
    out = beta / (beta + np.where(terminal, 0.0, err))
    return np.where(terminal, 0.0, out)


def step_reward(cfg: RewardConfig, pool_errors, chosen, next_step_decoder_abs_error=None):
    """r_k = alpha * Rank_r + (1 - alpha) * Accuracy_r.

    ``next_step_decoder_abs_error=None`` marks the terminal step, where the
    accuracy term is 0. Works on a single step or batched along axis 0.
    """
    e = np.asarray(pool_errors, dtype=np.float64)
    scalar = e.ndim == 1
    e = np.atleast_2d(e)
    if np.any(e < 0) or (next_step_decoder_abs_error is not None
                         and np.any(np.asarray(next_step_decoder_abs_error) < 0)):
        raise ContractError("errors must be non-negative")
    rank = rank_reward(e, chosen)
    if next_step_decoder_abs_error is None:
        acc = np.zeros(e.shape[0])
    else:
        acc = accuracy_reward(cfg.beta, np.broadcast_to(next_step_decoder_abs_error, (e.shape[0],)), False)
    r = cfg.alpha * rank + (1.0 - cfg.alpha) * acc
    return float(r[0]) if scalar else r


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """G_k = r_k + gamma * G_{k+1} along the last axis."""
    r = np.asarray(rewards, dtype=np.float64)
    G = np.empty_like(r)
    acc = np.zeros(r.shape[:-1])
    for k in range(r.shape[-1] - 1, -1, -1):
        acc = r[..., k] + gamma * acc
        G[..., k] = acc
    return G


# ---------------------------------------------------------------- trajectories

@dataclass
class Trajectories:
    """A batch of B episodes of length H (arrays indexed [sample, step])."""
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    explored: np.ndarray
    predictions: np.ndarray
    pool_errors: np.ndarray

    def __len__(self):
        return self.actions.shape[0]

    @property
    def H(self) -> int:
        return self.actions.shape[1]

    def returns(self, gamma: float) -> np.ndarray:
        return discounted_returns(self.rewards, gamma)

    def total_reward(self, gamma: float) -> np.ndarray:
        k = np.arange(1, self.H + 1)
        return np.sum(self.rewards * gamma ** k, axis=1)


def collect_trajectories(theta: PolicyParams, seq: SeqParams, enc: EncoderOutput, first_input,
                         aux, truth, cfg: RewardConfig, rng=None, scale: float = 1.0,
                         mode: str = "train", sample: bool = False) -> Trajectories:
    """Run PG decoding with frozen ``seq`` and score every step.

    ``aux`` and ``truth`` are in scaled units; ``scale`` converts absolute
    errors back to original units for the rewards. Pool errors at step k
    compare each candidate's prediction of y_{t+k} with the truth; the
    accuracy term uses the decoder's emission at step k+1.
    """
    truth = np.asarray(truth, dtype=np.float64)
    H = truth.shape[1]
    eps = cfg.epsilon if mode == "train" else 0.0
    sel = make_selector(theta, eps, rng, mode, sample)
    res = decode_sequence(seq, enc, first_input, H, Regime.PG, aux=aux, selector=sel, training=False)
    pool_err = np.abs(res.candidates - truth[:, :, None]) * scale
    dec_err = np.abs(res.predictions - truth) * scale
    B = truth.shape[0]
    rewards = np.empty((B, H))
    for k in range(H):
        nxt = dec_err[:, k + 1] if k + 1 < H else None
        rewards[:, k] = step_reward(cfg, pool_err[:, k], res.actions[:, k], nxt)
    rows = np.arange(B)[:, None]
    logp = np.log(np.maximum(res.probs[rows, np.arange(H)[None, :], res.actions], 1e-300))
    if not np.all(np.isfinite(rewards)):
        raise NumericError("non-finite reward")
    return Trajectories(res.states, res.actions, logp, rewards, res.explored, res.predictions, pool_err)


def reinforce_gradient(theta: PolicyParams, traj: Trajectories, gamma: float,
                       exclude_explored: bool = False) -> float:
    """Fill ``theta`` grads with the batch-mean of
    sum_k gamma^k G_k grad log pi(a_k|s_k); returns the weighted objective."""
    zero_grads(theta.blocks())
    B, H = traj.actions.shape
    G = traj.returns(gamma)
    w = (gamma ** np.arange(1, H + 1))[None, :] * G / B
    if exclude_explored:
        w = np.where(traj.explored, 0.0, w)
    n_s = traj.states.shape[-1]
    obj = log_prob_and_grad(theta, traj.states.reshape(-1, n_s), traj.actions.reshape(-1), w.reshape(-1))
    check_finite_grads(theta.blocks(), "reinforce")
    return obj


def reinforce_update(theta: PolicyParams, traj: Trajectories, lr: float, gamma: float,
                     exclude_explored: bool = False, optimizer=None) -> PolicyParams:
    """One gradient-ascent step on the policy (in place; returns ``theta``)."""
    reinforce_gradient(theta, traj, gamma, exclude_explored)
    if optimizer is None:
        for b in theta.blocks():
            b.value += lr * b.grad
    else:
        optimizer.step(theta.blocks())
    for b in theta.blocks():
        if not np.all(np.isfinite(b.value)):
            raise NumericError(f"non-finite policy parameter {b.name} after update")
    return theta


def selection_percentages(actions, n_actions: int) -> np.ndarray:
    """(H, n_actions) percentage of samples choosing each action per step."""
    a = np.atleast_2d(actions)
    counts = np.stack([(a == j).sum(axis=0) for j in range(n_actions)], axis=1)
    return 100.0 * counts / a.shape[0]
