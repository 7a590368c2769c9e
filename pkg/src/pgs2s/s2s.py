"""Encoder-decoder recurrent forecaster with hand-written BPTT.

All state arrays are batched: hidden states are (B, N), encoder windows
(B, L, m), decoder inputs (B,). The decoder consumes, at every step, the
concatenation ``[s_{k-1}, input_k, context]`` and emits a scalar through a
linear output layer.

Decoder inputs that come from predictions (the decoder's own or a pool
model's) are treated as constants by the backward pass.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError, NumericError
from .numcore import ParamBlock, check_finite_grads, sigmoid, uniform_init, zero_grads

CELL_KINDS = ("lstm", "ernn", "gru")

# provenance codes for decoder inputs; non-negative codes are pool indices
SRC_TRUTH = -1
SRC_DECODER = -2
SRC_REPLAY = -3


class Regime(str, enum.Enum):
    FR = "FR"
    TF = "TF"
    SS = "SS"
    PG = "PG"
    TEACH = "TEACH"


# ---------------------------------------------------------------- cells

class _Cell:
    kind = ""
    has_cell_state = False
    gate_names: tuple[str, ...] = ()

    def __init__(self, prefix: str, n_hidden: int, n_input: int, rng=None):
        self.prefix = prefix
        self.n_hidden = n_hidden
        self.n_input = n_input
        width = n_hidden + n_input
        self.U = {}
        self.b = {}
        for g in self.gate_names:
            w = uniform_init(rng, (n_hidden, width), width) if rng is not None else np.zeros((n_hidden, width))
            self.U[g] = ParamBlock(f"{prefix}.U_{g}", w)
            self.b[g] = ParamBlock(f"{prefix}.b_{g}", np.zeros(n_hidden))

    @property
    def blocks(self) -> list[ParamBlock]:
        return [self.U[g] for g in self.gate_names] + [self.b[g] for g in self.gate_names]

    def _pre(self, g, z):
        return z @ self.U[g].value.T + self.b[g].value

    def _acc(self, g, dpre, z):
        self.U[g].grad += dpre.T @ z
        self.b[g].grad += dpre.sum(axis=0)

    def zero_state(self, batch: int):
        h = np.zeros((batch, self.n_hidden))
        return h, (np.zeros((batch, self.n_hidden)) if self.has_cell_state else None)


class LSTMCell(_Cell):
    """Gate order f, i, c (candidate), o; the output gate reads h_{j-1}."""
    kind = "lstm"
    has_cell_state = True
    gate_names = ("f", "i", "c", "o")

    def __init__(self, prefix, n_hidden, n_input, rng=None, forget_bias: float = 1.0):
        super().__init__(prefix, n_hidden, n_input, rng)
        self.b["f"].value[:] = forget_bias

    def step(self, h, c, x):
        z = np.concatenate([h, x], axis=1)
        f = sigmoid(self._pre("f", z))
        i = sigmoid(self._pre("i", z))
        g = np.tanh(self._pre("c", z))
        c_new = i * g + f * c
        o = sigmoid(self._pre("o", z))
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (z, c, f, i, g, o, tc)

    def backward(self, dh, dc, cache):
        z, c_prev, f, i, g, o, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        df = dc * c_prev
        di = dc * g
        dg = dc * i
        dc_prev = dc * f
        dpf = df * f * (1.0 - f)
        dpi = di * i * (1.0 - i)
        dpg = dg * (1.0 - g * g)
        dpo = do * o * (1.0 - o)
        dz = (dpf @ self.U["f"].value + dpi @ self.U["i"].value
              + dpg @ self.U["c"].value + dpo @ self.U["o"].value)
        self._acc("f", dpf, z)
        self._acc("i", dpi, z)
        self._acc("c", dpg, z)
        self._acc("o", dpo, z)
        n = self.n_hidden
        return dz[:, :n], dc_prev, dz[:, n:]


class ERNNCell(_Cell):
    """Elman cell: h = tanh(U [h, x] + b)."""
    kind = "ernn"
    gate_names = ("h",)

    def step(self, h, c, x):
        z = np.concatenate([h, x], axis=1)
        h_new = np.tanh(self._pre("h", z))
        return h_new, None, (z, h_new)

    def backward(self, dh, dc, cache):
        z, h_new = cache
        dp = dh * (1.0 - h_new * h_new)
        dz = dp @ self.U["h"].value
        self._acc("h", dp, z)
        n = self.n_hidden
        return dz[:, :n], None, dz[:, n:]


class GRUCell(_Cell):
    """GRU with reset applied to h before the candidate projection."""
    kind = "gru"
    gate_names = ("z", "r", "n")

    def step(self, h, c, x):
        zin = np.concatenate([h, x], axis=1)
        u = sigmoid(self._pre("z", zin))
        r = sigmoid(self._pre("r", zin))
        rin = np.concatenate([r * h, x], axis=1)
        nc = np.tanh(self._pre("n", rin))
        h_new = (1.0 - u) * nc + u * h
        return h_new, None, (zin, rin, h, u, r, nc)

    def backward(self, dh, dc, cache):
        zin, rin, h, u, r, nc = cache
        n = self.n_hidden
        dnc = dh * (1.0 - u)
        du = dh * (h - nc)
        dh_prev = dh * u
        dpn = dnc * (1.0 - nc * nc)
        drin = dpn @ self.U["n"].value
        self._acc("n", dpn, rin)
        dr = drin[:, :n] * h
        dh_prev = dh_prev + drin[:, :n] * r
        dpu = du * u * (1.0 - u)
        dpr = dr * r * (1.0 - r)
        dz = dpu @ self.U["z"].value + dpr @ self.U["r"].value
        self._acc("z", dpu, zin)
        self._acc("r", dpr, zin)
        dh_prev = dh_prev + dz[:, :n]
        dx = dz[:, n:] + drin[:, n:]
        return dh_prev, None, dx


_CELLS = {"lstm": LSTMCell, "ernn": ERNNCell, "gru": GRUCell}


def make_cell(kind: str, prefix: str, n_hidden: int, n_input: int, rng=None) -> _Cell:
    try:
        cls = _CELLS[kind]
    except KeyError:
        raise ContractError(f"unknown cell kind {kind!r}; expected one of {CELL_KINDS}") from None
    return cls(prefix, n_hidden, n_input, rng)


# ---------------------------------------------------------------- parameters

class SeqParams:
    """Encoder cell, decoder cell and the scalar output layer."""

    def __init__(self, encoder: _Cell, decoder: _Cell, V: ParamBlock, b: ParamBlock):
        if encoder.kind != decoder.kind:
            raise ContractError("encoder and decoder cell kinds differ")
        if decoder.n_input != 1 + encoder.n_hidden:
            raise DimensionError(
                f"decoder gate input must be N^d+1+N^e wide; got input width {decoder.n_input} "
                f"for N^e={encoder.n_hidden}")
        if decoder.n_hidden != encoder.n_hidden:
            raise DimensionError("decoder initial state is the encoder final state, so N^d must equal N^e")
        if V.shape != (1, decoder.n_hidden) or b.shape != (1,):
            raise DimensionError("output layer must be V: (1, N^d), b: (1,)")
        self.encoder = encoder
        self.decoder = decoder
        self.V = V
        self.b = b

    @classmethod
    def init(cls, kind: str, m: int, n_enc: int, n_dec: int | None = None, rng=None) -> "SeqParams":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases (LSTM forget bias 1).

        ``rng=None`` gives all-zero weights.
        """
        n_dec = n_enc if n_dec is None else n_dec
        enc = make_cell(kind, "enc", n_enc, m, rng)
        dec = make_cell(kind, "dec", n_dec, 1 + n_enc, rng)
        V = uniform_init(rng, (1, n_dec), n_dec) if rng is not None else np.zeros((1, n_dec))
        return cls(enc, dec, ParamBlock("out.V", V), ParamBlock("out.b", np.zeros(1)))

    @property
    def kind(self) -> str:
        return self.encoder.kind

    @property
    def m(self) -> int:
        return self.encoder.n_input

    @property
    def n_enc(self) -> int:
        return self.encoder.n_hidden

    @property
    def n_dec(self) -> int:
        return self.decoder.n_hidden

    def blocks(self) -> list[ParamBlock]:
        return self.encoder.blocks + self.decoder.blocks + [self.V, self.b]

    def copy(self) -> "SeqParams":
        new = SeqParams.init(self.kind, self.m, self.n_enc, self.n_dec)
        new.load_values(self)
        return new

    def load_values(self, other: "SeqParams") -> None:
        for dst, src in zip(self.blocks(), other.blocks()):
            if dst.name != src.name or dst.shape != src.shape:
                raise DimensionError(f"parameter mismatch {dst.name}{dst.shape} vs {src.name}{src.shape}")
            dst.value[...] = src.value

    def zero_grad(self):
        zero_grads(self.blocks())


# ---------------------------------------------------------------- encoder / decoder

@dataclass
class DecodeState:
    s: np.ndarray
    c: np.ndarray | None
    context: np.ndarray
    k: int = 0


@dataclass
class EncoderOutput:
    context: np.ndarray
    h: np.ndarray
    c: np.ndarray | None

    def initial_state(self) -> DecodeState:
        return DecodeState(self.h, self.c, self.context, 0)

    def take(self, idx) -> "EncoderOutput":
        return EncoderOutput(self.context[idx], self.h[idx], None if self.c is None else self.c[idx])


def _batched_window(windows) -> np.ndarray:
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    if w.ndim != 3:
        raise DimensionError(f"expected (B, L, m) windows, got {w.shape}")
    return w


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {what}")


def encode(params: SeqParams, windows, tape: list | None = None) -> EncoderOutput:
    """Run the encoder over (B, L, m) windows from a zero state; context = h_L."""
    w = _batched_window(windows)
    if w.shape[2] != params.m:
        raise DimensionError(f"window has {w.shape[2]} channels, encoder expects {params.m}")
    cell = params.encoder
    h, c = cell.zero_state(w.shape[0])
    for j in range(w.shape[1]):
        h, c, cache = cell.step(h, c, w[:, j, :])
        if tape is not None:
            tape.append(cache)
    _check_finite(h, "encoder")
    return EncoderOutput(h, h, c)


def decode_step(params: SeqParams, state: DecodeState, input_val, tape: list | None = None):
    """One decoder step; returns (next state, prediction (B,))."""
    u = np.asarray(input_val, dtype=np.float64).reshape(-1, 1)
    x = np.concatenate([u, state.context], axis=1)
    s, c, cache = params.decoder.step(state.s, state.c, x)
    yhat = (s @ params.V.value.T)[:, 0] + params.b.value[0]
    _check_finite(yhat, "decoder")
    if tape is not None:
        tape.append(cache)
    return DecodeState(s, c, state.context, state.k + 1), yhat


Selector = Callable[[np.ndarray, int], tuple]


@dataclass
class DecodeResult:
    """Output of a decoding episode.

    ``provenance[:, k]`` is the source of the input consumed at step k+1;
    ``states[:, k]`` is s_{k+1}. For PG decoding ``actions[:, k]`` is the
    pool index chosen in state s_{k+1} (its value feeds step k+2) and
    ``candidates[:, k]`` holds every pool member's prediction of y_{t+k+1}.
    """
    predictions: np.ndarray
    provenance: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    actions: np.ndarray | None = None
    explored: np.ndarray | None = None
    probs: np.ndarray | None = None
    candidates: np.ndarray | None = None


def decode_sequence(params: SeqParams, enc: EncoderOutput, first_input, H: int,
                    regime: Regime | str = Regime.FR, *, aux=None, truth=None, rng=None,
                    p: float = 1.0, selector: Selector | None = None, teacher: int | None = None,
                    training: bool = False, inputs=None, tape: list | None = None) -> DecodeResult:
    """Decode H steps under one of the input-feeding regimes.

    The step-1 input is always ``first_input`` (y_t). Afterwards:

    * FR: the decoder's previous prediction.
    * TF: the true previous value (training only).
    * SS: true value with probability ``p`` else own prediction, one coin
      per sample per step (training only; one ``rng.random(B)`` draw per
      step regardless of ``p``).
    * TEACH: pool model ``teacher``'s prediction from ``aux``.
    * PG: whichever pool member ``selector(s_k, k)`` picks; the last pool
      index is the decoder itself.

    Outside training TF and SS fall back to FR feeding. ``aux`` is the
    (B, n_aux, H) slice of pool predictions in model (scaled) units.
    ``inputs`` replays a recorded (B, H) input matrix instead.
    """
    regime = Regime(regime)
    first = np.asarray(first_input, dtype=np.float64).reshape(-1)
    B = first.shape[0]
    if H < 1:
        raise ContractError("H must be >= 1")
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64).reshape(B, -1)
    if inputs is None:
        if training and regime in (Regime.TF, Regime.SS) and truth is None:
            raise ContractError(f"{regime.value} training needs ground truth")
        if regime is Regime.SS and training and rng is None:
            raise ContractError("SS training needs an rng")
        if regime in (Regime.PG, Regime.TEACH) and aux is None:
            raise ContractError(f"{regime.value} decoding needs the pool forecast slice")
        if regime is Regime.PG and selector is None:
            raise ContractError("PG decoding needs a policy selector")
        if regime is Regime.TEACH and teacher is None:
            raise ContractError("TEACH decoding needs a teacher index")
        if not 0.0 <= p <= 1.0:
            raise ContractError("SS probability must lie in [0, 1]")
    if aux is not None:
        aux = np.asarray(aux, dtype=np.float64)
        if aux.shape[0] != B or aux.shape[2] < H:
            raise DimensionError(f"aux slice shape {aux.shape} incompatible with B={B}, H={H}")
    feed = regime
    if not training and regime in (Regime.TF, Regime.SS):
        feed = Regime.FR

    n_aux = aux.shape[1] if aux is not None else 0
    preds = np.empty((B, H))
    prov = np.empty((B, H), dtype=np.int64)
    fed = np.empty((B, H))
    states = np.empty((B, H, params.n_dec))
    actions = explored = probs = cands = None
    if feed is Regime.PG:
        actions = np.empty((B, H), dtype=np.int64)
        explored = np.zeros((B, H), dtype=bool)
        probs = np.empty((B, H, n_aux + 1))
        cands = np.empty((B, H, n_aux + 1))

    state = enc.initial_state()
    cur = first
    cur_src = np.full(B, SRC_TRUTH, dtype=np.int64)
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=np.float64).reshape(B, H)
        cur = inputs[:, 0]
    rows = np.arange(B)
    for k in range(H):
        fed[:, k] = cur
        prov[:, k] = cur_src
        state, yhat = decode_step(params, state, cur, tape)
        preds[:, k] = yhat
        states[:, k] = state.s
        if inputs is not None:
            if k + 1 < H:
                cur = inputs[:, k + 1]
                cur_src = np.full(B, SRC_REPLAY, dtype=np.int64)
            continue
        if feed is Regime.PG:
            cand = np.concatenate([aux[:, :, k], yhat[:, None]], axis=1)
            a, ex, pr = selector(state.s, k + 1)
            a = np.asarray(a, dtype=np.int64)
            actions[:, k] = a
            explored[:, k] = ex
            probs[:, k] = pr
            cands[:, k] = cand
            cur = cand[rows, a]
            cur_src = np.where(a == n_aux, SRC_DECODER, a)
        elif k + 1 < H:
            if feed is Regime.FR:
                cur, cur_src = yhat, np.full(B, SRC_DECODER, dtype=np.int64)
            elif feed is Regime.TF:
                cur, cur_src = truth[:, k], np.full(B, SRC_TRUTH, dtype=np.int64)
            elif feed is Regime.SS:
                coin = rng.random(B) < p
                cur = np.where(coin, truth[:, k], yhat)
                cur_src = np.where(coin, SRC_TRUTH, SRC_DECODER)
            elif feed is Regime.TEACH:
                cur = aux[:, teacher, k]
                cur_src = np.full(B, teacher, dtype=np.int64)
    return DecodeResult(preds, prov, states, fed, actions, explored, probs, cands)


# ---------------------------------------------------------------- training pass

@dataclass
class BPTTResult:
    loss: float
    decode: DecodeResult
    per_sample_loss: np.ndarray = field(repr=False, default=None)


def sequence_loss(predictions, targets) -> np.ndarray:
    """Per-sample mean squared error over the horizon."""
    return np.mean((np.asarray(targets) - np.asarray(predictions)) ** 2, axis=1)


def bptt(params: SeqParams, windows, targets, regime: Regime | str = Regime.FR,
         first_input=None, **decode_kw) -> BPTTResult:
    """Forward pass, batch-mean MSE loss and exact gradients into ``params``.

    Gradients are written (not accumulated) into every block's ``grad``.
    Fed-back prediction inputs are constants here.
    """
    w = _batched_window(windows)
    Y = np.asarray(targets, dtype=np.float64).reshape(w.shape[0], -1)
    B, H = Y.shape
    first = w[:, -1, 0] if first_input is None else first_input
    params.zero_grad()
    enc_tape: list = []
    dec_tape: list = []
    enc = encode(params, w, tape=enc_tape)
    decode_kw.setdefault("training", True)
    res = decode_sequence(params, enc, first, H, regime, truth=Y, tape=dec_tape, **decode_kw)
    per_sample = sequence_loss(res.predictions, Y)
    loss = float(np.mean(per_sample))

    dy = 2.0 * (res.predictions - Y) / (H * B)
    V = params.V.value
    params.V.grad += dy.reshape(-1) @ res.states.reshape(-1, params.n_dec)
    params.b.grad += dy.sum()
    dec = params.decoder
    n_e = params.n_enc
    dh = np.zeros((B, params.n_dec))
    dc = np.zeros((B, params.n_dec)) if dec.has_cell_state else None
    dctx = np.zeros((B, n_e))
    for k in range(H - 1, -1, -1):
        dh = dh + dy[:, k:k + 1] * V
        dh, dc, dx = dec.backward(dh, dc, dec_tape[k])
        dctx += dx[:, 1:]
    # s_0 = h_L and the context is h_L as well
    dh = dh + dctx
    enc_cell = params.encoder
    for j in range(len(enc_tape) - 1, -1, -1):
        dh, dc, _ = enc_cell.backward(dh, dc, enc_tape[j])
    check_finite_grads(params.blocks(), "bptt")
    return BPTTResult(loss, res, per_sample)


def predict(params: SeqParams, windows, H: int, regime: Regime | str = Regime.FR, **decode_kw) -> DecodeResult:
    """Test-time decoding (no ground truth)."""
    w = _batched_window(windows)
    enc = encode(params, w)
    decode_kw.setdefault("training", False)
    return decode_sequence(params, enc, w[:, -1, 0], H, regime, **decode_kw)
