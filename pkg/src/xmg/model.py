"""Five single-output LSTM submodels, one per note field.

Submodel ``m`` predicts field ``m`` of the next note from the previous note
(all five fields, one-hot) and, when conditioned, from the fields ``0..m-1``
already sampled for the next note. Sampling the fields in order
``n, t, d, v, p`` realizes the chain-rule factorization of the note
distribution. Feeding zeros in the conditioning blocks gives the
independent-output ablation with identical parameter shapes.

Everything is plain numpy in float64; gradients come from hand-written
backpropagation through time.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codec import CLASS_COUNTS, FIELDS, NoteToken

logger = logging.getLogger(__name__)

NUM_FIELDS = len(FIELDS)
OFFSETS = tuple(int(x) for x in np.concatenate([[0], np.cumsum(CLASS_COUNTS)]))
PREV_DIM = OFFSETS[-1]  # 362
CHECKPOINT_MAGIC = b"XMG1"
CHECKPOINT_VERSION = 1


class NumericError(ArithmeticError):
    """Training produced a non-finite loss."""


class FieldLayout:
    """Where each field's one-hot block sits in a submodel's input vector."""

    row_names = tuple(f"prev {f}" for f in FIELDS) + tuple(f"cur {f}" for f in FIELDS[:-1])

    @staticmethod
    def input_dim(m: int) -> int:
        return PREV_DIM + OFFSETS[m]

    @staticmethod
    def num_classes(m: int) -> int:
        return CLASS_COUNTS[m]

    @staticmethod
    def blocks(m: int) -> list[tuple[int, slice]]:
        """``(row index, column slice)`` for every field group present in submodel ``m``."""
        out = [(f, slice(OFFSETS[f], OFFSETS[f + 1])) for f in range(NUM_FIELDS)]
        out += [(NUM_FIELDS + f, slice(PREV_DIM + OFFSETS[f], PREV_DIM + OFFSETS[f + 1]))
                for f in range(m)]
        return out


def one_hot_inputs(prev: np.ndarray, cur: np.ndarray | None, m: int,
                   conditioned: bool = True) -> np.ndarray:
    """Assemble inputs for submodel ``m``.

    ``prev`` is ``(..., 5)`` and ``cur`` is ``(..., >= m)`` integer classes;
    the result is ``(..., input_dim(m))``.
    """
    prev = np.asarray(prev)
    x = np.zeros(prev.shape[:-1] + (FieldLayout.input_dim(m),))
    idx = np.indices(prev.shape[:-1])
    for f in range(NUM_FIELDS):
        x[(*idx, OFFSETS[f] + prev[..., f])] = 1.0
    if conditioned and m > 0:
        cur = np.asarray(cur)
        if cur.shape[:-1] != prev.shape[:-1] or cur.shape[-1] < m:
            raise ValueError(f"submodel {m} needs {m} current-note fields, got shape {cur.shape}")
        for f in range(m):
            x[(*idx, PREV_DIM + OFFSETS[f] + cur[..., f])] = 1.0
    return x


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


@dataclass
class ModelParams:
    """Weights of one submodel.

    ``layers[l]`` is ``(W, U, b)``: input weights ``(4H, D_l)``, recurrent
    weights ``(4H, H)`` and bias ``(4H,)``, gate rows ordered input, forget,
    cell, output. ``out_w`` is ``(K, H)`` and ``out_b`` is ``(K,)``.
    """

    submodel: int
    layers: list[tuple[np.ndarray, np.ndarray, np.ndarray]]
    out_w: np.ndarray
    out_b: np.ndarray
    conditioned: bool = True
    adam: AdamState | None = field(default=None, repr=False)

    def __post_init__(self):
        m = self.submodel
        if not 0 <= m < NUM_FIELDS:
            raise ValueError(f"submodel id {m} out of range")
        H = self.hidden
        dim = FieldLayout.input_dim(m)
        for W, U, b in self.layers:
            if W.shape != (4 * H, dim) or U.shape != (4 * H, H) or b.shape != (4 * H,):
                raise ValueError(f"layer shapes {W.shape}, {U.shape}, {b.shape} inconsistent "
                                 f"with input {dim} and hidden {H}")
            dim = H
        if self.out_w.shape != (CLASS_COUNTS[m], H) or self.out_b.shape != (CLASS_COUNTS[m],):
            raise ValueError("output projection shape mismatch")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("non-finite parameter")

    @property
    def hidden(self) -> int:
        return self.layers[0][1].shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_classes(self) -> int:
        return CLASS_COUNTS[self.submodel]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer)
        return out + [self.out_w, self.out_b]

    def array_names(self) -> list[str]:
        names = []
        for l in range(self.num_layers):
            names += [f"layer{l + 1}.W", f"layer{l + 1}.U", f"layer{l + 1}.b"]
        return names + ["out.W", "out.b"]

    def copy(self) -> "ModelParams":
        return ModelParams(self.submodel, [tuple(a.copy() for a in layer) for layer in self.layers],
                           self.out_w.copy(), self.out_b.copy(), self.conditioned)

    def zero_state(self, batch: int = 1) -> "LSTMState":
        shape = (self.num_layers, batch, self.hidden)
        return LSTMState(np.zeros(shape), np.zeros(shape))


@dataclass
class LSTMState:
    h: np.ndarray  # (layers, batch, hidden)
    c: np.ndarray


def init_params(m: int, hidden: int = 150, num_layers: int = 2, rng=None,
                conditioned: bool = True) -> ModelParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, forget-gate bias shifted by +1."""
    rng = np.random.default_rng(rng)
    scale = 1.0 / np.sqrt(hidden)
    layers = []
    dim = FieldLayout.input_dim(m)
    for _ in range(num_layers):
        W = rng.uniform(-scale, scale, (4 * hidden, dim))
        U = rng.uniform(-scale, scale, (4 * hidden, hidden))
        b = rng.uniform(-scale, scale, 4 * hidden)
        b[hidden:2 * hidden] += 1.0
        layers.append((W, U, b))
        dim = hidden
    K = CLASS_COUNTS[m]
    return ModelParams(m, layers, rng.uniform(-scale, scale, (K, hidden)),
                       rng.uniform(-scale, scale, K), conditioned)


def zero_params(m: int, hidden: int = 8, num_layers: int = 2) -> ModelParams:
    p = init_params(m, hidden, num_layers, rng=0)
    for a in p.arrays():
        a[...] = 0.0
    return p


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(params: ModelParams, x: np.ndarray, state: LSTMState):
    """Run a time-major input ``(T, B, D)``; returns ``(logits, state', cache)``."""
    H = params.hidden
    inp = x
    hs_final, cs_final = [], []
    caches = []
    for l, (W, U, b) in enumerate(params.layers):
        T, B, _ = inp.shape
        zx = inp @ W.T + b
        h, c = state.h[l], state.c[l]
        hs = np.empty((T, B, H))
        cs = np.empty((T, B, H))
        acts = np.empty((T, B, 4 * H))
        for t in range(T):
            z = zx[t] + h @ U.T
            a = acts[t]
            a[:, :2 * H] = _sigmoid(z[:, :2 * H])
            a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
            c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
            h = a[:, 3 * H:] * np.tanh(c)
            hs[t] = h
            cs[t] = c
        caches.append((inp, hs, cs, acts, state.h[l], state.c[l]))
        hs_final.append(h)
        cs_final.append(c)
        inp = hs
    logits = inp @ params.out_w.T + params.out_b
    return logits, LSTMState(np.stack(hs_final), np.stack(cs_final)), caches


def backward(params: ModelParams, caches, dlogits: np.ndarray) -> list[np.ndarray]:
    """Gradients for :meth:`ModelParams.arrays` given ``dL/dlogits``.

    The incoming state is treated as a constant (truncated BPTT).
    """
    H = params.hidden
    top = caches[-1][1]
    T, B, _ = top.shape
    d_out_w = dlogits.reshape(T * B, -1).T @ top.reshape(T * B, H)
    d_out_b = dlogits.sum(axis=(0, 1))
    dh_in = dlogits @ params.out_w

    layer_grads = []
    for l in reversed(range(params.num_layers)):
        W, U, _ = params.layers[l]
        inp, hs, cs, acts, h0, c0 = caches[l]
        dz = np.empty((T, B, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            a = acts[t]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            c_prev = cs[t - 1] if t > 0 else c0
            tanh_c = np.tanh(cs[t])
            dh = dh_in[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
            d = dz[t]
            d[:, :H] = dc * g * i * (1.0 - i)
            d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            d[:, 2 * H:3 * H] = dc * i * (1.0 - g ** 2)
            d[:, 3 * H:] = dh * tanh_c * o * (1.0 - o)
            dc_next = dc * f
            dh_next = d @ U
        h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
        flat = dz.reshape(T * B, 4 * H)
        dW = flat.T @ inp.reshape(T * B, -1)
        dU = flat.T @ h_prev.reshape(T * B, H)
        db = flat.sum(axis=0)
        layer_grads.append((dW, dU, db))
        if l > 0:
            dh_in = dz @ W
    grads = []
    for layer in reversed(layer_grads):
        grads.extend(layer)
    return grads + [d_out_w, d_out_b]


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(params: ModelParams, x: np.ndarray, targets: np.ndarray,
                   mask: np.ndarray | None = None, state: LSTMState | None = None):
    """Mean cross-entropy (nats) over unmasked steps and its gradients.

    ``x`` is ``(T, B, D)``, ``targets`` and ``mask`` are ``(T, B)``.
    Returns ``(loss, grads, state', total_nats, steps)``.
    """
    T, B, _ = x.shape
    if state is None:
        state = params.zero_state(B)
    if mask is None:
        mask = np.ones((T, B))
    logits, new_state, caches = forward(params, x, state)
    logp = log_softmax(logits)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    steps = float(mask.sum())
    total = float((nll * mask).sum())
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, targets[..., None],
                      np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (mask / max(steps, 1.0))[..., None]
    grads = backward(params, caches, dlogits)
    return total / max(steps, 1.0), grads, new_state, total, steps


# --- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    hidden: int = 150
    layers: int = 2
    segment: int = 128
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    clip: float = 5.0
    lr_decay: float = 1.0  # per-epoch multiplier on the step size
    seed: int = 0
    conditioned: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1 or self.segment < 1 or self.batch_size < 1:
            raise ValueError("hidden, layers, segment and batch_size must be positive")
        if self.learning_rate <= 0 or self.epochs < 0 or self.clip <= 0:
            raise ValueError("learning rate and clip must be positive, epochs non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")


def adam_update(arrays, grads, state: AdamState, cfg: TrainConfig, lr: float) -> None:
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    lr_t = lr * np.sqrt(1.0 - b2 ** state.step) / (1.0 - b1 ** state.step)
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr_t * m / (np.sqrt(v) + cfg.eps)


def _as_array(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != NUM_FIELDS:
        raise ValueError(f"token sequence must be (L, 5), got {arr.shape}")
    hi = np.asarray(CLASS_COUNTS)
    if np.any(arr < 0) or np.any(arr >= hi):
        raise ValueError("token field outside its class range")
    return arr


def _batch_arrays(seqs: list[np.ndarray], m: int, conditioned: bool):
    """Time-major inputs, targets and mask for one batch of sequences."""
    steps = max(len(s) for s in seqs) - 1
    B = len(seqs)
    tokens = np.zeros((B, steps + 1, NUM_FIELDS), dtype=np.int64)
    mask = np.zeros((steps, B))
    for b, s in enumerate(seqs):
        tokens[b, :len(s)] = s
        mask[:len(s) - 1, b] = 1.0
    prev = tokens[:, :-1].transpose(1, 0, 2)
    cur = tokens[:, 1:].transpose(1, 0, 2)
    x = one_hot_inputs(prev, cur, m, conditioned)
    return x, cur[..., m], mask


def train(corpus: Sequence, m: int, cfg: TrainConfig, params: ModelParams | None = None,
          log_every: int = 0):
    """Train submodel ``m`` with teacher forcing; returns ``(params, losses)``.

    Ground-truth fields of the next note are fed as the conditioning prefix.
    Sequences are batched, cut into segments of ``cfg.segment`` steps with the
    LSTM state carried across segments, and each segment gets one clipped
    Adam step. ``losses[e]`` is the mean per-step cross-entropy seen during
    epoch ``e``. Passing ``params`` resumes training, including its Adam
    moments when present.
    """
    seqs = [_as_array(s) for s in corpus]
    if not seqs:
        raise ValueError("empty corpus")
    if any(len(s) < 2 for s in seqs):
        raise ValueError("every sequence needs at least 2 notes")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(m, cfg.hidden, cfg.layers, rng, cfg.conditioned)
    elif params.submodel != m:
        raise ValueError(f"resuming submodel {params.submodel} as submodel {m}")
    arrays = params.arrays()
    if params.adam is None:
        params.adam = AdamState.zeros_like(arrays)
    adam = params.adam

    # shuffling uses its own stream so resumed runs see fresh batch orders
    order_rng = np.random.default_rng([cfg.seed, adam.step])
    losses = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0.0
        lr = cfg.learning_rate * cfg.lr_decay ** epoch
        perm = order_rng.permutation(len(seqs))
        for start in range(0, len(seqs), cfg.batch_size):
            batch = [seqs[i] for i in perm[start:start + cfg.batch_size]]
            x, targets, mask = _batch_arrays(batch, m, params.conditioned)
            state = params.zero_state(len(batch))
            for s0 in range(0, x.shape[0], cfg.segment):
                sl = slice(s0, s0 + cfg.segment)
                if not mask[sl].any():
                    break
                loss, grads, state, nats, steps = loss_and_grads(
                    params, x[sl], targets[sl], mask[sl], state)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                    norms = {name: float(np.linalg.norm(g))
                             for name, g in zip(params.array_names(), grads)}
                    raise NumericError(
                        f"submodel {m}: non-finite loss at optimizer step {adam.step} "
                        f"(epoch {epoch}); gradient norms {norms}")
                norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
                if norm > cfg.clip:
                    grads = [g * (cfg.clip / norm) for g in grads]
                adam_update(arrays, grads, adam, cfg, lr)
                total += nats
                count += steps
        losses.append(total / count)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("submodel %s epoch %d loss %.4f", FIELDS[m], epoch + 1, losses[-1])
    return params, losses


# --- inference --------------------------------------------------------------

def forward_step(params: ModelParams, prev_tokens, prefix, state: LSTMState,
                 temperature: float = 1.0):
    """One step for a batch: returns ``(probs (B, K), state')``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    prev_tokens = np.atleast_2d(np.asarray(prev_tokens, dtype=np.int64))
    if prev_tokens.shape[-1] != NUM_FIELDS:
        raise ValueError("previous token must have 5 fields")
    B = prev_tokens.shape[0]
    prefix = np.asarray(prefix, dtype=np.int64).reshape(B, -1)
    if prefix.shape[1] != params.submodel:
        raise ValueError(f"submodel {params.submodel} expects a prefix of length "
                         f"{params.submodel}, got {prefix.shape[1]}")
    x = one_hot_inputs(prev_tokens, prefix, params.submodel, params.conditioned)[None]
    logits, state, _ = forward(params, x, state)
    return softmax(logits[0] / temperature), state


def entropy_nats(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=-1)


def _draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one class per row from uniforms ``u``."""
    cdf = np.cumsum(probs, axis=-1)
    k = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=-1)
    return np.minimum(k, probs.shape[-1] - 1)


def _check_models(models: Sequence[ModelParams]) -> None:
    if len(models) != NUM_FIELDS or [p.submodel for p in models] != list(range(NUM_FIELDS)):
        raise ValueError("need the five submodels in field order n, t, d, v, p")


def _sample_batch(models, prev, states, temperature, uniforms, conditioned):
    B = prev.shape[0]
    cur = np.zeros((B, NUM_FIELDS), dtype=np.int64)
    dists = []
    new_states = []
    for m, params in enumerate(models):
        if conditioned is not None and params.conditioned != conditioned:
            params = _with_conditioning(params, conditioned)
        probs, st = forward_step(params, prev, cur[:, :m], states[m], temperature)
        cur[:, m] = _draw(probs, uniforms[:, m])
        dists.append(probs)
        new_states.append(st)
    return cur, dists, new_states


def _with_conditioning(params: ModelParams, conditioned: bool) -> ModelParams:
    view = ModelParams.__new__(ModelParams)
    view.__dict__.update(params.__dict__)
    view.conditioned = conditioned
    return view


def initial_states(models: Sequence[ModelParams], batch: int = 1) -> list[LSTMState]:
    return [p.zero_state(batch) for p in models]


def sample_note(models: Sequence[ModelParams], prev_token, states, temperature: float = 1.0,
                rng=None, conditioned: bool | None = None):
    """Sample one note field by field, each conditioned on the fields already drawn.

    Returns ``(token, dists, states')``; ``dists`` are the temperature-scaled
    distributions that were actually sampled from.
    """
    _check_models(models)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(rng)
    prev = np.asarray(prev_token, dtype=np.int64).reshape(1, NUM_FIELDS)
    u = np.array([[rng.random() for _ in range(NUM_FIELDS)]])
    cur, dists, states = _sample_batch(models, prev, states, temperature, u, conditioned)
    return NoteToken(*(int(x) for x in cur[0])), [d[0] for d in dists], states


def sample_note_independent(models, prev_token, states, temperature: float = 1.0, rng=None):
    """Same as :func:`sample_note` with the current-note blocks zeroed."""
    return sample_note(models, prev_token, states, temperature, rng, conditioned=False)


def token_log_prob(dists: Sequence[np.ndarray], token: Sequence[int]) -> float:
    return float(sum(np.log(d[k]) for d, k in zip(dists, token)))


@dataclass
class Candidate:
    tokens: np.ndarray     # (N, 5)
    entropies: np.ndarray  # (5, N) nats


def generate(models: Sequence[ModelParams], seed_token, length: int, count: int = 1,
             temperature: float = 1.0, seed=0, conditioned: bool | None = None) -> list[Candidate]:
    """Roll out ``count`` candidates of ``length`` notes from ``seed_token``.

    Candidate ``j`` draws from its own child stream of ``SeedSequence(seed)``,
    so candidates are independent and reproducible. All candidates advance
    together as one batch.
    """
    _check_models(models)
    if length < 1 or count < 1:
        raise ValueError("length and count must be at least 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(count)]
    prev = np.repeat(np.asarray(seed_token, dtype=np.int64).reshape(1, NUM_FIELDS), count, axis=0)
    states = initial_states(models, count)
    tokens = np.zeros((count, length, NUM_FIELDS), dtype=np.int64)
    ent = np.zeros((count, NUM_FIELDS, length))
    for i in range(length):
        u = np.array([[r.random() for _ in range(NUM_FIELDS)] for r in rngs])
        cur, dists, states = _sample_batch(models, prev, states, temperature, u, conditioned)
        tokens[:, i] = cur
        for m, d in enumerate(dists):
            ent[:, m, i] = entropy_nats(d)
        prev = cur
    return [Candidate(tokens[j], ent[j]) for j in range(count)]


def teacher_forced_entropies(models: Sequence[ModelParams], sequence) -> np.ndarray:
    """Per-step output entropy of each submodel along a ground-truth sequence.

    Returns ``(5, L - 1)``; step ``i`` predicts note ``i + 1``.
    """
    _check_models(models)
    seq = _as_array(sequence)
    if len(seq) < 2:
        raise ValueError("sequence needs at least 2 notes")
    out = np.zeros((NUM_FIELDS, len(seq) - 1))
    prev, cur = seq[:-1, None], seq[1:, None]
    for m, params in enumerate(models):
        x = one_hot_inputs(prev, cur, m, params.conditioned)
        logits, _, _ = forward(params, x, params.zero_state(1))
        out[m] = entropy_nats(softmax(logits[:, 0]))
    return out


def sequence_log_likelihood(models: Sequence[ModelParams], sequence) -> np.ndarray:
    """Teacher-forced log-probability of each field, ``(5, L - 1)``."""
    _check_models(models)
    seq = _as_array(sequence)
    out = np.zeros((NUM_FIELDS, len(seq) - 1))
    prev, cur = seq[:-1, None], seq[1:, None]
    for m, params in enumerate(models):
        x = one_hot_inputs(prev, cur, m, params.conditioned)
        logits, _, _ = forward(params, x, params.zero_state(1))
        out[m] = np.take_along_axis(log_softmax(logits[:, 0]), seq[1:, m:m + 1], axis=-1)[:, 0]
    return out


# --- checkpoints --------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIIIBBQ")


def save_checkpoint(path, params: ModelParams) -> None:
    """Little-endian container: header, class counts, layer input dims, then
    float32 arrays in :meth:`ModelParams.arrays` order, followed by the Adam
    first and second moments when present."""
    arrays = params.arrays()
    has_adam = params.adam is not None
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.submodel,
                          params.num_layers, params.hidden, FieldLayout.input_dim(params.submodel),
                          params.num_classes, int(params.conditioned), int(has_adam),
                          params.adam.step if has_adam else 0)
    dims = [FieldLayout.input_dim(params.submodel)] + [params.hidden] * (params.num_layers - 1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<5I", *CLASS_COUNTS))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        blobs = arrays + (params.adam.m + params.adam.v if has_adam else [])
        for a in blobs:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an XMG1 checkpoint")
    (_, version, m, num_layers, hidden, input_dim, num_classes, conditioned,
     has_adam, step) = _HEADER.unpack_from(data)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = _HEADER.size
    counts = struct.unpack_from("<5I", data, pos)
    pos += 20
    if tuple(counts) != CLASS_COUNTS or input_dim != FieldLayout.input_dim(m) \
            or num_classes != CLASS_COUNTS[m]:
        raise ValueError(f"{path}: layout does not match this build")
    dims = struct.unpack_from(f"<{num_layers}I", data, pos)
    pos += 4 * num_layers

    shapes = []
    for d in dims:
        shapes += [(4 * hidden, d), (4 * hidden, hidden), (4 * hidden,)]
    shapes += [(num_classes, hidden), (num_classes,)]

    def take(n_arrays):
        nonlocal pos
        out = []
        for shape in shapes[:n_arrays]:
            size = int(np.prod(shape))
            if pos + 4 * size > len(data):
                raise ValueError(f"{path}: truncated checkpoint")
            out.append(np.frombuffer(data, "<f4", size, pos).astype(np.float64).reshape(shape))
            pos += 4 * size
        return out

    arrays = take(len(shapes))
    layers = [tuple(arrays[3 * l:3 * l + 3]) for l in range(num_layers)]
    params = ModelParams(m, layers, arrays[-2], arrays[-1], bool(conditioned))
    if has_adam:
        params.adam = AdamState(take(len(shapes)), take(len(shapes)), step)
    return params
