"""Character-level LSTM language model over token ids, in plain numpy.

Everything runs in float64. The backward pass is written out by hand and
checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator

import numpy as np

from .dataset import BatchSet

log = logging.getLogger(__name__)

LOG_FLOOR = math.log(1e-12)
IMPROVEMENT_THRESHOLD = 0.005


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 128
    num_layers: int = 2
    seq_len: int = 50
    batch_size: int = 50
    learning_rate: float = 1.0  # plain SGD on the mean per-token loss
    clip_norm: float = 5.0
    anneal_factor: float = 0.97
    anneal_threshold: float = IMPROVEMENT_THRESHOLD
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "seq_len", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.anneal_factor < 1:
            raise ValueError("anneal_factor must lie in (0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    @classmethod
    def classical(cls, vocab_size: int, **kw) -> "ModelConfig":
        """Smaller batch and window, for corpora with very large vocabularies."""
        kw.setdefault("batch_size", 25)
        kw.setdefault("seq_len", 25)
        return cls(vocab_size, **kw)


@dataclass
class Parameters:
    embedding: np.ndarray
    Wx: list[np.ndarray]
    Wh: list[np.ndarray]
    b: list[np.ndarray]
    Wo: np.ndarray
    bo: np.ndarray

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "embedding", self.embedding
        for layer, (wx, wh, b) in enumerate(zip(self.Wx, self.Wh, self.b), 1):
            yield f"lstm{layer}.Wx", wx
            yield f"lstm{layer}.Wh", wh
            yield f"lstm{layer}.b", b
        yield "Wo", self.Wo
        yield "bo", self.bo

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    def map(self, fn: Callable[..., np.ndarray], *others: "Parameters") -> "Parameters":
        """Apply ``fn`` array-wise across this and ``others``."""
        def go(attr):
            mine = getattr(self, attr)
            theirs = [getattr(o, attr) for o in others]
            if isinstance(mine, list):
                return [fn(*xs) for xs in zip(mine, *theirs)]
            return fn(mine, *theirs)
        return Parameters(*(go(f.name) for f in fields(self)))

    def copy(self) -> "Parameters":
        return self.map(np.copy)

    @property
    def num_layers(self) -> int:
        return len(self.Wx)

    @property
    def hidden_dim(self) -> int:
        return self.Wh[0].shape[1]

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]


# Gradients share the parameter layout.
Gradients = Parameters


@dataclass
class ModelState:
    h: list[np.ndarray]
    c: list[np.ndarray]

    def copy(self) -> "ModelState":
        return ModelState([x.copy() for x in self.h], [x.copy() for x in self.c])


def zero_state(params: Parameters, batch_size: int) -> ModelState:
    H = params.hidden_dim
    n = params.num_layers
    return ModelState([np.zeros((batch_size, H)) for _ in range(n)],
                      [np.zeros((batch_size, H)) for _ in range(n)])


def init_params(config: ModelConfig, rng: np.random.Generator | None = None) -> Parameters:
    """Uniform(-0.05, 0.05) weights, zero biases, forget-gate bias 1."""
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    V, E, H = config.vocab_size, config.embed_dim, config.hidden_dim

    def u(*shape):
        return rng.uniform(-0.05, 0.05, size=shape)

    embedding = u(V, E)
    Wx, Wh, b = [], [], []
    for layer in range(config.num_layers):
        Wx.append(u(4 * H, E if layer == 0 else H))
        Wh.append(u(4 * H, H))
        bias = np.zeros(4 * H)
        bias[H:2 * H] = 1.0
        b.append(bias)
    return Parameters(embedding, Wx, Wh, b, u(V, H), np.zeros(V))


# -- forward -------------------------------------------------------------------

def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _gates(x, h_prev, Wx, Wh, b):
    H = Wh.shape[1]
    if x.shape[1] != Wx.shape[1] or h_prev.shape[1] != H or Wx.shape[0] != 4 * H or b.shape != (4 * H,):
        raise ValueError(
            f"shape mismatch: x{x.shape} h{h_prev.shape} Wx{Wx.shape} Wh{Wh.shape} b{b.shape}"
        )
    z = x @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    o = sigmoid(z[:, 2 * H:3 * H])
    g = np.tanh(z[:, 3 * H:])
    return i, f, o, g


def lstm_cell(x, h_prev, c_prev, Wx, Wh, b):
    """One LSTM step with gate order (input, forget, output, candidate)."""
    if c_prev.shape != h_prev.shape:
        raise ValueError(f"shape mismatch: h{h_prev.shape} c{c_prev.shape}")
    i, f, o, g = _gates(x, h_prev, Wx, Wh, b)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


@dataclass
class ForwardCache:
    X: np.ndarray
    # per layer, arrays stacked along time: shape (T, B, .)
    inputs: list[np.ndarray] = field(default_factory=list)
    h_prev: list[np.ndarray] = field(default_factory=list)
    c_prev: list[np.ndarray] = field(default_factory=list)
    i: list[np.ndarray] = field(default_factory=list)
    f: list[np.ndarray] = field(default_factory=list)
    o: list[np.ndarray] = field(default_factory=list)
    g: list[np.ndarray] = field(default_factory=list)
    tanh_c: list[np.ndarray] = field(default_factory=list)
    top_h: np.ndarray | None = None  # (B, T, H)
    logits: np.ndarray | None = None


def forward(params: Parameters, state: ModelState, X) -> tuple[np.ndarray, ModelState, ForwardCache]:
    X = np.asarray(X, dtype=np.int64)
    if X.ndim != 2:
        raise ValueError(f"X must be (batch, time), got shape {X.shape}")
    B, T = X.shape
    V = params.vocab_size
    H = params.hidden_dim
    L = params.num_layers
    if len(state.h) != L or any(h.shape != (B, H) for h in state.h + state.c):
        raise ValueError("state does not match parameters / batch size")
    if X.size and (X.min() < 0 or X.max() >= V):
        raise ValueError("token id out of range")

    cache = ForwardCache(X)
    h = [x.copy() for x in state.h]
    c = [x.copy() for x in state.c]
    layer_in = np.transpose(params.embedding[X], (1, 0, 2))  # (T, B, E)
    for layer in range(L):
        Wx, Wh, b = params.Wx[layer], params.Wh[layer], params.b[layer]
        hs = np.empty((T, B, H))
        rec = {k: np.empty((T, B, H)) for k in ("h_prev", "c_prev", "i", "f", "o", "g", "tanh_c")}
        hl, cl = h[layer], c[layer]
        for t in range(T):
            rec["h_prev"][t], rec["c_prev"][t] = hl, cl
            i, f, o, g = _gates(layer_in[t], hl, Wx, Wh, b)
            cl = f * cl + i * g
            tc = np.tanh(cl)
            hl = o * tc
            rec["i"][t], rec["f"][t], rec["o"][t], rec["g"][t], rec["tanh_c"][t] = i, f, o, g, tc
            hs[t] = hl
        h[layer], c[layer] = hl, cl
        cache.inputs.append(layer_in)
        for k, v in rec.items():
            getattr(cache, k).append(v)
        layer_in = hs

    top = np.transpose(layer_in, (1, 0, 2))  # (B, T, H)
    logits = top @ params.Wo.T + params.bo
    cache.top_h = top
    cache.logits = logits
    return logits, ModelState(h, c), cache


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(probs, Y) -> float:
    """Mean negative log-likelihood in nats; log is floored at log(1e-12)."""
    probs = np.asarray(probs)
    Y = np.asarray(Y)
    if Y.size == 0:
        return 0.0
    picked = np.take_along_axis(probs, Y[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        logs = np.maximum(np.log(picked), LOG_FLOOR)
    return float(-logs.mean())


def loss_from_logits(logits, Y) -> float:
    """Same quantity as ``cross_entropy(softmax(logits), Y)``, computed via log-softmax."""
    Y = np.asarray(Y)
    if Y.size == 0:
        return 0.0
    lp = np.take_along_axis(log_softmax(logits), Y[..., None], axis=-1)[..., 0]
    return float(-np.maximum(lp, LOG_FLOOR).mean())


# -- backward ------------------------------------------------------------------

def backward(params: Parameters, cache: ForwardCache, Y) -> Gradients:
    """Gradients of the mean cross-entropy for one block.

    Gradient is not propagated into the block's incoming state.
    """
    Y = np.asarray(Y, dtype=np.int64)
    X = cache.X
    B, T = X.shape
    H = params.hidden_dim
    L = params.num_layers
    grads = params.map(np.zeros_like)
    if T == 0:
        return grads

    dlogits = softmax(cache.logits)
    np.put_along_axis(dlogits, Y[..., None],
                      np.take_along_axis(dlogits, Y[..., None], axis=-1) - 1.0, axis=-1)
    dlogits /= B * T
    grads.Wo = np.einsum("btv,bth->vh", dlogits, cache.top_h)
    grads.bo = dlogits.sum(axis=(0, 1))
    # gradient reaching the top layer's h at every step, (T, B, H)
    dh_in = np.transpose(dlogits @ params.Wo, (1, 0, 2))

    for layer in reversed(range(L)):
        Wx, Wh = params.Wx[layer], params.Wh[layer]
        xs = cache.inputs[layer]
        i_, f_, o_, g_ = cache.i[layer], cache.f[layer], cache.o[layer], cache.g[layer]
        tc_, cp_, hp_ = cache.tanh_c[layer], cache.c_prev[layer], cache.h_prev[layer]
        dx_all = np.empty_like(xs)
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros(4 * H)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dz = np.empty((B, 4 * H))
        for t in reversed(range(T)):
            i, f, o, g, tc = i_[t], f_[t], o_[t], g_[t], tc_[t]
            dh = dh_in[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cp_[t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - g * g)
            dWx += dz.T @ xs[t]
            dWh += dz.T @ hp_[t]
            db += dz.sum(axis=0)
            dx_all[t] = dz @ Wx
            dh_next = dz @ Wh
            dc_next = dc * f
        grads.Wx[layer], grads.Wh[layer], grads.b[layer] = dWx, dWh, db
        dh_in = dx_all

    dE = np.zeros_like(params.embedding)
    np.add.at(dE, X.T.reshape(-1), dh_in.reshape(T * B, -1))
    grads.embedding = dE
    return grads


# -- optimisation ----------------------------------------------------------------

def global_norm(grads: Gradients) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays()))


def clip_gradients(grads: Gradients, clip_norm: float) -> Gradients:
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    n = global_norm(grads)
    if n <= clip_norm:
        return grads
    scale = clip_norm / n
    return grads.map(lambda a: a * scale)


def sgd_step(params: Parameters, grads: Gradients, lr: float) -> Parameters:
    return params.map(lambda p, g: p - lr * g, grads)


def anneal_lr(losses, lr: float, factor: float = 0.97,
              threshold: float = IMPROVEMENT_THRESHOLD) -> float:
    """Shrink ``lr`` by ``factor`` when the last epoch improved by less than ``threshold``."""
    if len(losses) < 2:
        return lr
    prev, cur = losses[-2], losses[-1]
    if prev <= 0 or (prev - cur) / prev < threshold:
        return lr * factor
    return lr


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    learning_rate: float


def evaluate(params: Parameters, batches: BatchSet) -> float:
    """Mean block loss over one pass, with state carried but no updates."""
    state = zero_state(params, batches.batch_size)
    losses = []
    for X, Y in batches:
        logits, state, _ = forward(params, state, X)
        losses.append(loss_from_logits(logits, Y))
    return float(np.mean(losses))


def train(
    config: ModelConfig,
    batches: BatchSet,
    epochs: int = 50,
    params: Parameters | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[Parameters, list[EpochRecord]]:
    """Plain SGD with global-norm clipping and per-epoch learning-rate annealing.

    State starts at zero each epoch and is carried from block to block.
    The learning rate recorded for an epoch is the one used during it.
    """
    if len(batches) == 0:
        raise ValueError("no training blocks")
    if params is None:
        params = init_params(config, np.random.default_rng(config.rng_seed))
    lr = config.learning_rate
    history: list[EpochRecord] = []
    for epoch in range(1, epochs + 1):
        state = zero_state(params, batches.batch_size)
        total = 0.0
        for X, Y in batches:
            logits, state, cache = forward(params, state, X)
            total += loss_from_logits(logits, Y)
            grads = clip_gradients(backward(params, cache, Y), config.clip_norm)
            params = sgd_step(params, grads, lr)
        rec = EpochRecord(epoch, total / len(batches), lr)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        new_lr = anneal_lr([r.loss for r in history], lr, config.anneal_factor, config.anneal_threshold)
        if new_lr != lr:
            log.info("epoch %d: annealing learning rate %.6g -> %.6g", epoch, lr, new_lr)
        lr = new_lr
    return params, history


def history_to_csv(history: list[EpochRecord]) -> str:
    lines = ["epoch,loss,learning_rate"]
    lines += [f"{r.epoch},{r.loss!r},{r.learning_rate!r}" for r in history]
    return "\n".join(lines) + "\n"


# -- checkpoints -----------------------------------------------------------------

MAGIC = b"MLSTMCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


def save_checkpoint(params: Parameters, config: ModelConfig, meta: dict | None = None) -> bytes:
    """Serialize to bytes.

    Layout: magic, u32 version, u32 length + JSON config block, u32 array
    count, then per array (u16 name length, name, u8 rank, u32 dims,
    float64 little-endian data), then a CRC-32 of everything before it.
    """
    block = json.dumps({"config": asdict(config), "meta": meta or {}}, sort_keys=True).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(block)) + block
    named = list(params.named_arrays())
    out += struct.pack("<I", len(named))
    for name, arr in named:
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def load_checkpoint(data: bytes) -> tuple[Parameters, ModelConfig, dict]:
    data = bytes(data)
    if len(data) < len(MAGIC) + 12 or not data.startswith(MAGIC):
        raise CorruptCheckpoint("not a checkpoint (bad magic or too short)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CorruptCheckpoint("checksum mismatch")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, pos)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    try:
        pos += 4
        (blen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        head = json.loads(body[pos:pos + blen].decode())
        pos += blen
        config = ModelConfig(**head["config"])
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode()
            pos += nlen
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            raw = body[pos:pos + 8 * n]
            if len(raw) != 8 * n:
                raise CorruptCheckpoint(f"array {name} truncated")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
            pos += 8 * n
        if pos != len(body):
            raise CorruptCheckpoint("trailing bytes after arrays")
        L = config.num_layers
        params = Parameters(
            arrays["embedding"],
            [arrays[f"lstm{k}.Wx"] for k in range(1, L + 1)],
            [arrays[f"lstm{k}.Wh"] for k in range(1, L + 1)],
            [arrays[f"lstm{k}.b"] for k in range(1, L + 1)],
            arrays["Wo"],
            arrays["bo"],
        )
    except CheckpointError:
        raise
    except (struct.error, KeyError, ValueError, TypeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint: {exc}") from exc
    return params, config, head.get("meta", {})
