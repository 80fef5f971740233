"""Neural building blocks on top of the autodiff engine.

Linear layers, LSTM/GRU cells, additive attention pooling, a named parameter
registry, and the on-disk checkpoint container. Everything is float64 and
initialized uniform in +-1/sqrt(fan_in).
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import autodiff as ad
from .autodiff import Value


class ParameterStore:
    """Registry of named parameters. Each name registers exactly once."""

    def __init__(self):
        self._params: dict[str, Value] = {}

    def register(self, name: str, array: np.ndarray) -> Value:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        v = Value(np.asarray(array, dtype=np.float64))
        self._params[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grads(self):
        for v in self._params.values():
            v.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:5]} ...")
        for name, v in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != v.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {v.data.shape}")
            v.data = arr.copy()


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    """y = x @ W + b, with x of shape (batch, n_in)."""

    def __init__(self, store: ParameterStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.W = store.register(f"{name}.W", _uniform(rng, n_in, (n_in, n_out)))
        self.b = store.register(f"{name}.b", _uniform(rng, n_in, (n_out,)))

    def __call__(self, x: Value) -> Value:
        if x.data.shape[-1] != self.n_in:
            raise ValueError(f"Linear expected {self.n_in} inputs, got {x.data.shape}")
        return x @ self.W + self.b


class MLP:
    """Feedforward net with tanh hidden activations and a linear head."""

    def __init__(self, store, name, dims, rng):
        self.layers = [Linear(store, f"{name}.l{i}", dims[i], dims[i + 1], rng)
                       for i in range(len(dims) - 1)]

    def __call__(self, x: Value) -> Value:
        for layer in self.layers[:-1]:
            x = ad.tanh(layer(x))
        return self.layers[-1](x)


class LSTMCell:
    """Standard LSTM cell.

    Gate order in the stacked weights is (input, forget, cell, output):
        i = sigmoid(x Wx_i + h Wh_i + b_i)
        f = sigmoid(x Wx_f + h Wh_f + b_f)
        g = tanh   (x Wx_g + h Wh_g + b_g)
        o = sigmoid(x Wx_o + h Wh_o + b_o)
        c' = f*c + i*g ;  h' = o * tanh(c')
    """

    def __init__(self, store, name, n_in, n_hidden, rng):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.Wx = store.register(f"{name}.Wx", _uniform(rng, n_in, (n_in, 4 * n_hidden)))
        self.Wh = store.register(f"{name}.Wh", _uniform(rng, n_hidden, (n_hidden, 4 * n_hidden)))
        self.b = store.register(f"{name}.b", _uniform(rng, n_in, (4 * n_hidden,)))

    def step(self, x: Value, h: Value, c: Value):
        if x.data.shape[-1] != self.n_in:
            raise ValueError(f"LSTMCell expected input dim {self.n_in}, got {x.data.shape}")
        H = self.n_hidden
        z = x @ self.Wx + h @ self.Wh + self.b
        i = ad.sigmoid(z[:, 0 * H:1 * H])
        f = ad.sigmoid(z[:, 1 * H:2 * H])
        g = ad.tanh(z[:, 2 * H:3 * H])
        o = ad.sigmoid(z[:, 3 * H:4 * H])
        c_next = f * c + i * g
        h_next = o * ad.tanh(c_next)
        return h_next, c_next

    def zero_state(self, batch: int):
        z = Value(np.zeros((batch, self.n_hidden)))
        return z, Value(np.zeros((batch, self.n_hidden)))

    def run(self, xs: Value) -> Value:
        """Unroll over xs of shape (batch, T, n_in); returns final hidden state."""
        batch = xs.data.shape[0]
        h, c = self.zero_state(batch)
        for t in range(xs.data.shape[1]):
            h, c = self.step(xs[:, t, :], h, c)
        return h


class GRUCell:
    """Gated recurrent unit.

    Gate order (reset, update, candidate):
        r  = sigmoid(x Wx_r + h Wh_r + b_r)
        u  = sigmoid(x Wx_u + h Wh_u + b_u)
        n  = tanh   (x Wx_n + r * (h Wh_n) + b_n)
        h' = (1 - u) * n + u * h
    """

    def __init__(self, store, name, n_in, n_hidden, rng):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.Wx = store.register(f"{name}.Wx", _uniform(rng, n_in, (n_in, 3 * n_hidden)))
        self.Wh = store.register(f"{name}.Wh", _uniform(rng, n_hidden, (n_hidden, 3 * n_hidden)))
        self.b = store.register(f"{name}.b", _uniform(rng, n_in, (3 * n_hidden,)))

    def step(self, x: Value, h: Value) -> Value:
        if x.data.shape[-1] != self.n_in:
            raise ValueError(f"GRUCell expected input dim {self.n_in}, got {x.data.shape}")
        H = self.n_hidden
        xa = x @ self.Wx + self.b
        ha = h @ self.Wh
        r = ad.sigmoid(xa[:, 0 * H:1 * H] + ha[:, 0 * H:1 * H])
        u = ad.sigmoid(xa[:, 1 * H:2 * H] + ha[:, 1 * H:2 * H])
        n = ad.tanh(xa[:, 2 * H:3 * H] + r * ha[:, 2 * H:3 * H])
        return (1.0 - u) * n + u * h


class AdditiveAttention:
    """Additive (score = v . tanh(Wq q + Wk k + b)) attention pooling.

    Keys double as values unless values are given. Pooling an empty set
    returns a zero context vector.
    """

    def __init__(self, store, name, query_dim, key_dim, attn_dim, rng):
        self.query_dim, self.key_dim, self.attn_dim = query_dim, key_dim, attn_dim
        self.Wq = store.register(f"{name}.Wq", _uniform(rng, query_dim, (query_dim, attn_dim)))
        self.Wk = store.register(f"{name}.Wk", _uniform(rng, key_dim, (key_dim, attn_dim)))
        self.b = store.register(f"{name}.b", _uniform(rng, attn_dim, (attn_dim,)))
        self.v = store.register(f"{name}.v", _uniform(rng, attn_dim, (attn_dim, 1)))

    def pool(self, query: Value, keys, values=None):
        """query (batch, query_dim); keys: list of (batch, key_dim)."""
        if values is None:
            values = keys
        if len(keys) == 0:
            batch = query.data.shape[0]
            return Value(np.zeros((batch, self.key_dim)))
        if len(keys) == 1:
            # softmax over a single score is exactly 1, with zero gradient
            # through the scoring parameters
            return values[0]
        if query.data.shape[-1] != self.query_dim:
            raise ValueError(f"attention query dim {query.data.shape} != {self.query_dim}")
        for k in keys:
            if k.data.shape[-1] != self.key_dim:
                raise ValueError(f"attention key dim {k.data.shape} != {self.key_dim}")
        q = query @ self.Wq
        scores = [ad.tanh(q + (k @ self.Wk) + self.b) @ self.v for k in keys]  # (batch,1) each
        w = ad.softmax(ad.concat(scores, axis=1), axis=1)  # (batch, n)
        ctx = w[:, 0:1] * values[0]
        for j in range(1, len(values)):
            ctx = ctx + w[:, j:j + 1] * values[j]
        return ctx

    def weights(self, query: Value, keys) -> Value:
        q = query @ self.Wq
        scores = [ad.tanh(q + (k @ self.Wk) + self.b) @ self.v for k in keys]
        return ad.softmax(ad.concat(scores, axis=1), axis=1)


# Functional aliases for the cell operations.

def lstm_step(cell: LSTMCell, x: Value, state) -> tuple:
    h, c = state
    return cell.step(x, h, c)


def gru_step(cell: GRUCell, x: Value, h: Value) -> Value:
    return cell.step(x, h)


def attention_pool(attn: AdditiveAttention, query: Value, keys, values=None) -> Value:
    return attn.pool(query, keys, values)


# ----------------------------------------------------------------------
# checkpoint container
#
# Layout (documented contract): a NumPy .npz archive. Every model parameter
# is stored as a float64 .npy member under its registry name; the JSON
# metadata (architecture dims, config hash, format version) is stored as a
# 0-d unicode array under the reserved key "__meta__".
# ----------------------------------------------------------------------

CHECKPOINT_FORMAT = "cliquecast-ckpt/1"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict):
    if "__meta__" in arrays:
        raise ValueError("'__meta__' is a reserved checkpoint key")
    meta = dict(meta)
    meta.setdefault("format", CHECKPOINT_FORMAT)
    payload = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **payload)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        arrays = {k: archive[k] for k in archive.files if k != "__meta__"}
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {meta.get('format')!r}")
    return arrays, meta
