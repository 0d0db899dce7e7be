"""Neural building blocks: dense stacks, LSTM layers and the dynamics net.

The unforced-dynamics function is an encoder-LSTM-decoder returning one
scalar increment per step. Its input is the feature vector with the latent
drift value appended; power and exogenous temperatures are rejected at the
door because the consistency argument requires the function to be blind to
them.

Parameters are plain float64 arrays owned by the net object; every forward
pass binds them to a fresh tape (see :class:`BoundNet`), so passes over
distinct windows are independent and parameters stay immutable while a
batch is in flight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import autograd as ag
from ._validation import check_is_fitted
from .timeseries import FEATURE_LAYOUT, FORBIDDEN_FEATURES

__all__ = [
    "NetConfig",
    "DynamicsNet",
    "BoundNet",
    "lstm_step",
    "f_forward",
    "init_net",
    "LstmForecaster",
    "LstmRegressor",
    "write_checkpoint",
    "read_checkpoint",
]

CHECKPOINT_HEADER = "thermoseed-checkpoint v1"


@dataclass(frozen=True)
class NetConfig:
    """Layer widths; defaults are desk-scale, not the full-size variant."""

    feature_dim: int
    encoder: tuple = (32, 32)
    lstm_hidden: int = 64
    lstm_layers: int = 2
    decoder: tuple = (32, 32)
    extra_inputs: int = 1  # latent drift value appended to the features

    @property
    def input_dim(self):
        return self.feature_dim + self.extra_inputs


def _uniform_fan_in(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape)


class DynamicsNet:
    """Encoder-LSTM-decoder with learned initial recurrent states."""

    def __init__(self, config, params):
        self.config = config
        self.params = params  # name -> float64 ndarray, insertion-ordered

    def param_items(self):
        return list(self.params.items())

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params):
        for name, arr in params.items():
            if name not in self.params or self.params[name].shape != arr.shape:
                raise ValueError(f"checkpoint tensor {name!r} does not match the net layout")
            self.params[name][...] = arr


def init_net(config, seed):
    """Fresh net: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero
    biases, zero (but trainable) initial LSTM states."""
    rng = np.random.default_rng(seed)
    params = {}
    dim = config.input_dim
    for i, width in enumerate(config.encoder):
        params[f"encoder.{i}.w"] = _uniform_fan_in(rng, dim, (dim, width))
        params[f"encoder.{i}.b"] = np.zeros(width)
        dim = width
    hidden = config.lstm_hidden
    for layer in range(config.lstm_layers):
        fan_in = dim + hidden
        params[f"lstm.{layer}.w"] = _uniform_fan_in(rng, fan_in, (fan_in, 4 * hidden))
        params[f"lstm.{layer}.b"] = np.zeros(4 * hidden)
        dim = hidden
    params["lstm.h0"] = np.zeros((config.lstm_layers, hidden))
    params["lstm.c0"] = np.zeros((config.lstm_layers, hidden))
    for i, width in enumerate(config.decoder):
        params[f"decoder.{i}.w"] = _uniform_fan_in(rng, dim, (dim, width))
        params[f"decoder.{i}.b"] = np.zeros(width)
        dim = width
    params["decoder.out.w"] = _uniform_fan_in(rng, dim, (dim, 1))
    params["decoder.out.b"] = np.zeros(1)
    return DynamicsNet(config, params)


class BoundNet:
    """Net parameters bound to a tape, with cached transposed weights."""

    def __init__(self, net, tape):
        self.config = net.config
        if tape is None:
            self.leaves = {k: ag.Tensor(v) for k, v in net.params.items()}
        else:
            self.leaves = {k: tape.leaf(v) for k, v in net.params.items()}
        self.wt = {
            k: np.ascontiguousarray(v.data.T)
            for k, v in self.leaves.items()
            if k.endswith(".w") and v.data.ndim == 2
        }

    def leaf_list(self, names):
        return [self.leaves[n] for n in names]

    def initial_state(self, batch_size):
        """Learned initial (h, c) per layer, tiled across the batch."""
        state = []
        h0, c0 = self.leaves["lstm.h0"], self.leaves["lstm.c0"]
        for layer in range(self.config.lstm_layers):
            h = ag.tile_rows(ag.row_slice(h0, layer), batch_size)
            c = ag.tile_rows(ag.row_slice(c0, layer), batch_size)
            state.append((h, c))
        return state

    def lstm_stack(self, x, state):
        new_state = []
        out = x
        for layer, (h, c) in enumerate(state):
            w, b = self.leaves[f"lstm.{layer}.w"], self.leaves[f"lstm.{layer}.b"]
            out, c_new = ag.lstm_cell(out, h, c, w, b, self.wt.get(f"lstm.{layer}.w"))
            new_state.append((out, c_new))
        return out, new_state

    def forward(self, inputs, state):
        """One step through encoder, LSTM stack and decoder."""
        out = inputs
        for i in range(len(self.config.encoder)):
            w, b = self.leaves[f"encoder.{i}.w"], self.leaves[f"encoder.{i}.b"]
            out = ag.affine_relu(out, w, b, self.wt.get(f"encoder.{i}.w"))
        out, new_state = self.lstm_stack(out, state)
        for i in range(len(self.config.decoder)):
            w, b = self.leaves[f"decoder.{i}.w"], self.leaves[f"decoder.{i}.b"]
            out = ag.affine_relu(out, w, b, self.wt.get(f"decoder.{i}.w"))
        # final layer linear so the increment can be negative
        inc = ag.affine(out, self.leaves["decoder.out.w"], self.leaves["decoder.out.b"], self.wt.get("decoder.out.w"))
        return inc, new_state


def lstm_step(bound, inputs, state):
    """One step of the LSTM stack alone: (output, new state)."""
    return bound.lstm_stack(inputs, state)


def f_forward(bound, drift, x, state, layout=None):
    """Increment of the unforced dynamics: decoder(lstm(encoder([x, D]))).

    ``drift`` is the (B, 1) latent value appended to the (B, F) features.
    When ``layout`` is given the feature names are checked; power or
    exogenous-temperature features are a hard error, by design.
    """
    if layout is not None:
        bad = [n for n in layout if n in FORBIDDEN_FEATURES]
        if bad:
            raise ValueError(
                f"features {bad} must not be fed to the dynamics function; "
                "they are handled by the energy accumulator"
            )
    inputs = ag.concat([x, drift], axis=1)
    return bound.forward(inputs, state)


class LstmForecaster:
    """Plain encoder-LSTM-decoder baseline without the physics module.

    The temperature itself is the recurrent latent: T[t+1] = T[t] +
    f(T[t], all inputs), where the inputs do include power and exogenous
    temperatures. It deliberately has no consistency guarantee; the
    verification suite records (but does not assert) its sensitivities.
    """

    kind = "lstm"

    def __init__(self, net, normalizer, feature_names, warm_steps=12):
        self.net = net
        self.normalizer = normalizer
        self.feature_names = tuple(feature_names)
        self.warm_steps = warm_steps

    @property
    def input_channels(self):
        return self.feature_names + ("power", "temperature_out", "temperature_neigh")

    def trainable_items(self):
        return self.net.param_items()

    def snapshot(self):
        return self.net.copy_params()

    def restore(self, snap):
        self.net.load_params(snap)

    def post_epoch(self):
        return ()

    def _roll(self, tape, batch, collect_from):
        """Shared recursion; returns predictions from step index ``collect_from``."""
        n, b = batch.temp.shape
        bound = BoundNet(self.net, tape)
        state = bound.initial_state(b)
        warm = self.warm_steps
        temp = ag.Tensor(batch.temp[0].reshape(b, 1))
        preds = []
        for t in range(n - 1):
            if t < warm:
                temp = ag.Tensor(batch.temp[t].reshape(b, 1))
            features = np.concatenate(
                [batch.x[t], batch.u[t].reshape(b, 1), batch.t_out[t].reshape(b, 1), batch.t_neigh[t].reshape(b, 1)],
                axis=1,
            )
            inc, state = bound.forward(ag.concat([ag.Tensor(features), temp], axis=1), state)
            temp = ag.add(temp, inc)
            if t + 1 >= collect_from:
                preds.append(temp)
        return preds, bound

    def batch_loss(self, tape, batch):
        preds, bound = self._roll(tape, batch, collect_from=self.warm_steps + 1)
        stacked = ag.concat(preds, axis=1)
        target = batch.temp[self.warm_steps + 1 :].T
        err = ag.sub(stacked, target)
        loss = ag.scale(ag.sum_all(ag.square(err)), 1.0 / err.data.size)
        return loss, bound.leaves

    def predict_batch(self, batch):
        preds, _ = self._roll(None, batch, collect_from=self.warm_steps + 1)
        return np.concatenate([p.data for p in preds], axis=1)

    def predict_window(self, window, denormalize=False):
        from .training import WindowBatch

        batch = WindowBatch.from_windows([window])
        out = self.predict_batch(batch)[0]
        if denormalize:
            out = self.normalizer.denormalize_values("temperature", out)
        return out

    def sensitivity_numeric(self, window, channel, j, i, delta=1e-3):
        """Perturbation sensitivity of T[k+i] to the input at k+i-j.

        No analytic counterpart exists for this model; the verification
        suite records these values (sign checks only).
        """
        if not (1 <= j <= i <= window.horizon):
            raise ValueError(f"need 1 <= j <= i <= horizon, got j={j}, i={i}")
        row = window.warm_steps + i - j
        up = self.predict_window(window.perturbed(channel, row, delta), denormalize=False)
        down = self.predict_window(window.perturbed(channel, row, -delta), denormalize=False)
        return (up[i - 1] - down[i - 1]) / (2.0 * delta)

    def save(self, path):
        tensors = {f"net.{k}": v for k, v in self.net.param_items()}
        meta = {
            "kind": self.kind,
            "features": ",".join(self.feature_names),
            "warm_steps": str(self.warm_steps),
        }
        meta.update(self.normalizer.to_meta())
        write_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path):
        from .timeseries import Normalizer

        tensors, meta = read_checkpoint(path)
        feature_names = tuple(meta["features"].split(","))
        net_params = {k[len("net.") :]: v.copy() for k, v in tensors.items() if k.startswith("net.")}
        encoder = []
        i = 0
        while f"encoder.{i}.w" in net_params:
            encoder.append(net_params[f"encoder.{i}.w"].shape[1])
            i += 1
        decoder = []
        i = 0
        while f"decoder.{i}.w" in net_params:
            decoder.append(net_params[f"decoder.{i}.w"].shape[1])
            i += 1
        layers, hidden = net_params["lstm.h0"].shape
        config = NetConfig(
            feature_dim=len(feature_names) + 3,
            encoder=tuple(encoder),
            lstm_hidden=hidden,
            lstm_layers=layers,
            decoder=tuple(decoder),
        )
        net = DynamicsNet(config, net_params)
        return cls(net, Normalizer.from_meta(meta), feature_names, warm_steps=int(meta["warm_steps"]))


class LstmRegressor(BaseEstimator):
    """Sklearn-style facade over the plain LSTM baseline."""

    def __init__(
        self,
        encoder=(32, 32),
        lstm_hidden=64,
        lstm_layers=2,
        decoder=(32, 32),
        warm_steps=12,
        epochs=20,
        batch_size=16,
        base_lr=0.001,
        seed=0,
    ):
        self.encoder = encoder
        self.lstm_hidden = lstm_hidden
        self.lstm_layers = lstm_layers
        self.decoder = decoder
        self.warm_steps = warm_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.seed = seed

    def fit(self, train_windows, val_windows, normalizer):
        from .training import train

        feature_names = FEATURE_LAYOUT
        config = NetConfig(
            feature_dim=len(feature_names) + 3,  # features plus u, Tout, Tneigh
            encoder=tuple(self.encoder),
            lstm_hidden=self.lstm_hidden,
            lstm_layers=self.lstm_layers,
            decoder=tuple(self.decoder),
        )
        model = LstmForecaster(init_net(config, self.seed), normalizer, feature_names, self.warm_steps)
        self.model_, self.result_ = train(
            model, train_windows, val_windows, epochs=self.epochs, seed=self.seed,
            batch_size=self.batch_size, base_lr=self.base_lr,
        )
        return self

    def predict(self, windows):
        check_is_fitted(self, "model_")
        return [self.model_.predict_window(w, denormalize=True) for w in windows]


def write_checkpoint(path, tensors, meta):
    """Flat text checkpoint: versioned header, meta lines, one line per
    tensor as ``tensor <name> <shape> <hex of little-endian float64>``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CHECKPOINT_HEADER + "\n")
        for key in sorted(meta):
            fh.write(f"meta {key} {meta[key]}\n")
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            shape = ",".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
            fh.write(f"tensor {name} {shape} {arr.tobytes().hex()}\n")


def read_checkpoint(path):
    tensors = {}
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CHECKPOINT_HEADER:
            raise ValueError(f"{path}: unsupported checkpoint header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            kind, rest = line.split(" ", 1)
            if kind == "meta":
                key, value = rest.split(" ", 1)
                meta[key] = value
            elif kind == "tensor":
                name, shape, hexdata = rest.split(" ")
                arr = np.frombuffer(bytes.fromhex(hexdata), dtype="<f8").astype(np.float64)
                if shape != "scalar":
                    arr = arr.reshape(tuple(int(s) for s in shape.split(",")))
                else:
                    arr = arr.reshape(())
                tensors[name] = arr.copy()
            else:
                raise ValueError(f"{path}: unknown checkpoint line kind {kind!r}")
    return tensors, meta
