"""Trainable sequence encoders producing fixed-width feature vectors.

Three architectures share one training recipe: encode an (N, T, F)
standardized sequence batch into a final hidden representation, apply
inverted dropout, project to ``n_features_out`` features, and regress a
scalar head against the standardized target with mean squared error,
optimized by Adam over seeded mini-batches.  Everything downstream of the
dropout layer is affine, so inference (dropout off) equals the training-
time expectation.
"""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from ._validation import check_1d, check_sequence_array

__all__ = [
    "SequenceEncoder",
    "LSTMEncoder",
    "TransformerEncoder",
    "StateSpaceEncoder",
    "ENCODER_KINDS",
    "make_encoder",
    "save_checkpoint",
    "load_checkpoint",
]


def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SequenceEncoder(TransformerMixin, BaseEstimator):
    """Shared fit/transform machinery; subclasses define the architecture."""

    kind = "base"

    def __init__(
        self,
        n_features_out=8,
        dropout=0.5,
        epochs=100,
        batch_size=32,
        learning_rate=1e-3,
        seed=0,
        target="survival_time",
        validation_fraction=0.2,
    ):
        self.n_features_out = n_features_out
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.target = target
        self.validation_fraction = validation_fraction

    # subclass hooks -----------------------------------------------------
    def _arch_params(self, rng, n_features):
        raise NotImplementedError

    def _hidden(self, p, steps):
        """Final hidden representation (N x width) from T step tensors."""
        raise NotImplementedError

    def _hidden_width(self):
        raise NotImplementedError

    # construction -------------------------------------------------------
    def _init_params(self, rng, n_features, head_dim):
        params = self._arch_params(rng, n_features)
        width = self._hidden_width()
        m = self.n_features_out
        params["w_feat"] = _uniform_init(rng, width, (width, m))
        params["b_feat"] = np.zeros((1, m))
        params["w_head"] = _uniform_init(rng, m, (m, head_dim))
        params["b_head"] = np.zeros((1, head_dim))
        return params

    def _validate_config(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.target not in ("survival_time", "next_step"):
            raise ValueError(f"unknown target {self.target!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")

    # graph building -----------------------------------------------------
    def _steps(self, data, input_grad=False):
        return [ad.tensor(np.ascontiguousarray(data[:, t, :]), requires_grad=input_grad) for t in range(data.shape[1])]

    def _forward(self, params, steps, drop_rng=None):
        """Returns (hidden, features, prediction) graph nodes."""
        p = {k: ad.tensor(v, requires_grad=True) for k, v in params.items()}
        hidden = self._hidden(p, steps)
        if drop_rng is not None and self.dropout > 0.0:
            keep = 1.0 - self.dropout
            mask = (drop_rng.random(hidden.shape) >= self.dropout) / keep
            hidden = ad.hadamard(hidden, ad.tensor(mask))
        features = ad.add(ad.matmul(hidden, p["w_feat"]), p["b_feat"])
        prediction = ad.add(ad.matmul(features, p["w_head"]), p["b_head"])
        return p, hidden, features, prediction

    def _training_arrays(self, data, valid_steps, y):
        """Model input, regression target (standardized), and head width."""
        n, t, f = data.shape
        if self.target == "survival_time":
            if y is None:
                raise ValueError("target='survival_time' needs y (survival times)")
            times = check_1d(y, "y", n)
            return data, times[:, None], 1
        # next_step: hide each sequence's final valid step and predict it
        steps = np.full(n, t, dtype=np.int64) if valid_steps is None else valid_steps
        inputs = data.copy()
        target = np.zeros((n, f))
        for i in range(n):
            last = max(int(steps[i]) - 1, 0)
            target[i] = data[i, last, :]
            inputs[i, last, :] = 0.0
        return inputs, target, f

    # estimator API ------------------------------------------------------
    def fit(self, X, y=None):
        """Train on sequences X (SequenceTensor or (N, T, F) array).

        For the default survival-time target, ``y`` holds one nonnegative
        time per sequence; it is z-scored internally so the MSE head works
        on a unit scale.
        """
        self._validate_config()
        data, valid_steps = check_sequence_array(X)
        n, t, f = data.shape
        inputs, target, head_dim = self._training_arrays(data, valid_steps, y)

        rng_init = np.random.default_rng([self.seed, 0])
        rng_shuffle = np.random.default_rng([self.seed, 1])
        rng_dropout = np.random.default_rng([self.seed, 2])
        rng_split = np.random.default_rng([self.seed, 3])

        n_val = int(round(self.validation_fraction * n))
        order = rng_split.permutation(n)
        val_idx, train_idx = order[:n_val], order[n_val:]
        if len(train_idx) == 0:
            raise ValueError("validation split leaves no training samples")

        mu = target[train_idx].mean(axis=0)
        sd = target[train_idx].std(axis=0)
        sd = np.where(sd == 0.0, 1.0, sd)
        z_target = (target - mu) / sd

        params = self._init_params(rng_init, f, head_dim)
        opt = ad.Adam(lr=self.learning_rate)
        batch = min(self.batch_size, len(train_idx))

        loss_history = []
        val_history = []
        for epoch in range(self.epochs):
            perm = rng_shuffle.permutation(len(train_idx))
            epoch_losses = []
            for b0 in range(0, len(train_idx), batch):
                rows = train_idx[perm[b0 : b0 + batch]]
                try:
                    steps = self._steps(inputs[rows])
                    p, _, _, pred = self._forward(params, steps, drop_rng=rng_dropout)
                    loss = ad.mse(pred, ad.tensor(z_target[rows]))
                    ad.backward(loss)
                except FloatingPointError as err:
                    raise RuntimeError(
                        f"{self.kind} training diverged at epoch {epoch + 1}, batch {b0 // batch + 1}: {err}"
                    ) from err
                grads = {k: p[k].grad if p[k].grad is not None else np.zeros_like(v) for k, v in params.items()}
                params = opt.step(params, grads)
                epoch_losses.append(float(loss.data))
            loss_history.append(float(np.mean(epoch_losses)))
            if len(val_idx):
                _, _, _, vp = self._forward(params, self._steps(inputs[val_idx]))
                val_history.append(float(ad.mse(vp, ad.tensor(z_target[val_idx])).data))

        self.params_ = params
        self.loss_history_ = loss_history
        self.val_loss_history_ = val_history
        self.n_steps_ = t
        self.n_features_in_ = f
        self.head_dim_ = head_dim
        self.target_mean_ = mu
        self.target_std_ = sd
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def transform(self, X) -> np.ndarray:
        """Deterministic feature vectors (N x n_features_out), dropout off."""
        self._check_fitted()
        data, _ = check_sequence_array(X, n_steps=self.n_steps_, n_features=self.n_features_in_)
        _, _, features, _ = self._forward(self.params_, self._steps(data))
        return features.data

    def predict(self, X) -> np.ndarray:
        """Regression-head output on the original target scale."""
        self._check_fitted()
        data, _ = check_sequence_array(X, n_steps=self.n_steps_, n_features=self.n_features_in_)
        _, _, _, pred = self._forward(self.params_, self._steps(data))
        out = pred.data * self.target_std_ + self.target_mean_
        return out[:, 0] if self.head_dim_ == 1 else out

    def hidden_graph(self, X):
        """Inference-mode graph with differentiable inputs, for saliency.

        Returns (step tensors, final hidden node); differentiating a
        scalar of the hidden node w.r.t. the steps gives per-sample input
        gradients because rows never interact.
        """
        self._check_fitted()
        data, _ = check_sequence_array(X, n_steps=self.n_steps_, n_features=self.n_features_in_)
        steps = self._steps(data, input_grad=True)
        _, hidden, _, _ = self._forward(self.params_, steps)
        return steps, hidden


def _zeros(n, width):
    return ad.tensor(np.zeros((n, width)))


class LSTMEncoder(SequenceEncoder):
    """Single-layer LSTM over the sequence; head reads the last hidden state."""

    kind = "lstm"

    def __init__(
        self,
        hidden_units=20,
        n_features_out=8,
        dropout=0.5,
        epochs=100,
        batch_size=32,
        learning_rate=1e-3,
        seed=0,
        target="survival_time",
        validation_fraction=0.2,
    ):
        super().__init__(
            n_features_out=n_features_out,
            dropout=dropout,
            epochs=epochs,
            batch_size=batch_size,
            learning_rate=learning_rate,
            seed=seed,
            target=target,
            validation_fraction=validation_fraction,
        )
        self.hidden_units = hidden_units

    def _hidden_width(self):
        return self.hidden_units

    def _arch_params(self, rng, n_features):
        u = self.hidden_units
        b = np.zeros((1, 4 * u))
        b[0, u : 2 * u] = 1.0  # forget-gate bias favors carrying state early on
        return {
            "w_x": _uniform_init(rng, n_features, (n_features, 4 * u)),
            "w_h": _uniform_init(rng, u, (u, 4 * u)),
            "b": b,
        }

    def _hidden(self, p, steps):
        u = self.hidden_units
        n = steps[0].shape[0]
        h, c = _zeros(n, u), _zeros(n, u)
        for x_t in steps:
            gates = ad.add(ad.add(ad.matmul(x_t, p["w_x"]), ad.matmul(h, p["w_h"])), p["b"])
            i = ad.sigmoid(gates[:, :u])
            f = ad.sigmoid(gates[:, u : 2 * u])
            g = ad.tanh(gates[:, 2 * u : 3 * u])
            o = ad.sigmoid(gates[:, 3 * u :])
            c = ad.add(ad.hadamard(f, c), ad.hadamard(i, g))
            h = ad.hadamard(o, ad.tanh(c))
        return h


def sinusoidal_positions(n_steps: int, width: int) -> np.ndarray:
    """Classic fixed sine/cosine position table, one row per time step."""
    pe = np.zeros((n_steps, width))
    pos = np.arange(n_steps)[:, None]
    div = np.exp(np.arange(0, width, 2) * (-np.log(10000.0) / width))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: width // 2])
    return pe


class TransformerEncoder(SequenceEncoder):
    """One self-attention block with a ReLU feed-forward, mean-pooled over time."""

    kind = "transformer"

    def __init__(
        self,
        d_model=16,
        heads=2,
        ffn_width=32,
        positional_encoding=True,
        n_features_out=8,
        dropout=0.5,
        epochs=100,
        batch_size=32,
        learning_rate=1e-3,
        seed=0,
        target="survival_time",
        validation_fraction=0.2,
    ):
        super().__init__(
            n_features_out=n_features_out,
            dropout=dropout,
            epochs=epochs,
            batch_size=batch_size,
            learning_rate=learning_rate,
            seed=seed,
            target=target,
            validation_fraction=validation_fraction,
        )
        self.d_model = d_model
        self.heads = heads
        self.ffn_width = ffn_width
        self.positional_encoding = positional_encoding

    def _hidden_width(self):
        return self.d_model

    def _arch_params(self, rng, n_features):
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        d, w = self.d_model, self.ffn_width
        return {
            "w_in": _uniform_init(rng, n_features, (n_features, d)),
            "b_in": np.zeros((1, d)),
            "w_q": _uniform_init(rng, d, (d, d)),
            "w_k": _uniform_init(rng, d, (d, d)),
            "w_v": _uniform_init(rng, d, (d, d)),
            "w_o": _uniform_init(rng, d, (d, d)),
            "b_o": np.zeros((1, d)),
            "w_ffn1": _uniform_init(rng, d, (d, w)),
            "b_ffn1": np.zeros((1, w)),
            "w_ffn2": _uniform_init(rng, w, (w, d)),
            "b_ffn2": np.zeros((1, d)),
        }

    def _hidden(self, p, steps):
        d, n_heads = self.d_model, self.heads
        dk = d // n_heads
        scale = 1.0 / np.sqrt(dk)
        n_steps = len(steps)
        pe = sinusoidal_positions(n_steps, d) if self.positional_encoding else np.zeros((n_steps, d))

        tokens = []
        for t, x_t in enumerate(steps):
            tok = ad.add(ad.matmul(x_t, p["w_in"]), p["b_in"])
            if self.positional_encoding:
                tok = ad.add(tok, ad.tensor(pe[t][None, :]))
            tokens.append(tok)

        q = [ad.matmul(tok, p["w_q"]) for tok in tokens]
        k = [ad.matmul(tok, p["w_k"]) for tok in tokens]
        v = [ad.matmul(tok, p["w_v"]) for tok in tokens]

        attended = []
        for t in range(n_steps):
            head_outs = []
            for h in range(n_heads):
                cols = slice(h * dk, (h + 1) * dk)
                scores = ad.concat(
                    [ad.hadamard(ad.tsum(ad.hadamard(q[t][:, cols], k[s][:, cols]), axis=1, keepdims=True), scale) for s in range(n_steps)],
                    axis=1,
                )
                weights = ad.softmax_rows(scores)
                out = None
                for s in range(n_steps):
                    term = ad.hadamard(weights[:, s : s + 1], v[s][:, cols])
                    out = term if out is None else ad.add(out, term)
                head_outs.append(out)
            merged = ad.add(ad.matmul(ad.concat(head_outs, axis=1), p["w_o"]), p["b_o"])
            z = ad.add(tokens[t], merged)
            ffn = ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(z, p["w_ffn1"]), p["b_ffn1"])), p["w_ffn2"]), p["b_ffn2"])
            attended.append(ad.add(z, ffn))

        pooled = attended[0]
        for t in range(1, n_steps):
            pooled = ad.add(pooled, attended[t])
        return ad.hadamard(pooled, 1.0 / n_steps)


class StateSpaceEncoder(SequenceEncoder):
    """Linear time-invariant state-space recurrence; head reads the final state."""

    kind = "ssm"

    def __init__(
        self,
        state_dim=16,
        n_features_out=8,
        dropout=0.5,
        epochs=100,
        batch_size=32,
        learning_rate=1e-3,
        seed=0,
        target="survival_time",
        validation_fraction=0.2,
    ):
        super().__init__(
            n_features_out=n_features_out,
            dropout=dropout,
            epochs=epochs,
            batch_size=batch_size,
            learning_rate=learning_rate,
            seed=seed,
            target=target,
            validation_fraction=validation_fraction,
        )
        self.state_dim = state_dim

    def _hidden_width(self):
        return self.state_dim

    def _arch_params(self, rng, n_features):
        d = self.state_dim
        return {
            "w_enc": _uniform_init(rng, n_features, (n_features, d)),
            "b_enc": np.zeros((1, d)),
            "a": _uniform_init(rng, d, (d, d)),
            "b_mix": _uniform_init(rng, d, (d, d)),
        }

    def _hidden(self, p, steps):
        d = self.state_dim
        h = _zeros(steps[0].shape[0], d)
        for x_t in steps:
            enc = ad.add(ad.matmul(x_t, p["w_enc"]), p["b_enc"])
            h = ad.add(ad.matmul(h, p["a"]), ad.matmul(enc, p["b_mix"]))
        return h


ENCODER_KINDS = {
    "lstm": LSTMEncoder,
    "transformer": TransformerEncoder,
    "ssm": StateSpaceEncoder,
    "mamba": StateSpaceEncoder,  # common alias for the state-space family
}


def make_encoder(kind: str, **kwargs) -> SequenceEncoder:
    if kind not in ENCODER_KINDS:
        raise ValueError(f"unknown encoder kind {kind!r}; choose from {sorted(ENCODER_KINDS)}")
    return ENCODER_KINDS[kind](**kwargs)


def save_checkpoint(model: SequenceEncoder, path) -> None:
    """One-file checkpoint: JSON header plus little-endian float64 payload."""
    model._check_fitted()
    names = sorted(model.params_)
    header = {
        "kind": model.kind,
        "seed": model.seed,
        "cfg": model.get_params(),
        "dims": {
            "n_steps": model.n_steps_,
            "n_features_in": model.n_features_in_,
            "n_features_out": model.n_features_out,
            "head_dim": model.head_dim_,
        },
        "target_mean": np.asarray(model.target_mean_).ravel().tolist(),
        "target_std": np.asarray(model.target_std_).ravel().tolist(),
        "loss_history": model.loss_history_,
        "val_loss_history": model.val_loss_history_,
        "param_shapes": {k: list(model.params_[k].shape) for k in names},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for k in names:
            fh.write(np.ascontiguousarray(model.params_[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> SequenceEncoder:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    kind = header["kind"]
    if kind not in ENCODER_KINDS:
        raise ValueError(f"checkpoint has unknown encoder kind {kind!r}")
    model = ENCODER_KINDS[kind](**header["cfg"])
    params = {}
    offset = 0
    for name in sorted(header["param_shapes"]):
        shape = tuple(header["param_shapes"][name])
        count = int(np.prod(shape))
        params[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
    model.params_ = params
    model.loss_history_ = list(header["loss_history"])
    model.val_loss_history_ = list(header["val_loss_history"])
    model.n_steps_ = int(header["dims"]["n_steps"])
    model.n_features_in_ = int(header["dims"]["n_features_in"])
    model.head_dim_ = int(header["dims"]["head_dim"])
    mu = np.asarray(header["target_mean"])
    sd = np.asarray(header["target_std"])
    model.target_mean_ = mu if model.head_dim_ > 1 else mu.reshape(1)
    model.target_std_ = sd if model.head_dim_ > 1 else sd.reshape(1)
    return model
