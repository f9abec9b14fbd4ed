"""Multimodal visuotactile transformer: fragment tokens from every modality are
concatenated, position-embedded, fused by multi-head self/cross attention and
classified by an MLP over the concatenation of all fused tokens."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .modality import ModalityEncoder, modalities_for
from .nn import Adam, Flatten, Layer, LayerNorm, Linear, ReLU, cross_entropy, softmax, \
    softmax_backward
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .synth.rng import stream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    d: int = 64
    heads: int = 4
    blocks: int = 1
    ff_hidden: int = 128
    hidden: int = 128
    classes: int = 12
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 80
    seed: int = 0
    precision: str = "single"  # single | double

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.blocks < 1 or self.classes < 2:
            raise ConfigError("need blocks >= 1 and classes >= 2")
        if self.precision not in ("single", "double"):
            raise ConfigError("precision must be 'single' or 'double'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


PRESETS = {
    "desk": FusionConfig(),
    # the published setting: wide features and a small step for pretrained encoders
    "paper": FusionConfig(d=384, lr=2e-5, ff_hidden=768, hidden=512),
}


class MultiHeadAttention(Layer):
    """Per head ``A_j = V_j softmax(K_j^T Q_j / sqrt(d))`` with the full width d
    in the denominator, then an output projection.

    Tokens are rows here; ``attention`` holds the softmax matrices in the
    keys-by-queries layout, so every column sums to one.
    """

    def __init__(self, d, heads, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.heads = d, heads
        for name in ("Wq", "Wk", "Wv"):
            self.params[name] = Linear(d, d, rng=rng, dtype=dtype).params["W"]
        self.sublayers["out"] = Linear(d, d, rng=rng, dtype=dtype)

    def _split(self, x):
        B, T, _ = x.shape
        return x.reshape(B, T, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def _merge(self, x):
        B, N, T, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, N * dh)

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.d:
            raise DimensionError(f"attention expects (B, T, {self.d}), got {x.shape}")
        scale = 1.0 / float(np.sqrt(self.d))
        q = self._split(x @ self.params["Wq"])
        k = self._split(x @ self.params["Wk"])
        v = self._split(x @ self.params["Wv"])
        a = softmax((q @ k.transpose(0, 1, 3, 2)) * scale, axis=-1)
        heads = a @ v
        self._cache = (x, q, k, v, a, scale)
        self.heads_out = heads
        return self.sublayers["out"].forward(self._merge(heads))

    @property
    def attention(self):
        return self._cache[4].transpose(0, 1, 3, 2)

    def backward(self, dy):
        x, q, k, v, a, scale = self._cache
        dheads = self._split(self.sublayers["out"].backward(dy))
        da = dheads @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dheads
        ds = softmax_backward(a, da, axis=-1) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dq, dk, dv = self._merge(dq), self._merge(dk), self._merge(dv)
        x2 = x.reshape(-1, self.d)
        self.grads["Wq"] = x2.T @ dq.reshape(-1, self.d)
        self.grads["Wk"] = x2.T @ dk.reshape(-1, self.d)
        self.grads["Wv"] = x2.T @ dv.reshape(-1, self.d)
        return dq @ self.params["Wq"].T + dk @ self.params["Wk"].T + dv @ self.params["Wv"].T


class AttentionBlock(Layer):
    """Pre-norm residual attention followed by a pre-norm residual ReLU MLP."""

    def __init__(self, d, heads, ff_hidden, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sublayers["ln1"] = LayerNorm(d, dtype=dtype)
        self.sublayers["attn"] = MultiHeadAttention(d, heads, rng=rng, dtype=dtype)
        self.sublayers["ln2"] = LayerNorm(d, dtype=dtype)
        self.sublayers["ff1"] = Linear(d, ff_hidden, rng=rng, dtype=dtype)
        self.sublayers["relu"] = ReLU()
        self.sublayers["ff2"] = Linear(ff_hidden, d, rng=rng, dtype=dtype)

    def forward(self, x):
        s = self.sublayers
        x1 = x + s["attn"].forward(s["ln1"].forward(x))
        f = s["ff2"].forward(s["relu"].forward(s["ff1"].forward(s["ln2"].forward(x1))))
        return x1 + f

    def backward(self, dy):
        s = self.sublayers
        d = s["ff2"].backward(dy)
        d = s["ln2"].backward(s["ff1"].backward(s["relu"].backward(d)))
        dx1 = dy + d
        return dx1 + s["ln1"].backward(s["attn"].backward(dx1))


def concat_and_embed(bundle, P):
    """Token matrix ``[F_0 F_1 ... F_{M-1}] + P`` for one bundle."""
    F = np.concatenate(bundle.features, axis=0)
    if F.shape[0] > P.shape[0] or F.shape[1] != P.shape[1]:
        raise ConfigError(f"{F.shape[0]} tokens of width {F.shape[1]} do not fit embedding {P.shape}")
    return F + P[:F.shape[0]]


def attention_block(F, block: AttentionBlock):
    """Apply one fusion block to a single token matrix ``(T, d)``."""
    return block.forward(np.asarray(F)[None])[0]


def classify(fused, head: Layer):
    """Class probabilities from a fused (flattened) token vector."""
    logits = head.forward(np.atleast_2d(fused))
    return softmax(logits, axis=-1)


def predict_labels(probs):
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(probs, axis=-1)


class MMVTT(Layer):
    """Full classifier: per-modality encoders, fusion blocks and MLP head.

    ``forward`` takes ``{modality: (B, K_i, 256)}`` fragment arrays and returns
    logits ``(B, classes)``.
    """

    def __init__(self, mode, token_counts, config: FusionConfig = FusionConfig()):
        super().__init__()
        self.mode, self.config = mode, config
        self.modalities = modalities_for(mode)
        if len(token_counts) != len(self.modalities):
            raise ConfigError("one token count per modality is required")
        self.token_counts = tuple(int(k) for k in token_counts)
        self.n_tokens = sum(self.token_counts)
        dt, d, seed = config.dtype, config.d, config.seed
        for m in self.modalities:
            self.sublayers[f"enc_{m}"] = ModalityEncoder(d, rng=stream(seed, "encoder", m), dtype=dt)
        self.params["pos"] = np.zeros((self.n_tokens, d), dtype=dt)
        for b in range(config.blocks):
            self.sublayers[f"block{b}"] = AttentionBlock(
                d, config.heads, config.ff_hidden, rng=stream(seed, "block", b), dtype=dt)
        rng = stream(seed, "head")
        self.sublayers["flat"] = Flatten()
        self.sublayers["fc1"] = Linear(self.n_tokens * d, config.hidden, rng=rng, dtype=dt)
        self.sublayers["relu"] = ReLU()
        self.sublayers["fc2"] = Linear(config.hidden, config.classes, dtype=dt, zero_init=True)

    def head_forward(self, tokens):
        s = self.sublayers
        return s["fc2"].forward(s["relu"].forward(s["fc1"].forward(s["flat"].forward(tokens))))

    def fuse(self, inputs):
        feats = []
        for m, k in zip(self.modalities, self.token_counts):
            x = inputs[m]
            if x.shape[-2] != k:
                raise DimensionError(f"modality {m}: expected {k} fragments, got {x.shape}")
            feats.append(self.sublayers[f"enc_{m}"].forward(x))
        F = np.concatenate(feats, axis=1) + self.params["pos"]
        for b in range(self.config.blocks):
            F = self.sublayers[f"block{b}"].forward(F)
        return F

    def forward(self, inputs):
        return self.head_forward(self.fuse(inputs))

    def backward(self, dlogits):
        s = self.sublayers
        d = s["flat"].backward(s["fc1"].backward(s["relu"].backward(s["fc2"].backward(dlogits))))
        for b in reversed(range(self.config.blocks)):
            d = s[f"block{b}"].backward(d)
        lead = d.shape[0]
        self.grads["pos"] = d.sum(axis=0) if lead else np.zeros_like(self.params["pos"])
        out, start = {}, 0
        for m, k in zip(self.modalities, self.token_counts):
            out[m] = s[f"enc_{m}"].backward(d[:, start:start + k])
            start += k
        return out

    def predict_proba(self, inputs, chunk=128):
        n = len(next(iter(inputs.values())))
        probs = []
        for i in range(0, n, chunk):
            part = {m: v[i:i + chunk] for m, v in inputs.items()}
            probs.append(softmax(self.forward(part), axis=-1))
        return np.concatenate(probs) if probs else np.zeros((0, self.config.classes))

    def save(self, path, extra=None):
        meta = {"mode": self.mode, "token_counts": list(self.token_counts),
                "config": asdict(self.config), **(extra or {})}
        return save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        model = cls(meta["mode"], meta["token_counts"], FusionConfig(**meta["config"]))
        model.load_state_dict(tensors)
        return model


def _subset(inputs, idx):
    return {m: v[idx] for m, v in inputs.items()}


def evaluate(model, inputs, labels):
    """Accuracy and confusion matrix (rows true class, columns predicted)."""
    labels = np.asarray(labels, dtype=np.int64)
    c = model.config.classes
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels outside the model's {c} classes")
    pred = predict_labels(model.predict_proba(inputs))
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    acc = float(np.trace(conf) / max(1, labels.size))
    return {"accuracy": acc, "confusion_matrix": conf}


def _mean_loss(model, inputs, labels, chunk=128):
    total, n = 0.0, len(labels)
    for i in range(0, n, chunk):
        part = _subset(inputs, slice(i, i + chunk))
        loss, _ = cross_entropy(model.forward(part).astype(np.float64), labels[i:i + chunk])
        total += loss * len(labels[i:i + chunk])
    return total / max(1, n)


@dataclass
class TrainResult:
    model: MMVTT
    history: list
    confusion: np.ndarray

    @property
    def acc_max(self):
        return max(h["eval_acc"] for h in self.history[1:])

    @property
    def acc_last10_mean(self):
        accs = [h["eval_acc"] for h in self.history[1:]]
        return float(np.mean(accs[-10:]))

    def summary(self):
        return {"acc_max": float(self.acc_max), "acc_last10_mean": self.acc_last10_mean,
                "seed": self.model.config.seed, "mode": self.model.mode,
                "final_eval_acc": self.history[-1]["eval_acc"]}


def train(train_inputs, train_labels, eval_inputs, eval_labels, mode,
          config: FusionConfig = FusionConfig(), progress=None, augment=None):
    """Minimise cross-entropy with Adam; evaluate after every epoch.

    ``history[0]`` is the untrained model (epoch 0); entries 1..epochs follow
    each pass over the shuffled training set. ``augment(epoch)``, if given,
    returns the training inputs for that epoch (same shapes, same sample order),
    e.g. with a fresh draw of a corruption; evaluation inputs never change.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    eval_labels = np.asarray(eval_labels, dtype=np.int64)
    present = np.unique(train_labels)
    if present.size < 2:
        raise DataError("training set needs at least two classes")
    missing = sorted(set(range(config.classes)) - set(present.tolist()))
    if missing and set(np.unique(eval_labels).tolist()) & set(missing):
        raise DataError(f"classes {missing} are empty in the training split")
    dt = config.dtype
    train_inputs = {m: v.astype(dt, copy=False) for m, v in train_inputs.items()}
    eval_inputs = {m: v.astype(dt, copy=False) for m, v in eval_inputs.items()}
    counts = [train_inputs[m].shape[1] for m in modalities_for(mode)]
    model = MMVTT(mode, counts, config)
    for m in model.modalities:
        model.sublayers[f"enc_{m}"].input_grad = False
    opt = Adam(model, lr=config.lr)
    n = len(train_labels)
    history = [{"epoch": 0, "loss": _mean_loss(model, train_inputs, train_labels),
                "eval_acc": evaluate(model, eval_inputs, eval_labels)["accuracy"]}]
    for epoch in range(1, config.epochs + 1):
        order = stream(config.seed, "shuffle", epoch).permutation(n)
        inputs = train_inputs
        if augment is not None:
            inputs = {m: v.astype(dt, copy=False) for m, v in augment(epoch).items()}
            if {m: v.shape for m, v in inputs.items()} != {m: v.shape for m, v in train_inputs.items()}:
                raise DimensionError("augment must keep the modality set and input shapes")
        total = 0.0
        for i in range(0, n, config.batch):
            idx = order[i:i + config.batch]
            logits = model.forward(_subset(inputs, idx))
            loss, dlogits = cross_entropy(logits, train_labels[idx])
            model.backward(dlogits.astype(dt))
            opt.step()
            total += loss * len(idx)
        ev = evaluate(model, eval_inputs, eval_labels)
        history.append({"epoch": epoch, "loss": total / n, "eval_acc": ev["accuracy"]})
        log.info("epoch %d loss %.4f eval_acc %.4f", epoch, total / n, ev["accuracy"])
        if progress:
            progress(history[-1])
    conf = evaluate(model, eval_inputs, eval_labels)["confusion_matrix"]
    return TrainResult(model, history, conf)


def metrics_json(summary):
    return json.dumps(summary, sort_keys=True, separators=(",", ":"))


def with_overrides(config: FusionConfig, **kw):
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
