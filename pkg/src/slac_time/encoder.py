"""Triplet transformer encoder for irregular multivariate time series.

A sample is a static vector plus a set of (time, variable, value) triplets.
Each triplet is embedded as ``feature_lookup + cve_value(v) + cve_time(t)``,
where a CVE is the one-to-many network ``U tanh(W x + b)``. The embeddings run
through post-norm transformer blocks, are pooled with a learned attention
score, and are concatenated with an embedding of the static vector.

Weights use the row-vector convention (``y = x @ W``) except the two task
heads, which are stored as ``(outputs, 2d)`` matrices.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import (
    Tensor,
    concat,
    default_dtype,
    dropout,
    layer_norm,
    masked_softmax,
    substream,
    take,
)

FORECAST_HEAD = ("forecast.W", "forecast.b")
CLASSIFIER_HEAD = ("classifier.W", "classifier.b")


@dataclass
class HyperParams:
    n_features: int
    n_static: int
    d: int = 32
    n_blocks: int = 2
    n_heads: int = 4
    dropout: float = 0.2
    lr: float = 5e-4
    k: int = 3

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def cve_hidden(self) -> int:
        return math.isqrt(self.d)

    @property
    def rep_dim(self) -> int:
        return 2 * self.d


@dataclass
class Batch:
    """Padded batch. ``mask`` marks real triplets; padded slots never receive attention."""

    times: np.ndarray
    values: np.ndarray
    features: np.ndarray
    mask: np.ndarray
    static: np.ndarray

    @property
    def size(self) -> int:
        return self.times.shape[0]


def make_batch(items: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]) -> Batch:
    """Pad ``(static, times, features, values)`` tuples to a common length."""
    if not items:
        raise ValueError("empty batch")
    lengths = [len(it[1]) for it in items]
    if min(lengths) == 0:
        raise ValueError("every sample needs at least one triplet")
    B, n = len(items), max(lengths)
    dt = default_dtype()
    times = np.zeros((B, n), dtype=dt)
    values = np.zeros((B, n), dtype=dt)
    features = np.zeros((B, n), dtype=np.int64)
    mask = np.zeros((B, n), dtype=bool)
    for i, (_, t, f, v) in enumerate(items):
        m = len(t)
        times[i, :m] = t
        values[i, :m] = v
        features[i, :m] = f
        mask[i, :m] = True
    static = np.stack([np.asarray(it[0], dtype=dt) for it in items])
    if np.isnan(static).any():
        raise ValueError("static vectors must be imputed before encoding")
    return Batch(times, values, features, mask, static)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out)).astype(default_dtype())


class EncoderParams:
    """Named trainable tensors of the encoder and any attached heads."""

    def __init__(self, hp: HyperParams, tensors: dict[str, Tensor]):
        self.hp = hp
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.hp, {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()})

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, arr in state.items():
            self.tensors[k].data[...] = arr

    @classmethod
    def init(cls, hp: HyperParams, seed: int) -> "EncoderParams":
        rng = substream(seed, "init")
        d, h, F, D = hp.d, hp.cve_hidden, hp.n_features, hp.n_static
        dt = default_dtype()
        zeros = lambda *s: np.zeros(s, dtype=dt)  # noqa: E731
        ones = lambda *s: np.ones(s, dtype=dt)  # noqa: E731
        arrays: dict[str, np.ndarray] = {"feature_embedding": _glorot(rng, F, d)}
        for name in ("value_ffn", "time_ffn"):
            arrays[f"{name}.W"] = _glorot(rng, 1, h)
            arrays[f"{name}.b"] = zeros(h)
            arrays[f"{name}.U"] = _glorot(rng, h, d)
        for i in range(hp.n_blocks):
            p = f"blocks.{i}"
            for proj in ("q", "k", "v", "o"):
                arrays[f"{p}.mha.W{proj}"] = _glorot(rng, d, d)
                # a key bias cancels inside the softmax, so there is none
                if proj != "k":
                    arrays[f"{p}.mha.b{proj}"] = zeros(d)
            arrays[f"{p}.ln1.gamma"] = ones(d)
            arrays[f"{p}.ln1.beta"] = zeros(d)
            arrays[f"{p}.ffn.W1"] = _glorot(rng, d, 2 * d)
            arrays[f"{p}.ffn.b1"] = zeros(2 * d)
            arrays[f"{p}.ffn.W2"] = _glorot(rng, 2 * d, d)
            arrays[f"{p}.ffn.b2"] = zeros(d)
            arrays[f"{p}.ln2.gamma"] = ones(d)
            arrays[f"{p}.ln2.beta"] = zeros(d)
        arrays["fusion.W"] = _glorot(rng, d, h)
        arrays["fusion.b"] = zeros(h)
        arrays["fusion.u"] = _glorot(rng, h, 1)
        arrays["static.W1"] = _glorot(rng, D, d)
        arrays["static.b1"] = zeros(d)
        arrays["static.W2"] = _glorot(rng, d, d)
        arrays["static.b2"] = zeros(d)
        params = cls(hp, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()})
        params.attach_forecast_head(substream(seed, "init", 1))
        return params

    def attach_forecast_head(self, rng: np.random.Generator) -> None:
        F, r = self.hp.n_features, self.hp.rep_dim
        self.tensors["forecast.W"] = Tensor(_glorot(rng, r, F).T.copy(), requires_grad=True)
        self.tensors["forecast.b"] = Tensor(np.zeros(F, dtype=default_dtype()), requires_grad=True)

    def attach_classifier(self, k: int, rng: np.random.Generator | None = None) -> None:
        """Fresh classifier head; zero weights unless ``rng`` is given."""
        r = self.hp.rep_dim
        W = _glorot(rng, r, k).T.copy() if rng is not None else np.zeros((k, r), dtype=default_dtype())
        self.tensors["classifier.W"] = Tensor(W, requires_grad=True)
        self.tensors["classifier.b"] = Tensor(np.zeros(k, dtype=default_dtype()), requires_grad=True)

    def strip_head(self) -> "EncoderParams":
        """Copy without the forecast head; every other tensor is copied bit-exactly."""
        kept = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()
                if k not in FORECAST_HEAD}
        return EncoderParams(self.hp, kept)

    def subset(self, exclude: Sequence[str]) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k not in exclude}


# -- forward pieces ------------------------------------------------------------

def cve(x: np.ndarray | Tensor, W: Tensor, b: Tensor, U: Tensor) -> Tensor:
    """Continuous value embedding ``U tanh(W x + b)`` applied elementwise to ``x``."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=default_dtype()))
    col = x.reshape(x.shape + (1,))
    return (col @ W + b).tanh() @ U


def triplet_embed(P: EncoderParams, batch: Batch) -> Tensor:
    ef = take(P["feature_embedding"], batch.features)
    ev = cve(batch.values, P["value_ffn.W"], P["value_ffn.b"], P["value_ffn.U"])
    et = cve(batch.times, P["time_ffn.W"], P["time_ffn.b"], P["time_ffn.U"])
    return ef + ev + et


def _mha(x: Tensor, P: EncoderParams, prefix: str, mask: np.ndarray, train: bool, rng, attn_out: list | None):
    B, n, d = x.shape
    h = P.hp.n_heads
    dh = d // h
    x2 = x.reshape(B * n, d)
    q = (x2 @ P[f"{prefix}.Wq"] + P[f"{prefix}.bq"]).reshape(B, n, h, dh).transpose(0, 2, 1, 3)
    k = (x2 @ P[f"{prefix}.Wk"]).reshape(B, n, h, dh).transpose(0, 2, 3, 1)
    v = (x2 @ P[f"{prefix}.Wv"] + P[f"{prefix}.bv"]).reshape(B, n, h, dh).transpose(0, 2, 1, 3)
    scores = (q @ k) * (1.0 / math.sqrt(dh))
    a = masked_softmax(scores, mask[:, None, None, :], axis=-1)
    if attn_out is not None:
        attn_out.append(a.data)
    a = dropout(a, P.hp.dropout, train, rng)
    o = (a @ v).transpose(0, 2, 1, 3).reshape(B * n, d)
    return (o @ P[f"{prefix}.Wo"] + P[f"{prefix}.bo"]).reshape(B, n, d)


def encode_contextual(e: Tensor, P: EncoderParams, mask: np.ndarray, train: bool = False, rng=None,
                      attn_out: list | None = None) -> Tensor:
    """Run the transformer blocks over initial triplet embeddings ``(B, n, d)``."""
    if e.shape[1] == 0:
        raise ValueError("cannot encode an empty triplet set")
    x = e
    B, n, d = x.shape
    for i in range(P.hp.n_blocks):
        p = f"blocks.{i}"
        x = layer_norm(x + _mha(x, P, f"{p}.mha", mask, train, rng, attn_out), P[f"{p}.ln1.gamma"], P[f"{p}.ln1.beta"])
        x2 = x.reshape(B * n, d)
        f = ((x2 @ P[f"{p}.ffn.W1"] + P[f"{p}.ffn.b1"]).tanh() @ P[f"{p}.ffn.W2"] + P[f"{p}.ffn.b2"]).reshape(B, n, d)
        f = dropout(f, P.hp.dropout, train, rng)
        x = layer_norm(x + f, P[f"{p}.ln2.gamma"], P[f"{p}.ln2.beta"])
    return x


def fuse(c: Tensor, P: EncoderParams, mask: np.ndarray, attn_out: list | None = None) -> Tensor:
    """Attention pooling of contextual embeddings ``(B, n, d)`` into ``(B, d)``."""
    B, n, d = c.shape
    if n == 0:
        raise ValueError("cannot fuse an empty triplet set")
    c2 = c.reshape(B * n, d)
    s = ((c2 @ P["fusion.W"] + P["fusion.b"]).tanh() @ P["fusion.u"]).reshape(B, n)
    alpha = masked_softmax(s, mask, axis=-1)
    if attn_out is not None:
        attn_out.append(alpha.data)
    return (c * alpha.reshape(B, n, 1)).sum(axis=1)


def embed_static(static: np.ndarray | Tensor, P: EncoderParams) -> Tensor:
    x = static if isinstance(static, Tensor) else Tensor(np.asarray(static, dtype=default_dtype()))
    if np.isnan(x.data).any():
        raise ValueError("static vector has missing values; impute first")
    # tanh on the output as well, as in STraTS; keeps e^d bounded during classifier training
    return ((x @ P["static.W1"] + P["static.b1"]).tanh() @ P["static.W2"] + P["static.b2"]).tanh()


def forward(P: EncoderParams, batch: Batch, train: bool = False, rng=None, attn_out: list | None = None) -> Tensor:
    """Representation ``[e_static ; e_series]`` of shape ``(B, 2d)``."""
    e = triplet_embed(P, batch)
    c = encode_contextual(e, P, batch.mask, train, rng, attn_out)
    e_series = fuse(c, P, batch.mask, attn_out)
    e_static = embed_static(batch.static, P)
    return concat([e_static, e_series], axis=-1)


def head(rep: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Affine task head ``rep @ W.T + b``."""
    return rep @ W.T + b


def represent(P: EncoderParams, items: Sequence, batch_size: int = 64) -> np.ndarray:
    """Eval-mode representations ``(N, 2d)`` for ``(static, times, features, values)`` items.

    Items are grouped by length to keep padding small; output follows input order.
    """
    if not len(items):
        return np.zeros((0, P.hp.rep_dim), dtype=default_dtype())
    order = sorted(range(len(items)), key=lambda i: (len(items[i][1]), i))
    out = np.empty((len(items), P.hp.rep_dim), dtype=default_dtype())
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        rep = forward(P, make_batch([items[i] for i in idx]), train=False)
        out[idx] = rep.data
    return out


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, P: EncoderParams, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write ``manifest.json`` and ``weights.bin`` (little-endian arrays in manifest order)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays: list[tuple[str, str, np.ndarray]] = [("param", k, v.data) for k, v in P.tensors.items()]
    arrays += [("extra", k, np.asarray(v)) for k, v in (extra or {}).items()]
    index = []
    offset = 0
    with open(path / "weights.bin", "wb") as fh:
        for group, name, arr in arrays:
            le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
            raw = le.tobytes()
            index.append({"group": group, "name": name, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(raw), "dtype": le.dtype.str})
            fh.write(raw)
            offset += len(raw)
    manifest = {"hyperparams": asdict(P.hp), "tensors": index, "meta": meta or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(path) -> tuple[EncoderParams, dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    raw = (path / "weights.bin").read_bytes()
    hp = HyperParams(**manifest["hyperparams"])
    params: dict[str, Tensor] = {}
    extra: dict[str, np.ndarray] = {}
    for ent in manifest["tensors"]:
        buf = raw[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(buf, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="))
        if ent["group"] == "param":
            params[ent["name"]] = Tensor(arr.copy(), requires_grad=True)
        else:
            extra[ent["name"]] = arr.copy()
    return EncoderParams(hp, params), extra, manifest.get("meta", {})
