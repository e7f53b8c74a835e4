"""Forecast pretraining, K-means pseudo-labelling and the clustering alternation."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import ForecastInstance, TimeSeriesSample
from .encoder import (
    CLASSIFIER_HEAD,
    FORECAST_HEAD,
    EncoderParams,
    forward,
    head,
    make_batch,
    represent,
)
from .metrics import nmi
from .numerics import Adam, Tensor, as_tensor, log_softmax, substream

log = logging.getLogger(__name__)

Item = tuple  # (static, times, features, values)


@dataclass
class TrainConfig:
    batch_size: int = 8
    patience: int = 10
    max_pretrain_epochs: int = 200
    cluster_iterations: int = 500
    epochs_per_iteration: int = 200
    k: int = 3
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    restore_best: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def sample_item(s: TimeSeriesSample) -> Item:
    t, f, v = s.arrays()
    return (s.static, t, f, v)


def instance_item(inst: ForecastInstance) -> Item:
    return (inst.static, inst.times, inst.features, inst.values)


# -- losses --------------------------------------------------------------------

def forecast_head(rep: Tensor, P: EncoderParams) -> Tensor:
    return head(rep, P["forecast.W"], P["forecast.b"])


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Sum of masked squared errors divided by the number of instances."""
    pred = as_tensor(pred)
    n = pred.shape[0]
    return ((pred - np.asarray(target)).square() * np.asarray(mask)).sum() * (1.0 / n)


def classifier_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the labelled class."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    k = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return (log_softmax(logits, axis=-1) * onehot).sum() * (-1.0 / len(labels))


# -- generic early-stopping loop ----------------------------------------------

@dataclass
class FitState:
    epoch: int = 0
    best_loss: float = math.inf
    best_epoch: int = 0
    best: dict[str, np.ndarray] | None = None
    history: list[tuple[int, float, float]] = field(default_factory=list)
    stopped: bool = False


class Trainer:
    """Mini-batch Adam with early stopping on a validation loss.

    ``batch_loss(batch_indices, rng)`` returns the training loss for a batch in
    train mode; ``val_loss()`` returns the full validation loss in eval mode.
    Shuffling and dropout draw from streams keyed by ``(seed, phase, iteration,
    epoch)``, so a trainer restored from :meth:`snapshot` continues exactly.
    """

    def __init__(self, P: EncoderParams, trainable: Sequence[str], n_train: int,
                 batch_loss: Callable, val_loss: Callable, train_loss: Callable | None,
                 cfg: TrainConfig, seed: int, phase: str, iteration: int = 0):
        self.P = P
        self.trainable = {k: P[k] for k in trainable}
        self.adam = Adam(self.trainable, lr=P.hp.lr)
        self.n_train = n_train
        self.batch_loss = batch_loss
        self.val_loss = val_loss
        self.train_loss = train_loss
        self.cfg = cfg
        self.seed = seed
        self.phase = phase
        self.iteration = iteration
        self.state = FitState()

    def evaluate_initial(self) -> None:
        v = self.val_loss()
        tr = self.train_loss() if self.train_loss else float("nan")
        self.state.history.append((0, tr, v))
        self.state.best_loss = v
        self.state.best_epoch = 0
        self.state.best = self.P.state()

    def run_epoch(self) -> tuple[float, float]:
        st = self.state
        epoch = st.epoch + 1
        order = substream(self.seed, f"shuffle/{self.phase}", self.iteration, epoch).permutation(self.n_train)
        rng = substream(self.seed, f"dropout/{self.phase}", self.iteration, epoch)
        bs = self.cfg.batch_size
        total = 0.0
        count = 0
        for start in range(0, self.n_train, bs):
            idx = order[start:start + bs]
            self.adam.zero_grad()
            loss = self.batch_loss(idx, rng)
            loss.backward()
            self.adam.step()
            total += loss.item() * len(idx)
            count += len(idx)
        v = self.val_loss()
        st.epoch = epoch
        st.history.append((epoch, total / count, v))
        if v < st.best_loss:
            st.best_loss = v
            st.best_epoch = epoch
            st.best = self.P.state()
        elif epoch - st.best_epoch >= self.cfg.patience:
            st.stopped = True
        return total / count, v

    def fit(self, max_epochs: int, on_epoch: Callable | None = None) -> FitState:
        if not self.state.history:
            self.evaluate_initial()
        while not self.state.stopped and self.state.epoch < max_epochs:
            self.run_epoch()
            if on_epoch is not None:
                on_epoch(self)
        if self.cfg.restore_best and self.state.best is not None:
            self.P.load_state(self.state.best)
        return self.state

    # resumable state ------------------------------------------------------
    def snapshot(self) -> tuple[dict[str, np.ndarray], dict]:
        arrays: dict[str, np.ndarray] = {}
        for name in self.trainable:
            arrays[f"adam.m.{name}"] = self.adam.state.m[name]
            arrays[f"adam.v.{name}"] = self.adam.state.v[name]
            if self.state.best is not None:
                arrays[f"best.{name}"] = self.state.best[name]
        meta = {
            "phase": self.phase,
            "iteration": self.iteration,
            "seed": self.seed,
            "adam_step": self.adam.state.step,
            "epoch": self.state.epoch,
            "best_loss": self.state.best_loss,
            "best_epoch": self.state.best_epoch,
            "stopped": self.state.stopped,
            "history": [list(h) for h in self.state.history],
        }
        return arrays, meta

    def restore(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        for name in self.trainable:
            self.adam.state.m[name][...] = arrays[f"adam.m.{name}"]
            self.adam.state.v[name][...] = arrays[f"adam.v.{name}"]
        if f"best.{next(iter(self.trainable))}" in arrays:
            self.state.best = {n: arrays[f"best.{n}"].copy() for n in self.trainable}
        self.adam.state.step = int(meta["adam_step"])
        self.state.epoch = int(meta["epoch"])
        self.state.best_loss = float(meta["best_loss"])
        self.state.best_epoch = int(meta["best_epoch"])
        self.state.stopped = bool(meta["stopped"])
        self.state.history = [tuple(h) for h in meta["history"]]


# -- proxy pretraining ---------------------------------------------------------

def _forecast_eval(P: EncoderParams, instances: Sequence[ForecastInstance], batch_size: int = 64) -> float:
    if not instances:
        return float("nan")
    total = 0.0
    order = sorted(range(len(instances)), key=lambda i: len(instances[i].times))
    for start in range(0, len(order), batch_size):
        chunk = [instances[i] for i in order[start:start + batch_size]]
        rep = forward(P, make_batch([instance_item(x) for x in chunk]), train=False)
        pred = forecast_head(rep, P).data
        z = np.stack([x.target for x in chunk])
        m = np.stack([x.mask for x in chunk])
        total += float((m * (pred - z) ** 2).sum())
    return total / len(instances)


def pretrain_trainer(P: EncoderParams, train: Sequence[ForecastInstance], val: Sequence[ForecastInstance],
                     cfg: TrainConfig, seed: int) -> Trainer:
    if not train:
        raise ValueError("no valid forecast instances in the training split")
    if not val:
        raise ValueError("no valid forecast instances in the validation split")
    targets = np.stack([x.target for x in train])
    masks = np.stack([x.mask for x in train])
    items = [instance_item(x) for x in train]

    def batch_loss(idx, rng):
        rep = forward(P, make_batch([items[i] for i in idx]), train=True, rng=rng)
        return masked_mse(forecast_head(rep, P), targets[idx], masks[idx])

    trainable = [n for n in P.names() if n not in CLASSIFIER_HEAD]
    return Trainer(P, trainable, len(train), batch_loss, lambda: _forecast_eval(P, val),
                   lambda: _forecast_eval(P, train), cfg, seed, "pretrain")


def pretrain(P: EncoderParams, train: Sequence[ForecastInstance], val: Sequence[ForecastInstance],
             cfg: TrainConfig, seed: int, on_epoch: Callable | None = None) -> tuple[EncoderParams, list]:
    """Minimise the masked forecast loss; returns the best-validation parameters and the loss history."""
    trainer = pretrain_trainer(P, train, val, cfg, seed)
    state = trainer.fit(cfg.max_pretrain_epochs, on_epoch)
    log.info("pretraining stopped after %d epochs (best %d, val %.5f)", state.epoch, state.best_epoch, state.best_loss)
    return P, state.history


def strip_head(P: EncoderParams) -> EncoderParams:
    return P.strip_head()


# -- K-means -------------------------------------------------------------------

@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    trace: list[float]
    n_iter: int


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return np.argmin(_sq_dists(points, centroids), axis=1)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = [points[rng.integers(n)]]
    d2 = _sq_dists(points, centroids[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centroids.append(points[idx])
        d2 = np.minimum(d2, _sq_dists(points, points[idx][None])[:, 0])
    return np.array(centroids)


def _stable_argmin(d2: np.ndarray, current: np.ndarray | None) -> np.ndarray:
    # ties keep the current cluster, so a reseeded duplicate point stays where repair put it
    new = np.argmin(d2, axis=1)
    if current is None:
        return new
    rows = np.arange(len(d2))
    return np.where(d2[rows, current] <= d2[rows, new], current, new)


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> KMeansResult:
    k = len(centroids)
    rows = np.arange(len(points))
    labels = None
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(points, centroids)
        new = _stable_argmin(d2, labels)
        closest = d2[rows, new]
        trace.append(float(closest.mean()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = centroids.copy()
        # far points reseed empty clusters, farthest first
        far = list(np.argsort(-closest, kind="stable"))
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                p = far.pop(0)
                centroids[j] = points[p]
                labels[p] = j
    d2 = _sq_dists(points, centroids)
    labels = _stable_argmin(d2, labels)
    obj = float(d2[rows, labels].mean())
    return KMeansResult(centroids, labels, obj, trace, it)


def kmeans(points: np.ndarray, k: int, seed: int, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """k-means++ seeded Lloyd iterations; the restart with the lowest objective wins."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < k:
        raise ValueError(f"kmeans needs at least k={k} points, got {n}")
    if np.all(points == points[0]):
        warnings.warn("all points are identical; returning a single effective cluster", RuntimeWarning)
        return KMeansResult(np.repeat(points[:1], k, axis=0), np.zeros(n, dtype=np.int64), 0.0, [0.0], 0)
    best: KMeansResult | None = None
    for r in range(restarts):
        rng = substream(seed, "kmeans", r)
        res = _lloyd(points, _kmeanspp(points, k, rng), max_iter)
        if best is None or res.objective < best.objective:
            best = res
    return best


# -- clustering alternation ----------------------------------------------------

@dataclass
class ClusterState:
    centroids: np.ndarray
    labels: np.ndarray
    nmi_trail: list[tuple[int, float]] = field(default_factory=list)
    sizes: list[list[int]] = field(default_factory=list)

    @property
    def C(self) -> np.ndarray:
        """Centroid matrix with one column per cluster."""
        return self.centroids.T


@dataclass
class IterationRecord:
    iteration: int
    labels: np.ndarray
    representations: np.ndarray
    epochs: int
    best_val_loss: float
    agreement: float
    history: list
    centroids: np.ndarray | None = None
    nmi: float | None = None  # with the previous iteration's assignment


@dataclass
class ClusterResult:
    state: ClusterState
    params: EncoderParams
    representations: np.ndarray
    agreement: float
    records: list[IterationRecord]


def _class_eval(P: EncoderParams, items: Sequence[Item], labels: np.ndarray, batch_size: int = 64):
    """Eval-mode classifier loss and argmax predictions for ``items``."""
    order = sorted(range(len(items)), key=lambda i: (len(items[i][1]), i))
    preds = np.empty(len(items), dtype=np.int64)
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        rep = forward(P, make_batch([items[i] for i in idx]), train=False)
        logits = head(rep, P["classifier.W"], P["classifier.b"])
        total += classifier_loss(logits, labels[idx]).item() * len(idx)
        preds[idx] = np.argmax(logits.data, axis=1)
    return total / len(items), preds


def cluster_train(P: EncoderParams, train_items: Sequence[Item], val_items: Sequence[Item], cfg: TrainConfig,
                  seed: int, on_iteration: Callable[[IterationRecord, EncoderParams], None] | None = None,
                  relabel: Callable[[np.ndarray], np.ndarray] | None = None,
                  resume: tuple[int, ClusterState] | None = None) -> ClusterResult:
    """Alternate K-means on representations with classifier training on the pseudo-labels.

    Labels cover train items followed by validation items. ``relabel`` permutes
    pseudo-label ids before classifier training (used to check that only the
    partition matters). ``resume=(t, state)`` continues after a finished
    iteration ``t`` whose fine-tuned weights are ``P``; every iteration draws from
    streams keyed by its index, so the continuation matches an uninterrupted run.
    """
    P = P.strip_head() if "forecast.W" in P else P
    items = list(train_items) + list(val_items)
    n_train = len(train_items)
    if not val_items:
        raise ValueError("validation split is empty")
    k = cfg.k
    prev: np.ndarray | None = None
    trail: list[tuple[int, float]] = []
    sizes: list[list[int]] = []
    records: list[IterationRecord] = []
    km = None
    labels = None
    reps = None
    agreement = float("nan")
    first = 0
    if resume is not None:
        done, st0 = resume
        first = done + 1
        prev = labels = np.asarray(st0.labels)
        trail = list(st0.nmi_trail)
        sizes = list(st0.sizes)
        km = KMeansResult(np.asarray(st0.centroids), labels[:n_train], math.nan, [], 0)
    for t in range(first, cfg.cluster_iterations):
        reps = represent(P, items)
        km = kmeans(reps[:n_train], k, substream(seed, "kmeans-iter", t).integers(2**31),
                    cfg.kmeans_restarts, cfg.kmeans_max_iter)
        labels = np.concatenate([km.labels, assign(reps[n_train:], km.centroids)])
        sizes.append(np.bincount(labels, minlength=k).tolist())
        if prev is not None:
            trail.append((t, nmi(prev, labels)))
        prev = labels

        train_labels = relabel(labels) if relabel is not None else labels
        tr_lab = train_labels[:n_train]
        va_lab = train_labels[n_train:]
        # pseudo-label ids are arbitrary, so the fresh head starts symmetric
        P.attach_classifier(k)

        def batch_loss(idx, rng):
            rep = forward(P, make_batch([train_items[i] for i in idx]), train=True, rng=rng)
            return classifier_loss(head(rep, P["classifier.W"], P["classifier.b"]), tr_lab[idx])

        trainer = Trainer(P, P.names(), n_train, batch_loss,
                          lambda: _class_eval(P, val_items, va_lab)[0], None, cfg, seed, "cluster", t)
        st = trainer.fit(cfg.epochs_per_iteration)
        _, preds = _class_eval(P, items, train_labels)
        agreement = float(np.mean(preds == train_labels))
        rec = IterationRecord(t, labels, reps, st.epoch, st.best_loss, agreement, st.history, km.centroids,
                              trail[-1][1] if trail and trail[-1][0] == t else None)
        records.append(rec)
        log.info("iteration %d: sizes %s, epochs %d, val %.4f, nmi %s", t, sizes[-1], st.epoch, st.best_loss,
                 f"{trail[-1][1]:.4f}" if trail else "-")
        if on_iteration is not None:
            on_iteration(rec, P)
    if reps is None:
        reps = represent(P, items)
    state = ClusterState(km.centroids, labels, trail, sizes)
    return ClusterResult(state, P, reps, agreement, records)
