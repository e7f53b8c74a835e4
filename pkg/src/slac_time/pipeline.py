"""Glue between the data model and the training stages."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import (
    DEFAULT_PRED_LEN,
    DEFAULT_WINDOWS,
    InstanceReport,
    SplitSpec,
    TimeSeriesSample,
    Vocabulary,
    apply_split,
    build_forecast_instances,
    fit_normalization,
    impute_static_mean,
    normalize,
    split,
)
from .encoder import EncoderParams, HyperParams
from .training import ClusterResult, TrainConfig, cluster_train, pretrain, pretrain_trainer, sample_item

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    vocab: Vocabulary
    split: SplitSpec
    train: list[TimeSeriesSample]
    val: list[TimeSeriesSample]
    truth: dict[str, int] | None

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.train] + [s.id for s in self.val]

    def truth_vector(self) -> np.ndarray | None:
        if not self.truth:
            return None
        missing = [i for i in self.ids if i not in self.truth]
        if missing:
            log.warning("%d samples lack truth labels; external NMI skipped", len(missing))
            return None
        return np.array([self.truth[i] for i in self.ids])

    def items(self):
        return [sample_item(s) for s in self.train], [sample_item(s) for s in self.val]


def prepare(samples: list[TimeSeriesSample], vocab: Vocabulary, seed: int, split_spec: SplitSpec | None = None,
            truth: dict[str, int] | None = None) -> PreparedData:
    """Split, fit stats on the training part, impute statics, normalize everything.

    Truth labels are pulled off the samples here so nothing downstream sees them.
    """
    if truth is None:
        carried = {s.id: s.truth_label for s in samples if s.truth_label is not None}
        truth = carried or None
    samples = [s.without_truth() for s in samples]
    spec = split_spec or split(samples, 0.8, seed)
    train_raw, val_raw = apply_split(samples, spec)
    fitted = fit_normalization(train_raw, vocab)
    imputed = impute_static_mean(train_raw + val_raw, train_raw)
    normed = [normalize(s, fitted) for s in imputed]
    n_train = len(train_raw)
    return PreparedData(fitted, spec, normed[:n_train], normed[n_train:], truth)


def forecast_sets(data: PreparedData, windows=DEFAULT_WINDOWS, pred_len: float = DEFAULT_PRED_LEN):
    F, h = data.vocab.n_features, data.vocab.horizon
    train, rep_t = build_forecast_instances(data.train, F, windows, pred_len, h)
    val, rep_v = build_forecast_instances(data.val, F, windows, pred_len, h)
    report = InstanceReport(rep_t.included + rep_v.included,
                            rep_t.excluded_empty_observation + rep_v.excluded_empty_observation,
                            rep_t.excluded_empty_prediction + rep_v.excluded_empty_prediction)
    return train, val, report


def init_params(data: PreparedData, hp_overrides: dict | None, seed: int) -> EncoderParams:
    hp = HyperParams(n_features=data.vocab.n_features, n_static=data.vocab.n_static, **(hp_overrides or {}))
    return EncoderParams.init(hp, seed)


def run_pretrain(data: PreparedData, P: EncoderParams, cfg: TrainConfig, seed: int, on_epoch=None):
    train, val, _ = forecast_sets(data)
    return pretrain(P, train, val, cfg, seed, on_epoch)


def make_pretrain_trainer(data: PreparedData, P: EncoderParams, cfg: TrainConfig, seed: int):
    train, val, _ = forecast_sets(data)
    return pretrain_trainer(P, train, val, cfg, seed)


def run_cluster(data: PreparedData, P: EncoderParams, cfg: TrainConfig, seed: int, on_iteration=None,
                relabel=None, resume=None) -> ClusterResult:
    tr, va = data.items()
    return cluster_train(P, tr, va, cfg, seed, on_iteration, relabel, resume)
