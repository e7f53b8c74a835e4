"""Triplet data model, CSV ingestion, normalization, splits and forecast instances."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import substream

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 120.0
DEFAULT_WINDOWS = (24.0, 48.0, 72.0, 96.0, 118.0)
DEFAULT_PRED_LEN = 2.0


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class ObservationTriplet:
    t: float
    f: int
    v: float


@dataclass
class TimeSeriesSample:
    id: str
    static: np.ndarray
    triplets: list[ObservationTriplet]
    truth_label: int | None = None

    @property
    def n(self) -> int:
        return len(self.triplets)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Times, feature indices and values as parallel arrays."""
        if not self.triplets:
            return np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0)
        t = np.array([tr.t for tr in self.triplets], dtype=float)
        f = np.array([tr.f for tr in self.triplets], dtype=np.int64)
        v = np.array([tr.v for tr in self.triplets], dtype=float)
        return t, f, v

    def without_truth(self) -> "TimeSeriesSample":
        return replace(self, truth_label=None)


@dataclass
class VariableStats:
    mean: float = 0.0
    std: float = 1.0


@dataclass
class Vocabulary:
    time_series_variables: list[str]
    static_variables: list[str]
    ts_stats: list[VariableStats] | None = None
    static_stats: list[VariableStats] | None = None
    horizon: float = DEFAULT_HORIZON
    _ts_index: dict[str, int] = field(default_factory=dict, repr=False)
    _static_index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._ts_index = {name: i for i, name in enumerate(self.time_series_variables)}
        self._static_index = {name: i for i, name in enumerate(self.static_variables)}
        if len(self._ts_index) != len(self.time_series_variables):
            raise DataError("duplicate time-series variable names in vocabulary")
        if len(self._static_index) != len(self.static_variables):
            raise DataError("duplicate static variable names in vocabulary")

    @property
    def n_features(self) -> int:
        return len(self.time_series_variables)

    @property
    def n_static(self) -> int:
        return len(self.static_variables)

    def ts_index(self, name: str) -> int:
        try:
            return self._ts_index[name]
        except KeyError:
            raise DataError(f"unknown variable {name}") from None

    def static_index(self, name: str) -> int:
        try:
            return self._static_index[name]
        except KeyError:
            raise DataError(f"unknown variable {name}") from None

    @property
    def fitted(self) -> bool:
        return self.ts_stats is not None and self.static_stats is not None

    def to_json(self) -> dict:
        out = {
            "time_series_variables": list(self.time_series_variables),
            "static_variables": list(self.static_variables),
            "horizon": self.horizon,
        }
        if self.fitted:
            out["stats"] = {
                "time_series": {n: {"mean": s.mean, "std": s.std}
                                for n, s in zip(self.time_series_variables, self.ts_stats)},
                "static": {n: {"mean": s.mean, "std": s.std}
                           for n, s in zip(self.static_variables, self.static_stats)},
            }
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        try:
            vocab = cls(list(obj["time_series_variables"]), list(obj.get("static_variables", [])),
                        horizon=float(obj.get("horizon", DEFAULT_HORIZON)))
        except KeyError as exc:
            raise DataError(f"vocabulary is missing field {exc.args[0]}") from None
        stats = obj.get("stats")
        if stats:
            ts = stats.get("time_series", {})
            st = stats.get("static", {})
            vocab.ts_stats = [VariableStats(**ts[n]) if n in ts else VariableStats()
                              for n in vocab.time_series_variables]
            vocab.static_stats = [VariableStats(**st[n]) if n in st else VariableStats()
                                  for n in vocab.static_variables]
        return vocab

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ForecastInstance:
    sample_id: str
    window: float
    static: np.ndarray
    times: np.ndarray
    features: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    target: np.ndarray


@dataclass
class SplitSpec:
    seed: int
    train: list[str]
    val: list[str]

    def to_json(self) -> dict:
        return {"seed": self.seed, "train": list(self.train), "val": list(self.val)}

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSpec":
        return cls(int(obj["seed"]), list(obj["train"]), list(obj["val"]))


# -- ingestion -----------------------------------------------------------------

def _rows(path: Path, header: list[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        seen_header = False
        for row in reader:
            lineno = reader.line_num
            if not row or row[0].startswith("#"):
                continue
            if not seen_header:
                if [c.strip() for c in row] != header:
                    raise DataError(f"{path}:{lineno}: expected header {','.join(header)}")
                seen_header = True
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: malformed row, expected {len(header)} fields")
            yield lineno, [c.strip() for c in row]
    if not seen_header:
        raise DataError(f"{path}: empty file")


def _float(text: str, path: Path, lineno: int, what: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed {what} {text!r}") from None
    if not math.isfinite(x):
        raise DataError(f"{path}:{lineno}: non-finite {what}")
    return x


def ingest_csv(triplet_path, static_path, vocab: Vocabulary) -> list[TimeSeriesSample]:
    """Read triplet and static CSVs into samples, in first-appearance order of ids."""
    triplet_path = Path(triplet_path)
    by_id: dict[str, list[ObservationTriplet]] = {}
    seen: set[tuple[str, float, int]] = set()
    for lineno, (sid, t_txt, var, v_txt) in _rows(triplet_path, ["sample_id", "time_hours", "variable", "value"]):
        t = _float(t_txt, triplet_path, lineno, "time")
        if t < 0:
            raise DataError(f"{triplet_path}:{lineno}: negative time {t}")
        if t > vocab.horizon:
            raise DataError(f"{triplet_path}:{lineno}: time {t} beyond horizon {vocab.horizon}")
        try:
            f = vocab.ts_index(var)
        except DataError as exc:
            raise DataError(f"{triplet_path}:{lineno}: {exc}") from None
        v = _float(v_txt, triplet_path, lineno, "value")
        key = (sid, t, f)
        if key in seen:
            raise DataError(f"{triplet_path}:{lineno}: duplicate observation of {var} at t={t} for {sid}")
        seen.add(key)
        by_id.setdefault(sid, []).append(ObservationTriplet(t, f, v))

    statics = {sid: np.full(vocab.n_static, np.nan) for sid in by_id}
    if static_path is not None:
        static_path = Path(static_path)
        for lineno, (sid, var, v_txt) in _rows(static_path, ["sample_id", "variable", "value"]):
            if sid not in statics:
                raise DataError(f"{static_path}:{lineno}: sample {sid} has no time-series observations")
            try:
                j = vocab.static_index(var)
            except DataError as exc:
                raise DataError(f"{static_path}:{lineno}: {exc}") from None
            if not np.isnan(statics[sid][j]):
                raise DataError(f"{static_path}:{lineno}: duplicate static {var} for {sid}")
            statics[sid][j] = _float(v_txt, static_path, lineno, "value")
    return [TimeSeriesSample(sid, statics[sid], trips) for sid, trips in by_id.items()]


def read_truth_labels(path) -> dict[str, int]:
    path = Path(path)
    return {sid: int(lab) for _, (sid, lab) in _rows(path, ["sample_id", "label"])}


# -- normalization -------------------------------------------------------------

def _stats(values: list[float], name: str) -> VariableStats:
    if not values:
        log.warning("variable %s has no observations in the training split; using mean 0, std 1", name)
        return VariableStats(0.0, 1.0)
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std())
    if not std > 0:
        std = 1.0
    return VariableStats(mean, std)


def fit_normalization(train: list[TimeSeriesSample], vocab: Vocabulary) -> Vocabulary:
    """Per-variable population mean/std over the training split. Returns a fitted copy."""
    if not train:
        raise DataError("training split is empty")
    per_var: list[list[float]] = [[] for _ in range(vocab.n_features)]
    for s in train:
        for tr in s.triplets:
            per_var[tr.f].append(tr.v)
    per_static: list[list[float]] = [[] for _ in range(vocab.n_static)]
    for s in train:
        for j, x in enumerate(s.static):
            if not np.isnan(x):
                per_static[j].append(float(x))
    out = Vocabulary(vocab.time_series_variables, vocab.static_variables, horizon=vocab.horizon)
    out.ts_stats = [_stats(vals, n) for vals, n in zip(per_var, vocab.time_series_variables)]
    out.static_stats = [_stats(vals, n) for vals, n in zip(per_static, vocab.static_variables)]
    return out


def normalize(sample: TimeSeriesSample, vocab: Vocabulary) -> TimeSeriesSample:
    """z-score values and statics; scale times to ``t / horizon``."""
    if not vocab.fitted:
        raise DataError("normalization stats are not fitted")
    ts = vocab.ts_stats
    trips = [ObservationTriplet(tr.t / vocab.horizon, tr.f, (tr.v - ts[tr.f].mean) / ts[tr.f].std)
             for tr in sample.triplets]
    mu = np.array([s.mean for s in vocab.static_stats])
    sd = np.array([s.std for s in vocab.static_stats])
    return replace(sample, static=(sample.static - mu) / sd, triplets=trips)


def denormalize(sample: TimeSeriesSample, vocab: Vocabulary) -> TimeSeriesSample:
    ts = vocab.ts_stats
    trips = [ObservationTriplet(tr.t * vocab.horizon, tr.f, tr.v * ts[tr.f].std + ts[tr.f].mean)
             for tr in sample.triplets]
    mu = np.array([s.mean for s in vocab.static_stats])
    sd = np.array([s.std for s in vocab.static_stats])
    return replace(sample, static=sample.static * sd + mu, triplets=trips)


def impute_static_mean(samples: list[TimeSeriesSample], train: list[TimeSeriesSample]) -> list[TimeSeriesSample]:
    """Replace missing static entries with training-split means (raw units)."""
    if not train:
        raise DataError("training split is empty")
    stacked = np.vstack([s.static for s in train]) if train[0].static.size else np.zeros((len(train), 0))
    means = np.zeros(stacked.shape[1])
    for j in range(stacked.shape[1]):
        col = stacked[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            log.warning("static variable %d is missing in every training sample; imputing 0", j)
        else:
            means[j] = col.mean()
    out = []
    for s in samples:
        if np.isnan(s.static).any():
            s = replace(s, static=np.where(np.isnan(s.static), means, s.static))
        out.append(s)
    return out


# -- splitting -----------------------------------------------------------------

def split(samples: list[TimeSeriesSample], ratio: float = 0.8, seed: int = 0) -> SplitSpec:
    n = len(samples)
    if n < 5:
        raise DataError(f"need at least 5 samples to split, got {n}")
    order = substream(seed, "split").permutation(n)
    n_train = int(round(ratio * n))
    ids = [samples[i].id for i in order]
    return SplitSpec(seed, ids[:n_train], ids[n_train:])


def apply_split(samples: list[TimeSeriesSample], spec: SplitSpec):
    by_id = {s.id: s for s in samples}
    missing = [i for i in spec.train + spec.val if i not in by_id]
    if missing:
        raise DataError(f"split refers to unknown sample ids, e.g. {missing[0]}")
    return [by_id[i] for i in spec.train], [by_id[i] for i in spec.val]


# -- forecast instances --------------------------------------------------------

@dataclass
class InstanceReport:
    included: int = 0
    excluded_empty_observation: int = 0
    excluded_empty_prediction: int = 0

    @property
    def excluded(self) -> int:
        return self.excluded_empty_observation + self.excluded_empty_prediction


def build_forecast_instances(
    samples: list[TimeSeriesSample],
    n_features: int,
    windows=DEFAULT_WINDOWS,
    pred_len: float = DEFAULT_PRED_LEN,
    horizon: float = DEFAULT_HORIZON,
) -> tuple[list[ForecastInstance], InstanceReport]:
    """Cut each normalized sample at every observation window.

    Samples carry times in ``t / horizon`` units; ``windows`` and ``pred_len``
    are in hours. A variable observed several times in the prediction window
    is targeted at its earliest observation.
    """
    report = InstanceReport()
    out: list[ForecastInstance] = []
    for s in samples:
        t, f, v = s.arrays()
        for w in windows:
            # compare in scaled units so t == w survives the division exactly
            lo = w / horizon
            hi = (w + pred_len) / horizon
            obs = t <= lo
            if not obs.any():
                report.excluded_empty_observation += 1
                continue
            pred = (t > lo) & (t <= hi)
            if not pred.any():
                report.excluded_empty_prediction += 1
                continue
            mask = np.zeros(n_features)
            target = np.zeros(n_features)
            first = np.full(n_features, np.inf)
            for i in np.flatnonzero(pred):
                if t[i] < first[f[i]]:
                    first[f[i]] = t[i]
                    target[f[i]] = v[i]
                    mask[f[i]] = 1.0
            out.append(ForecastInstance(s.id, float(w), s.static, t[obs], f[obs], v[obs], mask, target))
            report.included += 1
    if report.excluded:
        log.info("forecast instances: %d included, %d excluded (%d empty observation, %d empty prediction)",
                 report.included, report.excluded, report.excluded_empty_observation,
                 report.excluded_empty_prediction)
    return out, report
