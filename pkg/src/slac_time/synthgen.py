"""Synthetic irregular multivariate time series with known regimes.

Each regime gives every variable a curve ``baseline + amplitude*sin(freq*t + phase) + drift*t``
and a Gaussian static profile. Observation times per variable are a Poisson
process on ``[0, horizon]``; a variable is dropped entirely for a sample with
probability ``p_drop``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import ObservationTriplet, TimeSeriesSample, Vocabulary
from .io import write_csv, write_json
from .numerics import substream


class ConfigError(ValueError):
    """Invalid or incomplete configuration. The message names the offending field."""


@dataclass
class RegimeSpec:
    amplitude: list[float]
    frequency: list[float]
    phase: list[float]
    drift: list[float]
    baseline: list[float]
    static_mean: list[float]
    static_var: list[float]
    weight: float

    def curve(self, t: np.ndarray, f: int) -> np.ndarray:
        return (self.baseline[f] + self.amplitude[f] * np.sin(self.frequency[f] * t + self.phase[f])
                + self.drift[f] * t)


@dataclass
class GeneratorConfig:
    k_true: int = 3
    n_features: int = 5
    n_static: int = 4
    n_samples: int = 300
    rate: float = 0.1
    noise: float = 0.3
    p_drop: float = 0.0
    horizon: float = 120.0
    seed: int = 0
    static_missing: float = 0.0
    separation: float = 1.5
    regimes: list[RegimeSpec] | None = field(default=None)

    REQUIRED = ("k_true", "n_features", "n_static", "n_samples", "rate", "noise", "p_drop", "seed")

    def validate(self) -> None:
        if self.k_true < 1:
            raise ConfigError("k_true must be >= 1")
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if self.n_static < 0:
            raise ConfigError("n_static must be >= 0")
        if self.n_samples < self.k_true:
            raise ConfigError("n_samples must be >= k_true")
        if not self.rate > 0:
            raise ConfigError("rate must be > 0")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not 0 <= self.p_drop < 1:
            raise ConfigError("p_drop must be in [0, 1)")
        if not 0 <= self.static_missing < 1:
            raise ConfigError("static_missing must be in [0, 1)")
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0")
        if self.regimes is not None:
            if len(self.regimes) != self.k_true:
                raise ConfigError("regimes must have k_true entries")
            w = np.array([r.weight for r in self.regimes])
            if abs(w.sum() - 1.0) > 1e-9 or (w < 0).any():
                raise ConfigError("regimes.weight must be non-negative and sum to 1")
            for r in self.regimes:
                for name in ("amplitude", "frequency", "phase", "drift", "baseline"):
                    if len(getattr(r, name)) != self.n_features:
                        raise ConfigError(f"regimes.{name} must have n_features entries")
                if len(r.static_mean) != self.n_static or len(r.static_var) != self.n_static:
                    raise ConfigError("regimes.static_mean/static_var must have n_static entries")
                if any(v <= 0 for v in r.static_var):
                    raise ConfigError("regimes.static_var entries must be > 0")

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorConfig":
        for name in cls.REQUIRED:
            if name not in obj:
                raise ConfigError(f"generator config is missing field '{name}'")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown generator config field '{sorted(unknown)[0]}'")
        kw = dict(obj)
        if kw.get("regimes") is not None:
            kw["regimes"] = [RegimeSpec(**r) for r in kw["regimes"]]
        try:
            cfg = cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def to_json(self) -> dict:
        return asdict(self)


def default_regimes(cfg: GeneratorConfig) -> list[RegimeSpec]:
    """Random but well-spread regimes; spread grows with ``cfg.separation``."""
    rng = substream(cfg.seed, "regimes")
    k, F, D = cfg.k_true, cfg.n_features, cfg.n_static
    out = []
    for _ in range(k):
        out.append(RegimeSpec(
            amplitude=rng.uniform(0.5, 1.5, F).tolist(),
            frequency=(2 * np.pi / rng.uniform(24.0, 72.0, F)).tolist(),
            phase=rng.uniform(0, 2 * np.pi, F).tolist(),
            drift=(rng.normal(0, 0.01, F) * cfg.separation).tolist(),
            baseline=(rng.normal(0, 1.0, F) * cfg.separation).tolist(),
            static_mean=(rng.normal(0, 1.0, D) * cfg.separation).tolist(),
            static_var=[1.0] * D,
            weight=1.0 / k,
        ))
    return out


def _draw_sample(i: int, cfg: GeneratorConfig, regimes: list[RegimeSpec], cum_w: np.ndarray) -> TimeSeriesSample:
    rng = substream(cfg.seed, "generator", i)
    label = int(min(np.searchsorted(cum_w, rng.random(), side="right"), len(regimes) - 1))
    reg = regimes[label]
    while True:
        triplets: list[ObservationTriplet] = []
        for f in range(cfg.n_features):
            if rng.random() < cfg.p_drop:
                continue
            count = rng.poisson(cfg.rate * cfg.horizon)
            times = np.sort(rng.uniform(0.0, cfg.horizon, count))
            vals = reg.curve(times, f)
            if cfg.noise > 0:
                vals = vals + rng.normal(0.0, cfg.noise, count)
            triplets.extend(ObservationTriplet(float(t), f, float(v)) for t, v in zip(times, vals))
        if triplets:
            break
    triplets.sort(key=lambda tr: (tr.t, tr.f))
    static = np.asarray(reg.static_mean) + np.sqrt(reg.static_var) * rng.normal(size=cfg.n_static)
    if cfg.static_missing > 0:
        static = np.where(rng.random(cfg.n_static) < cfg.static_missing, np.nan, static)
    return TimeSeriesSample(f"s{i:05d}", static, triplets, truth_label=label)


def generate(cfg: GeneratorConfig, regimes: list[RegimeSpec] | None = None) -> list[TimeSeriesSample]:
    cfg.validate()
    regimes = regimes or cfg.regimes or default_regimes(cfg)
    cum_w = np.cumsum([r.weight for r in regimes])
    return [_draw_sample(i, cfg, regimes, cum_w) for i in range(cfg.n_samples)]


def vocabulary(cfg: GeneratorConfig) -> Vocabulary:
    return Vocabulary([f"x{j}" for j in range(cfg.n_features)],
                      [f"s{j}" for j in range(cfg.n_static)], horizon=cfg.horizon)


def separation_report(regimes: list[RegimeSpec], horizon: float = 120.0) -> np.ndarray:
    """Pairwise L2 distance between regime mean curves sampled hourly on ``[0, horizon]``."""
    if len(regimes) < 2:
        raise ValueError("need at least 2 regimes")
    grid = np.arange(0.0, horizon + 1e-9, 1.0)
    F = len(regimes[0].baseline)
    curves = np.stack([np.concatenate([r.curve(grid, f) for f in range(F)]) for r in regimes])
    diff = curves[:, None, :] - curves[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def write_dataset(samples: list[TimeSeriesSample], vocab: Vocabulary, out_dir, provenance: dict | None = None) -> dict:
    """Write triplets.csv, static.csv, truth_labels.csv and vocabulary.json. Returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "triplets": out / "triplets.csv",
        "static": out / "static.csv",
        "truth": out / "truth_labels.csv",
        "vocabulary": out / "vocabulary.json",
    }
    ts_names = vocab.time_series_variables
    st_names = vocab.static_variables
    write_csv(paths["triplets"], ["sample_id", "time_hours", "variable", "value"],
              ((s.id, tr.t, ts_names[tr.f], tr.v) for s in samples for tr in s.triplets), provenance)
    write_csv(paths["static"], ["sample_id", "variable", "value"],
              ((s.id, st_names[j], float(x)) for s in samples for j, x in enumerate(s.static) if not np.isnan(x)),
              provenance)
    write_csv(paths["truth"], ["sample_id", "label"],
              ((s.id, s.truth_label) for s in samples if s.truth_label is not None), provenance)
    write_json(paths["vocabulary"], vocab.to_json(), provenance)
    return {k: str(v) for k, v in paths.items()}
