"""Batch driver: ``generate | pretrain | cluster | sweep | baseline | report``.

A run is described by one JSON document (see :class:`RunConfig`); a few flags
override fields of it. Every output written here carries the master seed and
the config hash.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baseline import GridSpec, baseline_cluster
from .dataset import DataError, Vocabulary, ingest_csv, read_truth_labels
from .encoder import HyperParams, load_checkpoint, represent, save_checkpoint
from .io import RunLockedError, config_hash, read_csv, run_lock, write_csv, write_json
from .metrics import INDEX_COLUMNS, best_k_votes, pca_project, sweep_k, validity_report
from .numerics import NumericalError, set_default_dtype
from .pipeline import PreparedData, forecast_sets, init_params, prepare, run_cluster
from .synthgen import ConfigError, GeneratorConfig, generate, vocabulary, write_dataset
from .training import ClusterState, TrainConfig, pretrain_trainer

log = logging.getLogger("slac_time")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# TrainConfig fields that only matter after pretraining
_CLUSTER_FIELDS = ("cluster_iterations", "epochs_per_iteration", "k", "kmeans_restarts", "kmeans_max_iter")
_DATA_FILES = {"triplets": "triplets.csv", "static": "static.csv", "vocabulary": "vocabulary.json",
               "truth": "truth_labels.csv"}


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    precision: str = "f64"
    data: dict | None = None
    generator: dict | None = None
    hyperparams: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    k_set: list = field(default_factory=lambda: [3, 4, 5])
    sweep_space: str = "pretrained"

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise ConfigError(f"unknown run config field '{key}'")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        # the output location does not change results
        body = self.to_json()
        del body["out"]
        return config_hash(body)

    @property
    def pretrain_hash(self) -> str:
        return self._partial_hash(pretrain_only=True)

    def _partial_hash(self, pretrain_only: bool = False, drop: tuple[str, ...] = ()) -> str:
        body = self.to_json()
        del body["out"]
        if pretrain_only:
            body = {k: v for k, v in body.items() if k in ("seed", "precision", "data", "generator")}
            body["hyperparams"] = {k: v for k, v in self.hyperparams.items() if k != "k"}
            body["train"] = {k: v for k, v in self.train.items() if k not in _CLUSTER_FIELDS}
        body["train"] = {k: v for k, v in body["train"].items() if k not in drop}
        return config_hash(body)

    @property
    def pretrain_resume_hash(self) -> str:
        # a longer epoch budget may continue an interrupted run
        return self._partial_hash(pretrain_only=True, drop=("max_pretrain_epochs",))

    @property
    def cluster_resume_hash(self) -> str:
        return self._partial_hash(drop=("cluster_iterations",))

    @property
    def provenance(self) -> dict:
        return {"seed": self.seed, "config_hash": self.hash}

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, self.train, "train")

    def grid_spec(self, horizon: float) -> GridSpec:
        return _build(GridSpec, {"horizon": horizon, **self.grid}, "grid")

    def generator_config(self) -> GeneratorConfig:
        if self.generator is None:
            raise ConfigError("run config is missing field 'generator'")
        return GeneratorConfig.from_json({"seed": self.seed, **self.generator})

    def data_paths(self) -> dict[str, Path | None]:
        if self.data is None:
            raise ConfigError("run config is missing field 'data'")
        if "dir" in self.data:
            base = Path(self.data["dir"])
            paths = {k: base / v for k, v in _DATA_FILES.items()}
            if not paths["truth"].exists():
                paths["truth"] = None
        else:
            paths = {}
            for k in ("triplets", "static", "vocabulary"):
                if k not in self.data:
                    raise ConfigError(f"data config is missing field '{k}'")
                paths[k] = Path(self.data[k])
            paths["truth"] = Path(self.data["truth"]) if self.data.get("truth") else None
        for k, p in paths.items():
            if p is not None and not p.exists():
                raise ConfigError(f"data.{k}: {p} does not exist")
        return paths

    def validate(self, need_data: bool = True) -> None:
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be 'f32' or 'f64'")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        self.train_config()
        if self.train.get("k", 3) < 2:
            raise ConfigError("train.k must be >= 2")
        hp_known = {f.name for f in fields(HyperParams)} - {"n_features", "n_static"}
        for key in self.hyperparams:
            if key not in hp_known:
                raise ConfigError(f"unknown hyperparams field '{key}'")
        if not self.k_set or any(not isinstance(k, int) or k < 2 for k in self.k_set):
            raise ConfigError("k_set must be a non-empty list of integers >= 2")
        if self.sweep_space not in ("pretrained", "final", "baseline"):
            raise ConfigError("sweep_space must be 'pretrained', 'final' or 'baseline'")
        if not need_data:
            return
        if (self.data is None) == (self.generator is None):
            raise ConfigError("exactly one of 'data' or 'generator' must be given")
        if self.data is not None:
            self.data_paths()
        else:
            self.generator_config()


def _build(cls, obj: dict, where: str):
    known = {f.name for f in fields(cls)}
    for key in obj:
        if key not in known:
            raise ConfigError(f"unknown {where} field '{key}'")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(args: argparse.Namespace) -> RunConfig:
    obj: dict = {}
    if args.config:
        try:
            obj = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
    cfg = RunConfig.from_json(obj)
    if args.seed is not None:
        cfg.seed = args.seed
        if cfg.generator is not None:
            cfg.generator = {**cfg.generator, "seed": args.seed}
    if args.k is not None:
        cfg.train = {**cfg.train, "k": args.k}
    if args.out is not None:
        cfg.out = args.out
    if args.data is not None:
        cfg.data = {"dir": args.data}
        cfg.generator = None
    if args.precision is not None:
        cfg.precision = args.precision
    return cfg


# -- shared stages ---------------------------------------------------------------

def load_data(cfg: RunConfig) -> PreparedData:
    if cfg.data is not None:
        paths = cfg.data_paths()
        try:
            vocab = Vocabulary.load(paths["vocabulary"])
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{paths['vocabulary']}: malformed vocabulary ({exc})") from None
        samples = ingest_csv(paths["triplets"], paths["static"], vocab)
        truth = read_truth_labels(paths["truth"]) if paths["truth"] else None
        if truth is None:
            log.info("no truth labels; external NMI will be omitted")
    else:
        gc = cfg.generator_config()
        samples = generate(gc)
        vocab = vocabulary(gc)
        truth = None
    return prepare(samples, vocab, cfg.seed, truth=truth)


def _hp(cfg: RunConfig) -> dict:
    return {**cfg.hyperparams, "k": cfg.train_config().k}


def _history_rows(phase: str, iteration: int, history) -> list[tuple]:
    return [(phase, iteration, int(e), float(tr), float(v)) for e, tr, v in history]


def _write_split(cfg: RunConfig, data: PreparedData) -> None:
    out = cfg.out_dir
    write_json(out / "split.json", data.split.to_json(), cfg.provenance)
    write_json(out / "vocabulary.json", data.vocab.to_json(), cfg.provenance)
    write_json(out / "run_config.json", {"config": cfg.to_json(), "config_hash": cfg.hash}, cfg.provenance)


def _ckpt_matches(path: Path, key: str, value: str) -> bool:
    manifest = path / "manifest.json"
    if not manifest.exists():
        return False
    return json.loads(manifest.read_text()).get("meta", {}).get(key) == value


def do_pretrain(cfg: RunConfig, data: PreparedData, resume: bool = False):
    """Pretrain (or resume pretraining) and write the checkpoint and loss history."""
    out = cfg.out_dir
    tc = cfg.train_config()
    state_dir = out / "checkpoints" / "pretrain_state"
    train, val, report = forecast_sets(data)
    log.info("forecast instances: %d included, %d without observations, %d without targets", report.included,
             report.excluded_empty_observation, report.excluded_empty_prediction)
    if not train or not val:
        raise DataError("no valid forecast instances in one of the splits")
    if resume and _ckpt_matches(state_dir, "resume_hash", cfg.pretrain_resume_hash):
        P, extra, meta = load_checkpoint(state_dir)
        trainer = pretrain_trainer(P, train, val, tc, cfg.seed)
        trainer.restore(extra, meta["trainer"])
        log.info("resuming pretraining after epoch %d", trainer.state.epoch)
    else:
        if resume:
            log.warning("no resumable pretraining state for this config; starting fresh")
        P = init_params(data, _hp(cfg), cfg.seed)
        trainer = pretrain_trainer(P, train, val, tc, cfg.seed)

    def save_state(tr):
        arrays, meta = tr.snapshot()
        save_checkpoint(state_dir, tr.P, arrays, {"trainer": meta, "resume_hash": cfg.pretrain_resume_hash,
                                                  **cfg.provenance})

    if not trainer.state.history:
        trainer.evaluate_initial()
        save_state(trainer)
    st = trainer.fit(tc.max_pretrain_epochs, on_epoch=save_state)
    log.info("pretraining: %d epochs, best epoch %d, validation loss %.5f", st.epoch, st.best_epoch, st.best_loss)
    rows = _history_rows("pretrain", 0, st.history)
    save_checkpoint(out / "checkpoints" / "pretrain", P, None,
                    {"pretrain_hash": cfg.pretrain_hash, "history": [list(h) for h in st.history],
                     "best_epoch": st.best_epoch, **cfg.provenance})
    write_csv(out / "loss_history.csv", ("phase", "iteration", "epoch", "train_loss", "val_loss"), rows,
              cfg.provenance)
    return P, st.history


def pretrained(cfg: RunConfig, data: PreparedData):
    """Pretrained parameters, reusing a checkpoint built from the same pretraining settings."""
    path = cfg.out_dir / "checkpoints" / "pretrain"
    if _ckpt_matches(path, "pretrain_hash", cfg.pretrain_hash):
        P, _, meta = load_checkpoint(path)
        log.info("reusing pretrained checkpoint %s", path)
        return P, [tuple(h) for h in meta["history"]]
    return do_pretrain(cfg, data)


def _assignment_rows(ids, labels):
    return zip(ids, (int(x) for x in labels))


def _write_embeddings(path: Path, ids, labels, points: np.ndarray, provenance: dict) -> None:
    header = ["sample_id", "cluster"] + [f"z{j}" for j in range(points.shape[1])]
    write_csv(path, header, ([i, int(c), *map(float, row)] for i, c, row in zip(ids, labels, points)), provenance)


def _read_embeddings(path: Path):
    header, rows = read_csv(path)
    ids = [r[0] for r in rows]
    labels = np.array([int(r[1]) for r in rows])
    points = np.array([[float(x) for x in r[2:]] for r in rows]).reshape(len(rows), len(header) - 2)
    return ids, labels, points


def _report_body(method: str, report, k: int, extra: dict | None = None) -> dict:
    body = {"method": method, "k": k, **report.to_json()}
    body.update(extra or {})
    return body


def _latest_iteration(cfg: RunConfig) -> int | None:
    root = cfg.out_dir / "checkpoints"
    best = None
    for p in root.glob("iter_*"):
        try:
            t = int(p.name.split("_", 1)[1])
        except ValueError:
            continue
        if (_ckpt_matches(p, "resume_hash", cfg.cluster_resume_hash) and t < cfg.train_config().cluster_iterations
                and (best is None or t > best)):
            best = t
    return best


# -- commands ----------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, args) -> int:
    cfg.validate(need_data=False)
    gc = cfg.generator_config()
    samples = generate(gc)
    paths = write_dataset(samples, vocabulary(gc), cfg.out_dir, cfg.provenance)
    write_json(cfg.out_dir / "manifest.json", {"generator": gc.to_json(), "files": paths,
                                               "n_samples": len(samples)}, cfg.provenance)
    log.info("wrote %d samples to %s", len(samples), cfg.out_dir)
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, args) -> int:
    cfg.validate()
    data = load_data(cfg)
    _write_split(cfg, data)
    do_pretrain(cfg, data, resume=args.resume)
    return EXIT_OK


def cmd_cluster(cfg: RunConfig, args) -> int:
    cfg.validate()
    tc = cfg.train_config()
    data = load_data(cfg)
    _write_split(cfg, data)
    out = cfg.out_dir
    ids = data.ids
    truth = data.truth_vector()
    resume = None
    P = None
    done = _latest_iteration(cfg) if args.resume else None
    if done is not None:
        P, extra, meta = load_checkpoint(out / "checkpoints" / f"iter_{done}")
        resume = (done, ClusterState(extra["centroids"], extra["labels"],
                                     [tuple(x) for x in meta["nmi_trail"]], meta["sizes"]))
        log.info("resuming clustering after iteration %d", done)
    else:
        # a fresh run replaces any earlier iterations in this directory
        shutil.rmtree(out / "assignments", ignore_errors=True)
        for p in (out / "checkpoints").glob("iter_*"):
            shutil.rmtree(p)
    P0, pre_hist = pretrained(cfg, data)
    if P is None:
        P = P0

    trail: list = list(resume[1].nmi_trail) if resume else []
    sizes: list = list(resume[1].sizes) if resume else []

    def on_iteration(rec, params):
        if rec.nmi is not None:
            trail.append((rec.iteration, rec.nmi))
        sizes.append(np.bincount(rec.labels, minlength=tc.k).tolist())
        save_checkpoint(out / "checkpoints" / f"iter_{rec.iteration}", params,
                        {"labels": rec.labels.astype(np.int64), "centroids": rec.centroids},
                        {"iteration": rec.iteration, "nmi_trail": [list(x) for x in trail], "sizes": sizes,
                         "history": [list(h) for h in rec.history], "agreement": rec.agreement,
                         "resume_hash": cfg.cluster_resume_hash, **cfg.provenance})
        write_csv(out / "assignments" / f"iter_{rec.iteration}.csv", ("sample_id", "cluster"),
                  _assignment_rows(ids, rec.labels), cfg.provenance)

    res = run_cluster(data, P, tc, cfg.seed, on_iteration=on_iteration, resume=resume)

    write_csv(out / "nmi_trail.csv", ("iteration", "nmi"), res.state.nmi_trail, cfg.provenance)
    write_csv(out / "cluster_sizes.csv", ["iteration"] + [f"cluster_{j}" for j in range(tc.k)],
              ([t, *s] for t, s in enumerate(res.state.sizes)), cfg.provenance)
    rows = _history_rows("pretrain", 0, pre_hist)
    for t in range(tc.cluster_iterations):
        meta = json.loads((out / "checkpoints" / f"iter_{t}" / "manifest.json").read_text())["meta"]
        rows += _history_rows("cluster", t, meta["history"])
    write_csv(out / "loss_history.csv", ("phase", "iteration", "epoch", "train_loss", "val_loss"), rows,
              cfg.provenance)
    write_csv(out / "assignments" / "final.csv", ("sample_id", "cluster"), _assignment_rows(ids, res.state.labels),
              cfg.provenance)
    _write_embeddings(out / "embeddings.csv", ids, res.state.labels, res.representations, cfg.provenance)
    report = validity_report(res.representations, res.state.labels, truth)
    body = _report_body("slac_time", report, tc.k, {
        "iterations": tc.cluster_iterations,
        "classifier_agreement": res.agreement,
        "space": "representation",
    })
    write_json(out / "report.json", body, cfg.provenance)
    log.info("clustering done: silhouette %.4f%s", report.silhouette,
             "" if report.external_nmi is None else f", external NMI {report.external_nmi:.4f}")
    return EXIT_OK


def _baseline_points(cfg: RunConfig, data: PreparedData):
    from .baseline import flatten

    return flatten(data.train + data.val, data.vocab.n_features, cfg.grid_spec(data.vocab.horizon))


def cmd_sweep(cfg: RunConfig, args) -> int:
    cfg.validate()
    data = load_data(cfg)
    truth = data.truth_vector()
    if cfg.sweep_space == "final":
        path = cfg.out_dir / "embeddings.csv"
        if not path.exists():
            raise ConfigError(f"sweep_space 'final' needs {path}; run 'cluster' first")
        _, _, points = _read_embeddings(path)
    elif cfg.sweep_space == "baseline":
        points = _baseline_points(cfg, data)
    else:
        _write_split(cfg, data)
        P, _ = pretrained(cfg, data)
        tr, va = data.items()
        points = represent(P.strip_head(), tr + va)
    reports = sweep_k(points, cfg.k_set, cfg.seed, truth)
    cols = ["k", "N", *INDEX_COLUMNS] + (["external_nmi"] if truth is not None else [])
    write_csv(cfg.out_dir / "sweep.csv", cols, ([r.to_json()[c] for c in cols] for r in reports), cfg.provenance)
    write_json(cfg.out_dir / "sweep.json", {"space": cfg.sweep_space, "columns": cols,
                                            "rows": [r.to_json() for r in reports],
                                            "best_k_votes": {str(k): v for k, v in best_k_votes(reports).items()}},
               cfg.provenance)
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, args) -> int:
    cfg.validate()
    tc = cfg.train_config()
    data = load_data(cfg)
    truth = data.truth_vector()
    out = cfg.out_dir / "baseline"
    grid = cfg.grid_spec(data.vocab.horizon)
    res = baseline_cluster(data.train + data.val, data.vocab.n_features, tc.k, grid, cfg.seed, truth,
                           tc.kmeans_restarts)
    ids = data.ids
    write_csv(out / "assignments" / "iter_0.csv", ("sample_id", "cluster"), _assignment_rows(ids, res.state.labels),
              cfg.provenance)
    write_csv(out / "assignments" / "final.csv", ("sample_id", "cluster"), _assignment_rows(ids, res.state.labels),
              cfg.provenance)
    _write_embeddings(out / "embeddings.csv", ids, res.state.labels, res.points, cfg.provenance)
    body = _report_body("kmeans_baseline", res.report, tc.k, {"space": "flattened", "grid_step": grid.step,
                                                              "grid_points": grid.length})
    write_json(out / "report.json", body, cfg.provenance)
    methods = {"kmeans_baseline": body}
    slac = cfg.out_dir / "report.json"
    if slac.exists():
        methods["slac_time"] = {k: v for k, v in json.loads(slac.read_text()).items() if k != "provenance"}
    else:
        log.warning("no SLAC-Time report in %s; comparison has the baseline only", cfg.out_dir)
    write_json(cfg.out_dir / "comparison.json", {"methods": methods}, cfg.provenance)
    return EXIT_OK


def _decile_means(values: list[float]) -> tuple[float, float] | None:
    if not values:
        return None
    m = max(1, len(values) // 10)
    return float(np.mean(values[:m])), float(np.mean(values[-m:]))


def cmd_report(cfg: RunConfig, args) -> int:
    from . import plotting

    run = Path(args.run_dir) if args.run_dir else cfg.out_dir
    report_path = run / "report.json"
    emb_path = run / "embeddings.csv"
    if not report_path.exists() or not emb_path.exists():
        raise DataError(f"{run} has no report.json/embeddings.csv; run cluster or baseline first")
    report = json.loads(report_path.read_text())
    prov = report.get("provenance", {})
    ids, labels, points = _read_embeddings(emb_path)
    coords, ratios = pca_project(points, 2)
    write_csv(run / "pca.csv", ("sample_id", "pc1", "pc2", "cluster"),
              ((i, float(a), float(b), int(c)) for i, (a, b), c in zip(ids, coords, labels)), prov)
    trail: list[tuple[int, float]] = []
    if (run / "nmi_trail.csv").exists():
        _, rows = read_csv(run / "nmi_trail.csv")
        trail = [(int(r[0]), float(r[1])) for r in rows]
    dec = _decile_means([v for _, v in trail])
    lines = [
        f"method: {report.get('method', 'unknown')}",
        f"seed: {prov.get('seed', '-')}",
        f"config_hash: {prov.get('config_hash', '-')}",
        f"k: {report['k']}",
        f"N: {report['N']}",
    ]
    lines += [f"{c}: {report[c]!r}" for c in INDEX_COLUMNS]
    lines.append(f"external_nmi: {report['external_nmi']!r}" if "external_nmi" in report else "external_nmi: n/a")
    if dec is None:
        lines += ["nmi_trail_first_decile_mean: n/a", "nmi_trail_last_decile_mean: n/a"]
    else:
        lines += [f"nmi_trail_first_decile_mean: {dec[0]!r}", f"nmi_trail_last_decile_mean: {dec[1]!r}"]
    lines.append(f"pca_explained_variance: {float(ratios[0])!r} {float(ratios[1])!r}")
    (run / "summary.txt").write_text("\n".join(lines) + "\n")
    plotting.plot_projection(coords, labels, ratios, run / "pca.png", report.get("method", ""), prov)
    plotting.plot_nmi_trail(trail, run / "nmi_trail.png", prov)
    if (run / "loss_history.csv").exists():
        _, rows = read_csv(run / "loss_history.csv")
        pre = [(int(r[2]), float(r[3]), float(r[4])) for r in rows if r[0] == "pretrain"]
        plotting.plot_loss_history(pre, run / "loss_history.png", prov)
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "cluster": cmd_cluster,
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--k", type=int, help="number of clusters")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="directory with triplets.csv, static.csv, vocabulary.json")
    common.add_argument("--precision", choices=("f32", "f64"))
    common.add_argument("--log-level", default="INFO")
    p = _Parser(prog="slac-time", description="Self-supervised clustering of irregular multivariate time series.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sp = sub.add_parser("pretrain", parents=[common], help="forecast pretraining")
    sp.add_argument("--resume", action="store_true", help="continue from the last saved epoch")
    sp = sub.add_parser("cluster", parents=[common], help="pretrain if needed, then the clustering loop")
    sp.add_argument("--resume", action="store_true", help="continue after the last saved iteration")
    sub.add_parser("sweep", parents=[common], help="validity indices over k_set")
    sub.add_parser("baseline", parents=[common], help="interpolation + K-means comparison arm")
    sp = sub.add_parser("report", parents=[common], help="summary, PCA coordinates and figures for a run")
    sp.add_argument("run_dir", nargs="?", help="run or baseline directory (default: --out)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        if cfg.precision not in ("f32", "f64"):
            raise ConfigError("precision must be 'f32' or 'f64'")
        set_default_dtype(np.float32 if cfg.precision == "f32" else np.float64)
        lock_dir = Path(args.run_dir) if getattr(args, "run_dir", None) else cfg.out_dir
        with run_lock(lock_dir):
            return COMMANDS[args.command](cfg, args)
    except (ConfigError, RunLockedError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    finally:
        set_default_dtype(np.float64)


if __name__ == "__main__":
    sys.exit(main())
