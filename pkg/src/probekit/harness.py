"""Evaluation protocols over manifest-described datasets.

Two protocols are supported: cross-validation over folds that arrive
predefined in the manifest, and a fixed train/validation/test split.  In
both, normalization statistics are fitted on the training portion only and
hyperparameters are picked on validation data.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .embeddings import DEFAULT_EPSILON, EmbeddingSet, fit_normalizer, normalize_array
from .errors import InvalidConfig, ManifestError
from .metrics import ScoreTable, check_metric_name, evaluate
from .probe import LabeledData, TaskKind, TrainConfig, default_metric, score, train_probe

SPLITS = ("train", "val", "test")


@dataclass
class ManifestItem:
    clip_id: str
    labels: list
    fold: int | None = None
    split: str | None = None
    embedding_ref: str | None = None
    audio_ref: str | None = None

    @property
    def ref(self) -> str:
        return self.embedding_ref or self.clip_id


@dataclass
class DatasetManifest:
    task: TaskKind
    class_names: list
    items: list
    carve_val: int = 0

    def __post_init__(self):
        self.task = TaskKind(self.task)
        names = set(self.class_names)
        if len(names) != len(self.class_names):
            raise ManifestError("class_names must be unique")
        seen = set()
        for it in self.items:
            if it.clip_id in seen:
                raise ManifestError(f"duplicate clip_id {it.clip_id!r}")
            seen.add(it.clip_id)
            unknown = [lab for lab in it.labels if lab not in names]
            if unknown:
                raise ManifestError(f"{it.clip_id}: labels {unknown} not in class_names")
            if self.task is TaskKind.MULTICLASS and len(it.labels) != 1:
                raise ManifestError(f"{it.clip_id}: multiclass items need exactly one label")
            if it.split is not None and it.split not in SPLITS:
                raise ManifestError(f"{it.clip_id}: unknown split {it.split!r}")

    def targets(self, items) -> np.ndarray:
        col = {c: i for i, c in enumerate(self.class_names)}
        Y = np.zeros((len(items), len(self.class_names)))
        for r, it in enumerate(items):
            for lab in it.labels:
                Y[r, col[lab]] = 1.0
        return Y


def read_manifest(path) -> DatasetManifest:
    """JSON-lines: a header object ``{task, class_names[, carve_val]}`` then one item per line."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    try:
        items = [
            ManifestItem(
                str(r["clip_id"]),
                list(r["labels"]),
                r.get("fold"),
                r.get("split"),
                r.get("embedding_ref"),
                r.get("audio_ref"),
            )
            for r in rows
        ]
        return DatasetManifest(header["task"], list(header["class_names"]), items,
                               int(header.get("carve_val", 0)))
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing or malformed field ({exc})") from exc


def write_manifest(m: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {"task": m.task.value, "class_names": m.class_names}
        if m.carve_val:
            header["carve_val"] = m.carve_val
        fh.write(json.dumps(header) + "\n")
        for it in m.items:
            row = {"clip_id": it.clip_id, "labels": it.labels}
            for key in ("fold", "split", "embedding_ref", "audio_ref"):
                if getattr(it, key) is not None:
                    row[key] = getattr(it, key)
            fh.write(json.dumps(row) + "\n")


# --- configuration and results ---------------------------------------------


@dataclass
class ExperimentConfig:
    protocol: str = "cv"  # "cv" or "split"
    k: int | None = None  # cv only; None -> number of folds in the manifest
    grid: list = field(default_factory=lambda: [TrainConfig()])
    selection_metric: str | None = None
    report_metrics: list | None = None
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON
    carve_val: int | None = None  # None -> manifest value
    jobs: int = 1

    def __post_init__(self):
        if self.protocol not in ("cv", "split"):
            raise InvalidConfig(f"unknown protocol {self.protocol!r}")
        if not self.grid:
            raise InvalidConfig("hyperparameter grid is empty")
        for name in [self.selection_metric or "accuracy", *(self.report_metrics or [])]:
            check_metric_name(name)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "k": self.k,
            "grid": [g.to_dict() for g in self.grid],
            "selection_metric": self.selection_metric,
            "report_metrics": self.report_metrics,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "carve_val": self.carve_val,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def default_report_metrics(task: TaskKind) -> list:
    if TaskKind(task) is TaskKind.MULTICLASS:
        return ["accuracy", "top5", "map", "mauc"]
    return ["lwlrap", "map", "mauc"]


@dataclass
class ExperimentResult:
    protocol: str
    fold_names: list
    fold_reports: list  # MetricReport per fold
    aggregate: dict
    chosen: list  # chosen TrainConfig dict per fold
    provenance: dict

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "folds": [
                {"fold": name, "chosen": chosen, **rep.to_dict()}
                for name, rep, chosen in zip(self.fold_names, self.fold_reports, self.chosen)
            ],
            "aggregate": {k: _round(v) for k, v in self.aggregate.items()},
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        names = list(self.aggregate)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "n_items", *names])
        for fold, rep in zip(self.fold_names, self.fold_reports):
            w.writerow([fold, rep.n_items, *(_fmt(rep.values[n]) for n in names)])
        w.writerow(["mean", "", *(_fmt(self.aggregate[n]) for n in names)])
        return buf.getvalue()


def _round(v):
    return None if v is None or math.isnan(v) else round(float(v), 6)


def _fmt(v) -> str:
    return "" if math.isnan(v) else f"{v:.6f}"


def aggregate_reports(reports) -> dict:
    """Arithmetic mean of each metric across folds (folds with nan excluded)."""
    out = {}
    for name in reports[0].values:
        vals = [r.values[name] for r in reports if not math.isnan(r.values[name])]
        out[name] = math.fsum(vals) / len(vals) if vals else math.nan
    return out


# --- hyperparameter sweep -----------------------------------------------------


def sweep(grid, objective, jobs: int = 1):
    """Evaluate ``objective`` on every grid point; best first, ties in grid order.

    Returns a list of ``(grid_index, config, value)``.  A nan objective ranks last.
    """
    grid = list(grid)
    if not grid:
        raise InvalidConfig("empty grid")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        values = list(pool.map(objective, grid))
    ranked = [(i, cfg, v) for i, (cfg, v) in enumerate(zip(grid, values))]
    ranked.sort(key=lambda r: (-(r[2] if not math.isnan(r[2]) else -math.inf), r[0]))
    return ranked


# --- core -------------------------------------------------------------------


def _carve(items, n, seed_seq):
    if n <= 0:
        return items, []
    if n >= len(items):
        raise ManifestError(f"cannot carve {n} validation items from {len(items)} training items")
    order = np.random.default_rng(seed_seq).permutation(len(items))
    val_idx = set(order[:n].tolist())
    return ([it for i, it in enumerate(items) if i not in val_idx],
            [it for i, it in enumerate(items) if i in val_idx])


def _fit_and_score(manifest, emb, train_items, val_items, test_items, cfg, report_metrics, audit, tag):
    """Normalize on train, pick hyperparameters on val, report on test."""
    task = manifest.task
    if not train_items or not test_items:
        raise ManifestError(f"{tag}: empty training or test portion")
    if len(cfg.grid) > 1 and not val_items:
        raise InvalidConfig(f"{tag}: a grid of {len(cfg.grid)} points needs validation data")

    def data(items):
        X = emb.lookup([it.ref for it in items])
        return X, manifest.targets(items), [it.clip_id for it in items]

    X_tr, Y_tr, ids_tr = data(train_items)
    stats = fit_normalizer(X_tr, cfg.epsilon)
    norm = lambda X: normalize_array(stats, X)[0]  # noqa: E731
    train = LabeledData(norm(X_tr), Y_tr, ids_tr)
    val = None
    if val_items:
        X_va, Y_va, ids_va = data(val_items)
        val = LabeledData(norm(X_va), Y_va, ids_va)
    X_te, Y_te, ids_te = data(test_items)
    test = LabeledData(norm(X_te), Y_te, ids_te)
    if audit is not None:
        audit.append({"phase_owner": tag, "normalizer_fit": list(ids_tr), "train": list(ids_tr),
                      "val": list(val.clip_ids) if val else [], "test": list(ids_te)})

    metric = cfg.selection_metric or default_metric(task)
    models = [None] * len(cfg.grid)

    def objective(i):
        tc = cfg.grid[i]
        if not tc.selection_metric:
            tc = replace(tc, selection_metric=metric)
        models[i] = train_probe(train, val, task, tc, manifest.class_names, stats)
        return score(models[i], val, metric) if val is not None else 0.0

    best = sweep(range(len(cfg.grid)), objective)[0][0]
    model, best_cfg = models[best], cfg.grid[best]
    table = ScoreTable(model.predict_proba(test.X), test.Y, manifest.class_names)
    report = evaluate(table, report_metrics)
    return report, best_cfg.to_dict()


def _provenance(cfg, manifest, extra) -> dict:
    return {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "tool_version": __version__,
        "task": manifest.task.value,
        "n_items": len(manifest.items),
        **extra,
    }


def run_cross_validation(manifest: DatasetManifest, emb: EmbeddingSet, cfg: ExperimentConfig,
                         audit: list | None = None) -> ExperimentResult:
    """Train on all folds but one, test on the held-out fold, for every fold."""
    if any(it.fold is None for it in manifest.items):
        raise ManifestError("cross-validation needs a fold id on every item")
    folds = sorted({int(it.fold) for it in manifest.items})
    k = cfg.k or len(folds)
    if folds != list(range(1, k + 1)):
        raise ManifestError(f"expected folds 1..{k}, found {folds}")
    metrics_ = cfg.report_metrics or default_report_metrics(manifest.task)
    carve = manifest.carve_val if cfg.carve_val is None else cfg.carve_val
    audits = [[] if audit is not None else None for _ in folds]

    def job(pos):
        f = folds[pos]
        held = [it for it in manifest.items if int(it.fold) == f]
        pool = [it for it in manifest.items if int(it.fold) != f]
        train, val = _carve(pool, carve, [cfg.seed, f])
        return _fit_and_score(manifest, emb, train, val, held, cfg, metrics_, audits[pos], f"fold{f}")

    with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
        results = list(pool.map(job, range(len(folds))))
    if audit is not None:
        for a in audits:
            audit.extend(a)
    reports = [r for r, _ in results]
    counts = {str(f): sum(1 for it in manifest.items if int(it.fold) == f) for f in folds}
    return ExperimentResult(
        "cv",
        [str(f) for f in folds],
        reports,
        aggregate_reports(reports),
        [c for _, c in results],
        _provenance(cfg, manifest, {"k": k, "fold_counts": counts, "carve_val": carve}),
    )


def run_split_experiment(manifest: DatasetManifest, emb: EmbeddingSet, cfg: ExperimentConfig,
                         audit: list | None = None) -> ExperimentResult:
    """Choose hyperparameters on the validation split, report once on test."""
    parts = {s: [it for it in manifest.items if it.split == s] for s in SPLITS}
    if any(it.split is None for it in manifest.items):
        raise ManifestError("split protocol needs a split on every item")
    carve = manifest.carve_val if cfg.carve_val is None else cfg.carve_val
    if not parts["val"] and carve:
        parts["train"], parts["val"] = _carve(parts["train"], carve, [cfg.seed, 0])
    for s in SPLITS:
        if not parts[s]:
            raise ManifestError(f"split {s!r} is empty")
    metrics_ = cfg.report_metrics or default_report_metrics(manifest.task)
    report, chosen = _fit_and_score(manifest, emb, parts["train"], parts["val"], parts["test"],
                                    cfg, metrics_, audit, "split")
    counts = {s: len(parts[s]) for s in SPLITS}
    return ExperimentResult("split", ["test"], [report], dict(report.values), [chosen],
                            _provenance(cfg, manifest, {"split_counts": counts, "carve_val": carve}))


def run_experiment(manifest, emb, cfg, audit=None) -> ExperimentResult:
    if cfg.protocol == "cv":
        return run_cross_validation(manifest, emb, cfg, audit)
    return run_split_experiment(manifest, emb, cfg, audit)
