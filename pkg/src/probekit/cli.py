"""Command-line entry point: ``probekit {features,embed,probe,eval,analyze}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every subcommand writes ``provenance.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    agglomerate,
    cosine_matrix,
    extract_label_vectors,
    mv_normalize_pair,
    render_dendrogram,
    render_heatmap,
    tsne,
)
from .analysis.tsne import check_perplexity, default_perplexity
from .dsp import MaskSpec, MelConfig, compute_logmel, read_spectrogram, read_wav, spec_augment, write_spectrogram
from .embeddings import EmbeddingSet, fit_normalizer, normalize_array, read_embeddings, write_embeddings
from .errors import (
    DimMismatch,
    InvalidConfig,
    InvalidPerplexity,
    LabelError,
    ManifestError,
    TooFewRows,
)
from .harness import ExperimentConfig, read_manifest, run_experiment
from .metrics import ScoreTable, UnknownMetric, check_metric_name, evaluate
from .pooling import POOLERS
from .probe import LabeledData, TaskKind, TrainConfig, default_metric, read_probe, train_probe, write_probe

log = logging.getLogger("probekit")

USAGE_ERRORS = (
    DimMismatch,
    FileNotFoundError,
    InvalidConfig,
    InvalidPerplexity,
    LabelError,
    ManifestError,
    TooFewRows,
    UnknownMetric,
)


class UsageError(Exception):
    pass


# --- shared helpers -----------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


_UNRECORDED = {"out", "jobs", "config", "func"}


def _write_provenance(args, out: Path) -> None:
    recorded = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
    blob = json.dumps(recorded, sort_keys=True, default=str)
    _write_json(out / "provenance.json", {
        "command": args.command,
        "args": json.loads(blob),
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "tool_version": __version__,
        "seed": args.seed,
    })


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path, what):
    if path is None:
        raise UsageError(f"--{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# --- features -------------------------------------------------------------------


def cmd_features(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"input directory not found: {src}")
    wavs = sorted(p for p in src.iterdir() if p.suffix.lower() == ".wav")
    if not wavs:
        raise UsageError(f"no .wav files in {src}")
    out = _out_dir(args)
    cfg = MelConfig(n_mels=args.n_mels, frame_rate=args.frame_rate)
    cfg.validate()
    mask = MaskSpec(args.max_freq_bins, args.max_time_seconds)

    def job(path):
        try:
            clip = read_wav(path)
            spec = compute_logmel(clip, cfg)
            if args.augment:
                seed = int(np.random.SeedSequence([args.seed, zlib.crc32(clip.id.encode())]).generate_state(1)[0])
                spec = spec_augment(spec, mask, seed)
        except Exception as exc:  # one bad file must not sink the batch
            log.warning("skipping %s: %s", path.name, exc)
            return None
        name = f"{clip.id}.lmel"
        write_spectrogram(spec, out / name)
        return {"clip_id": clip.id, "file": name, "n_frames": spec.n_frames, "frame_rate": spec.frame_rate}

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        entries = list(pool.map(job, wavs))
    done = [e for e in entries if e is not None]
    _write_json(out / "index.json", {"n_mels": cfg.n_mels, "frame_rate": cfg.frame_rate, "clips": done})
    _write_provenance(args, out)
    log.info("wrote %d of %d spectrograms", len(done), len(wavs))
    return 0 if done else 1


# --- embed -----------------------------------------------------------------------


def _randproj(n_mels: int, dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, 1.0 / np.sqrt(n_mels), size=(n_mels, dim))


def cmd_embed(args) -> int:
    out = _out_dir(args)
    if args.npz:
        data = np.load(_require_file(args.npz, "npz"))
        emb = EmbeddingSet(data["vectors"], [str(c) for c in data["clip_ids"]],
                           [args.source_tag or "imported"] * len(data["clip_ids"]))
    else:
        feat_dir = Path(args.features) if args.features else None
        if feat_dir is None or not (feat_dir / "index.json").is_file():
            raise UsageError("--features DIR (with index.json) or --npz FILE is required")
        index = json.loads((feat_dir / "index.json").read_text())
        pool = POOLERS[args.pool]
        proj = _randproj(index["n_mels"], args.dim, args.seed) if args.encoder == "randproj" else None
        tag = args.source_tag or f"{args.encoder}-{args.pool}"
        vectors, ids = [], []
        for entry in index["clips"]:
            frames = read_spectrogram(feat_dir / entry["file"]).values
            if proj is not None:
                frames = np.maximum(frames @ proj, 0.0)
            vectors.append(pool(frames))
            ids.append(entry["clip_id"])
        if not ids:
            raise UsageError(f"no spectrograms listed in {feat_dir / 'index.json'}")
        emb = EmbeddingSet(np.array(vectors), ids, [tag] * len(ids))
    write_embeddings(emb, out / "embeddings.aemb")
    _write_provenance(args, out)
    log.info("wrote %d x %d embeddings", len(emb), emb.dim)
    return 0


# --- probe -----------------------------------------------------------------------


def _load_task(args, manifest):
    if args.task and TaskKind(args.task) is not manifest.task:
        raise UsageError(f"--task {args.task} contradicts manifest task {manifest.task.value}")
    return manifest.task


def _train_config(args, l2=None) -> TrainConfig:
    return TrainConfig(
        l2_lambda=args.l2[0] if l2 is None else l2,
        max_epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        early_stop_patience=args.patience,
        selection_metric=args.metric,
    )


def cmd_probe(args) -> int:
    if args.metric:
        check_metric_name(args.metric)
    if args.action == "train":
        return _probe_train(args)
    return _probe_predict(args)


def _probe_train(args) -> int:
    manifest = read_manifest(_require_file(args.manifest, "manifest"))
    emb = read_embeddings(_require_file(args.embeddings, "embeddings"))
    task = _load_task(args, manifest)
    if any(it.split for it in manifest.items):
        train_items = [it for it in manifest.items if it.split == "train"]
        val_items = [it for it in manifest.items if it.split == "val"]
    else:
        train_items, val_items = list(manifest.items), []
    if not train_items:
        raise ManifestError("no training items in manifest")
    out = _out_dir(args)

    X = emb.lookup([it.ref for it in train_items])
    stats = fit_normalizer(X)
    train = LabeledData(normalize_array(stats, X)[0], manifest.targets(train_items))
    val = None
    if val_items:
        val = LabeledData(normalize_array(stats, emb.lookup([it.ref for it in val_items]))[0],
                          manifest.targets(val_items))
    model = train_probe(train, val, task, _train_config(args), manifest.class_names, stats)
    write_probe(model, out / "model.aprb")
    report = {
        "best_epoch": model.meta.get("best_epoch"),
        "selection_metric": model.meta.get("selection_metric"),
        "val_metric": model.meta.get("val_metric"),
        "n_train": len(train_items),
        "n_val": len(val_items),
        "history": model.meta["history"],
    }
    _write_json(out / "train_report.json", report)
    _write_provenance(args, out)
    return 0


def _probe_predict(args) -> int:
    model = read_probe(_require_file(args.model, "model"))
    emb = read_embeddings(_require_file(args.embeddings, "embeddings"))
    out = _out_dir(args)
    items = None
    if args.manifest:
        manifest = read_manifest(_require_file(args.manifest, "manifest"))
        items = [it for it in manifest.items if args.split is None or it.split == args.split]
        ids = [it.ref for it in items]
    else:
        ids = list(emb.clip_ids)
    X = emb.lookup(ids)
    if model.normalizer is not None:
        X = normalize_array(model.normalizer, X)[0]
    probs = model.predict_proba(X)
    lines = ["clip_id," + ",".join(model.class_names)]
    lines += [cid + "," + ",".join(f"{p:.8f}" for p in row) for cid, row in zip(ids, probs)]
    _write_text(out / "scores.csv", "\n".join(lines) + "\n")
    if items is not None:
        table = ScoreTable(probs, manifest.targets(items), model.class_names)
        metric = args.metric or model.meta.get("selection_metric") or default_metric(model.task)
        _write_text(out / "metrics.json", evaluate(table, [metric]).to_json() + "\n")
    _write_provenance(args, out)
    return 0


# --- eval ------------------------------------------------------------------------


def cmd_eval(args) -> int:
    if args.metric:
        check_metric_name(args.metric)
    report_metrics = None
    if args.report_metrics:
        report_metrics = [check_metric_name(m.strip()) for m in args.report_metrics.split(",")]
    manifest = read_manifest(_require_file(args.manifest, "manifest"))
    emb = read_embeddings(_require_file(args.embeddings, "embeddings"))
    _load_task(args, manifest)
    if args.metric and report_metrics is not None and args.metric not in report_metrics:
        report_metrics.append(args.metric)
    cfg = ExperimentConfig(
        protocol=args.protocol,
        k=args.folds,
        grid=[_train_config(args, l2) for l2 in args.l2],
        selection_metric=args.metric,
        report_metrics=report_metrics,
        seed=args.seed,
        carve_val=args.carve_val,
        jobs=args.jobs,
    )
    result = run_experiment(manifest, emb, cfg)
    out = _out_dir(args)
    _write_text(out / "result.json", result.to_json())
    _write_text(out / "folds.csv", result.to_csv())
    _write_provenance(args, out)
    for name, value in result.aggregate.items():
        log.info("%s = %.6f", name, value)
    return 0


# --- analyze ---------------------------------------------------------------------


def cmd_analyze(args) -> int:
    model = read_probe(_require_file(args.model, "model"))
    labels = extract_label_vectors(model)
    other = None
    if args.cosine:
        path = _require_file(args.cosine, "cosine")
        other = extract_label_vectors(read_probe(path))
        if other.dim != labels.dim:
            raise DimMismatch(f"--cosine model has D={other.dim}, expected D={labels.dim}")
    if args.perplexity is not None:
        check_perplexity(len(labels), args.perplexity)
    out = _out_dir(args)

    dend = agglomerate(labels, args.linkage, args.distance)
    _write_text(out / "dendrogram.svg", render_dendrogram(dend, args.cut_height))
    _write_text(out / "dendrogram.json", dend.to_json())

    perplexity = args.perplexity if args.perplexity is not None else default_perplexity(len(labels))
    try:
        check_perplexity(len(labels), perplexity)
        coords = tsne(labels, perplexity, args.iterations, args.seed)
        rows = ["label,x,y"] + [f"{n},{x:.6f},{y:.6f}" for n, (x, y) in zip(labels.names, coords)]
        _write_text(out / "tsne.csv", "\n".join(rows) + "\n")
    except InvalidPerplexity as exc:
        log.warning("skipping t-SNE: %s", exc)

    if other is not None:
        a, b = mv_normalize_pair(other, labels, args.mv_mode)
        sim = cosine_matrix(a, b)
        row_order = agglomerate(other, args.linkage, args.distance).leaf_order()
    elif len(labels) >= 2:
        a, _ = mv_normalize_pair(labels, labels, "per-set")
        sim = cosine_matrix(a)
        row_order = dend.leaf_order()
    else:
        sim = None
    if sim is not None:
        sim = sim.reorder(row_order, dend.leaf_order())
        _write_text(out / "similarity.csv", sim.to_csv())
        _write_text(out / "heatmap.svg", render_heatmap(sim))
    _write_provenance(args, out)
    return 0


# --- parser ----------------------------------------------------------------------


def _common(jobs_default: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.add_argument("--config", help="key = value file; flags given on the command line win")
    return p


def _training_flags(p):
    p.add_argument("--manifest")
    p.add_argument("--embeddings")
    p.add_argument("--task", choices=[t.value for t in TaskKind])
    p.add_argument("--metric", help="validation selection metric (accuracy, topK, map, mauc, lwlrap)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--l2", type=_float_list, default=[1e-4], help="comma-separated l2 grid")
    p.add_argument("--batch-size", type=int, default=0)
    p.add_argument("--patience", type=int, default=10)


def build_parser():
    common = _common(os.cpu_count() or 1)
    parser = argparse.ArgumentParser(prog="probekit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"probekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("features", parents=[common], help="logmel spectrograms from a WAV directory")
    p.add_argument("--input", required=True)
    p.add_argument("--frame-rate", type=int, default=40)
    p.add_argument("--n-mels", type=int, default=64)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--max-freq-bins", type=int, default=16)
    p.add_argument("--max-time-seconds", type=float, default=2.0)
    p.set_defaults(func=cmd_features)
    subs["features"] = p

    p = sub.add_parser("embed", parents=[common], help="build an embedding file")
    p.add_argument("--features", help="directory written by `features`")
    p.add_argument("--npz", help="import vectors/clip_ids arrays instead")
    p.add_argument("--encoder", choices=["randproj", "logmel"], default="randproj")
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--pool", choices=sorted(POOLERS), default="avg")
    p.add_argument("--source-tag")
    p.set_defaults(func=cmd_embed)
    subs["embed"] = p

    p = sub.add_parser("probe", parents=[common], help="train a linear probe or score with one")
    p.add_argument("action", choices=["train", "predict"])
    _training_flags(p)
    p.add_argument("--model")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_probe)
    subs["probe"] = p

    p = sub.add_parser("eval", parents=[common], help="cross-validation or split experiment")
    _training_flags(p)
    p.add_argument("--protocol", choices=["cv", "split"], default="cv")
    p.add_argument("--folds", type=int)
    p.add_argument("--carve-val", type=int)
    p.add_argument("--report-metrics")
    p.set_defaults(func=cmd_eval)
    subs["eval"] = p

    p = sub.add_parser("analyze", parents=[common], help="clustering, similarity and t-SNE of probe weights")
    p.add_argument("--model")
    p.add_argument("--cosine", help="second probe model whose rows form the similarity rows")
    p.add_argument("--linkage", choices=["average", "single", "complete"], default="average")
    p.add_argument("--distance", choices=["cosine", "euclidean"], default="cosine")
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--cut-height", type=float)
    p.add_argument("--mv-mode", choices=["per-set", "joint"], default="per-set")
    p.set_defaults(func=cmd_analyze)
    subs["analyze"] = p
    return parser, subs


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys are flag names."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, subparser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    config = read_config(_require_file(known.config, "config"))
    actions = {a.dest: a for a in subparser._actions}
    for key, value in config.items():
        if key not in actions or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(actions[key], argparse._StoreTrueAction):
            config[key] = value.lower() in ("1", "true", "yes", "on")
    subparser.set_defaults(**config)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PROBEKIT_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        command = next((a for a in argv if a in subs), None)
        if command:
            _apply_config(parser, subs[command], argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"probekit: error: {exc}", file=sys.stderr)
        return 2
    if args.jobs < 1:
        print("probekit: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"probekit: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"probekit: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
