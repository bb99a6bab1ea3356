"""Synthetic manifests and embedding sets shared by the harness, CLI and acceptance tests."""

import numpy as np

from probekit.embeddings import EmbeddingSet
from probekit.harness import DatasetManifest, ManifestItem


def blob_dataset(n_per_class=20, n_classes=4, dim=8, spread=0.3, seed=0, folds=5, task="multiclass"):
    """Gaussian blobs around random class centres; items cycle through folds 1..folds."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_classes, dim))
    names = [f"class{c}" for c in range(n_classes)]
    rows, items = [], []
    for i in range(n_per_class * n_classes):
        c = i % n_classes
        labels = [names[c]]
        vec = centres[c] + spread * rng.normal(size=dim)
        if task == "multilabel" and rng.random() < 0.3:
            extra = (c + 1) % n_classes
            labels.append(names[extra])
            vec = vec + centres[extra]
        rows.append(vec)
        items.append(ManifestItem(f"clip{i:04d}", labels, fold=(i // n_classes) % folds + 1 if folds else None))
    emb = EmbeddingSet(np.array(rows), [it.clip_id for it in items], ["synthetic"] * len(items))
    return DatasetManifest(task, names, items), emb


def with_splits(manifest, counts):
    """Assign train/val/test splits in order with the given counts."""
    order = [s for s, n in counts.items() for _ in range(n)]
    for it, s in zip(manifest.items, order):
        it.split = s
        it.fold = None
    return manifest


def planted_partition(n_clusters=4, per_cluster=12, dim=64, noise=0.01, seed=0):
    """Rows around unit-norm random centres; per-coordinate noise sd is ``noise`` times the
    smallest centre separation.  Returns (matrix, truth labels)."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(n_clusters, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    truth = np.repeat(np.arange(n_clusters), per_cluster)
    sep = min(np.linalg.norm(centres[i] - centres[j]) for i in range(n_clusters) for j in range(i + 1, n_clusters))
    x = centres[truth] + noise * sep * rng.normal(size=(len(truth), dim))
    return x, truth


def nearest_centroid_purity(points, truth):
    """Fraction of points closer to their own class centroid than to any other."""
    cents = np.array([points[truth == c].mean(axis=0) for c in np.unique(truth)])
    d = ((points[:, None, :] - cents[None, :, :]) ** 2).sum(-1)
    return float(np.mean(np.unique(truth)[d.argmin(1)] == truth))


def write_tone_corpus(root, n_classes=3, per_class=10, folds=2, seconds=0.5, rate=16000, seed=0):
    """WAV files of noisy tones, one pitch per class, plus a fold-annotated manifest."""
    from scipy.io import wavfile

    from probekit.harness import write_manifest

    rng = np.random.default_rng(seed)
    wav_dir = root / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    names = [f"tone{c}" for c in range(n_classes)]
    t = np.arange(int(seconds * rate)) / rate
    items = []
    for i in range(n_classes * per_class):
        c = i % n_classes
        freq = 300.0 * 2 ** c * (1 + 0.02 * rng.standard_normal())
        x = 0.4 * np.sin(2 * np.pi * freq * t) + 0.05 * rng.standard_normal(len(t))
        clip_id = f"clip{i:03d}"
        wavfile.write(wav_dir / f"{clip_id}.wav", rate, (x * 32767).astype(np.int16))
        items.append(ManifestItem(clip_id, [names[c]], fold=(i // n_classes) % folds + 1))
    manifest_path = root / "manifest.jsonl"
    write_manifest(DatasetManifest("multiclass", names, items), manifest_path)
    return wav_dir, manifest_path
