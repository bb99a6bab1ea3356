import math

import pytest

from probekit.errors import InvalidConfig, ManifestError
from probekit.harness import (
    DatasetManifest,
    ExperimentConfig,
    ManifestItem,
    read_manifest,
    run_cross_validation,
    run_experiment,
    run_split_experiment,
    sweep,
    write_manifest,
)
from probekit.probe import TrainConfig

from datasets import blob_dataset, with_splits

FAST = TrainConfig(max_epochs=30)


def test_five_fold_reports_and_aggregate():
    man, emb = blob_dataset()
    res = run_cross_validation(man, emb, ExperimentConfig(grid=[FAST]))
    assert len(res.fold_reports) == 5 and res.fold_names == ["1", "2", "3", "4", "5"]
    for name, agg in res.aggregate.items():
        mean = sum(r.values[name] for r in res.fold_reports) / 5
        assert abs(mean - agg) <= 1e-12
    assert res.provenance["fold_counts"] == {str(f): 16 for f in range(1, 6)}


def test_cv_deterministic_and_parallel_safe():
    man, emb = blob_dataset(seed=1)
    a = run_cross_validation(man, emb, ExperimentConfig(grid=[FAST], carve_val=8, jobs=1)).to_json()
    b = run_cross_validation(man, emb, ExperimentConfig(grid=[FAST], carve_val=8, jobs=4)).to_json()
    assert a == b


def test_multilabel_cv_metrics():
    man, emb = blob_dataset(task="multilabel", seed=2)
    res = run_cross_validation(man, emb, ExperimentConfig(grid=[FAST]))
    assert set(res.aggregate) == {"lwlrap", "map", "mauc"}
    assert res.aggregate["mauc"] > 0.8


def test_missing_fold_ids():
    man, emb = blob_dataset()
    man.items[3].fold = None
    with pytest.raises(ManifestError):
        run_cross_validation(man, emb, ExperimentConfig())


def test_fold_numbering_must_be_contiguous():
    man, emb = blob_dataset()
    for it in man.items:
        if it.fold == 3:
            it.fold = 7
    with pytest.raises(ManifestError):
        run_cross_validation(man, emb, ExperimentConfig())


def test_split_counts_in_provenance():
    man, emb = blob_dataset(n_per_class=4, folds=0)
    with_splits(man, {"train": 12, "val": 1, "test": 3})
    res = run_split_experiment(man, emb, ExperimentConfig(protocol="split", grid=[FAST]))
    assert res.provenance["split_counts"] == {"train": 12, "val": 1, "test": 3}
    assert res.fold_reports[0].n_items == 3


def test_grid_point_dominating_validation_is_chosen():
    man, emb = blob_dataset(n_per_class=30, folds=0)
    with_splits(man, {"train": 60, "val": 30, "test": 30})
    grid = [TrainConfig(max_epochs=0), TrainConfig(max_epochs=40), TrainConfig(max_epochs=0, l2_lambda=1.0)]
    res = run_experiment(man, emb, ExperimentConfig(protocol="split", grid=grid))
    assert res.chosen[0]["max_epochs"] == 40
    assert res.aggregate["accuracy"] > 0.9


def test_grid_without_validation_is_rejected():
    man, emb = blob_dataset()
    with pytest.raises(InvalidConfig):
        run_cross_validation(man, emb, ExperimentConfig(grid=[FAST, TrainConfig(max_epochs=5)]))


def test_sweep_orders_best_first_ties_by_grid_order():
    vals = {"a": 0.5, "b": 0.9, "c": 0.9, "d": math.nan, "e": 0.1}
    ranked = sweep(list(vals), vals.get, jobs=3)
    assert [cfg for _, cfg, _ in ranked] == ["b", "c", "a", "e", "d"]
    assert [i for i, _, _ in ranked] == [1, 2, 0, 4, 3]


def test_leakage_audit():
    man, emb = blob_dataset(seed=3)
    audit = []
    run_cross_validation(man, emb, ExperimentConfig(grid=[FAST, TrainConfig(max_epochs=10)], carve_val=10), audit)
    assert len(audit) == 5
    fold_of = {it.clip_id: it.fold for it in man.items}
    for f, rec in enumerate(audit, start=1):
        assert rec["phase_owner"] == f"fold{f}"
        held = {c for c, ff in fold_of.items() if ff == f}
        assert set(rec["test"]) == held
        assert not held & set(rec["normalizer_fit"])
        assert not held & set(rec["train"]) and not held & set(rec["val"])
        assert not set(rec["train"]) & set(rec["val"])
        assert set(rec["normalizer_fit"]) == set(rec["train"])
        assert len(rec["val"]) == 10


def test_carve_val_too_large():
    man, emb = blob_dataset()
    with pytest.raises(ManifestError):
        run_cross_validation(man, emb, ExperimentConfig(carve_val=10_000))


def test_manifest_roundtrip_and_validation(tmp_path):
    man, _ = blob_dataset(n_per_class=2)
    man.carve_val = 3
    write_manifest(man, tmp_path / "m.jsonl")
    back = read_manifest(tmp_path / "m.jsonl")
    assert back.class_names == man.class_names and back.carve_val == 3
    assert [(i.clip_id, i.labels, i.fold) for i in back.items] == [(i.clip_id, i.labels, i.fold) for i in man.items]
    with pytest.raises(ManifestError):
        DatasetManifest("multiclass", ["a"], [ManifestItem("x", ["b"])])
    with pytest.raises(ManifestError):
        DatasetManifest("multiclass", ["a", "b"], [ManifestItem("x", ["a", "b"])])


def test_config_hash_stable():
    a = ExperimentConfig(grid=[TrainConfig(l2_lambda=1e-3)], seed=4)
    b = ExperimentConfig(grid=[TrainConfig(l2_lambda=1e-3)], seed=4, jobs=8)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ExperimentConfig(seed=5).config_hash()


def test_unknown_embedding_reference():
    man, emb = blob_dataset()
    man.items[0].embedding_ref = "nope"
    with pytest.raises(KeyError):
        run_cross_validation(man, emb, ExperimentConfig(grid=[FAST]))


def test_csv_has_mean_row():
    man, emb = blob_dataset()
    csv_text = run_cross_validation(man, emb, ExperimentConfig(grid=[FAST])).to_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0].startswith("fold,n_items,accuracy") and lines[-1].startswith("mean,")
    assert len(lines) == 7
