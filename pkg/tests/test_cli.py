import json

import numpy as np
import pytest

from probekit.cli import main
from probekit.harness import read_manifest, write_manifest
from probekit.probe import ProbeModel, read_probe, write_probe

from datasets import write_tone_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    wav_dir, manifest = write_tone_corpus(root)
    assert main(["features", "--input", str(wav_dir), "--out", str(root / "feat")]) == 0
    assert main(["embed", "--features", str(root / "feat"), "--dim", "64", "--out", str(root / "emb")]) == 0
    return root, manifest, root / "emb" / "embeddings.aemb"


def run(*argv):
    return main([str(a) for a in argv])


class TestFeatures:
    def test_empty_directory_is_usage_error(self, tmp_path):
        (tmp_path / "in").mkdir()
        assert run("features", "--input", tmp_path / "in", "--out", tmp_path / "o") == 2

    def test_three_files_three_outputs(self, tmp_path):
        wav_dir, _ = write_tone_corpus(tmp_path, n_classes=3, per_class=1)
        assert run("features", "--input", wav_dir, "--out", tmp_path / "o") == 0
        assert len(list((tmp_path / "o").glob("*.lmel"))) == 3
        assert len(json.loads((tmp_path / "o" / "index.json").read_text())["clips"]) == 3

    def test_augment_reproducible(self, tmp_path):
        wav_dir, _ = write_tone_corpus(tmp_path, n_classes=2, per_class=2)
        for out in ("a", "b"):
            assert run("features", "--input", wav_dir, "--augment", "--seed", 4, "--out", tmp_path / out) == 0
        for f in (tmp_path / "a").glob("*.lmel"):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_all_files_broken_is_failure(self, tmp_path):
        (tmp_path / "in").mkdir()
        (tmp_path / "in" / "bad.wav").write_bytes(b"not audio")
        assert run("features", "--input", tmp_path / "in", "--out", tmp_path / "o") == 1

    def test_provenance_written(self, tmp_path):
        wav_dir, _ = write_tone_corpus(tmp_path, n_classes=2, per_class=1)
        run("features", "--input", wav_dir, "--out", tmp_path / "o")
        prov = json.loads((tmp_path / "o" / "provenance.json").read_text())
        assert prov["command"] == "features" and "out" not in prov["args"]


class TestProbe:
    def test_missing_manifest_is_usage_error(self, corpus, tmp_path):
        _, _, emb = corpus
        assert run("probe", "train", "--manifest", tmp_path / "none.jsonl", "--embeddings", emb,
                   "--out", tmp_path) == 2

    def test_train_then_predict_reproduces_validation_metric(self, corpus, tmp_path):
        root, manifest_path, emb = corpus
        man = read_manifest(manifest_path)
        for i, it in enumerate(man.items):
            it.split = "val" if i % 3 == 0 else "train"
        write_manifest(man, tmp_path / "split.jsonl")
        assert run("probe", "train", "--manifest", tmp_path / "split.jsonl", "--embeddings", emb,
                   "--epochs", 50, "--out", tmp_path / "m") == 0
        report = json.loads((tmp_path / "m" / "train_report.json").read_text())
        assert run("probe", "predict", "--model", tmp_path / "m" / "model.aprb", "--embeddings", emb,
                   "--manifest", tmp_path / "split.jsonl", "--split", "val", "--out", tmp_path / "p") == 0
        metrics = json.loads((tmp_path / "p" / "metrics.json").read_text())
        assert metrics["values"]["accuracy"] == round(report["val_metric"], 6)
        scores = (tmp_path / "p" / "scores.csv").read_text().splitlines()
        assert scores[0] == "clip_id,tone0,tone1,tone2" and len(scores) == 1 + 10

    def test_zero_epochs_gives_zero_model(self, corpus, tmp_path):
        _, manifest, emb = corpus
        assert run("probe", "train", "--manifest", manifest, "--embeddings", emb, "--epochs", 0,
                   "--out", tmp_path) == 0
        m = read_probe(tmp_path / "model.aprb")
        assert not m.W.any() and not m.b.any()

    def test_task_contradiction(self, corpus, tmp_path):
        _, manifest, emb = corpus
        assert run("probe", "train", "--manifest", manifest, "--embeddings", emb, "--task", "multilabel",
                   "--out", tmp_path) == 2


class TestEval:
    def test_two_fold_cv(self, corpus, tmp_path):
        _, manifest, emb = corpus
        assert run("eval", "--manifest", manifest, "--embeddings", emb, "--epochs", 40, "--out", tmp_path) == 0
        res = json.loads((tmp_path / "result.json").read_text())
        assert len(res["folds"]) == 2
        for name, agg in res["aggregate"].items():
            mean = np.mean([f["values"][name] for f in res["folds"]])
            assert abs(mean - agg) <= 1e-6
        assert (tmp_path / "folds.csv").read_text().splitlines()[-1].startswith("mean,")

    def test_unknown_metric(self, corpus, tmp_path):
        _, manifest, emb = corpus
        assert run("eval", "--manifest", manifest, "--embeddings", emb, "--report-metrics", "f1",
                   "--out", tmp_path) == 2

    def test_grid_with_carved_validation(self, corpus, tmp_path):
        _, manifest, emb = corpus
        assert run("eval", "--manifest", manifest, "--embeddings", emb, "--l2", "0.0001,0.1",
                   "--carve-val", 4, "--epochs", 20, "--out", tmp_path) == 0
        res = json.loads((tmp_path / "result.json").read_text())
        assert all(f["chosen"]["l2_lambda"] in (0.0001, 0.1) for f in res["folds"])

    def test_config_file_overlay(self, corpus, tmp_path):
        _, manifest, emb = corpus
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# eval settings\nmanifest = {manifest}\nembeddings = {emb}\nepochs = 5\n"
                       "report-metrics = accuracy\n")
        assert run("eval", "--config", cfg, "--epochs", 7, "--out", tmp_path / "o") == 0
        prov = json.loads((tmp_path / "o" / "provenance.json").read_text())
        assert prov["args"]["epochs"] == 7
        res = json.loads((tmp_path / "o" / "result.json").read_text())
        assert set(res["aggregate"]) == {"accuracy"}

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        assert run("eval", "--config", cfg, "--out", tmp_path) == 2


@pytest.fixture(scope="module")
def model(corpus, tmp_path_factory):
    _, manifest, emb = corpus
    out = tmp_path_factory.mktemp("model")
    assert run("probe", "train", "--manifest", manifest, "--embeddings", emb, "--epochs", 30, "--out", out) == 0
    return out / "model.aprb"


class TestAnalyze:
    def test_three_classes_three_leaves(self, model, tmp_path):
        assert run("analyze", "--model", model, "--out", tmp_path) == 0
        svg = (tmp_path / "dendrogram.svg").read_text()
        assert svg.count('class="leaf"') == 3
        assert (tmp_path / "heatmap.svg").read_text().count('class="cell"') == 9
        assert not (tmp_path / "tsne.csv").exists()  # three rows admit no valid perplexity

    def test_cosine_dim_mismatch(self, model, corpus, tmp_path):
        root, manifest, _ = corpus
        assert run("embed", "--features", root / "feat", "--dim", "32", "--out", tmp_path / "e") == 0
        assert run("probe", "train", "--manifest", manifest, "--embeddings", tmp_path / "e" / "embeddings.aemb",
                   "--epochs", 3, "--out", tmp_path / "m2") == 0
        assert run("analyze", "--model", model, "--cosine", tmp_path / "m2" / "model.aprb",
                   "--out", tmp_path / "a") == 2

    def test_tsne_reproducible(self, tmp_path):
        rng = np.random.default_rng(0)
        write_probe(ProbeModel(rng.normal(size=(12, 8)), np.zeros(12), "multilabel",
                               [f"l{i}" for i in range(12)]), tmp_path / "m.aprb")
        for out in ("a", "b"):
            assert run("analyze", "--model", tmp_path / "m.aprb", "--iterations", 200, "--seed", 3,
                       "--out", tmp_path / out) == 0
        assert (tmp_path / "a" / "tsne.csv").read_bytes() == (tmp_path / "b" / "tsne.csv").read_bytes()
        assert len((tmp_path / "a" / "tsne.csv").read_text().splitlines()) == 13

    def test_invalid_perplexity_is_usage_error(self, model, tmp_path):
        assert run("analyze", "--model", model, "--perplexity", 50, "--out", tmp_path) == 2


def test_no_command_prints_usage():
    assert main([]) == 2


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "probekit" in capsys.readouterr().out
