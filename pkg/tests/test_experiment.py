"""Experiment runner: config handling, CV reports, baselines, search."""

import json

import numpy as np
import pytest

from gestprop import corpus, net, synth
from gestprop.experiment import (ExperimentConfig, run_baselines, run_cv,
                                 run_features, run_gradcheck, run_hpsearch,
                                 run_predict)
from gestprop.training import HyperRange, LossSpec, TrainConfig

FAST_TRAIN = TrainConfig(steps=12, batch=16, lr=2e-3, evals=2)
FAST_MODEL = {"enc_layers": 1, "enc_channels": 8, "enc_out": 8, "dec_hidden": 8}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp_corpus")
    spec = synth.SynthSpec(name="tiny", n_speakers=2, duration=15.0)
    synth.generate_synthetic_corpus(spec, seed=11, out_dir=root)
    return root


def fast_config(corpus_dir, out_dir, **kw) -> ExperimentConfig:
    defaults = dict(
        manifest=str(corpus_dir / "manifest.json"),
        embeddings=str(corpus_dir / "vectors.txt"),
        out_dir=str(out_dir),
        prop="presence",
        modality="audio",
        cv="within",
        folds=2,
        train=FAST_TRAIN,
        model=dict(FAST_MODEL),
        seed=5,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


@pytest.fixture(scope="module")
def featured(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("exp_run")
    config = fast_config(corpus_dir, out)
    built, failures = run_features(config)
    assert failures == [] and built == [0, 1]
    return out


def test_config_validation(corpus_dir, tmp_path):
    good = fast_config(corpus_dir, tmp_path)
    good.validate()
    with pytest.raises(ValueError, match="property"):
        fast_config(corpus_dir, tmp_path, prop="color").validate()
    with pytest.raises(ValueError, match="modality"):
        fast_config(corpus_dir, tmp_path, modality="video").validate()
    with pytest.raises(ValueError, match="cv mode"):
        fast_config(corpus_dir, tmp_path, cv="loo").validate()
    with pytest.raises(ValueError, match="folds"):
        fast_config(corpus_dir, tmp_path, folds=1).validate()
    with pytest.raises(ValueError, match="model keys"):
        fast_config(corpus_dir, tmp_path, model={"depth": 3}).validate()
    with pytest.raises(FileNotFoundError, match="manifest"):
        fast_config(corpus_dir, tmp_path,
                    manifest=str(tmp_path / "none.json")).validate()


def test_config_dict_roundtrip(corpus_dir, tmp_path):
    config = fast_config(corpus_dir, tmp_path,
                         train=TrainConfig(steps=7, loss=LossSpec(kind="focal")))
    d = config.to_dict()
    assert d["property"] == "presence"          # serialized under the JSON key
    assert d["train"]["loss"]["kind"] == "focal"
    assert json.dumps(d)                        # JSON-ready as is
    back = ExperimentConfig.from_dict(json.loads(json.dumps(d)))
    assert back == config


def test_run_features_registers_outputs(corpus_dir, featured):
    config = fast_config(corpus_dir, featured)
    index = json.loads((featured / "index.json").read_text())
    assert len(index["features"]) == 6          # 3 files x 2 recordings
    built, failures = run_features(config)     # cached now
    assert built == [] and failures == []


def test_run_cv_writes_report_and_checkpoints(corpus_dir, featured):
    config = fast_config(corpus_dir, featured)
    report = run_cv(config, write_checkpoints=True)

    assert report["n_folds"] == 2
    assert len(report["folds"]) == 2
    assert list(report["aggregate"]["labels"]) == ["gesture"]
    for entry in report["folds"]:
        assert len(entry["curve"]) == 2         # evals=2 points
        assert not entry["failed"]
        assert entry["n_train"] > 0 and entry["n_val"] > 0

    on_disk = json.loads((featured / "report.json").read_text())
    assert on_disk["aggregate"] == report["aggregate"]
    assert (featured / "scores.csv").read_text().startswith("label,metric,")

    spec, params, meta = net.load_checkpoint(
        featured / report["folds"][0]["checkpoint"])
    assert spec.n_labels == 1 and spec.head == "sigmoid"
    assert spec.text is None                    # audio-only condition
    assert set(meta["norm"]) == {"mean", "std"}
    assert meta["config"]["property"] == "presence"


def test_run_cv_is_deterministic(corpus_dir, featured, tmp_path):
    config = fast_config(corpus_dir, tmp_path,
                         features_dir=str(featured / "features"))
    run_cv(config, write_checkpoints=False)
    first = (tmp_path / "report.json").read_bytes()
    run_cv(config, write_checkpoints=False)
    assert (tmp_path / "report.json").read_bytes() == first


def test_property_runs_restrict_to_gesture_frames(corpus_dir, featured, tmp_path):
    config = fast_config(corpus_dir, tmp_path,
                         features_dir=str(featured / "features"),
                         prop="semantics")
    report = run_cv(config, write_checkpoints=False)
    assert sorted(report["aggregate"]["labels"]) == [
        "amount", "direction", "shape", "size"]

    from gestprop.features import load_dataset
    recs = corpus.load_manifest(config.manifest)
    ds = load_dataset(recs, config.features_path(), config.embeddings)
    plan = corpus.make_folds_within(ds.tables, k=2)
    for entry, val in zip(report["folds"], plan.val):
        # evaluated frames = gesture-present frames of the fold
        n_frames = entry["report"]["n_frames"]
        assert n_frames == int(ds.has_gesture[val].sum())
        assert n_frames < len(val)
        # training pool likewise shrinks to gesture frames
        tr = plan.train[entry["fold"]]
        assert entry["n_train"] == int(ds.has_gesture[tr].sum())


def test_run_baselines(corpus_dir, featured):
    config = fast_config(corpus_dir, featured)
    result = run_baselines(config)
    assert sorted(result["baselines"]) == [
        "always_one", "always_zero", "informed_random", "uniform_random"]
    one = result["baselines"]["always_one"]["labels"]["gesture"]
    assert one["recall"]["mean"] == pytest.approx(1.0)
    assert (featured / "baselines.json").exists()
    # report.json written by the earlier CV test -> predictability flags
    assert set(result["predictable"]) == {"gesture"}
    assert isinstance(result["predictable"]["gesture"], bool)


def test_run_baselines_exclusive_drops_constants(corpus_dir, featured, tmp_path):
    config = fast_config(corpus_dir, tmp_path,
                         features_dir=str(featured / "features"),
                         prop="phase")
    result = run_baselines(config)
    assert sorted(result["baselines"]) == ["informed_random", "uniform_random"]
    assert "predictable" not in result          # no model report in this dir


def test_run_hpsearch(corpus_dir, featured, tmp_path):
    config = fast_config(corpus_dir, tmp_path,
                         features_dir=str(featured / "features"))
    space = {
        "enc_channels": HyperRange("choice", choices=(4, 8)),
        "lr": HyperRange("log_uniform", lo=1e-3, hi=5e-3),
    }
    result = run_hpsearch(config, n_runs=2, space=space)
    assert result["best_run"] in (0, 1)
    assert len(result["runs"]) == 2
    scores = [r["score"] for r in result["runs"]]
    assert result["runs"][result["best_run"]]["score"] == max(scores)
    assert set(result["best_sample"]) == {"enc_channels", "lr"}

    lines = (tmp_path / "runrecord.csv").read_text().strip().splitlines()
    assert lines[0] == "run,fold,step,score,loss"
    assert len(lines) == 1 + 2 * 2 * 2          # runs x folds x eval points
    assert (tmp_path / "runs" / "00" / "report.json").exists()
    assert (tmp_path / "runs" / "01" / "report.json").exists()


def test_run_predict(corpus_dir, featured):
    config = fast_config(corpus_dir, featured)
    written = run_predict(config, featured / "checkpoints" / "fold_00.ckpt")
    assert written == ["predictions/rec_00000.csv", "predictions/rec_00001.csv"]
    lines = (featured / written[0]).read_text().strip().splitlines()
    assert lines[0] == "t,label,prob,decision,truth"
    recs = corpus.load_manifest(config.manifest)
    from gestprop.features import load_dataset
    ds = load_dataset(recs, config.features_path(), config.embeddings)
    n_eligible = int(ds.eligible[ds.rec_ids == 0].sum())
    assert len(lines) == 1 + n_eligible         # one label for presence
    probs = np.array([float(l.split(",")[2]) for l in lines[1:]])
    assert np.all((probs >= 0) & (probs <= 1))


def test_run_gradcheck_writes_report(tmp_path):
    result = run_gradcheck(seed=0, out_dir=tmp_path)
    assert result["passed"] is True
    assert result["max_error"] < 1e-4
    saved = json.loads((tmp_path / "gradcheck.json").read_text())
    assert saved["max_error"] == result["max_error"]
