"""Experiment orchestration: cross-validated training, baselines, search.

One ExperimentConfig drives every run. All artifacts land under its output
directory: cached features in features/, per-fold checkpoints in
checkpoints/, report.json + scores.csv for model runs, baselines.json for
the chance systems, hpsearch.json + runrecord.csv for the search, and an
index.json naming what each command wrote. A single master seed fans out to
per-fold training seeds and per-baseline sampling streams, so rerunning a
command with the same config and seed reproduces every file byte for byte.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gradcheck as gradcheck_mod
from .corpus import SCHEMAS, load_manifest, make_folds_between, make_folds_within
from .evaluation import (BASELINE_KINDS, aggregate_folds, baseline_predict,
                         binarize, compute_priors, evaluate_property,
                         flag_predictable, write_json, write_predictions_csv,
                         write_scores_csv)
from .features import (MODALITIES, WindowProvider, build_features,
                       feature_paths, load_dataset)
from .net import (DecoderSpec, EncoderSpec, ModelSpec, load_checkpoint,
                  predict_probs, save_checkpoint)
from .training import TrainConfig, default_space, random_search, train

log = logging.getLogger(__name__)

CV_MODES = ("within", "within_id", "between")
PROPERTIES = ("phase", "category", "semantics", "presence")

MODEL_KEYS = ("enc_layers", "enc_channels", "kernel", "enc_dropout",
              "enc_out", "dec_hidden", "dec_layers", "dec_dropout")

FEATURES_SUBDIR = "features"
CHECKPOINT_SUBDIR = "checkpoints"


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: str
    embeddings: str
    out_dir: str
    prop: str = "presence"
    modality: str = "both"
    cv: str = "within"
    folds: int = 20
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)
    seed: int = 0
    threshold: float = 0.5
    eval_on_all_frames: bool = False
    features_dir: str | None = None     # defaults to <out_dir>/features

    def features_path(self) -> Path:
        if self.features_dir is not None:
            return Path(self.features_dir)
        return Path(self.out_dir) / FEATURES_SUBDIR

    def validate(self, require_files: bool = True) -> None:
        if self.prop not in PROPERTIES:
            raise ValueError(f"unknown property {self.prop!r}; choose from {PROPERTIES}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}; choose from {MODALITIES}")
        if self.cv not in CV_MODES:
            raise ValueError(f"unknown cv mode {self.cv!r}; choose from {CV_MODES}")
        if self.cv != "between" and self.folds < 2:
            raise ValueError(f"need at least 2 folds, got {self.folds}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        unknown = set(self.model) - set(MODEL_KEYS)
        if unknown:
            raise ValueError(f"unknown model keys {sorted(unknown)}; "
                             f"choose from {MODEL_KEYS}")
        if require_files:
            for name in ("manifest", "embeddings"):
                path = Path(getattr(self, name))
                if not path.exists():
                    raise FileNotFoundError(f"{name} file not found: {path}")

    def to_dict(self) -> dict:
        return {
            "manifest": str(self.manifest),
            "embeddings": str(self.embeddings),
            "out_dir": str(self.out_dir),
            "property": self.prop,
            "modality": self.modality,
            "cv": self.cv,
            "folds": self.folds,
            "train": self.train.to_dict(),
            "model": dict(self.model),
            "seed": self.seed,
            "threshold": self.threshold,
            "eval_on_all_frames": self.eval_on_all_frames,
            "features_dir": None if self.features_dir is None
                            else str(self.features_dir),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "property" in d:
            d["prop"] = d.pop("property")
        if isinstance(d.get("train"), dict):
            d["train"] = TrainConfig.from_dict(d["train"])
        return cls(**d)


# ------------------------------------------------------------------ plumbing

def _register(out_dir: str | Path, command: str, paths: list[str]) -> None:
    """Track what each command wrote in the run directory's index."""
    index_path = Path(out_dir) / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    index[command] = sorted(paths)
    write_json(str(index_path), index)


def _fold_seed(master: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(master), 7, int(fold)])
               .generate_state(1, dtype=np.uint32)[0])


def _load_corpus(config: ExperimentConfig):
    recordings = load_manifest(config.manifest)
    dataset = load_dataset(recordings, config.features_path(), config.embeddings)
    return recordings, dataset


def _make_plan(dataset, config: ExperimentConfig):
    if config.cv == "between":
        return make_folds_between(dataset.tables)
    return make_folds_within(dataset.tables, k=config.folds)


def _training_pool(dataset, prop: str, idx: np.ndarray) -> np.ndarray:
    """Property models see only gesture frames; phase needs a phase bit too."""
    if prop == "presence":
        return idx
    keep = dataset.has_gesture[idx].astype(bool)
    if prop == "phase":
        keep &= dataset.phase[idx].any(axis=1)
    return idx[keep]


def _model_spec(config: ExperimentConfig, provider: WindowProvider,
                text_dim: int) -> ModelSpec:
    m = config.model
    def encoder():
        return EncoderSpec(layers=m.get("enc_layers", 3),
                           channels=m.get("enc_channels", 24),
                           kernel=m.get("kernel", 3),
                           dropout=m.get("enc_dropout", 0.0),
                           out_dim=m.get("enc_out", 24))
    uses_audio = config.modality in ("audio", "both")
    uses_text = config.modality in ("text", "text_no_timing", "both")
    return ModelSpec(
        head="softmax" if provider.exclusive else "sigmoid",
        n_labels=provider.n_labels,
        audio=encoder() if uses_audio else None,
        text=encoder() if uses_text else None,
        decoder=DecoderSpec(hidden=m.get("dec_hidden", 48),
                            layers=m.get("dec_layers", 1),
                            dropout=m.get("dec_dropout", 0.0)),
        text_dim=text_dim,
        speaker_dim=provider.speaker_dim,
    )


def _report_dict(report) -> dict:
    labels = {}
    for name, s in report.labels.items():
        labels[name] = {
            "precision": s.precision, "recall": s.recall,
            "f1": s.f1, "f1_neg": s.f1_neg, "macro_f1": s.macro_f1,
            "support": s.support,
            "counts": {"tp": s.counts.tp, "fp": s.counts.fp,
                       "fn": s.counts.fn, "tn": s.counts.tn},
        }
    return {"labels": labels, "headline": report.headline(),
            "n_frames": report.n_frames, "exclusive": report.exclusive}


def _evaluate_fold(dataset, provider, spec, params, val, config):
    batch = provider.batch(val)
    probs = predict_probs(spec, params, audio=batch["audio"],
                          text=batch["text"], speaker=batch["speaker"])
    decisions = binarize(probs, provider.exclusive, config.threshold)
    all_frames = config.prop == "presence" or config.eval_on_all_frames
    return evaluate_property(
        decisions, provider.labels_at(val).astype(np.int64),
        SCHEMAS[config.prop].labels, provider.exclusive,
        has_gesture=dataset.has_gesture[val].astype(bool),
        eval_on_all_frames=all_frames)


def _eval_pool(dataset, config, idx: np.ndarray) -> np.ndarray:
    """Frames the during-training score is computed on (mirrors the report)."""
    if config.prop == "presence" or config.eval_on_all_frames:
        return idx
    return idx[dataset.has_gesture[idx].astype(bool)]


# ------------------------------------------------------------------ commands

def run_features(config: ExperimentConfig, force: bool = False):
    """Build cached features for every recording in the manifest."""
    config.validate()
    recordings = load_manifest(config.manifest)
    out = Path(config.out_dir)
    fdir = config.features_path()
    built, failures = build_features(recordings, fdir, force=force)
    failed_ids = {rid for rid, _ in failures}
    files = [str(p.relative_to(out)) if p.is_relative_to(out) else str(p)
             for rec in recordings if rec.rec_id not in failed_ids
             for p in feature_paths(fdir, rec.rec_id).values()]
    _register(out, "features", files)
    return built, failures


def run_cv(config: ExperimentConfig, write_checkpoints: bool = True) -> dict:
    """Cross-validated training of one property/modality condition.

    Returns the report dict, which is also written to report.json along
    with scores.csv (and one checkpoint per fold when requested).
    """
    config.validate()
    _, dataset = _load_corpus(config)
    plan = _make_plan(dataset, config)
    provider = WindowProvider(dataset, config.prop, config.modality,
                              speaker_onehot=(config.cv == "within_id"))
    spec = _model_spec(config, provider, dataset.emb_matrix.shape[1] + 1)

    out = Path(config.out_dir)
    ckpt_dir = out / CHECKPOINT_SUBDIR
    if write_checkpoints:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    folds, reports, files = [], [], []
    for fold in range(plan.n_folds):
        train_idx = plan.train[fold]
        val_idx = plan.val[fold]
        pool = _training_pool(dataset, config.prop, train_idx)
        val_eval = _eval_pool(dataset, config, val_idx)
        provider.fit_norm(train_idx)
        seed = _fold_seed(config.seed, fold)
        params, record = train(spec, provider, pool, val_eval, config.train,
                               seed=seed)
        report = _evaluate_fold(dataset, provider, spec, params, val_idx, config)
        reports.append(report)

        entry = {
            "fold": fold,
            "seed": seed,
            "n_train": int(len(pool)),
            "n_val": int(len(val_idx)),
            "curve": [[int(s), float(v)] for s, v in record.curve],
            "loss_curve": [float(v) for v in record.loss_curve],
            "final_score": record.final_score,
            "failed": record.failed,
            "report": _report_dict(report),
        }
        if write_checkpoints:
            name = f"{CHECKPOINT_SUBDIR}/fold_{fold:02d}.ckpt"
            save_checkpoint(out / name, spec, params, meta={
                "fold": fold, "seed": seed, "property": config.prop,
                "modality": config.modality, "norm": provider.norm_state(),
                "config": config.to_dict(),
            })
            entry["checkpoint"] = name
            files.append(name)
        folds.append(entry)
        log.info("fold %d/%d: headline %.3f", fold + 1, plan.n_folds,
                 report.headline())

    result = {
        "kind": "cv",
        "config": config.to_dict(),
        "seed": config.seed,
        "model_spec": spec.to_dict(),
        "n_folds": plan.n_folds,
        "folds": folds,
        "aggregate": aggregate_folds(reports),
    }
    write_json(str(out / "report.json"), result)
    write_scores_csv(str(out / "scores.csv"), result["aggregate"])
    _register(out, "eval", files + ["report.json", "scores.csv"])
    return result


def run_baselines(config: ExperimentConfig) -> dict:
    """Evaluate the four chance systems on the same folds as the model."""
    config.validate()
    _, dataset = _load_corpus(config)
    plan = _make_plan(dataset, config)
    exclusive = SCHEMAS[config.prop].exclusive
    labels_all = dataset.labels_for(config.prop)
    names = SCHEMAS[config.prop].labels
    kinds = [k for k in BASELINE_KINDS
             if not (exclusive and k in ("always_zero", "always_one"))]

    per_kind: dict[str, list] = {k: [] for k in kinds}
    for fold in range(plan.n_folds):
        pool = _training_pool(dataset, config.prop, plan.train[fold])
        val_eval = _eval_pool(dataset, config, plan.val[fold])
        truth = labels_all[val_eval].astype(np.int64)
        priors = compute_priors(labels_all[pool]) if len(pool) else None
        for k_i, kind in enumerate(kinds):
            rng = np.random.default_rng(
                np.random.SeedSequence([int(config.seed), 11, fold, k_i]))
            pred = baseline_predict(kind, len(val_eval), len(names), exclusive,
                                    priors=priors, rng=rng)
            per_kind[kind].append(evaluate_property(
                pred, truth, names, exclusive, eval_on_all_frames=True))

    baselines = {
        kind: aggregate_folds(reports) for kind, reports in per_kind.items()
    }
    result = {
        "kind": "baselines",
        "config": config.to_dict(),
        "seed": config.seed,
        "baselines": baselines,
    }

    report_path = Path(config.out_dir) / "report.json"
    if report_path.exists():
        model_agg = json.loads(report_path.read_text()).get("aggregate", {})
        if model_agg.get("labels"):
            flags = {}
            for label, entry in model_agg["labels"].items():
                base_means = {k: baselines[k]["labels"][label]["macro_f1"]["mean"]
                              for k in kinds}
                flags[label] = flag_predictable(entry["macro_f1"]["mean"],
                                                base_means)
            result["predictable"] = flags

    write_json(str(Path(config.out_dir) / "baselines.json"), result)
    _register(config.out_dir, "baselines", ["baselines.json"])
    return result


def run_hpsearch(config: ExperimentConfig, n_runs: int,
                 space=None) -> dict:
    """Random search over encoder/decoder/optimizer hyperparameters.

    Every run retrains the full CV grid; scores.csv-style curve rows for
    all (run, fold, eval step) triples land in runrecord.csv.
    """
    config.validate()
    space = space if space is not None else default_space()
    out = Path(config.out_dir)

    def evaluate_run(i: int, sample: dict):
        model = {k: v for k, v in sample.items() if k in MODEL_KEYS}
        t = config.train
        if "batch" in sample:
            t = replace(t, batch=int(sample["batch"]))
        if "lr" in sample:
            t = replace(t, lr=float(sample["lr"]))
        sub = replace(config, model=model, train=t,
                      out_dir=str(out / "runs" / f"{i:02d}"),
                      features_dir=str(config.features_path()),
                      seed=_fold_seed(config.seed, 100_000 + i))
        Path(sub.out_dir).mkdir(parents=True, exist_ok=True)
        report = run_cv(sub, write_checkpoints=False)
        records = [
            {"fold": f["fold"], "curve": f["curve"],
             "loss_curve": f["loss_curve"], "failed": f["failed"]}
            for f in report["folds"]
        ]
        return report["aggregate"]["headline"]["mean"], records

    best_idx, best_sample, results = random_search(
        space, evaluate_run, n_runs, config.seed)

    rows = ["run,fold,step,score,loss"]
    for res in results:
        for rec in res["records"]:
            for (step, score), loss in zip(rec["curve"], rec["loss_curve"]):
                rows.append(f"{res['run']},{rec['fold']},{step},"
                            f"{score:.9g},{loss:.9g}")
    (out / "runrecord.csv").write_text("\n".join(rows) + "\n")

    result = {
        "kind": "hpsearch",
        "config": config.to_dict(),
        "seed": config.seed,
        "n_runs": n_runs,
        "best_run": best_idx,
        "best_sample": best_sample,
        "runs": [{"run": r["run"], "sample": r["sample"], "score": r["score"]}
                 for r in results],
    }
    write_json(str(out / "hpsearch.json"), result)
    _register(out, "hpsearch",
              ["hpsearch.json", "runrecord.csv"]
              + [f"runs/{i:02d}/report.json" for i in range(n_runs)])
    return result


def run_predict(config: ExperimentConfig, checkpoint: str | Path) -> list[str]:
    """Per-frame probability traces for every recording, one CSV each."""
    config.validate()
    spec, params, meta = load_checkpoint(checkpoint)
    _, dataset = _load_corpus(config)
    provider = WindowProvider(dataset, config.prop, config.modality,
                              speaker_onehot=spec.speaker_dim > 0)
    if meta.get("norm"):
        provider.set_norm(meta["norm"])
    names = SCHEMAS[config.prop].labels

    out = Path(config.out_dir) / "predictions"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    offsets = np.concatenate(
        [[0], np.cumsum([t.n_frames for t in dataset.tables])])
    for i, table in enumerate(dataset.tables):
        idx = np.arange(offsets[i], offsets[i + 1])[
            dataset.eligible[offsets[i]:offsets[i + 1]]]
        batch = provider.batch(idx)
        probs = predict_probs(spec, params, audio=batch["audio"],
                              text=batch["text"], speaker=batch["speaker"])
        decisions = binarize(probs, provider.exclusive, config.threshold)
        name = f"predictions/rec_{table.rec_id:05d}.csv"
        write_predictions_csv(
            str(Path(config.out_dir) / name), dataset.t[idx], names, probs,
            decisions, provider.labels_at(idx).astype(np.int64))
        written.append(name)
    _register(config.out_dir, "predict", written)
    return written


def run_gradcheck(seed: int = 0, eps: float = gradcheck_mod.DEFAULT_EPS,
                  out_dir: str | Path | None = None) -> dict:
    result = gradcheck_mod.run_gradcheck(seed=seed, eps=eps)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(str(Path(out_dir) / "gradcheck.json"), result)
        _register(out_dir, "gradcheck", ["gradcheck.json"])
    return result
