"""Command-line entry points.

Every subcommand reads the shared experiment flags, optionally seeded from
a JSON config file (explicit flags win over the file, the file wins over
defaults). Exit code 0 means all requested outputs were written; feature
failures and a failing gradient check exit 1, bad configuration exits 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import (CV_MODES, PROPERTIES, ExperimentConfig, run_baselines,
                         run_cv, run_features, run_gradcheck, run_hpsearch,
                         run_predict)
from .features import MODALITIES
from .gradcheck import DEFAULT_EPS, PASS_THRESHOLD
from .synth import PRESETS, generate_synthetic_corpus, preset
from .training import LOSS_KINDS

log = logging.getLogger(__name__)

CONFIG_KEYS = ("manifest", "embeddings", "out_dir", "property", "modality",
               "cv", "folds", "seed", "threshold", "eval_on_all_frames",
               "features_dir")
TRAIN_KEYS = ("steps", "batch", "lr", "upsample", "evals")


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with experiment settings; "
                                    "explicit flags override it")
    p.add_argument("--manifest", help="corpus manifest JSON")
    p.add_argument("--embeddings", help="word-vector text file")
    p.add_argument("--out", dest="out_dir", help="run output directory")
    p.add_argument("--property", dest="prop", choices=PROPERTIES)
    p.add_argument("--modality", choices=MODALITIES)
    p.add_argument("--cv", choices=CV_MODES)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--eval-all-frames", dest="eval_on_all_frames",
                   action="store_true", default=None)
    p.add_argument("--features-dir", dest="features_dir",
                   help="reuse features cached outside the run directory")
    p.add_argument("--steps", type=int, help="training steps")
    p.add_argument("--batch", type=int, help="batch size")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--loss", choices=LOSS_KINDS)
    p.add_argument("--gamma", type=float, help="focal exponent")
    p.add_argument("--beta", type=float, help="class-balance beta")
    p.add_argument("--upsample", action="store_true", default=None)
    p.add_argument("--evals", type=int, help="validation curve points")


def _config_from_args(args) -> ExperimentConfig:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())

    for key in CONFIG_KEYS:
        attr = "prop" if key == "property" else key
        value = getattr(args, attr, None)
        if value is not None:
            base[key] = value

    train = dict(base.get("train", {}))
    for key in TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            train[key] = value
    loss = dict(train.get("loss", {}))
    for key, attr in (("kind", "loss"), ("gamma", "gamma"), ("beta", "beta")):
        value = getattr(args, attr, None)
        if value is not None:
            loss[key] = value
    if loss:
        train["loss"] = loss
    if train:
        base["train"] = train

    missing = [k for k in ("manifest", "embeddings", "out_dir") if not base.get(k)]
    if missing:
        raise SystemExit(f"error: missing required settings: {', '.join(missing)} "
                         f"(pass flags or --config)")
    config = ExperimentConfig.from_dict(base)
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    return config


# ------------------------------------------------------------------ commands

def _cmd_features(args) -> int:
    config = _config_from_args(args)
    built, failures = run_features(config, force=args.force)
    print(f"features: {len(built)} recording(s) built, "
          f"{len(failures)} failed, cached under {config.features_path()}")
    for rec_id, msg in failures:
        print(f"  recording {rec_id}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    report = run_cv(config, write_checkpoints=True)
    agg = report["aggregate"]["headline"]
    print(f"train: {report['n_folds']} folds, headline "
          f"{agg['mean']:.3f} +- {agg['std']:.3f}; "
          f"report.json + checkpoints under {config.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    config = _config_from_args(args)
    report = run_cv(config, write_checkpoints=False)
    agg = report["aggregate"]["headline"]
    print(f"eval: {report['n_folds']} folds, headline "
          f"{agg['mean']:.3f} +- {agg['std']:.3f}; "
          f"report.json under {config.out_dir}")
    return 0


def _cmd_baselines(args) -> int:
    config = _config_from_args(args)
    result = run_baselines(config)
    for kind, agg in sorted(result["baselines"].items()):
        h = agg["headline"]
        print(f"baseline {kind}: headline {h['mean']:.3f} +- {h['std']:.3f}")
    if "predictable" in result:
        for label, ok in sorted(result["predictable"].items()):
            verdict = "clears all baselines" if ok else "not above chance"
            print(f"  {label}: {verdict}")
    return 0


def _cmd_hpsearch(args) -> int:
    config = _config_from_args(args)
    result = run_hpsearch(config, n_runs=args.runs)
    best = result["runs"][result["best_run"]]
    print(f"hpsearch: best run {result['best_run']} "
          f"score {best['score']:.3f}: {json.dumps(best['sample'], sort_keys=True)}")
    print(f"curves in {Path(config.out_dir) / 'runrecord.csv'}")
    return 0


def _cmd_predict(args) -> int:
    config = _config_from_args(args)
    written = run_predict(config, args.checkpoint)
    print(f"predict: wrote {len(written)} trace file(s) under "
          f"{Path(config.out_dir) / 'predictions'}")
    return 0


def _cmd_synth(args) -> int:
    spec = preset(args.preset)
    overrides = {}
    if args.speakers is not None:
        overrides["n_speakers"] = args.speakers
    if args.duration is not None:
        overrides["duration"] = args.duration
    if overrides:
        spec = replace(spec, **overrides)
    recordings = generate_synthetic_corpus(spec, seed=args.seed, out_dir=args.out)
    print(f"synth: {len(recordings)} recording(s) in {args.out} "
          f"(preset {args.preset}, seed {args.seed})")
    return 0


def _cmd_gradcheck(args) -> int:
    result = run_gradcheck(seed=args.seed, eps=args.eps, out_dir=args.out)
    print(f"gradcheck: max relative error {result['max_error']:.3e} "
          f"over {len(result['cases'])} cases "
          f"(threshold {PASS_THRESHOLD:.0e}, eps {result['eps']:.0e})")
    return 0 if result["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gestprop",
        description="Gesture-property prediction from speech prosody and text")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract and cache per-recording features")
    _add_experiment_flags(p)
    p.add_argument("--force", action="store_true", help="rebuild existing files")
    p.set_defaults(fn=_cmd_features)

    for name, fn, blurb in (
            ("train", _cmd_train, "cross-validated training with checkpoints"),
            ("eval", _cmd_eval, "cross-validated evaluation report")):
        p = sub.add_parser(name, help=blurb)
        _add_experiment_flags(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("baselines", help="score the four chance systems")
    _add_experiment_flags(p)
    p.set_defaults(fn=_cmd_baselines)

    p = sub.add_parser("hpsearch", help="random hyperparameter search")
    _add_experiment_flags(p)
    p.add_argument("--runs", type=int, default=50, help="number of sampled configs")
    p.set_defaults(fn=_cmd_hpsearch)

    p = sub.add_parser("predict", help="per-frame probability traces")
    _add_experiment_flags(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speakers", type=int, help="override speaker count")
    p.add_argument("--duration", type=float, help="override seconds per recording")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--out", help="also write gradcheck.json here")
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
