"""Losses, optimizer, class balancing, and the training loop.

Three frame-loss variants share one form. With p_t the probability assigned
to the true outcome (the target class under a softmax head; per label, p or
1-p under a sigmoid head):

    cross_entropy:          -ln(p_t)
    focal:                  (1 - p_t)^gamma * -ln(p_t)
    class_balanced_focal:   (1-beta)/(1-beta^n_l) * focal, n_l = training
                            count of label l

Probabilities are clamped to [1e-7, 1 - 1e-7] before the log; a batch loss
is the sum of its frame losses. Optimization is Adam. Optional balancing
duplicates frames positive for an underrepresented label (with replacement,
seeded) until that label's positive count reaches half its majority side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .net import ModelParams, ModelSpec, forward, init_params, predict_probs
from .tensor import Tensor

log = logging.getLogger(__name__)

PROB_EPS = 1e-7

LOSS_KINDS = ("cross_entropy", "focal", "class_balanced_focal")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "cross_entropy"
    gamma: float = 2.0
    beta: float = 0.999

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; choose from {LOSS_KINDS}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")


def class_balance_weights(loss: LossSpec, class_counts: np.ndarray) -> np.ndarray:
    """(1 - beta) / (1 - beta^n_l) per label; labels with n=0 get weight 1."""
    counts = np.asarray(class_counts, dtype=np.float64)
    weights = np.ones_like(counts)
    pos = counts > 0
    weights[pos] = (1.0 - loss.beta) / (1.0 - loss.beta ** counts[pos])
    if (~pos).any():
        log.warning("class-balanced weights: %d label(s) have zero positives; using 1.0",
                    int((~pos).sum()))
    return weights


def _loss_weights(loss: LossSpec, n_labels: int,
                  class_counts: np.ndarray | None) -> np.ndarray:
    if loss.kind != "class_balanced_focal":
        return np.ones(n_labels)
    if class_counts is None:
        raise ValueError("class_balanced_focal needs class_counts")
    if len(class_counts) != n_labels:
        raise ValueError(
            f"class_counts has {len(class_counts)} entries for {n_labels} labels")
    return class_balance_weights(loss, class_counts)


def loss_frame(probs: np.ndarray, target: np.ndarray, loss: LossSpec,
               exclusive: bool, class_counts: np.ndarray | None = None) -> float:
    """Reference frame loss on plain arrays (the graph version must match)."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(target, dtype=np.float64)
    w = _loss_weights(loss, len(p), class_counts)
    gamma = loss.gamma if loss.kind != "cross_entropy" else 0.0
    if exclusive:
        ti = int(np.argmax(y))
        pt = p[ti]
        return float(w[ti] * (1.0 - pt) ** gamma * -np.log(pt))
    pt = p * y + (1.0 - p) * (1.0 - y)
    return float(np.sum(w * (1.0 - pt) ** gamma * -np.log(pt)))


def loss_batch(probs: Tensor, targets: np.ndarray, loss: LossSpec,
               exclusive: bool, class_counts: np.ndarray | None = None) -> Tensor:
    """Differentiable batch loss: the sum of frame losses."""
    y = np.asarray(targets, dtype=probs.data.dtype)
    w = _loss_weights(loss, probs.shape[-1], class_counts).astype(probs.data.dtype)
    gamma = loss.gamma if loss.kind != "cross_entropy" else 0.0
    p = T.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    if exclusive:
        pt = T.tsum(T.mul(p, y), axis=-1)                    # (B,)
        row_w = (y @ w).astype(probs.data.dtype)
        term = T.mul(T.mul(T.tlog(pt), -1.0), row_w)
    else:
        pt = T.add(T.mul(p, y), T.mul(T.add(T.mul(p, -1.0), 1.0), 1.0 - y))
        term = T.mul(T.mul(T.tlog(pt), -1.0), w)
    if gamma > 0.0:
        one_minus = T.add(T.mul(pt, -1.0), 1.0)
        term = T.mul(term, T.tpow(one_minus, gamma))
    return T.tsum(term)


# ------------------------------------------------------------------ optimizer

class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, params: ModelParams, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, arr in self.params.tensors.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            arr -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ------------------------------------------------------------------ balancing

def upsample(labels: np.ndarray, exclusive: bool,
             rng: np.random.Generator) -> np.ndarray:
    """Index multiset balancing each label to half its majority side.

    Returns indices into `labels`: the originals in order, then seeded
    duplicates of frames positive for each deficient label. Labels with no
    positive frame are left untouched with a warning.
    """
    del exclusive    # duplication of whole frames preserves one-hot rows
    labels = np.asarray(labels)
    n, n_labels = labels.shape
    indices = list(range(n))
    for l in range(n_labels):
        col = labels[np.asarray(indices), l]
        n_pos = int(col.sum())
        n_neg = len(indices) - n_pos
        if n_pos == 0:
            if n_neg:
                log.warning("upsample: label %d has no positive frames; skipping", l)
            continue
        target = int(np.ceil(max(n_pos, n_neg) / 2.0))
        if n_pos >= target:
            continue
        pool = np.asarray(indices)[col.astype(bool)]
        extra = rng.choice(pool, size=target - n_pos, replace=True)
        indices.extend(int(i) for i in extra)
    return np.asarray(indices, dtype=np.int64)


# ------------------------------------------------------------------ training loop

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 800
    batch: int = 64
    lr: float = 2e-3
    loss: LossSpec = field(default_factory=LossSpec)
    upsample: bool = False
    evals: int = 4

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be positive")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossSpec(**d["loss"])
        return cls(**d)


@dataclass
class RunRecord:
    """Validation curve and outcome of one training run."""

    curve: list[tuple[int, float]] = field(default_factory=list)
    loss_curve: list[float] = field(default_factory=list)
    final_score: float = 0.0
    failed: bool = False


def train(spec: ModelSpec, provider, train_idx: np.ndarray, val_idx: np.ndarray,
          config: TrainConfig, seed: int,
          score_fn=None) -> tuple[ModelParams, RunRecord]:
    """Train one model on one fold.

    provider supplies `.batch(indices)` -> dict with keys audio/text/speaker
    (windows or None) and labels, plus `.exclusive`. score_fn(params) is
    called at evenly spaced eval points to build the validation curve; when
    None, a headline Macro-F1 scorer over val_idx is used via the provider.

    Divergence (non-finite loss) aborts the run and marks it failed. The
    final-step weights are returned; there is no early stopping.
    """
    ss = np.random.SeedSequence([int(seed)])
    s_init, s_batch, s_drop, s_up = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
    params = init_params(spec, seed=s_init)
    opt = Adam(params, lr=config.lr)
    rng_batch = np.random.default_rng(s_batch)
    rng_drop = np.random.default_rng(s_drop)

    pool = np.asarray(train_idx)
    if len(pool) == 0:
        raise ValueError("empty training set")
    if config.upsample:
        rows = provider.labels_at(pool)
        pool = pool[upsample(rows, provider.exclusive, np.random.default_rng(s_up))]
    class_counts = provider.labels_at(pool).sum(axis=0)

    if score_fn is None:
        from .evaluation import headline_from_arrays
        val_batch: dict | None = None
        def score_fn(p):
            nonlocal val_batch
            if val_batch is None:
                val_batch = provider.batch(np.asarray(val_idx))
            probs = predict_probs(spec, p, audio=val_batch.get("audio"),
                                  text=val_batch.get("text"),
                                  speaker=val_batch.get("speaker"))
            return headline_from_arrays(probs, val_batch["labels"],
                                        provider.exclusive)

    eval_steps = sorted({
        (config.steps * (i + 1)) // config.evals for i in range(config.evals)
    })
    record = RunRecord()
    seg_losses: list[float] = []
    for step in range(1, config.steps + 1):
        idx = pool[rng_batch.integers(0, len(pool), size=config.batch)]
        batch = provider.batch(idx)
        probs, pt = forward(spec, params, audio=batch.get("audio"),
                            text=batch.get("text"), speaker=batch.get("speaker"),
                            training=True, rng=rng_drop)
        loss = loss_batch(probs, batch["labels"], config.loss,
                          provider.exclusive, class_counts)
        value = loss.item()
        if not np.isfinite(value):
            log.warning("training diverged at step %d (loss=%r); aborting", step, value)
            record.failed = True
            break
        seg_losses.append(value / len(idx))
        loss.backward()
        opt.step({name: t.grad for name, t in pt.items() if t.grad is not None})
        if step in eval_steps:
            record.curve.append((step, float(score_fn(params))))
            record.loss_curve.append(float(np.mean(seg_losses)))
            seg_losses = []
    record.final_score = record.curve[-1][1] if record.curve else 0.0
    return params, record


# ------------------------------------------------------------------ random search

@dataclass(frozen=True)
class HyperRange:
    """One dimension of the search space."""

    kind: str                       # choice | uniform | log_uniform | int_uniform
    choices: tuple = ()
    lo: float = 0.0
    hi: float = 0.0

    def sample(self, rng: np.random.Generator):
        if self.kind == "choice":
            return self.choices[int(rng.integers(0, len(self.choices)))]
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        if self.kind == "log_uniform":
            return float(np.exp(rng.uniform(np.log(self.lo), np.log(self.hi))))
        if self.kind == "int_uniform":
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        raise ValueError(f"unknown range kind {self.kind!r}")


def default_space() -> dict[str, HyperRange]:
    """The documented search space for both encoders and the decoder."""
    return {
        "enc_layers": HyperRange("int_uniform", lo=1, hi=4),
        "enc_channels": HyperRange("choice", choices=(16, 32, 64, 128)),
        "kernel": HyperRange("choice", choices=(3, 5)),
        "enc_dropout": HyperRange("uniform", lo=0.0, hi=0.5),
        "enc_out": HyperRange("choice", choices=(16, 32, 64, 128)),
        "dec_hidden": HyperRange("int_uniform", lo=32, hi=256),
        "dec_layers": HyperRange("int_uniform", lo=1, hi=3),
        "dec_dropout": HyperRange("uniform", lo=0.0, hi=0.5),
        "batch": HyperRange("choice", choices=(32, 64, 128)),
        "lr": HyperRange("log_uniform", lo=1e-4, hi=1e-2),
    }


def sample_hyperparams(space: dict[str, HyperRange],
                       rng: np.random.Generator) -> dict:
    return {name: space[name].sample(rng) for name in sorted(space)}


def random_search(space: dict[str, HyperRange], evaluate_run, n: int,
                  seed: int) -> tuple[int, dict, list]:
    """n seeded random draws; evaluate_run(i, sample) -> (score, records).

    Returns (best run index, best sample, all per-run results). Ties keep
    the earliest run.
    """
    if n < 1:
        raise ValueError(f"need n >= 1 runs, got {n}")
    results = []
    best_idx, best_score, best_sample = -1, -np.inf, None
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        sample = sample_hyperparams(space, rng)
        score, records = evaluate_run(i, sample)
        results.append({"run": i, "sample": sample, "score": float(score),
                        "records": records})
        if score > best_score:
            best_idx, best_score, best_sample = i, score, sample
    return best_idx, best_sample, results
