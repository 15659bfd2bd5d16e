"""Feature construction and the windowed dataset provider.

build_features turns each recording into three cached artifacts: a prosody
CSV at 20 fps (interlocutor spans silenced first), a frame-table CSV with
the label bits, and a text-window cache holding the 7-slot word ids and
timing offsets per frame. All files are written atomically and the step is
idempotent: existing files are left alone unless force is set.

load_dataset concatenates those artifacts (recordings ordered by id, the
same order fold plans use) into one FrameDataset. WindowProvider then
serves training batches: standardized audio windows of 41 frames, text
windows of 7 x 301 (embedding plus onset offset; the offset column zeroed
for the no-timing condition), an optional speaker one-hot, and the label
matrix of the property being trained.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (Recording, SCHEMAS, build_frame_table, read_frame_csv,
                     write_frame_csv)
from .net import AUDIO_FRAMES
from .prosody import (extract_prosody, read_prosody_csv, read_wav,
                      silence_intervals, write_prosody_csv)
from .textfeat import (EmbeddingTable, WINDOW_SLOTS, load_embeddings,
                       select_window)

log = logging.getLogger(__name__)

AUDIO_HALF = (AUDIO_FRAMES - 1) // 2      # 20 frames = 1 s of context per side

ABSENT_ID = -1     # empty window slot: zero embedding, zero offset
OOV_ID = -2        # word present but unknown: zero embedding, real offset

MODALITIES = ("audio", "text", "text_no_timing", "both")


def feature_paths(feature_dir: str | Path, rec_id: int) -> dict[str, Path]:
    base = Path(feature_dir)
    stem = f"rec_{rec_id:05d}"
    return {"prosody": base / f"{stem}.prosody.csv",
            "frames": base / f"{stem}.frames.csv",
            "text": base / f"{stem}.text.npz"}


def _atomic(path: Path, write_fn) -> None:
    # keep the extension so writers that infer format from it stay happy
    tmp = path.with_suffix(".tmp" + path.suffix)
    write_fn(tmp)
    os.replace(tmp, path)


def _text_cache(rec: Recording, n_frames: int):
    """Per frame: 7 window slots as local-vocab ids plus onset offsets."""
    vocab: dict[str, int] = {}
    ids = np.full((n_frames, WINDOW_SLOTS), ABSENT_ID, dtype=np.int32)
    offsets = np.zeros((n_frames, WINDOW_SLOTS), dtype=np.float32)
    for f in range(n_frames):
        t = f / 20.0
        for s, token in enumerate(select_window(rec.words, t)):
            if token is None:
                continue
            if token.word not in vocab:
                vocab[token.word] = len(vocab)
            ids[f, s] = vocab[token.word]
            offsets[f, s] = token.onset - t
    words = np.array(list(vocab), dtype=str) if vocab else np.array([], dtype="U1")
    return ids, offsets, words


def build_features(recordings: list[Recording], feature_dir: str | Path,
                   force: bool = False) -> tuple[list[int], list[tuple[int, str]]]:
    """Write per-recording feature files; returns (built ids, failures)."""
    feature_dir = Path(feature_dir)
    feature_dir.mkdir(parents=True, exist_ok=True)
    built: list[int] = []
    failures: list[tuple[int, str]] = []
    for rec in sorted(recordings, key=lambda r: r.rec_id):
        paths = feature_paths(feature_dir, rec.rec_id)
        if not force and all(p.exists() for p in paths.values()):
            log.info("recording %d: features exist, skipping", rec.rec_id)
            continue
        try:
            clip = read_wav(rec.audio_path)
        except (OSError, ValueError) as exc:
            failures.append((rec.rec_id, f"{rec.audio_path}: {exc}"))
            continue
        duration = clip.duration
        if rec.interlocutor:
            clip = silence_intervals(clip, rec.interlocutor)
        track = extract_prosody(clip)
        table = build_frame_table(rec, duration=duration)
        if len(track.rows) != table.n_frames:
            failures.append((rec.rec_id,
                             f"prosody rows {len(track.rows)} != frames {table.n_frames}"))
            continue
        ids, offsets, words = _text_cache(rec, table.n_frames)
        _atomic(paths["prosody"], lambda p: write_prosody_csv(track, p))
        _atomic(paths["frames"], lambda p: write_frame_csv(table, p))
        _atomic(paths["text"], lambda p: np.savez(
            p, ids=ids, offsets=offsets, vocab=words))
        built.append(rec.rec_id)
    return built, failures


def _map_vocab(words: np.ndarray, rows: dict[str, int]) -> np.ndarray:
    """Local vocab index -> embedding matrix row (OOV_ID when unknown)."""
    out = np.full(len(words), OOV_ID, dtype=np.int32)
    for i, w in enumerate(words):
        row = rows.get(str(w))
        if row is None:
            row = rows.get(str(w).lower(), OOV_ID)
        out[i] = row
    return out


@dataclass
class FrameDataset:
    """All recordings concatenated in rec-id order; one row per frame."""

    rec_ids: np.ndarray          # (N,) int
    speakers: np.ndarray         # (N,) str
    t: np.ndarray                # (N,) float
    frame_in_rec: np.ndarray     # (N,) int
    prosody: np.ndarray          # (N, 5) float32
    phase: np.ndarray            # (N, 5) uint8
    category: np.ndarray         # (N, 4) uint8
    semantics: np.ndarray        # (N, 4) uint8
    has_gesture: np.ndarray      # (N,) uint8
    word_ids: np.ndarray         # (N, 7) int32 into emb_matrix (or sentinels)
    word_offsets: np.ndarray     # (N, 7) float32
    emb_matrix: np.ndarray       # (V, dim) float32
    eligible: np.ndarray         # (N,) bool, audio window inside recording
    tables: list                 # FrameTable per recording, rec-id order

    @property
    def n_frames(self) -> int:
        return len(self.rec_ids)

    @property
    def speaker_list(self) -> list[str]:
        return sorted(set(self.speakers.tolist()))

    def labels_for(self, prop: str) -> np.ndarray:
        if prop not in SCHEMAS:
            raise ValueError(f"unknown property {prop!r}")
        if prop == "presence":
            return self.has_gesture[:, None]
        return getattr(self, prop)


def load_dataset(recordings: list[Recording], feature_dir: str | Path,
                 embeddings: EmbeddingTable | str | Path) -> FrameDataset:
    if not isinstance(embeddings, EmbeddingTable):
        embeddings = load_embeddings(embeddings)
    vocab_words, emb_matrix = embeddings.to_matrix()
    emb_matrix = emb_matrix.astype(np.float32)
    emb_rows = {w: i for i, w in enumerate(vocab_words)}

    if not recordings:
        raise ValueError("no recordings to load")
    tables, pros, ids, offs = [], [], [], []
    for rec in sorted(recordings, key=lambda r: r.rec_id):
        paths = feature_paths(feature_dir, rec.rec_id)
        missing = [str(p) for p in paths.values() if not p.exists()]
        if missing:
            raise FileNotFoundError(
                f"recording {rec.rec_id}: missing feature files {missing}; "
                f"run the features step first")
        table = read_frame_csv(paths["frames"])
        track = read_prosody_csv(paths["prosody"])
        cache = np.load(paths["text"], allow_pickle=False)
        if len(track.rows) != table.n_frames or len(cache["ids"]) != table.n_frames:
            raise ValueError(f"recording {rec.rec_id}: feature files disagree "
                             f"on frame count")
        local_ids = cache["ids"]
        remap = _map_vocab(cache["vocab"], emb_rows)
        mapped = np.where(local_ids >= 0, remap[np.clip(local_ids, 0, None)],
                          ABSENT_ID).astype(np.int32)
        tables.append(table)
        pros.append(track.rows.astype(np.float32))
        ids.append(mapped)
        offs.append(cache["offsets"].astype(np.float32))

    sizes = [t.n_frames for t in tables]
    return FrameDataset(
        rec_ids=np.concatenate([np.full(n, t.rec_id) for t, n in zip(tables, sizes)]),
        speakers=np.concatenate([np.full(n, t.speaker, dtype=object)
                                 for t, n in zip(tables, sizes)]),
        t=np.concatenate([t.t for t in tables]),
        frame_in_rec=np.concatenate([np.arange(n) for n in sizes]),
        prosody=np.concatenate(pros),
        phase=np.concatenate([t.phase for t in tables]),
        category=np.concatenate([t.category for t in tables]),
        semantics=np.concatenate([t.semantics for t in tables]),
        has_gesture=np.concatenate([t.has_gesture for t in tables]),
        word_ids=np.concatenate(ids),
        word_offsets=np.concatenate(offs),
        emb_matrix=emb_matrix,
        eligible=np.concatenate([t.eligible() for t in tables]),
        tables=tables,
    )


def compute_norm(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of prosody rows; std floored at 1e-6."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) == 0:
        raise ValueError(f"need a nonempty (frames, channels) array, got {rows.shape}")
    return rows.mean(axis=0).astype(np.float32), \
        np.maximum(rows.std(axis=0), 1e-6).astype(np.float32)


class WindowProvider:
    """Serves model-ready windows for global frame indices.

    Indices must be eligible frames (>= 20 frames from both recording
    edges), which fold plans guarantee; audio windows are gathered straight
    from the concatenated prosody array.
    """

    def __init__(self, dataset: FrameDataset, prop: str, modality: str,
                 speaker_onehot: bool = False):
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}; choose from {MODALITIES}")
        if prop not in SCHEMAS:
            raise ValueError(f"unknown property {prop!r}")
        self.dataset = dataset
        self.prop = prop
        self.modality = modality
        self.exclusive = SCHEMAS[prop].exclusive
        self.speaker_onehot = speaker_onehot
        self._speakers = dataset.speaker_list
        self._spk_index = {s: i for i, s in enumerate(self._speakers)}
        self.norm_mean = np.zeros(5, dtype=np.float32)
        self.norm_std = np.ones(5, dtype=np.float32)
        self._labels = dataset.labels_for(prop).astype(np.float32)

    @property
    def n_labels(self) -> int:
        return self._labels.shape[1]

    @property
    def speaker_dim(self) -> int:
        return len(self._speakers) if self.speaker_onehot else 0

    def fit_norm(self, train_idx: np.ndarray) -> None:
        """Standardize audio channels with statistics of the training frames."""
        self.norm_mean, self.norm_std = compute_norm(self.dataset.prosody[train_idx])

    def norm_state(self) -> dict:
        return {"mean": self.norm_mean.tolist(), "std": self.norm_std.tolist()}

    def set_norm(self, state: dict) -> None:
        self.norm_mean = np.asarray(state["mean"], dtype=np.float32)
        self.norm_std = np.asarray(state["std"], dtype=np.float32)

    def labels_at(self, idx: np.ndarray) -> np.ndarray:
        return self._labels[np.asarray(idx)]

    def _audio(self, idx: np.ndarray) -> np.ndarray:
        if not self.dataset.eligible[idx].all():
            raise ValueError("audio window crosses a recording edge; "
                             "only eligible frames can be batched")
        span = np.arange(-AUDIO_HALF, AUDIO_HALF + 1)
        windows = self.dataset.prosody[np.asarray(idx)[:, None] + span[None, :]]
        return (windows - self.norm_mean) / self.norm_std

    def _text(self, idx: np.ndarray) -> np.ndarray:
        ids = self.dataset.word_ids[idx]                  # (B, 7)
        off = self.dataset.word_offsets[idx]
        B = len(ids)
        dim = self.dataset.emb_matrix.shape[1]
        out = np.zeros((B, WINDOW_SLOTS, dim + 1), dtype=np.float32)
        present = ids >= 0
        out[:, :, :dim][present] = self.dataset.emb_matrix[ids[present]]
        if self.modality != "text_no_timing":
            out[:, :, dim] = np.where(ids != ABSENT_ID, off, 0.0)
        return out

    def batch(self, idx: np.ndarray) -> dict:
        idx = np.asarray(idx)
        out = {"labels": self._labels[idx]}
        out["audio"] = self._audio(idx) if self.modality in ("audio", "both") else None
        out["text"] = self._text(idx) if self.modality in (
            "text", "text_no_timing", "both") else None
        if self.speaker_onehot:
            sp = np.zeros((len(idx), len(self._speakers)), dtype=np.float32)
            for j, s in enumerate(self.dataset.speakers[idx]):
                sp[j, self._spk_index[s]] = 1.0
            out["speaker"] = sp
        else:
            out["speaker"] = None
        return out
