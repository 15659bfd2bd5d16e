"""Prosodic feature extraction.

Five per-frame features are computed from mono audio: a voiced/unvoiced flag,
a transformed log-F0, a transformed log-energy, and central-difference
derivatives of the latter two. Analysis runs on a 200 fps grid (5 ms hop,
40 ms windows) and is mean-downsampled to the 20 fps grid shared with the
gesture annotations.

Pitch is tracked with the cumulative mean normalized difference function
(CMNDF) of the YIN family: candidate periods are searched in the 75-600 Hz
band, a frame is voiced when the normalized difference minimum falls below
0.15 and frame RMS is at least 1e-4, and the chosen lag is refined by
parabolic interpolation. Unvoiced gaps in the pitch feature are filled by
linear interpolation (constant extension at the edges) before derivatives
are taken.

Transforms:
    pitch_feat  = max(0, ln(f0 + 1) - 4)        (f0 in Hz, 0 when unvoiced)
    energy_feat = ln(max(rms, 1e-10)) - 3
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

log = logging.getLogger(__name__)

RAW_FPS = 200
OUT_FPS = 20
FRAME_LEN = 0.040
HOP = 0.005
F0_MIN = 75.0
F0_MAX = 600.0
VOICING_THRESHOLD = 0.15
ENERGY_GATE = 1e-4
ENERGY_FLOOR = 1e-10

PROSODY_COLUMNS = ("vuv", "pitch", "energy", "d_pitch", "d_energy")


@dataclass(frozen=True)
class AudioClip:
    """Mono audio in [-1, 1] float samples."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class ProsodyTrack:
    """Per-frame prosodic features, one row per frame.

    Columns: vuv, pitch, energy, d_pitch, d_energy.
    """

    fps: int
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != len(PROSODY_COLUMNS):
            raise ValueError(f"expected (n, 5) rows, got shape {rows.shape}")
        self.rows = rows

    @property
    def n_frames(self) -> int:
        return len(self.rows)


def read_wav(path: str | Path) -> AudioClip:
    """Read a WAV file (PCM16 or float32; stereo is averaged to mono)."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples=samples, sample_rate=int(sr))


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write a clip as 32-bit float WAV."""
    wavfile.write(str(path), clip.sample_rate, clip.samples.astype(np.float32))


def silence_intervals(clip: AudioClip, intervals) -> AudioClip:
    """Return a copy of the clip with the given (start, end) seconds zeroed.

    Intervals reaching past the clip are clipped with a warning.
    """
    samples = clip.samples.copy()
    n = len(samples)
    for start, end in intervals:
        if end <= start:
            raise ValueError(f"empty or inverted interval ({start}, {end})")
        lo = int(round(start * clip.sample_rate))
        hi = int(round(end * clip.sample_rate))
        if lo < 0 or hi > n:
            log.warning(
                "silence interval (%.3f, %.3f) exceeds clip of %.3f s; clipping",
                start, end, clip.duration,
            )
        samples[max(lo, 0):min(hi, n)] = 0.0
    return AudioClip(samples=samples, sample_rate=clip.sample_rate)


def frame_signal(clip: AudioClip, frame_len: float = FRAME_LEN, hop: float = HOP) -> np.ndarray:
    """Slice a clip into overlapping analysis windows.

    Window i is centred at t = i * hop; samples outside the clip are zero.
    Returns an (n, L) array with n = floor(duration / hop). Rates where the
    hop is not an integral number of samples use the nearest sample count.
    """
    sr = clip.sample_rate
    hop_s = max(1, int(round(hop * sr)))
    frame_s = max(1, int(round(frame_len * sr)))
    n = len(clip.samples) // hop_s
    if n == 0:
        return np.zeros((0, frame_s))
    half = frame_s // 2
    padded = np.concatenate([
        np.zeros(half), clip.samples, np.zeros(frame_s),
    ])
    starts = np.arange(n) * hop_s   # window i starts at i*hop - half in clip time
    idx = starts[:, None] + np.arange(frame_s)[None, :]
    return padded[idx]


def frame_rms(frames: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(frames * frames, axis=1))


def _cmndf_track(frames: np.ndarray, sample_rate: int,
                 fmin: float, fmax: float) -> tuple[np.ndarray, int, int]:
    """CMNDF values for lags 1..tau_max for every frame.

    Returns (nd, tau_min, tau_max) where nd[i, t-1] is the normalized
    difference of frame i at lag t. Uses FFT cross-correlation; the
    integration window is frame_len - tau_max samples.
    """
    n, L = frames.shape
    tau_min = max(1, int(sample_rate / fmax))
    tau_max = int(np.ceil(sample_rate / fmin))
    if tau_max > L // 2:
        raise ValueError(
            f"window of {L} samples too short for fmin={fmin} Hz "
            f"at {sample_rate} Hz (needs >= {2 * tau_max})"
        )
    W = L - tau_max
    nfft = 1 << int(np.ceil(np.log2(L + tau_max)))

    sq = frames * frames
    cums = np.concatenate([np.zeros((n, 1)), np.cumsum(sq, axis=1)], axis=1)
    e0 = cums[:, W]                                   # sum_{j<W} x_j^2
    taus = np.arange(tau_max + 1)
    e_tau = cums[:, taus + W] - cums[:, taus]          # sum_{j=tau}^{tau+W-1} x_j^2

    spec = np.fft.rfft(frames, nfft)
    spec_w = np.fft.rfft(frames[:, :W], nfft)
    corr = np.fft.irfft(np.conj(spec_w) * spec, nfft)[:, :tau_max + 1]

    d = np.maximum(e0[:, None] + e_tau - 2.0 * corr, 0.0)
    cum_d = np.cumsum(d[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        nd = d[:, 1:] * taus[1:][None, :] / cum_d
    nd[~np.isfinite(nd)] = 1.0     # digital silence: d == 0 everywhere
    return nd, tau_min, tau_max


def _pick_period(nd: np.ndarray, tau_min: int, tau_max: int,
                 threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Select the period lag per frame from CMNDF values.

    Absolute-threshold rule: the first lag in band dipping below the
    threshold, walked forward to the local minimum; frames that never dip
    use the global band minimum. Returns (lag, nd_at_lag).
    """
    n = len(nd)
    band = nd[:, tau_min - 1:tau_max]        # lag tau at column tau - tau_min
    width = band.shape[1]
    below = band < threshold
    has_dip = below.any(axis=1)
    first = np.where(has_dip, below.argmax(axis=1), band.argmin(axis=1))
    # local minimum at-or-after the first dip: nd[i] <= nd[i+1]
    is_min = np.ones_like(band, dtype=bool)
    is_min[:, :-1] = band[:, :-1] <= band[:, 1:]
    after = np.arange(width)[None, :] >= first[:, None]
    trough = (is_min & after).argmax(axis=1)
    pick = np.where(has_dip, trough, first)
    lags = pick + tau_min
    return lags, band[np.arange(n), pick]


def _refine_parabolic(nd: np.ndarray, lags: np.ndarray,
                      tau_min: int, tau_max: int) -> np.ndarray:
    """Sub-sample period estimates via parabolic interpolation on CMNDF."""
    lags = lags.astype(np.float64)
    inner = (lags > tau_min) & (lags < tau_max)
    li = lags[inner].astype(int)
    rows = np.flatnonzero(inner)
    a = nd[rows, li - 2]       # nd column for lag t is t-1
    b = nd[rows, li - 1]
    c = nd[rows, li]
    denom = a - 2.0 * b + c
    shift = np.zeros_like(a)
    ok = np.abs(denom) > 1e-12
    shift[ok] = 0.5 * (a[ok] - c[ok]) / denom[ok]
    shift = np.clip(shift, -0.5, 0.5)
    refined = lags.copy()
    refined[rows] = li + shift
    return refined


def _f0_track(frames: np.ndarray, sample_rate: int,
              fmin: float = F0_MIN, fmax: float = F0_MAX,
              threshold: float = VOICING_THRESHOLD,
              chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """F0 (Hz, 0 where unvoiced) and voicing flags for a frame stack."""
    n = len(frames)
    f0 = np.zeros(n)
    voiced = np.zeros(n, dtype=bool)
    rms = frame_rms(frames)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        nd, tau_min, tau_max = _cmndf_track(frames[lo:hi], sample_rate, fmin, fmax)
        lags, nd_min = _pick_period(nd, tau_min, tau_max, threshold)
        period = _refine_parabolic(nd, lags, tau_min, tau_max)
        cand = sample_rate / period
        ok = (nd_min < threshold) & (rms[lo:hi] >= ENERGY_GATE) \
            & (cand >= fmin) & (cand <= fmax)
        f0[lo:hi] = np.where(ok, cand, 0.0)
        voiced[lo:hi] = ok
    return f0, voiced


def estimate_f0(window: np.ndarray, sample_rate: int,
                fmin: float = F0_MIN, fmax: float = F0_MAX,
                threshold: float = VOICING_THRESHOLD) -> float | None:
    """Fundamental frequency of one analysis window, or None if unvoiced.

    Args:
        window: 1-D sample array, at least two periods of fmin long.
        sample_rate: sampling rate in Hz.

    Returns:
        F0 in Hz within [fmin, fmax], or None when the frame fails the
        voicing test (CMNDF minimum >= threshold or RMS < 1e-4).
    """
    window = np.asarray(window, dtype=np.float64)
    f0, voiced = _f0_track(window[None, :], sample_rate, fmin, fmax, threshold)
    return float(f0[0]) if voiced[0] else None


def transform_pitch(f0):
    """max(0, ln(f0 + 1) - 4); accepts scalars or arrays."""
    return np.maximum(0.0, np.log(np.asarray(f0, dtype=np.float64) + 1.0) - 4.0)


def transform_energy(x):
    """ln(max(x, 1e-10)) - 3; accepts scalars or arrays."""
    return np.log(np.maximum(np.asarray(x, dtype=np.float64), ENERGY_FLOOR)) - 3.0


def interpolate_unvoiced(values: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    """Linearly interpolate across unvoiced runs, constant at the edges.

    With no voiced frame at all the result is all zeros.
    """
    values = np.asarray(values, dtype=np.float64)
    voiced = np.asarray(voiced, dtype=bool)
    if voiced.all():
        return values.copy()
    if not voiced.any():
        return np.zeros_like(values)
    idx = np.arange(len(values))
    return np.interp(idx, idx[voiced], values[voiced])


def finite_diff(seq: np.ndarray, fps: float) -> np.ndarray:
    """Central differences scaled to per-second units; one-sided at the edges.

    A length-1 sequence has derivative 0.
    """
    seq = np.asarray(seq, dtype=np.float64)
    n = len(seq)
    if n == 0:
        return np.zeros(0)
    if n == 1:
        return np.zeros(1)
    out = np.empty(n)
    out[1:-1] = (seq[2:] - seq[:-2]) * (fps / 2.0)
    out[0] = (seq[1] - seq[0]) * fps
    out[-1] = (seq[-1] - seq[-2]) * fps
    return out


def downsample_by_mean(track: ProsodyTrack, factor: int = 10) -> ProsodyTrack:
    """Average consecutive groups of `factor` rows; a partial trailing group
    is averaged over its actual size."""
    rows = track.rows
    n = len(rows)
    n_full = n // factor
    out = []
    if n_full:
        out.append(rows[:n_full * factor].reshape(n_full, factor, -1).mean(axis=1))
    if n % factor:
        out.append(rows[n_full * factor:].mean(axis=0, keepdims=True))
    merged = np.concatenate(out) if out else np.zeros((0, rows.shape[1]))
    return ProsodyTrack(fps=track.fps // factor, rows=merged)


def extract_prosody(clip: AudioClip) -> ProsodyTrack:
    """Full 5-channel prosody pipeline at 20 fps.

    Frames at 200 fps, estimates F0/voicing and RMS, applies the log
    transforms, interpolates the pitch feature across unvoiced gaps, takes
    central-difference derivatives at 200 fps, then mean-downsamples to
    20 fps. The raw track is trimmed to a multiple of 10 rows first so the
    output has exactly floor(duration * 20) rows, aligned with the label
    grid.
    """
    frames = frame_signal(clip)
    n_raw = len(frames)
    n_raw -= n_raw % 10
    if n_raw == 0:
        return ProsodyTrack(fps=OUT_FPS, rows=np.zeros((0, 5)))
    frames = frames[:n_raw]

    f0, voiced = _f0_track(frames, clip.sample_rate)
    rms = frame_rms(frames)

    pitch = transform_pitch(np.where(voiced, f0, 0.0))
    pitch = interpolate_unvoiced(pitch, voiced)
    energy = transform_energy(rms)

    raw = np.column_stack([
        voiced.astype(np.float64),
        pitch,
        energy,
        finite_diff(pitch, RAW_FPS),
        finite_diff(energy, RAW_FPS),
    ])
    return downsample_by_mean(ProsodyTrack(fps=RAW_FPS, rows=raw))


def write_prosody_csv(track: ProsodyTrack, path: str | Path) -> None:
    """Write `frame,vuv,pitch,energy,d_pitch,d_energy` with 9 significant digits."""
    with open(path, "w") as fh:
        fh.write("frame," + ",".join(PROSODY_COLUMNS) + "\n")
        for i, row in enumerate(track.rows):
            fh.write(f"{i}," + ",".join(f"{v:.9g}" for v in row) + "\n")


def read_prosody_csv(path: str | Path, fps: int = OUT_FPS) -> ProsodyTrack:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return ProsodyTrack(fps=fps, rows=np.zeros((0, 5)))
    return ProsodyTrack(fps=fps, rows=data[:, 1:6])
