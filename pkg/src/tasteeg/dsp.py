"""Preprocessing chain for continuous EEG: FIR filtering, downsampling,
and epoching of labeled stimulation segments into fixed 2 s samples.

Filters are linear-phase windowed-sinc designs applied forward-backward
(zero phase); the effective magnitude response is therefore the squared
single-pass response.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

N_CHANNELS = 21
CHANNEL_NAMES = ["Fz", "Cz", "Pz", "T3", "T4", "C3", "C4", "Fp1", "Fp2", "F7",
                 "F8", "T5", "T6", "O1", "O2", "F3", "F4", "P3", "P4", "A1", "A2"]
TASTE_LABELS = {0: "sour", 1: "sweet", 2: "bitter", 3: "salty"}
SAMPLE_TIMEPOINTS = 256


@dataclass
class EegSample:
    """One 21-channel x 256-timepoint epoch (microvolts, 128 Hz, 2 s)."""

    data: np.ndarray  # (21, 256), channels x timepoints
    label: int        # 0 sour, 1 sweet, 2 bitter, 3 salty
    subject: int = 0
    segment: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (N_CHANNELS, SAMPLE_TIMEPOINTS):
            raise ValueError(f"sample must be {N_CHANNELS}x{SAMPLE_TIMEPOINTS}, "
                             f"got {self.data.shape}")
        if self.label not in TASTE_LABELS:
            raise ValueError(f"label must be in 0..3, got {self.label}")


@dataclass
class ContinuousRecording:
    """Multichannel recording with stimulation events (onset sample, label)."""

    data: np.ndarray  # (channels, samples)
    fs: float
    events: list[tuple[int, int]] = field(default_factory=list)
    subject: int = 0

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        if self.fs <= 0:
            raise ValueError(f"fs must be > 0, got {self.fs}")

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]


@dataclass
class FirFilter:
    """Odd-length linear-phase FIR filter (symmetric taps)."""

    taps: np.ndarray
    kind: str          # "bandpass" | "bandstop"
    low_hz: float
    high_hz: float
    fs: float

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if len(self.taps) % 2 == 0:
            raise ValueError("taps must have odd length")


def _windowed_sinc_lowpass(cutoff_hz, fs, n_taps):
    mid = (n_taps - 1) // 2
    n = np.arange(n_taps) - mid
    h = (2.0 * cutoff_hz / fs) * np.sinc(2.0 * cutoff_hz / fs * n)
    h *= np.hamming(n_taps)
    return h / h.sum()  # unity DC gain


def design_fir(kind, low_hz, high_hz, fs, n_taps=513):
    """Hamming-windowed sinc bandpass, or its spectral inversion (bandstop).

    n_taps must be odd; 0 < low_hz < high_hz < fs/2.
    """
    if n_taps % 2 == 0 or n_taps < 3:
        raise ValueError(f"n_taps must be odd and >= 3, got {n_taps}")
    if not (0 < low_hz < high_hz < fs / 2):
        raise ValueError(f"need 0 < low ({low_hz}) < high ({high_hz}) < fs/2 ({fs / 2})")
    taps = _windowed_sinc_lowpass(high_hz, fs, n_taps) \
        - _windowed_sinc_lowpass(low_hz, fs, n_taps)
    if kind == "bandpass":
        pass
    elif kind == "bandstop":
        taps = -taps
        taps[(n_taps - 1) // 2] += 1.0
    else:
        raise ValueError(f"kind must be 'bandpass' or 'bandstop', got {kind!r}")
    return FirFilter(taps=taps, kind=kind, low_hz=low_hz, high_hz=high_hz, fs=fs)


def frequency_response(filt, freqs_hz):
    """Complex single-pass response at the given frequencies."""
    n = np.arange(len(filt.taps))
    f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    return (filt.taps * np.exp(-2j * np.pi * np.outer(f, n) / filt.fs)).sum(axis=1)


def _fft_convolve_same(x, taps):
    # linear convolution via rfft, 'same' slice; taps length is odd
    n = x.shape[-1]
    m = len(taps)
    size = 1 << (n + m - 1).bit_length()
    y = np.fft.irfft(np.fft.rfft(x, size) * np.fft.rfft(taps, size), size)
    half = (m - 1) // 2
    return y[..., half:half + n]


def _filtfilt(channel, taps, pad):
    ext = np.pad(channel, pad, mode="reflect")
    y = _fft_convolve_same(ext, taps)
    y = _fft_convolve_same(y[::-1], taps)[::-1]
    return y[pad:pad + len(channel)]


def apply_filter(recording, filt):
    """Zero-phase filtering: forward pass, reverse, filter again, reverse.

    Channels are processed independently; the output keeps the input
    length. Edges are reflect-padded by the filter length beforehand.
    """
    if isinstance(recording, np.ndarray):
        data = np.atleast_2d(recording)
        pad = min(len(filt.taps), data.shape[1] - 1)
        out = np.stack([_filtfilt(ch, filt.taps, pad) for ch in data])
        return out if recording.ndim > 1 else out[0]
    if recording.n_samples == 0:
        raise ValueError("cannot filter an empty recording")
    out = apply_filter(recording.data, filt)
    return ContinuousRecording(data=out, fs=recording.fs,
                               events=list(recording.events),
                               subject=recording.subject)


def downsample(recording, factor=2):
    """Keep every factor-th sample starting at index 0; fs is divided.

    The caller must have lowpassed below the new Nyquist already (the
    0.5-50 Hz bandpass guarantees this for the 256 -> 128 Hz step).
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    return ContinuousRecording(data=recording.data[:, ::factor].copy(),
                               fs=recording.fs / factor,
                               events=[(onset // factor, label)
                                       for onset, label in recording.events],
                               subject=recording.subject)


def epoch(recording, window_s=2.0, segment_s=10.0):
    """Cut each stimulation segment into consecutive non-overlapping windows.

    Every event marks a ``segment_s`` segment starting at its onset; with
    the defaults each 10 s segment yields five 2 s samples carrying the
    segment's label.
    """
    win = int(round(window_s * recording.fs))
    per_segment = int(round(segment_s / window_s))
    samples = []
    for k, (onset, label) in enumerate(recording.events):
        end = onset + per_segment * win
        if onset < 0 or end > recording.n_samples:
            raise ValueError(
                f"event {k} (onset {onset}, label {label}): segment of "
                f"{per_segment * win} samples extends past recording end "
                f"({recording.n_samples})")
        for i in range(per_segment):
            chunk = recording.data[:, onset + i * win:onset + (i + 1) * win]
            samples.append(EegSample(data=chunk.copy(), label=int(label),
                                     subject=recording.subject, segment=k))
    return samples


def preprocess_chain(recording, bandpass=(0.5, 50.0), notch=(49.0, 51.0),
                     n_taps=513, factor=2, window_s=2.0, zscore=False):
    """Full chain: bandpass, notch, downsample, epoch.

    ``zscore`` optionally standardizes each channel of each sample
    (off by default; the training pipeline consumes raw microvolts).
    """
    bp = design_fir("bandpass", bandpass[0], bandpass[1], recording.fs, n_taps)
    bs = design_fir("bandstop", notch[0], notch[1], recording.fs, n_taps)
    rec = apply_filter(recording, bp)
    rec = apply_filter(rec, bs)
    rec = downsample(rec, factor)
    samples = epoch(rec, window_s=window_s)
    if zscore:
        for s in samples:
            mu = s.data.mean(axis=1, keepdims=True)
            sd = s.data.std(axis=1, keepdims=True)
            s.data = (s.data - mu) / np.where(sd > 0, sd, 1.0)
    return samples


# ---------------------------------------------------------------------------
# CSV + sidecar-JSON recording format


def save_recording_csv(recording, csv_path, events_path):
    """One row per timepoint, one numeric column per channel, header row."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        names = CHANNEL_NAMES if recording.n_channels == N_CHANNELS else \
            [f"ch{i:02d}" for i in range(recording.n_channels)]
        writer.writerow(names)
        for row in recording.data.T:
            writer.writerow([repr(v) for v in row])
    with open(events_path, "w") as fh:
        json.dump([{"onset_sample": int(o), "label": int(l)}
                   for o, l in recording.events], fh, indent=1)


def load_recording_csv(csv_path, events_path, fs, subject=0):
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    with open(events_path) as fh:
        raw = json.load(fh)
    events = [(int(e["onset_sample"]), int(e["label"])) for e in raw]
    return ContinuousRecording(data=data.T.copy(), fs=fs, events=events,
                               subject=subject)
