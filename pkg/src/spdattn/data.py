"""Trial containers, the on-disk dataset format, and a synthetic
EEG-like generator for desk-scale end-to-end runs.

File format (version 1)
-----------------------
A magic line, a canonical key-sorted text header, a NUL separator,
then the binary payload::

    #spdattn-dataset
    channels=8
    classes=3
    format_version=1
    n_trials=180
    sampling_rate_hz=128.0
    timepoints=256
    \\x00  <float32 LE trials, trial-major, channel-major, time>
          <int32 LE labels, one per trial>

Trials are float32 on disk and float64 in memory; :func:`synth` rounds
its output through float32 so a save/load round trip is bitwise exact.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContentError, FormatError, LengthError

_MAGIC = b"#spdattn-dataset\n"
FORMAT_VERSION = 1
_HEADER_KEYS = (
    "channels",
    "classes",
    "format_version",
    "n_trials",
    "sampling_rate_hz",
    "timepoints",
)


@dataclass
class Dataset:
    """Labeled multichannel trials.

    Attributes
    ----------
    trials : ndarray, shape (n, C, T), float64
    labels : ndarray, shape (n,), int64 in [0, classes)
    classes : int
    sampling_rate_hz : float
    """

    trials: np.ndarray
    labels: np.ndarray
    classes: int
    sampling_rate_hz: float

    def __post_init__(self):
        self.trials = np.asarray(self.trials, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.classes = int(self.classes)
        self.sampling_rate_hz = float(self.sampling_rate_hz)
        if self.trials.ndim != 3:
            raise ContentError(f"trials must be (n, C, T), got {self.trials.shape}")
        if self.labels.shape != (self.trials.shape[0],):
            raise ContentError(
                f"{self.trials.shape[0]} trials but {self.labels.shape} labels"
            )
        if not np.all(np.isfinite(self.trials)):
            raise ContentError("trials contain non-finite values")
        if self.classes < 1:
            raise ContentError(f"classes must be >= 1, got {self.classes}")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.classes
        ):
            raise ContentError(
                f"labels outside [0, {self.classes}): "
                f"range [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def n_trials(self):
        return self.trials.shape[0]

    @property
    def channels(self):
        return self.trials.shape[1]

    @property
    def timepoints(self):
        return self.trials.shape[2]

    def subset(self, indices):
        """New dataset holding the given trials (copied)."""
        indices = np.asarray(indices, dtype=np.int64)
        return replace(
            self, trials=self.trials[indices].copy(), labels=self.labels[indices].copy()
        )

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.classes)


def save_dataset(path, dataset):
    """Write a dataset in format version 1 (atomic)."""
    header = {
        "channels": dataset.channels,
        "classes": dataset.classes,
        "format_version": FORMAT_VERSION,
        "n_trials": dataset.n_trials,
        "sampling_rate_hz": repr(dataset.sampling_rate_hz),
        "timepoints": dataset.timepoints,
    }
    text = "".join(f"{key}={header[key]}\n" for key in sorted(header))
    blob = (
        _MAGIC
        + text.encode("ascii")
        + b"\x00"
        + np.ascontiguousarray(dataset.trials, dtype="<f4").tobytes()
        + np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes()
    )
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_dataset(path):
    """Read a dataset file, validating magic, header, and byte counts."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise FormatError(f"{path}: not a dataset file (magic mismatch)")
    sep = blob.find(b"\x00", len(_MAGIC))
    if sep < 0:
        raise FormatError(f"{path}: header terminator not found")
    entries = {}
    for line in blob[len(_MAGIC) : sep].decode("ascii").strip().split("\n"):
        key, eq, value = line.partition("=")
        if not eq:
            raise FormatError(f"{path}: malformed header line {line!r}")
        entries[key] = value
    if set(entries) != set(_HEADER_KEYS):
        raise FormatError(
            f"{path}: header keys {sorted(entries)} != expected {list(_HEADER_KEYS)}"
        )
    version = int(entries["format_version"])
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    n = int(entries["n_trials"])
    c = int(entries["channels"])
    t = int(entries["timepoints"])
    payload = blob[sep + 1 :]
    expected = n * c * t * 4 + n * 4
    if len(payload) != expected:
        raise LengthError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected} "
            f"({n} trials of {c}x{t} float32 plus {n} int32 labels)"
        )
    trials = (
        np.frombuffer(payload[: n * c * t * 4], dtype="<f4")
        .reshape(n, c, t)
        .astype(np.float64)
    )
    labels = np.frombuffer(payload[n * c * t * 4 :], dtype="<i4").astype(np.int64)
    classes = int(entries["classes"])
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContentError(
            f"{path}: labels outside [0, {classes}): "
            f"range [{labels.min()}, {labels.max()}]"
        )
    return Dataset(
        trials=trials,
        labels=labels,
        classes=classes,
        sampling_rate_hz=float(entries["sampling_rate_hz"]),
    )


@dataclass
class SynthSpec:
    """Recipe for the synthetic generator.

    Each class gets its own random mixing matrix and oscillation
    frequency, so classes differ in both spatial covariance and
    spectrum.  ``noise`` scales additive white observation noise.

    ``burst_amplitude`` > 0 adds one class-independent artifact burst
    per trial: a random spatial pattern times white noise over a random
    window of ``burst_fraction`` of the trial.  Bursts corrupt
    whole-trial covariances while leaving most epochs clean, which is
    the regime epoch-level attention is built for.

    ``segments`` > 1 switches to nonstationary classes: the trial is
    divided into that many contiguous segments, a shared pool of
    ``segments`` spatial patterns is drawn once for the dataset, and
    class ``c`` plays the pool cyclically shifted by ``c``.  Every
    class then has the same time-averaged covariance, so whole-trial
    second-order statistics carry no label information; only the
    within-trial arrangement does.
    """

    classes: int = 3
    channels: int = 8
    timepoints: int = 256
    freqs: tuple = None
    sampling_rate_hz: float = 128.0
    noise: float = 0.5
    trials_per_class: int = 60
    seed: int = 0
    burst_amplitude: float = 0.0
    burst_fraction: float = 0.3
    segments: int = 1

    def __post_init__(self):
        if self.classes < 1 or self.channels < 1 or self.timepoints < 2:
            raise ConfigError("classes, channels, timepoints must be positive")
        if self.trials_per_class < 1:
            raise ConfigError("trials_per_class must be >= 1")
        if self.freqs is None:
            self.freqs = tuple(
                float(f)
                for f in np.linspace(4.0, 0.4 * self.sampling_rate_hz, self.classes)
            )
        self.freqs = tuple(float(f) for f in self.freqs)
        if len(self.freqs) != self.classes:
            raise ConfigError(
                f"{len(self.freqs)} frequencies for {self.classes} classes"
            )
        nyquist = self.sampling_rate_hz / 2.0
        if any(not 0 < f < nyquist for f in self.freqs):
            raise ConfigError(f"frequencies must lie in (0, {nyquist}) Hz")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.burst_amplitude < 0 or not 0 < self.burst_fraction <= 1:
            raise ConfigError("invalid burst parameters")
        if self.segments < 1:
            raise ConfigError("segments must be >= 1")
        if self.segments > 1:
            if self.classes > self.segments:
                raise ConfigError(
                    f"{self.classes} classes need at least as many segments "
                    f"for distinct arrangements, got {self.segments}"
                )
            if self.timepoints // self.segments < 2:
                raise ConfigError(
                    f"{self.segments} segments do not fit {self.timepoints} "
                    "timepoints"
                )


def synth(spec):
    """Generate a labeled synthetic dataset, deterministic per seed.

    In the stationary regime (``segments == 1``), class ``c`` has a
    seeded mixing matrix ``A_c``; per trial, sources are a shared
    sinusoid at ``f_c`` (random phase) plus unit white noise per
    source, observed as ``A_c @ sources`` plus scaled white observation
    noise (plus an optional artifact burst).  With ``segments > 1`` the
    class determines only the order in which a shared pool of segment
    patterns is played.  Trials are ordered class-major.
    """
    c, t = spec.channels, spec.timepoints
    time = np.arange(t) / spec.sampling_rate_hz
    streams = np.random.SeedSequence(spec.seed).spawn(spec.classes + 1)
    shared = np.random.default_rng(streams[-1])
    if spec.segments > 1:
        pool = [
            shared.standard_normal((c, c)) / np.sqrt(c)
            for _ in range(spec.segments)
        ]
        pool_freqs = [spec.freqs[j % spec.classes] for j in range(spec.segments)]
        # equal segments; the remainder widens the last one
        bounds = [t * j // spec.segments for j in range(spec.segments)] + [t]
    trials = np.empty((spec.classes * spec.trials_per_class, c, t))
    labels = np.empty(spec.classes * spec.trials_per_class, dtype=np.int64)
    row = 0
    for cls, stream in enumerate(streams[: spec.classes]):
        rng = np.random.default_rng(stream)
        mixing = rng.standard_normal((c, c)) / np.sqrt(c)
        omega = 2.0 * np.pi * spec.freqs[cls]
        for _ in range(spec.trials_per_class):
            if spec.segments == 1:
                phase = rng.uniform(0.0, 2.0 * np.pi)
                wave = np.sin(omega * time + phase)
                sources = wave[None, :] + rng.standard_normal((c, t))
                x = mixing @ sources
            else:
                x = np.empty((c, t))
                for j in range(spec.segments):
                    lo, hi = bounds[j], bounds[j + 1]
                    which = (j + cls) % spec.segments
                    phase = rng.uniform(0.0, 2.0 * np.pi)
                    wave = np.sin(
                        2.0 * np.pi * pool_freqs[which] * time[lo:hi] + phase
                    )
                    sources = wave[None, :] + rng.standard_normal((c, hi - lo))
                    x[:, lo:hi] = pool[which] @ sources
            if spec.noise > 0:
                x = x + spec.noise * rng.standard_normal((c, t))
            if spec.burst_amplitude > 0:
                length = max(1, int(round(spec.burst_fraction * t)))
                start = int(rng.integers(0, t - length + 1))
                pattern = rng.standard_normal(c)
                pattern /= np.linalg.norm(pattern)
                x[:, start : start + length] += spec.burst_amplitude * np.outer(
                    pattern, rng.standard_normal(length)
                )
            trials[row] = x
            labels[row] = cls
            row += 1
    # Round through the storage precision so save -> load is bitwise.
    trials = trials.astype(np.float32).astype(np.float64)
    return Dataset(
        trials=trials,
        labels=labels,
        classes=spec.classes,
        sampling_rate_hz=spec.sampling_rate_hz,
    )
