"""RawRecord -> model-ready epoch tensors.

Band-pass filtering of the EEG channels, stage-text mapping, wake-period
trimming around the main sleep span, 30-second epoching with per-record
z-scoring, and a checksummed binary dataset cache.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
import scipy.signal

from .edf import RawRecord
from .errors import (
    AllWake,
    BadMagic,
    ChecksumMismatch,
    DegenerateSignal,
    EpochAlignmentError,
    InvalidBand,
    MissingChannel,
    SignalTooShort,
    UnknownLabel,
    VersionMismatch,
)

EPOCH_SECONDS = 30.0
SAMPLE_RATE_HZ = 100.0
EPOCH_SAMPLES = int(EPOCH_SECONDS * SAMPLE_RATE_HZ)  # T = 3000

# 30 minutes of surrounding wake kept on each side of the sleep span
WAKE_MARGIN_EPOCHS = 60

CACHE_MAGIC = b"ULWS"
CACHE_VERSION = 1


class StageClass(IntEnum):
    WAKE = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4


N_STAGES = len(StageClass)

# R&K stages 3 and 4 merge into N3 under the five-class scheme;
# movement and unscored epochs are excluded entirely.
_STAGE_TEXT: dict[str, StageClass | None] = {
    "Sleep stage W": StageClass.WAKE,
    "Sleep stage 1": StageClass.N1,
    "Sleep stage 2": StageClass.N2,
    "Sleep stage 3": StageClass.N3,
    "Sleep stage 4": StageClass.N3,
    "Sleep stage R": StageClass.REM,
    "Movement time": None,
    "Sleep stage ?": None,
}


def map_stage_label(stage_text: str) -> StageClass | None:
    """Map annotation text to a stage, None for excluded epochs."""
    try:
        return _STAGE_TEXT[stage_text.strip()]
    except KeyError:
        raise UnknownLabel(f"unrecognized stage text {stage_text!r}") from None


@dataclass
class FilterSpec:
    """Band-pass as cascaded biquads, a0 normalized to 1.

    sections[i] = (b0, b1, b2, a1, a2)
    """

    sections: np.ndarray
    low_hz: float
    high_hz: float
    order: int
    sample_rate_hz: float

    def as_sos(self) -> np.ndarray:
        """scipy layout: (b0, b1, b2, a0, a1, a2) with a0 == 1."""
        s = np.asarray(self.sections, dtype=np.float64)
        return np.concatenate(
            [s[:, :3], np.ones((len(s), 1)), s[:, 3:]], axis=1
        )

    def is_stable(self) -> bool:
        for _, _, _, a1, a2 in np.asarray(self.sections, dtype=np.float64):
            if np.any(np.abs(np.roots([1.0, a1, a2])) >= 1.0):
                return False
        return True


def design_bandpass(
    low_hz: float = 0.3,
    high_hz: float = 45.0,
    sample_rate_hz: float = SAMPLE_RATE_HZ,
    order: int = 4,
) -> FilterSpec:
    """Butterworth band-pass as second-order sections.

    `order` follows the usual prototype convention: butter(order, band)
    yields `order` biquad sections. The -3 dB points sit at the cutoffs.
    """
    if not 0 < low_hz < high_hz < sample_rate_hz / 2:
        raise InvalidBand(
            f"need 0 < low < high < Nyquist, got ({low_hz}, {high_hz}) at {sample_rate_hz} Hz"
        )
    sos = scipy.signal.butter(
        order, [low_hz, high_hz], btype="bandpass", fs=sample_rate_hz, output="sos"
    )
    assert np.allclose(sos[:, 3], 1.0)
    spec = FilterSpec(
        sections=sos[:, [0, 1, 2, 4, 5]].copy(),
        low_hz=low_hz,
        high_hz=high_hz,
        order=order,
        sample_rate_hz=sample_rate_hz,
    )
    if not spec.is_stable():
        raise InvalidBand(f"unstable design for band ({low_hz}, {high_hz})")
    return spec


def _impulse_length(sos: np.ndarray) -> int:
    """Samples until the slowest pole has decayed by 99%."""
    ntaps = 2 * len(sos) + 1
    settle = ntaps
    for section in sos:
        radii = np.abs(np.roots(section[3:]))
        r = radii.max() if radii.size else 0.0
        if 0.0 < r < 1.0:
            settle = max(settle, int(np.ceil(np.log(0.01) / np.log(r))))
    return settle


def pad_length(spec: FilterSpec) -> int:
    """Reflective edge padding: 3x the impulse-length heuristic.

    Sized so boundary transients decay below ~1e-6 before reaching real
    samples, which keeps the forward-backward pass zero-phase and
    time-reversal symmetric to well under 1e-5.
    """
    return 3 * _impulse_length(spec.as_sos())


def filtfilt(signal: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Zero-phase forward-backward application of the section cascade."""
    x = np.asarray(signal, dtype=np.float64)
    padlen = pad_length(spec)
    if x.shape[-1] <= padlen:
        raise SignalTooShort(f"need more than {padlen} samples, got {x.shape[-1]}")
    return scipy.signal.sosfiltfilt(spec.as_sos(), x, padtype="odd", padlen=padlen)


def trim_wake(labels: list[StageClass]) -> tuple[int, int]:
    """Index range keeping the sleep span plus 30 min of wake on each side."""
    sleep = [i for i, lab in enumerate(labels) if lab != StageClass.WAKE]
    if not sleep:
        raise AllWake("record contains no sleep epochs")
    first, last = sleep[0], sleep[-1]
    return max(0, first - WAKE_MARGIN_EPOCHS), min(len(labels), last + WAKE_MARGIN_EPOCHS + 1)


def expand_events(events) -> list[StageClass | None]:
    """Per-30s-epoch stage labels from hypnogram events.

    Events must sit on the 30 s grid; gaps between events come out as None
    (excluded later, like MOVEMENT/UNKNOWN epochs).
    """
    n_epochs = 0
    spans = []
    for ev in events:
        start, n = ev.onset_s / EPOCH_SECONDS, ev.duration_s / EPOCH_SECONDS
        if abs(start - round(start)) > 1e-9 or abs(n - round(n)) > 1e-9:
            raise EpochAlignmentError(
                f"event ({ev.onset_s}s + {ev.duration_s}s) off the {EPOCH_SECONDS}s grid"
            )
        label = map_stage_label(ev.stage_text)
        start, n = round(start), round(n)
        spans.append((start, n, label))
        n_epochs = max(n_epochs, start + n)
    labels: list[StageClass | None] = [None] * n_epochs
    for start, n, label in spans:
        for i in range(start, start + n):
            labels[i] = label
    return labels


@dataclass
class EpochDataset:
    """N preprocessed epochs: x is (N, C, T) float32, y holds StageClass values."""

    x: np.ndarray
    y: np.ndarray
    subject_keys: list[str]
    channel_labels: list[str]
    sample_rate_hz: float = SAMPLE_RATE_HZ

    @property
    def n_epochs(self) -> int:
        return self.x.shape[0]

    @property
    def n_channels(self) -> int:
        return self.x.shape[1]

    @property
    def epoch_samples(self) -> int:
        return self.x.shape[2]

    def validate(self) -> None:
        n, _, _ = self.x.shape
        assert self.x.dtype == np.float32
        assert len(self.y) == n and len(self.subject_keys) == n
        assert np.all(np.isfinite(self.x))
        assert self.y.size == 0 or (self.y.min() >= 0 and self.y.max() < N_STAGES)

    def equals(self, other: "EpochDataset") -> bool:
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and self.subject_keys == other.subject_keys
            and self.channel_labels == other.channel_labels
            and self.sample_rate_hz == other.sample_rate_hz
        )


def _is_eeg(label: str) -> bool:
    return label.upper().startswith("EEG")


def preprocess_record(
    record: RawRecord,
    channels: list[str],
    filter_spec: FilterSpec | None = None,
    filter_all_channels: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """One record -> (x (n, C, T) float32, y (n,) uint8).

    Band-pass is applied to EEG channels only (the recorded signals the
    filter is specified for) unless filter_all_channels is set. Each
    channel is z-scored per record over the retained epochs.
    """
    if filter_spec is None:
        filter_spec = design_bandpass()

    per_epoch = expand_events(record.events)
    entries = [(i, lab) for i, lab in enumerate(per_epoch) if lab is not None]
    if not entries:
        raise AllWake(f"{record.subject_key} night {record.night}: no scored epochs")
    start, stop = trim_wake([lab for _, lab in entries])
    retained = entries[start:stop]

    traces = []
    for label in channels:
        if label not in record.signals:
            raise MissingChannel(f"{label!r} absent from record {record.subject_key}")
        trace = record.signals[label]
        samples = np.asarray(trace.samples, dtype=np.float64)
        if filter_all_channels or _is_eeg(label):
            samples = filtfilt(samples, filter_spec)
        traces.append(samples)

    t = EPOCH_SAMPLES
    n = len(retained)
    x = np.empty((n, len(channels), t), dtype=np.float64)
    for c, samples in enumerate(traces):
        for row, (epoch_idx, _) in enumerate(retained):
            lo = epoch_idx * t
            if lo + t > len(samples):
                raise EpochAlignmentError(
                    f"epoch {epoch_idx} needs samples up to {lo + t}, signal has {len(samples)}"
                )
            x[row, c] = samples[lo : lo + t]
        mean = x[:, c].mean()
        std = x[:, c].std()
        if std == 0:
            raise DegenerateSignal(f"channel {channels[c]!r} constant over retained epochs")
        x[:, c] = (x[:, c] - mean) / std

    y = np.array([int(lab) for _, lab in retained], dtype=np.uint8)
    return x.astype(np.float32), y


def build_epoch_dataset(
    records: list[RawRecord],
    channels: list[str],
    filter_spec: FilterSpec | None = None,
    filter_all_channels: bool = False,
) -> EpochDataset:
    """Preprocess and concatenate records in deterministic (subject, night) order."""
    xs, ys, subjects = [], [], []
    for record in sorted(records, key=lambda r: (r.subject_key, r.night)):
        x, y = preprocess_record(record, channels, filter_spec, filter_all_channels)
        xs.append(x)
        ys.append(y)
        subjects.extend([record.subject_key] * len(y))
    if xs:
        x_all = np.concatenate(xs, axis=0)
        y_all = np.concatenate(ys, axis=0)
    else:
        x_all = np.zeros((0, len(channels), EPOCH_SAMPLES), dtype=np.float32)
        y_all = np.zeros((0,), dtype=np.uint8)
    dataset = EpochDataset(
        x=x_all, y=y_all, subject_keys=subjects, channel_labels=list(channels)
    )
    dataset.validate()
    return dataset


# --- binary cache ---------------------------------------------------------
#
# magic "ULWS" | u8 version | u64 N, C, T | u32 sample_rate
# | C x (u32 len + utf-8) channel labels | N x (u32 len + utf-8) subject keys
# | N*C*T float32 LE payload in (epoch, channel, sample) order | N x u8 labels
# | u32 CRC-32 of everything after the magic


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return len(raw).to_bytes(4, "little") + raw


def write_cache(dataset: EpochDataset, path: str | Path) -> None:
    dataset.validate()
    n, c, t = dataset.x.shape
    body = bytearray()
    body += CACHE_VERSION.to_bytes(1, "little")
    body += n.to_bytes(8, "little") + c.to_bytes(8, "little") + t.to_bytes(8, "little")
    body += int(round(dataset.sample_rate_hz)).to_bytes(4, "little")
    for label in dataset.channel_labels:
        body += _pack_str(label)
    for key in dataset.subject_keys:
        body += _pack_str(key)
    body += np.ascontiguousarray(dataset.x, dtype="<f4").tobytes()
    body += dataset.y.astype(np.uint8).tobytes()
    crc = zlib.crc32(body)
    Path(path).write_bytes(CACHE_MAGIC + bytes(body) + crc.to_bytes(4, "little"))


def read_cache(path: str | Path) -> EpochDataset:
    blob = Path(path).read_bytes()
    if blob[:4] != CACHE_MAGIC:
        raise BadMagic(f"{path}: not a dataset cache")
    if len(blob) < 9:
        raise ChecksumMismatch(f"{path}: truncated")
    body, crc_stored = blob[4:-4], int.from_bytes(blob[-4:], "little")
    if zlib.crc32(body) != crc_stored:
        raise ChecksumMismatch(f"{path}: CRC-32 mismatch")
    version = body[0]
    if version != CACHE_VERSION:
        raise VersionMismatch(f"{path}: cache version {version}, expected {CACHE_VERSION}")

    pos = 1
    n = int.from_bytes(body[pos : pos + 8], "little"); pos += 8
    c = int.from_bytes(body[pos : pos + 8], "little"); pos += 8
    t = int.from_bytes(body[pos : pos + 8], "little"); pos += 8
    rate = int.from_bytes(body[pos : pos + 4], "little"); pos += 4

    def unpack_str() -> str:
        nonlocal pos
        length = int.from_bytes(body[pos : pos + 4], "little")
        pos += 4
        s = body[pos : pos + length].decode("utf-8")
        pos += length
        return s

    channel_labels = [unpack_str() for _ in range(c)]
    subject_keys = [unpack_str() for _ in range(n)]
    payload = n * c * t * 4
    x = np.frombuffer(body[pos : pos + payload], dtype="<f4").reshape(n, c, t).copy()
    pos += payload
    y = np.frombuffer(body[pos : pos + n], dtype=np.uint8).copy()
    pos += n
    if pos != len(body):
        raise ChecksumMismatch(f"{path}: {len(body) - pos} trailing bytes")
    return EpochDataset(
        x=x, y=y, subject_keys=subject_keys, channel_labels=channel_labels,
        sample_rate_hz=float(rate),
    )
