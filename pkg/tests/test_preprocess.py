import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edf_fixtures import hypnogram_bytes, psg_bytes
from oracles import best_lag, sos_gain
from ulws.edf import HypnogramEvent, load_record, parse_hypnogram
from ulws.errors import (
    AllWake,
    BadMagic,
    ChecksumMismatch,
    EpochAlignmentError,
    InvalidBand,
    SignalTooShort,
    UnknownLabel,
    VersionMismatch,
)
from ulws.preprocess import (
    EpochDataset,
    StageClass,
    build_epoch_dataset,
    design_bandpass,
    expand_events,
    filtfilt,
    map_stage_label,
    read_cache,
    trim_wake,
    write_cache,
)
from ulws.synthetic import sinusoid_dataset

RATE = 100.0


@pytest.fixture(scope="module")
def bandpass():
    return design_bandpass(0.3, 45.0, RATE, order=4)


# --- filter design -----------------------------------------------------------

def test_dc_gain_is_zero(bandpass):
    assert sos_gain(bandpass.sections, 0.0, RATE) < 1e-12


def test_passband_gain_near_unity(bandpass):
    assert 0.99 <= sos_gain(bandpass.sections, 10.0, RATE) <= 1.01


def test_cutoff_gain_is_half_power(bandpass):
    for cutoff in (0.3, 45.0):
        assert sos_gain(bandpass.sections, cutoff, RATE) == pytest.approx(
            2 ** -0.5, rel=0.02
        )


def test_sections_are_stable(bandpass):
    assert bandpass.is_stable()
    for _, _, _, a1, a2 in bandpass.sections:
        assert np.all(np.abs(np.roots([1.0, a1, a2])) < 1.0)


def test_invalid_band():
    with pytest.raises(InvalidBand):
        design_bandpass(45.0, 0.3, RATE)
    with pytest.raises(InvalidBand):
        design_bandpass(0.3, 60.0, RATE)  # above Nyquist
    with pytest.raises(InvalidBand):
        design_bandpass(0.0, 45.0, RATE)


# --- zero-phase filtering ------------------------------------------------------

def test_filtfilt_zero_in_zero_out(bandpass):
    out = filtfilt(np.zeros(5000), bandpass)
    assert out.shape == (5000,)
    assert np.all(out == 0.0)


def test_filtfilt_preserves_passband_tone_with_zero_lag(bandpass):
    t = np.arange(6000) / RATE
    x = np.sin(2 * np.pi * 10.0 * t)
    y = filtfilt(x, bandpass)
    core = slice(500, 5500)  # ignore edges
    amp_ratio = np.abs(y[core]).max() / np.abs(x[core]).max()
    assert amp_ratio == pytest.approx(1.0, abs=0.02)
    assert best_lag(x[core], y[core], max_lag=20) == 0


def test_filtfilt_rejects_dc(bandpass):
    x = np.full(4000, 7.5)
    y = filtfilt(x, bandpass)
    interior = y[500:-500]  # discard 5 s on each edge
    assert np.abs(interior).max() < 1e-3 * 7.5


def test_filtfilt_too_short(bandpass):
    with pytest.raises(SignalTooShort):
        filtfilt(np.zeros(10), bandpass)


def test_filtfilt_linear(bandpass):
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(4000), rng.standard_normal(4000)
    a, b = 2.5, -0.7
    lhs = filtfilt(a * x + b * y, bandpass)
    rhs = a * filtfilt(x, bandpass) + b * filtfilt(y, bandpass)
    assert np.abs(lhs - rhs).max() <= 1e-5 * max(1.0, np.abs(lhs).max())


def test_filtfilt_commutes_with_time_reversal(bandpass):
    rng = np.random.default_rng(1)
    x = rng.standard_normal(4000)
    direct = filtfilt(x, bandpass)
    reversed_path = filtfilt(x[::-1], bandpass)[::-1]
    scale = max(1.0, np.abs(direct).max())
    assert np.abs(direct - reversed_path).max() <= 1e-5 * scale


# --- stage mapping ---------------------------------------------------------------

@pytest.mark.parametrize(
    "text,expected",
    [
        ("Sleep stage W", StageClass.WAKE),
        ("Sleep stage 1", StageClass.N1),
        ("Sleep stage 2", StageClass.N2),
        ("Sleep stage 3", StageClass.N3),
        ("Sleep stage 4", StageClass.N3),
        ("Sleep stage R", StageClass.REM),
        ("Movement time", None),
        ("Sleep stage ?", None),
    ],
)
def test_stage_mapping(text, expected):
    assert map_stage_label(text) is expected


def test_unknown_stage_text():
    with pytest.raises(UnknownLabel):
        map_stage_label("Sleep stage Z")


# --- wake trimming ----------------------------------------------------------------

def test_trim_wake_hand_counted():
    labels = (
        [StageClass.WAKE] * 200 + [StageClass.N2] * 100 + [StageClass.WAKE] * 200
    )
    # first sleep at 200 -> start 140; last sleep at 299 -> stop 299 + 61 = 360,
    # keeping exactly 60 wake epochs (30 min) on each side
    assert trim_wake(labels) == (140, 360)


def test_trim_wake_clamps():
    labels = [StageClass.WAKE] * 10 + [StageClass.REM] * 5 + [StageClass.WAKE] * 10
    assert trim_wake(labels) == (0, 25)


def test_trim_wake_all_wake():
    with pytest.raises(AllWake):
        trim_wake([StageClass.WAKE] * 50)


@settings(max_examples=200)
@given(st.lists(st.integers(min_value=0, max_value=4), min_size=1, max_size=300))
def test_trim_wake_matches_brute_force(raw):
    labels = [StageClass(v) for v in raw]
    sleep_positions = [i for i, lab in enumerate(labels) if lab != StageClass.WAKE]
    if not sleep_positions:
        with pytest.raises(AllWake):
            trim_wake(labels)
        return
    start, stop = trim_wake(labels)
    # brute force: scan for first/last sleep, widen by 60, clamp
    first = min(sleep_positions)
    last = max(sleep_positions)
    assert start == max(0, first - 60)
    assert stop == min(len(labels), last + 61)
    assert all(start <= i < stop for i in sleep_positions)


# --- event expansion -----------------------------------------------------------------

def test_expand_events_conserves_time():
    events = [
        HypnogramEvent(0, 600, "Sleep stage W"),
        HypnogramEvent(600, 300, "Sleep stage 1"),
        HypnogramEvent(900, 900, "Sleep stage ?"),
    ]
    labels = expand_events(events)
    assert len(labels) == 60  # 1800 s / 30 s
    covered = sum(ev.duration_s for ev in events)
    assert covered == 30.0 * len(labels)  # events tile the whole span here
    assert labels[:20] == [StageClass.WAKE] * 20
    assert labels[20:30] == [StageClass.N1] * 10
    assert labels[30:] == [None] * 30


def test_expand_events_gap_is_unscored():
    events = [
        HypnogramEvent(0, 30, "Sleep stage W"),
        HypnogramEvent(90, 30, "Sleep stage 2"),
    ]
    labels = expand_events(events)
    assert labels == [StageClass.WAKE, None, None, StageClass.N2]


def test_expand_events_off_grid():
    with pytest.raises(EpochAlignmentError):
        expand_events([HypnogramEvent(0, 45, "Sleep stage W")])
    with pytest.raises(EpochAlignmentError):
        expand_events([HypnogramEvent(15, 30, "Sleep stage W")])


# --- dataset assembly ------------------------------------------------------------------

def stage_events(pattern: list[tuple[str, int]]):
    """[(stage text, n_epochs), ...] -> contiguous hypnogram events."""
    events, onset = [], 0.0
    for text, n in pattern:
        events.append((onset, 30.0 * n, text))
        onset += 30.0 * n
    return events


@pytest.fixture(scope="module")
def toy_record(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("edf")
    n_epochs = 40
    psg = tmp / "SC4001E0-PSG.edf"
    hyp = tmp / "SC4001EC-Hypnogram.edf"
    psg.write_bytes(psg_bytes(n_epochs=n_epochs, seed=11))
    hyp.write_bytes(
        hypnogram_bytes(
            stage_events(
                [
                    ("Sleep stage W", 5),
                    ("Sleep stage 1", 5),
                    ("Sleep stage 2", 10),
                    ("Sleep stage ?", 1),
                    ("Sleep stage 3", 5),
                    ("Sleep stage R", 9),
                    ("Sleep stage W", 5),
                ]
            )
        )
    )
    channels = ["EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal", "EMG submental"]
    return load_record(psg, hyp, channels), channels


def test_build_dataset_shapes_and_labels(toy_record):
    record, channels = toy_record
    ds = build_epoch_dataset([record], channels)
    # 40 scored minus 1 unscored -> 39 retained (wake margins stay, < 60 epochs)
    assert ds.x.shape == (39, 4, 3000)
    assert ds.x.dtype == np.float32
    assert len(ds.subject_keys) == 39 and set(ds.subject_keys) == {"SC400"}
    assert ds.channel_labels == channels
    counts = np.bincount(ds.y, minlength=5)
    assert counts.tolist() == [10, 5, 10, 5, 9]


def test_unscored_epoch_reduces_count(toy_record):
    record, channels = toy_record
    ds = build_epoch_dataset([record], channels)
    total_scored_slots = 40
    assert ds.n_epochs == total_scored_slots - 1


def test_standardization_per_channel(toy_record):
    record, channels = toy_record
    ds = build_epoch_dataset([record], channels)
    for c in range(4):
        values = ds.x[:, c, :].astype(np.float64)
        assert abs(values.mean()) <= 1e-4
        assert values.var() == pytest.approx(1.0, abs=1e-3)


def test_epoch_alignment_error(toy_record):
    record, channels = toy_record
    short = type(record)(
        subject_key=record.subject_key,
        night=record.night,
        signals={
            k: type(v)(v.label, v.sample_rate_hz, v.samples[:-6000])
            for k, v in record.signals.items()
        },
        events=record.events,
    )
    with pytest.raises(EpochAlignmentError):
        build_epoch_dataset([short], channels)


def test_records_concatenate_in_subject_order(toy_record):
    record, channels = toy_record
    other = type(record)(
        subject_key="SC399", night=1, signals=record.signals, events=record.events
    )
    ds = build_epoch_dataset([record, other], channels)
    assert ds.subject_keys[0] == "SC399" and ds.subject_keys[-1] == "SC400"
    assert ds.n_epochs == 78


# --- cache round trip ---------------------------------------------------------------------

def test_cache_round_trip(tmp_path):
    ds = sinusoid_dataset(n_epochs=10, n_channels=3, epoch_samples=120, seed=5)
    path = tmp_path / "toy.ulws"
    write_cache(ds, path)
    again = read_cache(path)
    assert again.equals(ds)


def test_cache_round_trip_empty(tmp_path):
    ds = EpochDataset(
        x=np.zeros((0, 2, 3000), dtype=np.float32),
        y=np.zeros(0, dtype=np.uint8),
        subject_keys=[],
        channel_labels=["EEG Fpz-Cz", "EOG horizontal"],
    )
    path = tmp_path / "empty.ulws"
    write_cache(ds, path)
    assert read_cache(path).equals(ds)


def test_cache_corruption_detected(tmp_path):
    ds = sinusoid_dataset(n_epochs=4, n_channels=2, epoch_samples=60, seed=6)
    path = tmp_path / "toy.ulws"
    write_cache(ds, path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        read_cache(path)


def test_cache_bad_magic(tmp_path):
    path = tmp_path / "bad.ulws"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(BadMagic):
        read_cache(path)


def test_cache_version_mismatch(tmp_path):
    import zlib

    ds = sinusoid_dataset(n_epochs=2, n_channels=1, epoch_samples=30, seed=7)
    path = tmp_path / "toy.ulws"
    write_cache(ds, path)
    blob = bytearray(path.read_bytes())
    blob[4] = 99  # version byte
    body = bytes(blob[4:-4])
    path.write_bytes(blob[:4] + body + zlib.crc32(body).to_bytes(4, "little"))
    with pytest.raises(VersionMismatch):
        read_cache(path)
