import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rwresnet.audio import (
    SampleRateWarning,
    Waveform,
    fix_length,
    format_protocol,
    load_audio,
    make_batches,
    parse_protocol,
    parse_wav,
    preprocess,
    scale,
    serialize_wav,
    stack_audio,
    synth_dataset,
    to_pcm16,
)
from rwresnet.errors import DataError


def wav_bytes(samples, rate=16000, fmt=1, channels=1, bits=16, extra_chunk=b""):
    payload = np.asarray(samples, dtype="<i2").tobytes()
    block = channels * bits // 8
    return (
        struct.pack("<4sI4s", b"RIFF", 36 + len(extra_chunk) + len(payload), b"WAVE")
        + struct.pack("<4sIHHIIHH", b"fmt ", 16, fmt, channels, rate, rate * block, block, bits)
        + extra_chunk
        + struct.pack("<4sI", b"data", len(payload))
        + payload
    )


# -- WAV -------------------------------------------------------------------

def test_minimal_wav_bit_exact():
    data = wav_bytes([100, -100, 0, 32767])
    assert len(data) == 44 + 8
    w = parse_wav(data)
    assert w.samples.dtype == np.int16
    np.testing.assert_array_equal(w.samples, [100, -100, 0, 32767])
    assert w.sample_rate == 16000


def test_serialize_matches_hand_built_header():
    assert serialize_wav(np.array([100, -100, 0, 32767], dtype=np.int16)) == wav_bytes([100, -100, 0, 32767])


def test_8khz_accepted_with_warning():
    with pytest.warns(SampleRateWarning, match="8000"):
        w = parse_wav(wav_bytes([1, 2, 3], rate=8000))
    assert w.sample_rate == 8000


def test_16khz_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        parse_wav(wav_bytes([1, 2]))


def test_truncated_data_names_byte_counts():
    data = wav_bytes([1, 2, 3, 4])[:-3]
    with pytest.raises(DataError, match="expected 8 bytes, got 5"):
        parse_wav(data)


@pytest.mark.parametrize(
    "kwargs, field",
    [({"fmt": 3}, "audio_format"), ({"bits": 8}, "bits_per_sample"), ({"channels": 2}, "num_channels")],
)
def test_unsupported_formats_name_field(kwargs, field):
    with pytest.raises(DataError, match=field):
        parse_wav(wav_bytes([0, 0, 0, 0], **kwargs))


def test_unknown_chunks_skipped():
    extra = struct.pack("<4sI", b"LIST", 3) + b"abc" + b"\0"
    w = parse_wav(wav_bytes([5, -5], extra_chunk=extra))
    np.testing.assert_array_equal(w.samples, [5, -5])


def test_not_riff():
    with pytest.raises(DataError, match="RIFF"):
        parse_wav(b"RIFX" + bytes(40))


@settings(max_examples=50)
@given(arrays(np.int16, st.integers(0, 300)), st.sampled_from([8000, 16000, 22050]))
def test_wav_round_trip(samples, rate):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SampleRateWarning)
        w = parse_wav(serialize_wav(samples, rate))
    np.testing.assert_array_equal(w.samples, samples)
    assert w.sample_rate == rate


# -- preprocessing ---------------------------------------------------------

def test_fix_length_cuts_head():
    s = np.arange(160000)
    np.testing.assert_array_equal(fix_length(Waveform(s, 16000)).samples, s[:128000])


def test_fix_length_tiles_short_signal():
    s = np.arange(50000)
    np.testing.assert_array_equal(fix_length(Waveform(s, 16000)).samples, np.concatenate([s, s, s])[:128000])


def test_fix_length_exact_is_unchanged():
    s = np.random.default_rng(0).integers(-32768, 32767, 128000).astype(np.int16)
    out = fix_length(Waveform(s, 16000)).samples
    assert out.tobytes() == s.tobytes()


def test_fix_length_rejects_empty():
    with pytest.raises(DataError, match="empty"):
        fix_length(Waveform(np.zeros(0), 16000))


def test_fix_length_random_crop_is_a_window():
    s = np.arange(1000)
    out = fix_length(Waveform(s, 16000), 100, np.random.default_rng(3)).samples
    assert len(out) == 100
    np.testing.assert_array_equal(np.diff(out), 1)


@given(st.integers(1, 400), st.integers(1, 400))
def test_fix_length_always_target_and_idempotent(n, target):
    w = fix_length(Waveform(np.arange(n), 16000), target)
    assert len(w.samples) == target
    np.testing.assert_array_equal(fix_length(w, target).samples, w.samples)


def test_scale_examples():
    out = scale(Waveform(np.array([32767, -32768, 0], dtype=np.int16), 16000)).samples
    assert out.tolist() == [0.999969482421875, -1.0, 0.0]


@given(st.integers(-16384, 16383), st.integers(-16384, 16383))
def test_scale_linear(a, b):
    def s(v):
        return scale(Waveform(np.array([v]), 16000)).samples[0]

    assert s(a) + s(b) == pytest.approx(s(a + b), abs=np.spacing(1.0))


def test_to_pcm16_inverts_scale():
    x = np.arange(-32768, 32768, 7, dtype=np.int16)
    np.testing.assert_array_equal(to_pcm16(scale(Waveform(x, 16000)).samples), x)


def test_preprocess_range_and_length():
    x = np.array([32767, -32768, 5], dtype=np.int16)
    out = preprocess(Waveform(x, 16000), 10)
    assert len(out) == 10 and out.min() >= -1 and out.max() <= 1


# -- protocol --------------------------------------------------------------

def test_parse_protocol_examples():
    ts = parse_protocol("LA_0079 LA_T_1138215 - - bonafide\nLA_0079 LA_T_1271820 - A01 spoof\n")
    a, b = ts.trials
    assert (a.utt_id, a.label, a.attack_id, a.speaker_id) == ("LA_T_1138215", "bonafide", "-", "LA_0079")
    assert (b.label, b.attack_id) == ("spoof", "A01")
    assert ts.labels.tolist() == [1, 0]


def test_parse_protocol_empty_and_crlf():
    assert len(parse_protocol("")) == 0
    ts = parse_protocol("S U1 - - bonafide\r\n\r\nS U2 - A02 spoof\r\n")
    assert ts.utt_ids == ["U1", "U2"]


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("S U1 - - bonafide\nS U2 - spoof\n", "line 2"),
        ("S U1 - - bonafide extra\n", "line 1.*5 columns"),
        ("S U1 - - maybe\n", "line 1"),
        ("S U1 - - bonafide\nS U1 - A01 spoof\n", "line 2.*duplicate"),
    ],
)
def test_parse_protocol_errors(text, pattern):
    with pytest.raises(DataError, match=pattern):
        parse_protocol(text)


@settings(max_examples=30)
@given(st.lists(
    st.tuples(st.from_regex(r"[A-Za-z0-9_]{1,12}", fullmatch=True), st.sampled_from(["bonafide", "spoof"]),
              st.from_regex(r"[A-Z0-9-]{1,4}", fullmatch=True)),
    unique_by=lambda t: t[0], max_size=20,
))
def test_protocol_round_trip(rows):
    text = "".join(f"SPK {u} - {a} {k}\n" for u, k, a in rows)
    ts = parse_protocol(text)
    assert format_protocol(ts) == text
    assert [(t.utt_id, t.label, t.attack_id) for t in ts] == [(u, k, a) for u, k, a in rows]


def test_load_audio_reads_and_preprocesses(tmp_path):
    (tmp_path / "A.wav").write_bytes(serialize_wav(np.array([16384, -16384], dtype=np.int16)))
    ts = parse_protocol("S A - - bonafide\n")
    out = load_audio(ts, tmp_path, target=5)
    np.testing.assert_array_equal(out["A"], [0.5, -0.5, 0.5, -0.5, 0.5])


def test_load_audio_missing_file(tmp_path):
    with pytest.raises(DataError, match="B"):
        load_audio(parse_protocol("S B - - spoof\n"), tmp_path)


# -- synthetic data --------------------------------------------------------

def test_synth_deterministic():
    t1, a1 = synth_dataset(4, 8000, seed=7)
    t2, a2 = synth_dataset(4, 8000, seed=7)
    assert t1 == t2
    for k in a1:
        assert a1[k].tobytes() == a2[k].tobytes()
    _, a3 = synth_dataset(4, 8000, seed=8)
    assert any(a1[k].tobytes() != a3[k].tobytes() for k in a1)


def test_synth_balanced_and_in_range():
    ts, audio = synth_dataset(16, 4000, seed=1)
    assert ts.labels.sum() == 16 and len(ts) == 32
    for x in audio.values():
        assert x.shape == (4000,) and np.abs(x).max() <= 1.0


def spectrum_features(waves, bins=8):
    mag = np.abs(np.fft.rfft(waves, axis=1))
    edges = np.linspace(0, mag.shape[1], bins + 1).astype(int)
    feats = np.stack([mag[:, a:b].mean(1) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    return np.log(feats + 1e-8)


def test_synth_task_is_learnable_by_logistic_regression():
    """Reference oracle: logistic regression on 8-bin log spectrum magnitudes."""
    ts, audio = synth_dataset(32, 8000, seed=0)
    w, y = stack_audio(ts, audio)
    X = spectrum_features(w)
    X = (X - X.mean(0)) / X.std(0)
    X = np.hstack([X, np.ones((len(X), 1))])
    theta = np.zeros(X.shape[1])
    for _ in range(3000):
        p = 1 / (1 + np.exp(-X @ theta))
        theta -= 0.5 * X.T @ (p - y) / len(y)
    acc = ((X @ theta > 0) == y).mean()
    assert acc > 0.9


# -- batching --------------------------------------------------------------

def test_make_batches_sizes_and_order():
    ts, audio = synth_dataset(25, 320, seed=0)
    batches = make_batches(ts, audio, 16, shuffle_seed=5)
    assert [len(y) for _, y in batches] == [16, 16, 16, 2]
    assert batches[0][0].shape == (16, 1, 320) and batches[0][0].dtype == np.float32
    again = make_batches(ts, audio, 16, shuffle_seed=5)
    for (w1, y1), (w2, y2) in zip(batches, again):
        assert np.array_equal(w1, w2) and np.array_equal(y1, y2)
    plain = make_batches(ts, audio, 16)
    np.testing.assert_array_equal(np.concatenate([y for _, y in plain]), ts.labels)


def test_batch_shape_full_scale():
    ts, audio = synth_dataset(8, 128000, seed=0)
    w, _ = make_batches(ts, audio, 16)[0]
    assert w.shape == (16, 1, 128000)
