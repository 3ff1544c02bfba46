import numpy as np
import pytest

from ecgaug.ingest import (
    AnnotationStream, ParseError, decode_212, decode_signals_212, discover_records, encode_212,
    encode_annotations, load_csv_beats, load_record, map_symbols, parse_annotations, parse_header,
)
from ecgaug.beat import BeatFormatError

HEADER_212 = """100 2 360 650000 0:0:0 0/0/0
100.dat 212 200 11 1024 995 -22131 0 MLII
100.dat 212 200 11 1024 1011 20052 0 V5
# Age: 69 Sex: M
"""


def test_parse_header_two_channels():
    h = parse_header(HEADER_212)
    assert h.n_signals == 2 and h.sampling_rate == 360 and h.n_samples == 650000
    assert [c.gain for c in h.channels] == [200.0, 200.0]
    assert [c.baseline for c in h.channels] == [1024, 1024]
    assert h.channels[0].description == "MLII"


def test_parse_header_explicit_baseline_and_units():
    h = parse_header("r 1 360 10\nr.dat 212 100(-5)/uV 11 7 0 0 0 lead\n")
    assert h.channels[0].gain == 100.0 and h.channels[0].baseline == -5 and h.channels[0].units == "uV"


def test_parse_header_zero_samples():
    assert parse_header("r 2 360 0\nr.dat 212 200 11 0\nr.dat 212 200 11 0\n").n_samples == 0


def test_parse_header_rejects_format_16():
    with pytest.raises(ParseError, match="line 2: unsupported signal format 16"):
        parse_header("r 1 360 10\nr.dat 16 200 16 0\n")


def test_parse_header_channel_count_mismatch():
    with pytest.raises(ParseError, match="declares 2 signals"):
        parse_header("r 2 360 10\nr.dat 212 200 11 0\n")


@pytest.mark.parametrize("raw,expected", [
    (bytes([0x01, 0x00, 0x00]), (1, 0)),
    (bytes([0x00, 0x00, 0x00]), (0, 0)),
    (bytes([0xFF, 0x0F, 0x00]), (-1, 0)),
    (bytes([0x00, 0xF0, 0xFF]), (0, -1)),
    (bytes([0xFF, 0x77, 0xFF]), (2047, 2047)),
    (bytes([0x00, 0x88, 0x00]), (-2048, -2048)),
])
def test_decode_212_bit_layout(raw, expected):
    s1, s2 = decode_212(raw)
    assert (int(s1[0]), int(s2[0])) == expected


def test_decode_212_truncated():
    with pytest.raises(ParseError, match="byte offset 3"):
        decode_212(bytes(5))


def test_212_roundtrip_exhaustive():
    values = np.arange(-2048, 2048)
    for chunk in np.array_split(values, 16):
        s1 = np.repeat(chunk, 4096)
        s2 = np.tile(values, len(chunk))
        d1, d2 = decode_212(encode_212(s1, s2))
        assert np.array_equal(d1, s1) and np.array_equal(d2, s2)


def test_annotation_single_beat():
    raw = np.array([(1 << 10) | 5, 0], dtype="<u2").tobytes()
    assert list(parse_annotations(raw)) == [(5, "N")]


def test_annotation_eof_only():
    assert len(parse_annotations(bytes(2))) == 0


def test_annotation_skip_then_beat():
    long_delta = 100_000
    words = [59 << 10, long_delta >> 16, long_delta & 0xFFFF, (1 << 10) | 7, 0]
    assert list(parse_annotations(np.array(words, dtype="<u2").tobytes())) == [(long_delta + 7, "N")]


def test_annotation_pseudo_words_and_aux_consumed():
    aux = b"(AFIB"  # odd length -> padded
    words = [(1 << 10) | 10, (60 << 10) | 3, (61 << 10) | 1, (62 << 10) | 0, (63 << 10) | len(aux)]
    raw = np.array(words, dtype="<u2").tobytes() + aux + b"\x00"
    raw += np.array([(28 << 10) | 0, (12 << 10) | 20, 0], dtype="<u2").tobytes()
    stream = parse_annotations(raw)
    assert list(stream) == [(10, "N"), (30, "/")]
    assert list(parse_annotations(raw, beats_only=False)) == [(10, "N"), (10, "+"), (30, "/")]


def test_annotation_missing_eof():
    with pytest.raises(ParseError, match="EOF"):
        parse_annotations(np.array([(1 << 10) | 5], dtype="<u2").tobytes())


def test_annotation_negative_time():
    words = [59 << 10, 0xFFFF, 0xFFF0, (1 << 10) | 1, 0]
    with pytest.raises(ParseError, match="negative"):
        parse_annotations(np.array(words, dtype="<u2").tobytes())


def test_annotation_writer_roundtrip():
    pairs = [(3, "N"), (400, "/"), (5000, "j"), (70000, "A"), (70001, "f")]
    assert list(parse_annotations(encode_annotations(pairs))) == pairs


def test_map_symbols():
    stream = AnnotationStream.from_pairs([(10, "/"), (20, "N"), (30, "V")])
    assert list(map_symbols(stream, "PALNRfj")) == [(10, "P"), (20, "N")]
    assert len(map_symbols(stream, [])) == 0
    assert list(map_symbols(AnnotationStream.from_pairs([(5, "j")]), "PALNRfj")) == [(5, "j")]


def _write_record(tmp_path, name="900", n=3600):
    rng = np.random.default_rng(0)
    ch0 = (np.round(300 * np.sin(np.arange(n) / 20)) + rng.integers(-5, 5, n)).astype(int)
    ch1 = rng.integers(-2048, 2047, n)
    (tmp_path / f"{name}.hea").write_text(
        f"{name} 2 360 {n}\n{name}.dat 212 200 11 1024 0 0 0 MLII\n{name}.dat 212 200 11 1024 0 0 0 V1\n"
    )
    (tmp_path / f"{name}.dat").write_bytes(encode_212(ch0, ch1))
    pairs = [(300, "N"), (700, "/"), (1100, "+"), (1150, "N"), (1600, "j"), (2100, "f"), (2500, "V")]
    ann = encode_annotations([p for p in pairs if p[1] != "+"])
    (tmp_path / f"{name}.atr").write_bytes(ann)
    return ch0, ch1


def test_load_record(tmp_path):
    ch0, ch1 = _write_record(tmp_path)
    record, stream = load_record(tmp_path, "900")
    assert record.sampling_rate == 360 and record.n_samples == 3600
    np.testing.assert_array_equal(record.samples[0], ch0)
    np.testing.assert_array_equal(record.samples[1], ch1)
    np.testing.assert_allclose(record.physical(0), (ch0 - 1024) / 200)
    assert np.all(np.diff(stream.samples) > 0)
    assert discover_records(tmp_path) == ["900"]


def test_decode_signals_short_file():
    with pytest.raises(ParseError):
        decode_signals_212(bytes(3), 2, 10)


def test_csv_beats(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("N," + ",".join(["0.0"] * 256) + "\n")
    beats = load_csv_beats(p)
    assert len(beats) == 1 and beats[0].label == "N" and beats[0].provenance == "real"
    assert not beats[0].samples.any()
    p.write_text("")
    assert load_csv_beats(p) == []
    p.write_text("N," + ",".join(["0.0"] * 256) + "\nA," + ",".join(["1"] * 255) + "\n")
    with pytest.raises(BeatFormatError, match="row 2"):
        load_csv_beats(p)
    p.write_text("N," + ",".join(["x"] * 256) + "\n")
    with pytest.raises(BeatFormatError, match="row 1: non-numeric"):
        load_csv_beats(p)
