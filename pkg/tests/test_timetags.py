import numpy as np
import pytest

from afcsim.timetags import (CHANNEL_IDLER, CHANNEL_SIGNAL, TimeTagStream,
                             from_unsorted, read_any, read_binary, read_csv,
                             write_binary, write_csv)


def sample_streams():
    rng = np.random.default_rng(5)
    a = from_unsorted(CHANNEL_IDLER, rng.integers(0, 10**9, 500))
    b = from_unsorted(CHANNEL_SIGNAL, rng.integers(0, 10**9, 800))
    return [a, b]


class TestStreamType:
    def test_strictly_increasing_enforced(self):
        with pytest.raises(ValueError):
            TimeTagStream(0, np.array([10, 10, 20]))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            TimeTagStream(0, np.array([-5, 10]))

    def test_from_unsorted_resolves_collisions(self):
        s = from_unsorted(0, np.array([30, 10, 10, 10, 20]))
        assert len(s) == 5
        assert np.all(np.diff(s.timestamps_ps) > 0)

    def test_rate(self):
        s = TimeTagStream(0, np.arange(1000, dtype=np.int64) * 10**9)
        assert s.rate_hz(1.0) == 1000


class TestBinaryFormat:
    def test_round_trip(self, tmp_path):
        streams = sample_streams()
        path = tmp_path / "tags.bin"
        write_binary(path, streams, seed=777)
        back, seed = read_binary(path)
        assert seed == 777
        for s in streams:
            assert np.array_equal(back[s.channel].timestamps_ps, s.timestamps_ps)

    def test_header_and_record_layout(self, tmp_path):
        path = tmp_path / "tags.bin"
        write_binary(path, [TimeTagStream(3, np.array([2**40], dtype=np.int64))], seed=1)
        raw = path.read_bytes()
        header, _, payload = raw.partition(b"\n")
        assert header == b"afcsim-timetags 1 seed=1"
        assert len(payload) == 9  # 1-byte channel + 8-byte little-endian stamp
        assert payload[0] == 3
        assert int.from_bytes(payload[1:], "little") == 2**40

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"something else\n123")
        with pytest.raises(ValueError):
            read_binary(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "tags.bin"
        write_binary(path, sample_streams(), seed=2)
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(ValueError):
            read_binary(path)


class TestCsvFormat:
    def test_round_trip(self, tmp_path):
        streams = sample_streams()
        path = tmp_path / "tags.csv"
        write_csv(path, streams, seed=99)
        back, seed = read_csv(path)
        assert seed == 99
        for s in streams:
            assert np.array_equal(back[s.channel].timestamps_ps, s.timestamps_ps)

    def test_header_line(self, tmp_path):
        path = tmp_path / "tags.csv"
        write_csv(path, sample_streams(), seed=4)
        first, second = path.read_text().splitlines()[:2]
        assert first == "# afcsim-timetags-csv 1 seed=4"
        assert second == "channel,timestamp_ps"


class TestReadAny:
    def test_dispatch(self, tmp_path):
        streams = sample_streams()
        bin_path, csv_path = tmp_path / "t.bin", tmp_path / "t.csv"
        write_binary(bin_path, streams, seed=6)
        write_csv(csv_path, streams, seed=6)
        for path in (bin_path, csv_path):
            back, seed = read_any(path)
            assert seed == 6
            assert set(back) == {CHANNEL_IDLER, CHANNEL_SIGNAL}
