"""Time-tagged detection events and their on-disk formats.

A stream is one detector channel's sorted timestamps in integer picoseconds.
Files interleave all channels in time order.  Two formats are supported:

* binary: one ASCII header line ``afcsim-timetags 1 seed=<seed>``, then
  packed records of (channel: 1 byte, timestamp_ps: 8-byte little-endian
  unsigned);
* csv: comment header ``# afcsim-timetags-csv 1 seed=<seed>``, a column
  header ``channel,timestamp_ps`` and one row per event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BINARY_MAGIC = "afcsim-timetags"
CSV_MAGIC = "afcsim-timetags-csv"
SCHEMA_VERSION = 1

CHANNEL_IDLER = 0
CHANNEL_SIGNAL = 1
CHANNEL_SIGNAL_B = 2

_RECORD_DTYPE = np.dtype([("channel", "u1"), ("timestamp_ps", "<u8")])


@dataclass(frozen=True)
class TimeTagStream:
    """Sorted detection timestamps (ps) of one channel."""

    channel: int
    timestamps_ps: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps_ps, dtype=np.int64)
        if ts.ndim != 1:
            raise ValueError("timestamps must be a 1-D array")
        if ts.size and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if ts.size and ts[0] < 0:
            raise ValueError("timestamps must be non-negative")
        object.__setattr__(self, "timestamps_ps", ts)

    def __len__(self) -> int:
        return int(self.timestamps_ps.size)

    def duration_ps(self) -> int:
        return int(self.timestamps_ps[-1] - self.timestamps_ps[0]) if len(self) else 0

    def rate_hz(self, duration_s: float) -> float:
        return len(self) / duration_s if duration_s > 0 else 0.0


def from_unsorted(channel: int, times_ps: np.ndarray) -> TimeTagStream:
    """Sort and deduplicate raw event times into a valid stream.

    Simultaneous events on one channel cannot be represented (strictly
    increasing invariant); colliding timestamps are nudged forward by 1 ps.
    """
    ts = np.sort(np.asarray(times_ps, dtype=np.int64))
    if ts.size:
        # resolve collisions by pushing duplicates forward
        for _ in range(64):
            dup = np.flatnonzero(np.diff(ts) <= 0)
            if dup.size == 0:
                break
            ts[dup + 1] = ts[dup] + 1
        ts = np.sort(ts)
    return TimeTagStream(channel, ts)


def _interleave(streams: list[TimeTagStream]) -> np.ndarray:
    records = np.empty(sum(len(s) for s in streams), dtype=_RECORD_DTYPE)
    pos = 0
    for s in streams:
        records["channel"][pos:pos + len(s)] = s.channel
        records["timestamp_ps"][pos:pos + len(s)] = s.timestamps_ps.astype(np.uint64)
        pos += len(s)
    order = np.argsort(records["timestamp_ps"], kind="stable")
    return records[order]


def write_binary(path, streams: list[TimeTagStream], seed: int):
    records = _interleave(streams)
    with open(path, "wb") as fh:
        fh.write(f"{BINARY_MAGIC} {SCHEMA_VERSION} seed={seed}\n".encode("ascii"))
        fh.write(records.tobytes())


def read_binary(path) -> tuple[dict[int, TimeTagStream], int]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    fields = header.split()
    if len(fields) != 3 or fields[0] != BINARY_MAGIC:
        raise ValueError(f"not a {BINARY_MAGIC} file: header {header!r}")
    if int(fields[1]) != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {fields[1]}")
    seed = int(fields[2].split("=", 1)[1])
    if len(payload) % _RECORD_DTYPE.itemsize:
        raise ValueError("truncated record payload")
    records = np.frombuffer(payload, dtype=_RECORD_DTYPE)
    return _split_records(records), seed


def write_csv(path, streams: list[TimeTagStream], seed: int):
    records = _interleave(streams)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_MAGIC} {SCHEMA_VERSION} seed={seed}\n")
        fh.write("channel,timestamp_ps\n")
        for channel, ts in records:
            fh.write(f"{channel},{ts}\n")


def read_csv(path) -> tuple[dict[int, TimeTagStream], int]:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("missing schema header line")
        fields = header.lstrip("# ").split()
        if fields[0] != CSV_MAGIC:
            raise ValueError(f"not a {CSV_MAGIC} file")
        if int(fields[1]) != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {fields[1]}")
        seed = int(fields[2].split("=", 1)[1])
        column_line = fh.readline().strip()
        if column_line != "channel,timestamp_ps":
            raise ValueError("unexpected CSV columns")
        data = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    records = np.empty(data.shape[0], dtype=_RECORD_DTYPE)
    if data.size:
        records["channel"] = data[:, 0]
        records["timestamp_ps"] = data[:, 1]
    return _split_records(records), seed


def read_any(path) -> tuple[dict[int, TimeTagStream], int]:
    """Dispatch on the header to read either format."""
    with open(path, "rb") as fh:
        first = fh.readline()
    if first.startswith(b"#"):
        return read_csv(path)
    return read_binary(path)


def _split_records(records: np.ndarray) -> dict[int, TimeTagStream]:
    streams = {}
    for channel in np.unique(records["channel"]):
        ts = records["timestamp_ps"][records["channel"] == channel].astype(np.int64)
        streams[int(channel)] = from_unsorted(int(channel), ts)
    return streams
