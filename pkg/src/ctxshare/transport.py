"""Wire formats, lossy window compression, and byte accounting.

Messages are in-process values by default; the byte encoding exists for
communication accounting and golden-file stability. The layout (documented
field by field in docs/wire-format.md) is little-endian with a 4-byte plain
header, varint-packed integers, 32-bit floats for rewards and features, and a
zlib-deflated body.

The lossy path models each numeric channel of an observation window with a
natural cubic spline through every R-th sample (R is the compression degree),
so a window of K observations needs O(K/R) stored knots per channel. Action
codes are categorical and always travel verbatim.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .context import ContextFeatureVector
from .errors import CorruptSeriesError
from .experience import LocalAction, LocalState, N_LOAD_BUCKETS, Observation

MAGIC = b"CX"
WIRE_VERSION = 1
CLASS_REPORT = 1
CLASS_SHARE = 2
HEADER_SIZE = 4
ZLIB_LEVEL = 6

MODE_RAW = "raw"
MODE_LOSSY = "lossy"

_CHANNEL_BUCKET = 0
_CHANNEL_FLOAT = 1


# ---------------------------------------------------------------- messages

@dataclass
class ReportMessage:
    agent_id: int
    window_index: int
    neighbor_count: int
    observations: list                      # Observation
    feature_vectors: Optional[list] = None  # ContextFeatureVector; None means
                                            # the supervisor computes features itself


class Channel(NamedTuple):
    kind: int               # _CHANNEL_BUCKET or _CHANNEL_FLOAT
    knot_times: tuple
    knot_values: tuple


@dataclass
class CompressedSeries:
    neighbor_count: int
    timestamps: tuple        # step of every represented observation
    action_codes: tuple      # verbatim, one per observation
    channels: list           # Channel, fixed order: s.own, s.nbrs, s'.own, s'.nbrs, reward
    degree: int
    degenerate: bool = False

    @property
    def knot_counts(self) -> list:
        return [len(c.knot_times) for c in self.channels]


@dataclass
class ShareMessage:
    recipient: int
    window_index: int
    mode: str                # MODE_RAW or MODE_LOSSY
    payloads: dict           # donor agent id -> list[Observation] or CompressedSeries


# ---------------------------------------------------------------- varint io

def _w_uvarint(buf: bytearray, v: int) -> None:
    while True:
        b = v & 0x7F
        v >>= 7
        if v:
            buf.append(b | 0x80)
        else:
            buf.append(b)
            return


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def uvarint(self) -> int:
        shift = 0
        out = 0
        while True:
            if self.pos >= len(self.data):
                raise CorruptSeriesError("truncated varint")
            b = self.data[self.pos]
            self.pos += 1
            out |= (b & 0x7F) << shift
            if not b & 0x80:
                return out
            shift += 7

    def byte(self) -> int:
        b = self.data[self.pos]
        self.pos += 1
        return b

    def f32_block(self, count: int) -> np.ndarray:
        end = self.pos + 4 * count
        arr = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.pos)
        self.pos = end
        return arr


# ---------------------------------------------------------------- obs codec

def _write_observations(buf: bytearray, observations: Sequence[Observation]) -> None:
    prev_t = 0
    for obs in observations:
        _w_uvarint(buf, obs.step - prev_t)
        prev_t = obs.step
        _w_uvarint(buf, obs.state.own_bucket)
        for b in obs.state.neighbor_buckets:
            _w_uvarint(buf, b)
        _w_uvarint(buf, obs.action.code)
        _w_uvarint(buf, obs.next_state.own_bucket)
        for b in obs.next_state.neighbor_buckets:
            _w_uvarint(buf, b)
    rewards = np.array([obs.reward for obs in observations], dtype="<f4")
    buf.extend(rewards.tobytes())


def _read_observations(r: _Reader, n_obs: int, nc: int) -> list:
    records = []
    t = 0
    for _ in range(n_obs):
        t += r.uvarint()
        own = r.uvarint()
        nbrs = tuple(r.uvarint() for _ in range(nc))
        code = r.uvarint()
        own2 = r.uvarint()
        nbrs2 = tuple(r.uvarint() for _ in range(nc))
        records.append((t, LocalState(own, nbrs), LocalAction(code), LocalState(own2, nbrs2)))
    rewards = r.f32_block(n_obs)
    return [
        Observation(s, a, s2, float(rw), t)
        for (t, s, a, s2), rw in zip(records, rewards)
    ]


# ---------------------------------------------------------------- encode

def _report_body(msg: ReportMessage) -> bytearray:
    buf = bytearray()
    _w_uvarint(buf, msg.agent_id)
    _w_uvarint(buf, msg.window_index)
    _w_uvarint(buf, msg.neighbor_count)
    buf.append(1 if msg.feature_vectors is not None else 0)
    _w_uvarint(buf, len(msg.observations))
    _write_observations(buf, msg.observations)
    if msg.feature_vectors is not None:
        _w_uvarint(buf, len(msg.feature_vectors))
        prev_t = 0
        for f in msg.feature_vectors:
            _w_uvarint(buf, f.step - prev_t)
            prev_t = f.step
        flat = np.array(
            [f.as_tuple() for f in msg.feature_vectors], dtype="<f4"
        ) if msg.feature_vectors else np.empty((0,), dtype="<f4")
        buf.extend(flat.tobytes())
    return buf


def _series_body(buf: bytearray, series: CompressedSeries) -> None:
    _w_uvarint(buf, series.neighbor_count)
    _w_uvarint(buf, len(series.timestamps))
    _w_uvarint(buf, series.degree)
    buf.append(1 if series.degenerate else 0)
    prev = 0
    for t in series.timestamps:
        _w_uvarint(buf, t - prev)
        prev = t
    for code in series.action_codes:
        _w_uvarint(buf, code)
    _w_uvarint(buf, len(series.channels))
    for ch in series.channels:
        buf.append(ch.kind)
        _w_uvarint(buf, len(ch.knot_times))
        prev = 0
        for t in ch.knot_times:
            _w_uvarint(buf, t - prev)
            prev = t
        if ch.kind == _CHANNEL_BUCKET:
            for v in ch.knot_values:
                _w_uvarint(buf, int(v))
        else:
            buf.extend(np.array(ch.knot_values, dtype="<f4").tobytes())


def _share_body(msg: ShareMessage) -> bytearray:
    buf = bytearray()
    _w_uvarint(buf, msg.recipient)
    _w_uvarint(buf, msg.window_index)
    buf.append(0 if msg.mode == MODE_RAW else 1)
    _w_uvarint(buf, len(msg.payloads))
    for donor in sorted(msg.payloads):
        payload = msg.payloads[donor]
        _w_uvarint(buf, donor)
        if msg.mode == MODE_RAW:
            nc = len(payload[0].state.neighbor_buckets) if payload else 0
            _w_uvarint(buf, nc)
            _w_uvarint(buf, len(payload))
            _write_observations(buf, payload)
        else:
            _series_body(buf, payload)
    return buf


def encode_lossless(msg: Union[ReportMessage, ShareMessage]) -> bytes:
    """Wire-encode a message: plain 4-byte header + deflated canonical body."""
    if isinstance(msg, ReportMessage):
        klass, body = CLASS_REPORT, _report_body(msg)
    elif isinstance(msg, ShareMessage):
        klass, body = CLASS_SHARE, _share_body(msg)
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    header = MAGIC + bytes((WIRE_VERSION, klass))
    return header + zlib.compress(bytes(body), ZLIB_LEVEL)


def decode_message(data: bytes) -> Union[ReportMessage, ShareMessage]:
    if len(data) < HEADER_SIZE or data[:2] != MAGIC:
        raise CorruptSeriesError("bad magic")
    if data[2] != WIRE_VERSION:
        raise CorruptSeriesError(f"unsupported wire version {data[2]}")
    klass = data[3]
    try:
        body = zlib.decompress(data[HEADER_SIZE:])
    except zlib.error as exc:
        raise CorruptSeriesError(f"body does not inflate: {exc}") from exc
    r = _Reader(body)
    if klass == CLASS_REPORT:
        agent = r.uvarint()
        window = r.uvarint()
        nc = r.uvarint()
        has_features = r.byte()
        n_obs = r.uvarint()
        obs = _read_observations(r, n_obs, nc)
        features = None
        if has_features:
            n_feat = r.uvarint()
            steps = []
            t = 0
            for _ in range(n_feat):
                t += r.uvarint()
                steps.append(t)
            d = 1 + 2 * nc
            flat = r.f32_block(n_feat * d).reshape(n_feat, d) if n_feat else np.empty((0, d))
            features = [
                ContextFeatureVector(
                    rel_load=float(row[0]),
                    neighbor_env_rates=tuple(float(x) for x in row[1 : 1 + nc]),
                    neighbor_agent_rates=tuple(float(x) for x in row[1 + nc :]),
                    step=steps[i],
                )
                for i, row in enumerate(flat)
            ]
        return ReportMessage(agent, window, nc, obs, features)
    if klass == CLASS_SHARE:
        recipient = r.uvarint()
        window = r.uvarint()
        mode = MODE_RAW if r.byte() == 0 else MODE_LOSSY
        n_donors = r.uvarint()
        payloads = {}
        for _ in range(n_donors):
            donor = r.uvarint()
            if mode == MODE_RAW:
                nc = r.uvarint()
                n_obs = r.uvarint()
                payloads[donor] = _read_observations(r, n_obs, nc)
            else:
                payloads[donor] = _read_series(r)
        return ShareMessage(recipient, window, mode, payloads)
    raise CorruptSeriesError(f"unknown message class {klass}")


def _read_series(r: _Reader) -> CompressedSeries:
    nc = r.uvarint()
    k = r.uvarint()
    degree = r.uvarint()
    degenerate = bool(r.byte())
    times = []
    t = 0
    for _ in range(k):
        t += r.uvarint()
        times.append(t)
    codes = tuple(r.uvarint() for _ in range(k))
    n_channels = r.uvarint()
    channels = []
    for _ in range(n_channels):
        kind = r.byte()
        n_knots = r.uvarint()
        kt = []
        t = 0
        for _ in range(n_knots):
            t += r.uvarint()
            kt.append(t)
        if kind == _CHANNEL_BUCKET:
            kv = tuple(r.uvarint() for _ in range(n_knots))
        else:
            kv = tuple(float(x) for x in r.f32_block(n_knots))
        channels.append(Channel(kind, tuple(kt), kv))
    return CompressedSeries(nc, tuple(times), codes, channels, degree, degenerate)


# ---------------------------------------------------------------- lossy model

def _channel_series(observations: Sequence[Observation], nc: int) -> list:
    """(kind, values) per channel in the fixed channel order."""
    chans = [(_CHANNEL_BUCKET, [o.state.own_bucket for o in observations])]
    for j in range(nc):
        chans.append((_CHANNEL_BUCKET, [o.state.neighbor_buckets[j] for o in observations]))
    chans.append((_CHANNEL_BUCKET, [o.next_state.own_bucket for o in observations]))
    for j in range(nc):
        chans.append((_CHANNEL_BUCKET, [o.next_state.neighbor_buckets[j] for o in observations]))
    chans.append((_CHANNEL_FLOAT, [o.reward for o in observations]))
    return chans


def compress_lossy(observations: Sequence[Observation], degree: int) -> CompressedSeries:
    """Model a window of observations at compression degree R = ``degree``.

    Every R-th sample (plus the first and last) becomes a knot of a natural
    cubic spline per numeric channel. Constant channels collapse to two
    knots. R >= window length falls back to a flagged 2-knot linear fit.
    """
    if degree < 1:
        raise ValueError(f"compression degree must be >= 1, got {degree}")
    if not observations:
        raise ValueError("cannot compress an empty window")
    nc = len(observations[0].state.neighbor_buckets)
    k = len(observations)
    times = tuple(o.step for o in observations)
    codes = tuple(o.action.code for o in observations)

    degenerate = degree >= k and k > 1
    if degenerate or k == 1:
        idx = [0, k - 1] if k > 1 else [0]
    else:
        idx = list(range(0, k, degree))
        if idx[-1] != k - 1:
            idx.append(k - 1)

    channels = []
    for kind, values in _channel_series(observations, nc):
        lo, hi = min(values), max(values)
        if lo == hi:
            knot_idx = [0, k - 1] if k > 1 else [0]
        else:
            knot_idx = idx
        channels.append(
            Channel(
                kind,
                tuple(times[i] for i in knot_idx),
                tuple(values[i] for i in knot_idx),
            )
        )
    return CompressedSeries(nc, times, codes, channels, degree, degenerate)


def _evaluate_channel(ch: Channel, times: Sequence[int]) -> np.ndarray:
    xs = np.asarray(ch.knot_times, dtype=np.float64)
    ys = np.asarray(ch.knot_values, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    if len(xs) == 1:
        return np.full(len(t), ys[0])
    if len(xs) == 2:
        return np.interp(t, xs, ys)
    from scipy.interpolate import CubicSpline

    return CubicSpline(xs, ys, bc_type="natural")(t)


def decompress_lossy(series: CompressedSeries, k: Optional[int] = None) -> list:
    """Rebuild observations from a compressed series.

    Numeric channels are evaluated at the original observation timestamps;
    discrete state channels are quantized to the nearest valid bucket; action
    codes come back verbatim.
    """
    n = len(series.timestamps)
    if k is not None and n != k:
        raise CorruptSeriesError(f"series holds {n} observations, expected {k}")
    if len(series.action_codes) != n:
        raise CorruptSeriesError("action list length does not match timestamps")
    nc = series.neighbor_count
    expected_channels = 2 * (1 + nc) + 1
    if len(series.channels) != expected_channels:
        raise CorruptSeriesError(
            f"expected {expected_channels} channels for {nc} neighbors, got {len(series.channels)}"
        )
    for ch in series.channels:
        if len(ch.knot_times) != len(ch.knot_values) or len(ch.knot_times) == 0:
            raise CorruptSeriesError("malformed channel knots")

    values = []
    for ch in series.channels:
        v = _evaluate_channel(ch, series.timestamps)
        if ch.kind == _CHANNEL_BUCKET:
            v = np.clip(np.rint(v), 0, N_LOAD_BUCKETS - 1).astype(np.int64)
        values.append(v)

    out = []
    for i in range(n):
        own = int(values[0][i])
        nbrs = tuple(int(values[1 + j][i]) for j in range(nc))
        own2 = int(values[1 + nc][i])
        nbrs2 = tuple(int(values[2 + nc + j][i]) for j in range(nc))
        reward = float(np.float32(values[-1][i]))
        out.append(
            Observation(
                LocalState(own, nbrs),
                LocalAction(series.action_codes[i]),
                LocalState(own2, nbrs2),
                reward,
                series.timestamps[i],
            )
        )
    return out


# ---------------------------------------------------------------- ledger

@dataclass
class CommLedger:
    """Single-writer append log of every message sent during a run."""

    records: list = field(default_factory=list)  # (step, supervisor, class, bytes, mode)

    def add(self, step: int, supervisor_id: int, message_class: str, nbytes: int, mode: str) -> None:
        self.records.append((step, supervisor_id, message_class, nbytes, mode))

    def total_bytes(self) -> int:
        return sum(r[3] for r in self.records)

    def bytes_by(self, key_index: int) -> dict:
        out: dict = {}
        for r in self.records:
            out[r[key_index]] = out.get(r[key_index], 0) + r[3]
        return out

    def by_class(self) -> dict:
        return self.bytes_by(2)

    def by_mode(self) -> dict:
        return self.bytes_by(4)

    def by_supervisor(self) -> dict:
        return self.bytes_by(1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "supervisor_id", "message_class", "bytes", "compression_mode"])
            writer.writerows(self.records)


def ledger_report(ledger: CommLedger, steps: int, subordinates: int) -> dict:
    """Run-level communication summary: totals and per-step-per-subordinate cost."""
    total = ledger.total_bytes()
    denom = max(steps, 1) * max(subordinates, 1)
    return {
        "total_bytes": total,
        "by_class": ledger.by_class(),
        "by_mode": ledger.by_mode(),
        "by_supervisor": ledger.by_supervisor(),
        "bytes_per_step_per_subordinate": total / denom if subordinates else 0.0,
        "steps": steps,
        "subordinates": subordinates,
    }
