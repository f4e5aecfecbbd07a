"""Discretization tables mapping continuous pose/size components to bin indices.

Rotation and image-location tokens use uniform bins over their fixed domains
([-pi, pi) and [0, 1)). Translation and size tokens use equal-frequency
(quantile) bins fitted to data, so bin width shrinks where samples are dense
and every token is used with approximately equal frequency.

Out-of-range values clamp to the boundary bins instead of erroring: robot
workspaces occasionally exceed the fitted support and the token stream must
stay well-formed. Dequantization returns the bin midpoint, reproducible from
the table alone.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptTable,
    FormatVersionMismatch,
    IndexOutOfRange,
    InvalidRange,
    IoFailure,
    NonFiniteSample,
    NonPositiveSize,
    TooFewSamples,
)
from .geometry import EulerAngles, Se3Pose, euler_to_quat, quat_to_euler, wrap_angle

FAMILIES = ("rot", "trans_xy", "trans_z", "size", "loc")
MODES = ("uniform", "quantile")
DEFAULT_N_BINS = 1024
FORMAT_VERSION = "posekit-bins/1"
_MAGIC = b"PKB1"

# Jitter used to re-spread collapsed quantile edges; relative to edge magnitude.
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class BinTable:
    """Sorted bin edges for one token family.

    edges has n_bins + 1 strictly increasing float64 entries; value x falls in
    bin i when edges[i] <= x < edges[i+1].
    """

    family: str
    mode: str
    edges: np.ndarray

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        edges = np.array(self.edges, dtype=np.float64).reshape(-1)
        if edges.size < 2:
            raise ValueError("a table needs at least one bin (two edges)")
        if not np.all(np.isfinite(edges)):
            raise ValueError("edges must be finite")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("edges must be strictly increasing")
        if self.mode == "uniform":
            widths = np.diff(edges)
            mean = widths.mean()
            if np.max(np.abs(widths - mean)) > 1e-9 * abs(mean):
                raise ValueError("uniform table has unequal bin widths")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])


def uniform_bins(lo: float, hi: float, n_bins: int, family: str = "rot") -> BinTable:
    """Equal-width table with edges lo + k * (hi - lo) / n_bins."""
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
        raise InvalidRange(f"need lo < hi, got [{lo}, {hi}]")
    if n_bins < 1:
        raise InvalidRange(f"n_bins must be positive, got {n_bins}")
    k = np.arange(n_bins + 1, dtype=np.float64)
    edges = lo + k * ((hi - lo) / n_bins)
    # Guard against rounding on the last edge so hi is hit exactly.
    edges[-1] = hi
    return BinTable(family=family, mode="uniform", edges=edges)


def fit_quantile_bins(samples, n_bins: int, family: str = "trans_xy") -> BinTable:
    """Equal-frequency table: edges at empirical quantiles k / n_bins.

    Quantiles interpolate linearly between order statistics. Ties can collapse
    neighboring edges; collapsed runs are re-spread by a relative 1e-12 jitter
    so the edges stay strictly monotone (a hard invariant for binary search).

    Raises:
        TooFewSamples: fewer samples than bins.
        NonFiniteSample: NaN or infinity in the input.
    """
    if n_bins < 1:
        raise InvalidRange(f"n_bins must be positive, got {n_bins}")
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size and not np.all(np.isfinite(x)):
        raise NonFiniteSample("samples contain NaN or infinity")
    if x.size < n_bins:
        raise TooFewSamples(f"{x.size} samples for {n_bins} bins")
    qs = np.linspace(0.0, 1.0, n_bins + 1)
    edges = np.quantile(x, qs, method="linear")
    for i in range(1, edges.size):
        if edges[i] <= edges[i - 1]:
            edges[i] = edges[i - 1] + _TIE_EPS * max(1.0, abs(edges[i - 1]))
    return BinTable(family=family, mode="quantile", edges=edges)


def encode_value(t: BinTable, x: float) -> int:
    """Bin index i with edges[i] <= x < edges[i+1]; out-of-range values clamp."""
    if not math.isfinite(x):
        raise NonFiniteSample(f"cannot encode {x!r}")
    i = int(np.searchsorted(t.edges, x, side="right")) - 1
    return min(max(i, 0), t.n_bins - 1)


def encode_array(t: BinTable, xs) -> np.ndarray:
    """Vectorized encode_value over an array of finite values."""
    xs = np.asarray(xs, dtype=np.float64)
    if not np.all(np.isfinite(xs)):
        raise NonFiniteSample("array contains NaN or infinity")
    idx = np.searchsorted(t.edges, xs, side="right") - 1
    return np.clip(idx, 0, t.n_bins - 1)


def decode_value(t: BinTable, i: int) -> float:
    """Midpoint of bin i."""
    if not 0 <= i < t.n_bins:
        raise IndexOutOfRange(f"index {i} outside [0, {t.n_bins})")
    return float((t.edges[i] + t.edges[i + 1]) / 2.0)


@dataclass(frozen=True)
class QuantizerSet:
    """The five tables backing the extended token vocabulary."""

    rot: BinTable
    trans_xy: BinTable
    trans_z: BinTable
    size: BinTable
    loc: BinTable
    version: str = FORMAT_VERSION

    def __post_init__(self):
        for slot in FAMILIES:
            table = getattr(self, slot)
            if table.family != slot:
                raise ValueError(f"slot {slot!r} holds a {table.family!r} table")

    @staticmethod
    def fit(
        trans_xy_samples,
        trans_z_samples,
        size_samples,
        n_bins: int = DEFAULT_N_BINS,
    ) -> "QuantizerSet":
        """Fit the quantile families; rot and loc are always uniform."""
        return QuantizerSet(
            rot=uniform_bins(-math.pi, math.pi, n_bins, family="rot"),
            trans_xy=fit_quantile_bins(trans_xy_samples, n_bins, family="trans_xy"),
            trans_z=fit_quantile_bins(trans_z_samples, n_bins, family="trans_z"),
            size=fit_quantile_bins(size_samples, n_bins, family="size"),
            loc=uniform_bins(0.0, 1.0, n_bins, family="loc"),
        )

    def tables(self) -> dict:
        return {slot: getattr(self, slot) for slot in FAMILIES}


def encode_pose(q: QuantizerSet, p: Se3Pose) -> tuple:
    """Six indices (txy_x, txy_y, tz, rot_r, rot_p, rot_y) for one pose.

    x and y share the trans_xy table, z uses trans_z, and the three intrinsic
    Z-Y-X angles share the rot table. Angles are wrapped to [-pi, pi) first.
    """
    tx, ty, tz = (float(v) for v in p.translation)
    e = quat_to_euler(p.rotation)
    return (
        encode_value(q.trans_xy, tx),
        encode_value(q.trans_xy, ty),
        encode_value(q.trans_z, tz),
        encode_value(q.rot, wrap_angle(e.roll)),
        encode_value(q.rot, wrap_angle(e.pitch)),
        encode_value(q.rot, wrap_angle(e.yaw)),
    )


def decode_pose(q: QuantizerSet, indices) -> Se3Pose:
    """Inverse of encode_pose up to bin midpoints."""
    txy_x, txy_y, tz, rot_r, rot_p, rot_y = indices
    translation = np.array(
        [
            decode_value(q.trans_xy, txy_x),
            decode_value(q.trans_xy, txy_y),
            decode_value(q.trans_z, tz),
        ]
    )
    angles = EulerAngles(
        roll=decode_value(q.rot, rot_r),
        pitch=decode_value(q.rot, rot_p),
        yaw=decode_value(q.rot, rot_y),
    )
    return Se3Pose(translation, euler_to_quat(angles))


def encode_size(q: QuantizerSet, dims) -> tuple:
    """Three indices from the single shared size table."""
    dims = np.asarray(dims, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(dims)) or np.any(dims <= 0.0):
        raise NonPositiveSize(f"size must be strictly positive, got {dims.tolist()}")
    return tuple(encode_value(q.size, float(d)) for d in dims)


def decode_size(q: QuantizerSet, indices) -> np.ndarray:
    return np.array([decode_value(q.size, i) for i in indices])


# --- persistence ---------------------------------------------------------------
#
# File layout (little-endian):
#   magic "PKB1"
#   u16 version length, version utf-8
#   u8 table count
#   per table: u8 family length + utf-8, u8 mode length + utf-8,
#              u32 n_bins, (n_bins + 1) float64 edges


def _write_str(buf: io.BytesIO, s: str, width: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack(width, len(raw)))
    buf.write(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptTable("table file truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def read_str(self, width: str) -> str:
        n = self.unpack(width)
        return self.take(n).decode("utf-8")


def save_quantizers(q: QuantizerSet, path) -> None:
    """Write the table set; load_quantizers(save_quantizers(q)) is bit-identical."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    _write_str(buf, q.version, "<H")
    tables = q.tables()
    buf.write(struct.pack("<B", len(tables)))
    for slot in FAMILIES:
        t = tables[slot]
        _write_str(buf, t.family, "<B")
        _write_str(buf, t.mode, "<B")
        buf.write(struct.pack("<I", t.n_bins))
        buf.write(t.edges.astype("<f8").tobytes())
    try:
        with open(path, "wb") as f:
            f.write(buf.getvalue())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_quantizers(path) -> QuantizerSet:
    """Read a table set, validating magic, version, and edge monotonicity.

    Raises:
        IoFailure: unreadable path.
        FormatVersionMismatch: version string differs from this reader's.
        CorruptTable: bad magic, truncation, or non-monotone edges.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    r = _Reader(data)
    if r.take(4) != _MAGIC:
        raise CorruptTable(f"{path}: bad magic")
    version = r.read_str("<H")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{path}: file is {version!r}, reader expects {FORMAT_VERSION!r}"
        )
    count = r.unpack("<B")
    found = {}
    for _ in range(count):
        family = r.read_str("<B")
        mode = r.read_str("<B")
        n_bins = r.unpack("<I")
        raw = r.take(8 * (n_bins + 1))
        edges = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        if not np.all(np.isfinite(edges)) or not np.all(np.diff(edges) > 0):
            raise CorruptTable(f"{path}: non-monotone edges in family {family!r}")
        try:
            found[family] = BinTable(family=family, mode=mode, edges=edges)
        except ValueError as e:
            raise CorruptTable(f"{path}: {e}") from e
    missing = [f for f in FAMILIES if f not in found]
    if missing:
        raise CorruptTable(f"{path}: missing families {missing}")
    return QuantizerSet(version=version, **{f: found[f] for f in FAMILIES})
