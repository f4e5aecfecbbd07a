"""Extended token vocabulary and the structured tuple/trajectory grammar.

Vocabulary layout is deterministic: the five value families occupy contiguous
ID ranges in the order loc, rot, trans_xy, trans_z, size, followed by six
structural tokens (<obj>, <traj>, <wp>, <sep>, <eos>, <text>). With the
default 1024 bins per family the total size is 5 * 1024 + 6 = 5126.

Grammar (one consistent choice, versioned by this module):

    sequence   := (tuple | trajectory)*
    tuple      := <obj> <text> LEN byte*   ; category, UTF-8, LEN <= 255
                  loc loc                  ; box center (x, y) in [0, 1)
                  txy txy tz               ; translation (x, y, z)
                  rot rot rot              ; roll, pitch, yaw
                  (size size size)?        ; optional extents
                  <sep>
    trajectory := <traj> waypoint+ <eos>
    waypoint   := <wp> txy txy tz rot rot rot loc?   ; loc = gripper opening

Category strings ride inside the ID stream as length-prefixed raw bytes
(IDs < 256), keeping the artifact self-contained without a text tokenizer.
The gripper opening reuses the loc family over [0, 1); it is an extension,
present only when the trajectory carries gripper values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CategoryTooLong,
    MalformedStructure,
    Truncated,
    UnknownToken,
)
from .geometry import Se3Pose
from .quantizer import (
    QuantizerSet,
    decode_pose,
    decode_size,
    decode_value,
    encode_pose,
    encode_size,
    encode_value,
)

FAMILY_ORDER = ("loc", "rot", "trans_xy", "trans_z", "size")
STRUCTURAL_ORDER = ("obj", "traj", "wp", "sep", "eos", "text")
GRAMMAR_VERSION = "posekit-grammar/1"

_MAX_CATEGORY_BYTES = 255


@dataclass(frozen=True)
class Vocab:
    """Token ID layout: disjoint family ranges plus structural tokens."""

    family_offsets: dict
    family_sizes: dict
    obj: int
    traj: int
    wp: int
    sep: int
    eos: int
    text_escape: int
    version: str = GRAMMAR_VERSION

    @property
    def total_size(self) -> int:
        return sum(self.family_sizes.values()) + len(STRUCTURAL_ORDER)

    def family_of(self, token_id: int):
        """(family, index-within-family) for a value token, else None."""
        for fam in FAMILY_ORDER:
            off = self.family_offsets[fam]
            if off <= token_id < off + self.family_sizes[fam]:
                return fam, token_id - off
        return None

    def structural_name(self, token_id: int):
        for name in STRUCTURAL_ORDER:
            if token_id == getattr(self, name if name != "text" else "text_escape"):
                return name
        return None


def build_vocab(n_bins_per_family: dict | None = None) -> Vocab:
    """Deterministic layout from per-family bin counts (default 1024 each)."""
    sizes = {fam: 1024 for fam in FAMILY_ORDER}
    if n_bins_per_family:
        for fam, n in n_bins_per_family.items():
            if fam not in sizes:
                raise ValueError(f"unknown family {fam!r}")
            if n < 1:
                raise ValueError(f"family {fam!r} needs a positive size")
            sizes[fam] = int(n)
    offsets = {}
    cursor = 0
    for fam in FAMILY_ORDER:
        offsets[fam] = cursor
        cursor += sizes[fam]
    structural = {name: cursor + i for i, name in enumerate(STRUCTURAL_ORDER)}
    return Vocab(
        family_offsets=offsets,
        family_sizes=sizes,
        obj=structural["obj"],
        traj=structural["traj"],
        wp=structural["wp"],
        sep=structural["sep"],
        eos=structural["eos"],
        text_escape=structural["text"],
    )


@dataclass(frozen=True)
class PoseTuple:
    """Grammar atom: category, 2D box center, camera-frame pose, optional size."""

    category: str
    box_center: np.ndarray
    pose: Se3Pose
    size: np.ndarray | None = None

    def __post_init__(self):
        center = np.array(self.box_center, dtype=np.float64).reshape(2)
        if not np.all(np.isfinite(center)) or np.any(center < 0.0) or np.any(center >= 1.0):
            raise ValueError(f"box center must lie in [0, 1), got {center.tolist()}")
        center.setflags(write=False)
        object.__setattr__(self, "box_center", center)
        if self.size is not None:
            size = np.array(self.size, dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(size)) or np.any(size <= 0.0):
                raise ValueError(f"size must be strictly positive, got {size.tolist()}")
            size.setflags(write=False)
            object.__setattr__(self, "size", size)


@dataclass(frozen=True)
class Trajectory:
    """Temporally ordered camera-frame waypoints with optional gripper opening."""

    waypoints: tuple
    gripper: tuple | None = None

    def __post_init__(self):
        waypoints = tuple(self.waypoints)
        if not waypoints:
            raise ValueError("a trajectory needs at least one waypoint")
        object.__setattr__(self, "waypoints", waypoints)
        if self.gripper is not None:
            gripper = tuple(float(g) for g in self.gripper)
            if len(gripper) != len(waypoints):
                raise ValueError("gripper list must match waypoint count")
            if any(not (0.0 <= g <= 1.0) for g in gripper):
                raise ValueError("gripper opening must lie in [0, 1]")
            object.__setattr__(self, "gripper", gripper)


@dataclass(frozen=True)
class TokenSequence:
    """Ordered token IDs; binary form is 32-bit little-endian."""

    ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def to_bytes(self) -> bytes:
        return np.asarray(self.ids, dtype="<u4").tobytes()

    @staticmethod
    def from_bytes(raw: bytes) -> "TokenSequence":
        if len(raw) % 4 != 0:
            raise Truncated("byte stream ends mid-token", position=len(raw) // 4)
        return TokenSequence(np.frombuffer(raw, dtype="<u4").tolist())

    def to_text(self) -> str:
        return "\n".join(str(i) for i in self.ids)

    @staticmethod
    def from_text(text: str) -> "TokenSequence":
        ids = []
        for line_no, line in enumerate(text.splitlines()):
            line = line.strip()
            if not line:
                continue
            try:
                ids.append(int(line))
            except ValueError:
                raise MalformedStructure(
                    f"non-numeric token {line!r}", position=line_no
                ) from None
        return TokenSequence(ids)


def _category_ids(category: str, v: Vocab) -> list:
    raw = category.encode("utf-8")
    if len(raw) > _MAX_CATEGORY_BYTES:
        raise CategoryTooLong(f"category is {len(raw)} bytes, max {_MAX_CATEGORY_BYTES}")
    return [v.text_escape, len(raw), *raw]


def serialize_tuple(t: PoseTuple, v: Vocab, q: QuantizerSet) -> TokenSequence:
    """<obj> category-bytes, 2 loc, 2 trans_xy, 1 trans_z, 3 rot, size?, <sep>."""
    off = v.family_offsets
    txy_x, txy_y, tz, rot_r, rot_p, rot_y = encode_pose(q, t.pose)
    ids = [v.obj]
    ids += _category_ids(t.category, v)
    ids += [
        off["loc"] + encode_value(q.loc, float(t.box_center[0])),
        off["loc"] + encode_value(q.loc, float(t.box_center[1])),
        off["trans_xy"] + txy_x,
        off["trans_xy"] + txy_y,
        off["trans_z"] + tz,
        off["rot"] + rot_r,
        off["rot"] + rot_p,
        off["rot"] + rot_y,
    ]
    if t.size is not None:
        ids += [off["size"] + i for i in encode_size(q, t.size)]
    ids.append(v.sep)
    return TokenSequence(ids)


def serialize_tuples(tuples, v: Vocab, q: QuantizerSet) -> TokenSequence:
    """Concatenation of serialize_tuple over a list, order preserved."""
    ids = []
    for t in tuples:
        ids.extend(serialize_tuple(t, v, q).ids)
    return TokenSequence(ids)


def serialize_trajectory(tr: Trajectory, v: Vocab, q: QuantizerSet) -> TokenSequence:
    """<traj>, per waypoint <wp> + 6 pose tokens (+ 1 gripper loc), <eos>."""
    off = v.family_offsets
    ids = [v.traj]
    for k, pose in enumerate(tr.waypoints):
        txy_x, txy_y, tz, rot_r, rot_p, rot_y = encode_pose(q, pose)
        ids += [
            v.wp,
            off["trans_xy"] + txy_x,
            off["trans_xy"] + txy_y,
            off["trans_z"] + tz,
            off["rot"] + rot_r,
            off["rot"] + rot_p,
            off["rot"] + rot_y,
        ]
        if tr.gripper is not None:
            ids.append(off["loc"] + encode_value(q.loc, tr.gripper[k]))
    ids.append(v.eos)
    return TokenSequence(ids)


class _Parser:
    """Single-pass recursive-descent parser, total on arbitrary ID lists."""

    def __init__(self, ids, v: Vocab, q: QuantizerSet):
        self.ids = list(ids)
        self.v = v
        self.q = q
        self.pos = 0

    def done(self) -> bool:
        return self.pos >= len(self.ids)

    def peek(self) -> int:
        tid = self.ids[self.pos]
        if not isinstance(tid, int) or tid < 0 or tid >= self.v.total_size:
            raise UnknownToken(f"ID {tid!r} outside vocabulary", position=self.pos)
        return tid

    def next(self, expect: str) -> int:
        if self.done():
            raise Truncated(f"expected {expect}", position=self.pos)
        tid = self.peek()
        self.pos += 1
        return tid

    def value(self, family: str, expect: str) -> int:
        at = self.pos
        tid = self.next(expect)
        located = self.v.family_of(tid)
        if located is None or located[0] != family:
            raise MalformedStructure(f"expected {expect}", position=at)
        return located[1]

    def category(self) -> str:
        at = self.pos
        tid = self.next("<text> escape")
        if tid != self.v.text_escape:
            raise MalformedStructure("expected <text> escape", position=at)
        at = self.pos
        length = self.next("category byte length")
        if length > _MAX_CATEGORY_BYTES:
            raise MalformedStructure("category length exceeds 255", position=at)
        raw = bytearray()
        for _ in range(length):
            at = self.pos
            b = self.next("category byte")
            if b > 0xFF:
                raise MalformedStructure("category byte out of range", position=at)
            raw.append(b)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedStructure("category is not valid UTF-8", position=at) from None

    def pose_indices(self) -> tuple:
        return (
            self.value("trans_xy", "<trans_xy> x"),
            self.value("trans_xy", "<trans_xy> y"),
            self.value("trans_z", "<trans_z>"),
            self.value("rot", "<rot> roll"),
            self.value("rot", "<rot> pitch"),
            self.value("rot", "<rot> yaw"),
        )

    def parse_tuple(self) -> PoseTuple:
        category = self.category()
        loc_x = self.value("loc", "<loc> box-center x")
        loc_y = self.value("loc", "<loc> box-center y")
        pose = decode_pose(self.q, self.pose_indices())
        size = None
        at = self.pos
        tid = self.next("<size> or <sep>")
        located = self.v.family_of(tid)
        if located is not None and located[0] == "size":
            first = located[1]
            rest = (
                self.value("size", "<size> y"),
                self.value("size", "<size> z"),
            )
            size = decode_size(self.q, (first, *rest))
            at = self.pos
            tid = self.next("<sep>")
        if tid != self.v.sep:
            raise MalformedStructure("expected <sep> closing the tuple", position=at)
        center = (
            decode_value(self.q.loc, loc_x),
            decode_value(self.q.loc, loc_y),
        )
        return PoseTuple(category=category, box_center=center, pose=pose, size=size)

    def parse_trajectory(self) -> Trajectory:
        waypoints = []
        gripper = []
        while True:
            at = self.pos
            tid = self.next("<wp> or <eos>")
            if tid == self.v.eos:
                break
            if tid != self.v.wp:
                raise MalformedStructure("expected <wp> or <eos>", position=at)
            waypoints.append(decode_pose(self.q, self.pose_indices()))
            if not self.done():
                located = self.v.family_of(self.ids[self.pos])
                if located is not None and located[0] == "loc":
                    gripper.append(decode_value(self.q.loc, located[1]))
                    self.pos += 1
                    continue
            gripper.append(None)
        if not waypoints:
            raise MalformedStructure("trajectory has no waypoints", position=self.pos - 1)
        with_gripper = [g for g in gripper if g is not None]
        if with_gripper and len(with_gripper) != len(waypoints):
            raise MalformedStructure(
                "gripper tokens present on some waypoints but not all",
                position=self.pos - 1,
            )
        return Trajectory(
            waypoints=tuple(waypoints),
            gripper=tuple(with_gripper) if with_gripper else None,
        )

    def parse(self) -> list:
        items = []
        while not self.done():
            at = self.pos
            tid = self.next("<obj> or <traj>")
            if tid == self.v.obj:
                items.append(self.parse_tuple())
            elif tid == self.v.traj:
                items.append(self.parse_trajectory())
            else:
                raise MalformedStructure("expected <obj> or <traj>", position=at)
        return items


def parse_sequence(s: TokenSequence, v: Vocab, q: QuantizerSet) -> list:
    """Inverse of serialization up to quantization.

    Total on arbitrary ID lists: returns the decoded items or raises
    UnknownToken / MalformedStructure / Truncated, each carrying the token
    position. Never anything else.
    """
    return _Parser(s.ids, v, q).parse()
