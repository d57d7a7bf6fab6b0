"""Bit-exact payload construction and bandwidth accounting.

Wire layouts (normative, frozen by golden-fixture tests; all integers
little-endian, bit packing MSB-first within a byte):

PatchPayload
    u8  version (=1)
    u16 height, u16 width        true map dims before padding
    u8  patch size n
    u16 grid rows, u16 grid cols
    u16 record count
    records, ascending patch index:
        u16 patch index (row-major over the grid)
        ceil(n*n/8) bytes, patch bits row-major, MSB first

SegPayload
    u8  version (=1)
    u16 height, u16 width
    u8  class count K
    u8  flags (bit0: run stream is zlib-compressed)
    u32 run stream byte length
    run stream: (u8 class_id, u16 run) pairs covering H*W row-major

The class-index map plus run-length pairs is the wire form of the one-hot
segmentation tensor: mathematically equivalent and strictly smaller. The
receiver re-materializes the one-hot tensor for conditioning.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatch,
    EmptyLedger,
    IndexOutOfGrid,
    MalformedPayload,
    PatchGridOverflow,
)
from .imgproc import EdgeMap

PATCH_VERSION = 1
SEG_VERSION = 1
DEFAULT_PATCH_SIZE = 8
MAX_GRID_CELLS = 0xFFFF
MAX_RUN = 0xFFFF


@dataclass(frozen=True)
class MaskedEdge:
    """Attention-masked edge map: bits[p] = mask[p] AND edge[p]."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 2 or not np.isin(b, (0, 1)).all():
            raise ValueError("MaskedEdge expects a binary H×W array")
        object.__setattr__(self, "bits", b)


@dataclass(frozen=True)
class PatchRecord:
    index: int
    bits: bytes  # ceil(n*n/8) packed bytes


@dataclass(frozen=True)
class PatchPayload:
    version: int
    height: int
    width: int
    patch_size: int
    grid: tuple[int, int]
    records: tuple[PatchRecord, ...]

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<BHHBHHH",
            self.version,
            self.height,
            self.width,
            self.patch_size,
            self.grid[0],
            self.grid[1],
            len(self.records),
        )
        body = b"".join(
            struct.pack("<H", r.index) + r.bits for r in self.records
        )
        return head + body

    @staticmethod
    def from_bytes(data: bytes) -> "PatchPayload":
        if len(data) < 12:
            raise MalformedPayload("patch payload header truncated")
        version, h, w, n, gh, gw, count = struct.unpack("<BHHBHHH", data[:12])
        if version != PATCH_VERSION:
            raise MalformedPayload(f"unsupported patch payload version {version}")
        if n < 1:
            raise MalformedPayload("patch size must be >= 1")
        if (gh, gw) != (-(-h // n), -(-w // n)):
            raise MalformedPayload("grid dims inconsistent with map dims")
        rec_bytes = -(-n * n // 8)
        pos = 12
        records = []
        prev = -1
        for _ in range(count):
            if pos + 2 + rec_bytes > len(data):
                raise MalformedPayload("patch record truncated")
            (index,) = struct.unpack("<H", data[pos : pos + 2])
            bits = data[pos + 2 : pos + 2 + rec_bytes]
            pos += 2 + rec_bytes
            if index >= gh * gw:
                raise IndexOutOfGrid(f"patch index {index} outside {gh}x{gw} grid")
            if index <= prev:
                raise MalformedPayload("patch indices must be strictly increasing")
            if not any(bits):
                raise MalformedPayload("all-zero patch record present")
            prev = index
            records.append(PatchRecord(index, bits))
        if pos != len(data):
            raise MalformedPayload("trailing bytes after patch records")
        return PatchPayload(version, h, w, n, (gh, gw), tuple(records))


@dataclass(frozen=True)
class SegPayload:
    version: int
    height: int
    width: int
    k: int
    runs: tuple[tuple[int, int], ...]  # (class_id, run)
    compressed: bool = False

    def to_bytes(self) -> bytes:
        stream = b"".join(struct.pack("<BH", c, r) for c, r in self.runs)
        flags = 0
        if self.compressed:
            packed = zlib.compress(stream, level=9)
            if len(packed) < len(stream):
                stream, flags = packed, 1
        head = struct.pack(
            "<BHHBBI", self.version, self.height, self.width, self.k, flags, len(stream)
        )
        return head + stream

    @staticmethod
    def from_bytes(data: bytes) -> "SegPayload":
        if len(data) < 11:
            raise MalformedPayload("seg payload header truncated")
        version, h, w, k, flags, length = struct.unpack("<BHHBBI", data[:11])
        if version != SEG_VERSION:
            raise MalformedPayload(f"unsupported seg payload version {version}")
        stream = data[11 : 11 + length]
        if len(stream) != length or 11 + length != len(data):
            raise MalformedPayload("seg payload length mismatch")
        if flags & 1:
            try:
                stream = zlib.decompress(stream)
            except zlib.error as exc:
                raise MalformedPayload(f"backend stream corrupt: {exc}") from exc
        if len(stream) % 3 != 0:
            raise MalformedPayload("run stream not a multiple of 3 bytes")
        runs = []
        total = 0
        for i in range(0, len(stream), 3):
            c, r = struct.unpack("<BH", stream[i : i + 3])
            if c >= k:
                raise MalformedPayload(f"class id {c} >= K={k}")
            if r == 0:
                raise MalformedPayload("zero-length run")
            runs.append((c, r))
            total += r
        if total != h * w:
            raise MalformedPayload(f"runs cover {total} pixels, expected {h * w}")
        return SegPayload(version, h, w, k, tuple(runs), compressed=bool(flags & 1))


def mask_edge(edge: EdgeMap, mask) -> MaskedEdge:
    """Binary Hadamard product of the edge map with an attention mask."""
    mask_bits = np.asarray(getattr(mask, "bits", mask), dtype=np.uint8)
    if mask_bits.shape != edge.bits.shape:
        raise DimMismatch(
            f"mask {mask_bits.shape} does not match edge {edge.bits.shape}"
        )
    return MaskedEdge(edge.bits & mask_bits)


def _pack_patch_bits(patch: np.ndarray) -> bytes:
    flat = patch.reshape(-1)
    return np.packbits(flat).tobytes()


def encode_patches(x_att: MaskedEdge, n: int = DEFAULT_PATCH_SIZE) -> PatchPayload:
    """Partition into n×n patches, keep nonzero ones with their grid index."""
    if n < 1:
        raise MalformedPayload("patch size must be >= 1")
    bits = x_att.bits
    h, w = bits.shape
    gh, gw = -(-h // n), -(-w // n)
    if gh * gw > MAX_GRID_CELLS:
        raise PatchGridOverflow(f"{gh * gw} grid cells exceed u16 index space")
    padded = np.zeros((gh * n, gw * n), dtype=np.uint8)
    padded[:h, :w] = bits
    records = []
    for gi in range(gh):
        for gj in range(gw):
            patch = padded[gi * n : (gi + 1) * n, gj * n : (gj + 1) * n]
            if patch.any():
                records.append(
                    PatchRecord(gi * gw + gj, _pack_patch_bits(patch))
                )
    return PatchPayload(PATCH_VERSION, h, w, n, (gh, gw), tuple(records))


def decode_patches(payload: PatchPayload) -> MaskedEdge:
    """Exact inverse of encode_patches (padding cropped away)."""
    n = payload.patch_size
    gh, gw = payload.grid
    padded = np.zeros((gh * n, gw * n), dtype=np.uint8)
    for rec in payload.records:
        if rec.index >= gh * gw:
            raise IndexOutOfGrid(f"patch index {rec.index} outside grid")
        gi, gj = divmod(rec.index, gw)
        flat = np.unpackbits(np.frombuffer(rec.bits, dtype=np.uint8))[: n * n]
        padded[gi * n : (gi + 1) * n, gj * n : (gj + 1) * n] = flat.reshape(n, n)
    return MaskedEdge(padded[: payload.height, : payload.width])


def encode_seg(seg: np.ndarray, k: int, use_backend: bool = True) -> SegPayload:
    """Row-major run-length encoding of the class-index map."""
    seg = np.asarray(seg)
    if seg.size and (seg.min() < 0 or seg.max() >= k):
        raise MalformedPayload(f"class indices must lie in [0, {k})")
    h, w = seg.shape
    flat = seg.reshape(-1)
    runs = []
    boundaries = np.nonzero(np.diff(flat))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [flat.size]))
    for s, e in zip(starts, ends):
        length = int(e - s)
        cls = int(flat[s])
        while length > MAX_RUN:
            runs.append((cls, MAX_RUN))
            length -= MAX_RUN
        runs.append((cls, length))
    return SegPayload(SEG_VERSION, h, w, k, tuple(runs), compressed=use_backend)


def decode_seg(payload: SegPayload) -> np.ndarray:
    flat = np.zeros(payload.height * payload.width, dtype=np.int64)
    pos = 0
    for cls, run in payload.runs:
        flat[pos : pos + run] = cls
        pos += run
    return flat.reshape(payload.height, payload.width)


STEP_INIT = 1
STEP_FEEDBACK = 2
STEP_UPDATE = 3

# ledger entry kinds: only "semantic" entries enter the CR denominator;
# feedback is uplink and SessionDone is control, logged but excluded
KIND_SEMANTIC = "semantic"
KIND_FEEDBACK = "feedback"
KIND_CONTROL = "control"


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    step: int
    kind: str
    nbytes: int


@dataclass
class BandwidthLedger:
    raw_bytes: int
    entries: list[LedgerEntry] = field(default_factory=list)

    @staticmethod
    def for_image(height: int, width: int) -> "BandwidthLedger":
        # 8-bit RGB raw baseline
        return BandwidthLedger(raw_bytes=height * width * 3)

    def record(self, round_: int, step: int, kind: str, nbytes: int) -> None:
        self.entries.append(LedgerEntry(round_, step, kind, nbytes))

    def semantic_bytes(self) -> int:
        return sum(e.nbytes for e in self.entries if e.kind == KIND_SEMANTIC)

    def feedback_bytes(self) -> int:
        return sum(e.nbytes for e in self.entries if e.kind == KIND_FEEDBACK)


def compression_rate(ledger: BandwidthLedger) -> float:
    """Raw data bytes over transmitted semantic payload bytes."""
    payload = ledger.semantic_bytes()
    if payload <= 0:
        raise EmptyLedger("no semantic payload bytes recorded")
    return ledger.raw_bytes / payload
