import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semcom import codec
from semcom.codec import (
    BandwidthLedger,
    MaskedEdge,
    PatchPayload,
    SegPayload,
    compression_rate,
    decode_patches,
    decode_seg,
    encode_patches,
    encode_seg,
    mask_edge,
)
from semcom.errors import (
    DimMismatch,
    EmptyLedger,
    IndexOutOfGrid,
    MalformedPayload,
    PatchGridOverflow,
)
from semcom.imgproc import EdgeMap


def bitmap(h, w, coords=()):
    m = np.zeros((h, w), dtype=np.uint8)
    for y, x in coords:
        m[y, x] = 1
    return m


class TestMaskEdge:
    def test_all_ones_mask_is_identity(self):
        edge = EdgeMap(bitmap(4, 4, [(0, 0), (2, 3)]))
        out = mask_edge(edge, np.ones((4, 4), dtype=np.uint8))
        np.testing.assert_array_equal(out.bits, edge.bits)

    def test_all_zero_mask_clears(self):
        edge = EdgeMap(bitmap(4, 4, [(0, 0), (2, 3)]))
        out = mask_edge(edge, np.zeros((4, 4), dtype=np.uint8))
        assert out.bits.sum() == 0

    def test_elementwise_and(self):
        edge = EdgeMap(np.array([[1, 1], [0, 1]], dtype=np.uint8))
        mask = np.array([[1, 0], [1, 1]], dtype=np.uint8)
        np.testing.assert_array_equal(mask_edge(edge, mask).bits, [[1, 0], [0, 1]])

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            mask_edge(EdgeMap(bitmap(4, 4)), np.ones((3, 3), dtype=np.uint8))


class TestPatchCodec:
    def test_all_zero_map_has_no_records(self):
        payload = encode_patches(MaskedEdge(bitmap(16, 16)), n=8)
        assert payload.records == ()
        assert payload.grid == (2, 2)

    def test_single_bit_single_record(self):
        payload = encode_patches(MaskedEdge(bitmap(8, 8, [(0, 0)])), n=8)
        assert len(payload.records) == 1
        assert payload.records[0].index == 0
        bits = np.unpackbits(np.frombuffer(payload.records[0].bits, dtype=np.uint8))
        assert bits.sum() == 1 and bits[0] == 1

    def test_row_major_grid_indexing(self):
        m = bitmap(8, 16, [(3, 12)])  # right half only
        payload = encode_patches(MaskedEdge(m), n=8)
        assert [r.index for r in payload.records] == [1]

    def test_round_trip_identity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            h = int(rng.integers(1, 40))
            w = int(rng.integers(1, 70))
            m = (rng.random((h, w)) < 0.15).astype(np.uint8)
            payload = encode_patches(MaskedEdge(m), n=8)
            out = decode_patches(PatchPayload.from_bytes(payload.to_bytes()))
            np.testing.assert_array_equal(out.bits, m)

    def test_header_only_payload_decodes_to_zeros(self):
        payload = encode_patches(MaskedEdge(bitmap(10, 13)), n=4)
        out = decode_patches(payload)
        assert out.bits.shape == (10, 13)
        assert out.bits.sum() == 0

    def test_out_of_grid_index_rejected(self):
        payload = encode_patches(MaskedEdge(bitmap(8, 8, [(0, 0)])), n=8)
        raw = bytearray(payload.to_bytes())
        raw[12:14] = (99).to_bytes(2, "little")  # index of the only record
        with pytest.raises(IndexOutOfGrid):
            PatchPayload.from_bytes(bytes(raw))

    def test_grid_overflow(self):
        with pytest.raises(PatchGridOverflow):
            encode_patches(MaskedEdge(bitmap(600, 600)), n=2)

    def test_golden_fixture_bytes(self):
        payload = encode_patches(MaskedEdge(bitmap(8, 8, [(0, 0)])), n=8)
        golden = bytes.fromhex(
            "010800080008010001000100" "0000" "8000000000000000"
        )
        assert payload.to_bytes() == golden
        assert PatchPayload.from_bytes(golden) == payload

    def test_truncated_record_rejected(self):
        payload = encode_patches(MaskedEdge(bitmap(8, 8, [(1, 1)])), n=8)
        with pytest.raises(MalformedPayload):
            PatchPayload.from_bytes(payload.to_bytes()[:-3])

    @given(st.integers(0, 2**32 - 1), st.integers(1, 9))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, seed, n):
        rng = np.random.default_rng(seed)
        h = int(rng.integers(1, 33))
        w = int(rng.integers(1, 65))
        m = (rng.random((h, w)) < 0.2).astype(np.uint8)
        payload = encode_patches(MaskedEdge(m), n=n)
        out = decode_patches(PatchPayload.from_bytes(payload.to_bytes()))
        np.testing.assert_array_equal(out.bits, m)

    def test_payload_monotone_in_set_bits(self):
        rng = np.random.default_rng(4)
        base = (rng.random((32, 64)) < 0.05).astype(np.uint8)
        grown = base.copy()
        ys, xs = np.nonzero(grown == 0)
        for i in range(0, len(ys), 7):
            grown[ys[i], xs[i]] = 1
        nb = len(encode_patches(MaskedEdge(base)).to_bytes())
        ng = len(encode_patches(MaskedEdge(grown)).to_bytes())
        assert ng >= nb

    def test_mask_monotonicity(self):
        rng = np.random.default_rng(9)
        edge = EdgeMap((rng.random((32, 64)) < 0.2).astype(np.uint8))
        mask_b = (rng.random((32, 64)) < 0.5).astype(np.uint8)
        mask_a = mask_b & (rng.random((32, 64)) < 0.5).astype(np.uint8)
        nbytes_a = len(encode_patches(mask_edge(edge, mask_a)).to_bytes())
        nbytes_b = len(encode_patches(mask_edge(edge, mask_b)).to_bytes())
        assert nbytes_a <= nbytes_b


class TestSegCodec:
    def test_constant_map_single_run(self):
        seg = np.ones((32, 64), dtype=np.int64)
        payload = encode_seg(seg, 6, use_backend=False)
        assert payload.runs == ((1, 2048),)

    def test_checkerboard_worst_case(self):
        # odd width: every consecutive pixel in the flattened stream differs
        seg = np.indices((15, 15)).sum(axis=0) % 2
        payload = encode_seg(seg, 2, use_backend=False)
        flat = seg.reshape(-1)
        alternations = 1 + int(np.count_nonzero(np.diff(flat)))
        assert alternations == 15 * 15
        assert len(payload.runs) == alternations

    def test_round_trip_random(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            seg = rng.integers(0, 6, size=(rng.integers(1, 40), rng.integers(1, 70)))
            payload = encode_seg(seg, 6)
            out = decode_seg(SegPayload.from_bytes(payload.to_bytes()))
            np.testing.assert_array_equal(out, seg)

    def test_golden_fixture_bytes(self):
        seg = np.full((2, 3), 1, dtype=np.int64)
        payload = encode_seg(seg, 6, use_backend=False)
        golden = bytes.fromhex("0102000300060003000000" "010600")
        assert payload.to_bytes() == golden

    def test_backend_applied_only_when_smaller(self):
        seg = np.zeros((32, 64), dtype=np.int64)  # one run; zlib cannot shrink 3 bytes
        raw = encode_seg(seg, 6, use_backend=True).to_bytes()
        flags = raw[8]
        assert flags == 0
        rng = np.random.default_rng(2)
        big = rng.integers(0, 6, size=(32, 64))
        packed = encode_seg(big, 6, use_backend=True).to_bytes()
        plain = encode_seg(big, 6, use_backend=False).to_bytes()
        assert len(packed) <= len(plain)
        np.testing.assert_array_equal(
            decode_seg(SegPayload.from_bytes(packed)), big
        )

    def test_bad_class_id_rejected(self):
        payload = encode_seg(np.zeros((2, 2), dtype=int), 1, use_backend=False)
        raw = bytearray(payload.to_bytes())
        raw[11] = 7  # class id of the single run
        with pytest.raises(MalformedPayload):
            SegPayload.from_bytes(bytes(raw))

    def test_wrong_coverage_rejected(self):
        payload = encode_seg(np.zeros((4, 4), dtype=int), 2, use_backend=False)
        raw = bytearray(payload.to_bytes())
        raw[12] = 9  # run length low byte: 16 -> 9
        with pytest.raises(MalformedPayload):
            SegPayload.from_bytes(bytes(raw))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, seed):
        rng = np.random.default_rng(seed)
        seg = rng.integers(0, 6, size=(rng.integers(1, 33), rng.integers(1, 65)))
        payload = SegPayload.from_bytes(encode_seg(seg, 6).to_bytes())
        np.testing.assert_array_equal(decode_seg(payload), seg)


class TestCompressionRate:
    def test_equal_bytes_cr_one(self):
        ledger = BandwidthLedger.for_image(32, 64)
        ledger.record(0, codec.STEP_INIT, codec.KIND_SEMANTIC, 32 * 64 * 3)
        assert compression_rate(ledger) == 1.0

    def test_quarter_payload_cr_four(self):
        ledger = BandwidthLedger.for_image(32, 64)
        ledger.record(0, codec.STEP_INIT, codec.KIND_SEMANTIC, 32 * 64 * 3 // 4)
        assert compression_rate(ledger) == 4.0

    def test_step3_strictly_decreases_cr(self):
        ledger = BandwidthLedger.for_image(32, 64)
        ledger.record(0, codec.STEP_INIT, codec.KIND_SEMANTIC, 500)
        before = compression_rate(ledger)
        ledger.record(1, codec.STEP_UPDATE, codec.KIND_SEMANTIC, 120)
        assert compression_rate(ledger) < before

    def test_feedback_excluded_from_cr(self):
        ledger = BandwidthLedger.for_image(32, 64)
        ledger.record(0, codec.STEP_INIT, codec.KIND_SEMANTIC, 512)
        base = compression_rate(ledger)
        ledger.record(1, codec.STEP_FEEDBACK, codec.KIND_FEEDBACK, 64)
        assert compression_rate(ledger) == base
        assert ledger.feedback_bytes() == 64

    def test_empty_ledger_rejected(self):
        with pytest.raises(EmptyLedger):
            compression_rate(BandwidthLedger.for_image(32, 64))
