import numpy as np
import pytest

from cantcn.canlog import CanFrame
from cantcn.sigmap import (
    BitStats,
    InsufficientDataError,
    Normalizer,
    SignalLayout,
    SignalSpec,
    compute_bit_stats,
    decode_signal_ints,
    decode_signals,
    decode_series,
    encode_signal,
    infer_signal_layout,
)


def frames_from_payloads(payloads, can_id=0x123):
    return [
        CanFrame(float(i), "can0", can_id, bytes(p)) for i, p in enumerate(payloads)
    ]


def oracle_flip_rates(payloads):
    """Independent oracle: per-bit transition count via pairwise XOR popcount."""
    dlc = len(payloads[0])
    rates = np.zeros(64)
    for a, b in zip(payloads[:-1], payloads[1:]):
        xor = int.from_bytes(bytes(a), "big") ^ int.from_bytes(bytes(b), "big")
        for bit in range(dlc * 8):
            if (xor >> (dlc * 8 - 1 - bit)) & 1:
                rates[bit] += 1
    return rates / (len(payloads) - 1)


class TestBitStats:
    def test_alternating_lsb(self):
        stats = compute_bit_stats(frames_from_payloads([[0x00], [0x01], [0x00], [0x01]]))
        # 3 consecutive pairs, all flipping bit 7 only
        assert stats.flip_rate[7] == 1.0
        assert np.all(stats.flip_rate[:7] == 0.0)
        assert np.all(stats.flip_rate[8:] == 0.0)
        assert stats.frame_count == 4

    def test_identical_payloads_all_constant(self):
        stats = compute_bit_stats(frames_from_payloads([[0xAB, 0xCD]] * 5))
        assert np.all(stats.flip_rate == 0.0)
        assert np.all(stats.constant_mask)

    def test_free_running_counter_rates(self):
        # 257 frames = one full 8-bit cycle of 256 transitions
        payloads = [[i % 256] for i in range(257)]
        stats = compute_bit_stats(frames_from_payloads(payloads))
        expected = [1 / 128, 1 / 64, 1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2, 1.0]
        assert stats.flip_rate[:8].tolist() == expected
        np.testing.assert_array_equal(stats.flip_rate[:8], oracle_flip_rates(payloads)[:8])

    def test_matches_brute_force_oracle_on_random_logs(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            dlc = int(rng.integers(1, 9))
            payloads = [rng.integers(0, 256, size=dlc).tolist() for _ in range(50)]
            stats = compute_bit_stats(frames_from_payloads(payloads))
            np.testing.assert_allclose(stats.flip_rate, oracle_flip_rates(payloads))
            assert np.all((stats.flip_rate >= 0) & (stats.flip_rate <= 1))
            np.testing.assert_array_equal(stats.constant_mask, stats.flip_rate == 0)

    def test_too_few_frames(self):
        with pytest.raises(InsufficientDataError):
            compute_bit_stats(frames_from_payloads([[0x00]]))

    def test_mixed_dlc_rejected(self):
        frames = frames_from_payloads([[0x00], [0x00, 0x01]])
        with pytest.raises(ValueError, match="DLC"):
            compute_bit_stats(frames)

    def test_mixed_ids_rejected(self):
        frames = [
            CanFrame(0.0, "can0", 0x1, b"\x00"),
            CanFrame(1.0, "can0", 0x2, b"\x00"),
        ]
        with pytest.raises(ValueError, match="IDs"):
            compute_bit_stats(frames)


def stats_from_rates(rates, msg_id=0x123):
    rates = np.asarray(rates, dtype=np.float64)
    dlc = len(rates) // 8
    full = np.zeros(64)
    full[: len(rates)] = rates
    return BitStats(msg_id, 100, dlc, full, full == 0.0)


class TestLayoutInference:
    def test_static_prefix_then_signal(self):
        layout = infer_signal_layout(stats_from_rates([0, 0, 0, 0, 0.1, 0.3, 0.5, 0.9]))
        assert layout.static_fields == [(0, 4)]
        assert [(s.start_bit, s.bit_length) for s in layout.specs] == [(4, 4)]

    def test_rate_drop_marks_boundary(self):
        layout = infer_signal_layout(
            stats_from_rates([0.1, 0.4, 0.8, 0.05, 0.2, 0.6, 0, 0])
        )
        assert [(s.start_bit, s.bit_length) for s in layout.specs] == [(0, 3), (3, 3)]
        assert layout.static_fields == [(6, 2)]

    def test_all_constant_payload(self):
        layout = infer_signal_layout(stats_from_rates([0.0] * 64))
        assert layout.specs == []
        assert layout.static_fields == [(0, 64)]

    def test_tiling_on_random_rates(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            dlc = int(rng.integers(1, 9))
            rates = np.where(rng.random(dlc * 8) < 0.3, 0.0, rng.random(dlc * 8))
            layout = infer_signal_layout(stats_from_rates(rates))
            covered = np.zeros(dlc * 8, dtype=int)
            for s in layout.specs:
                covered[s.start_bit : s.start_bit + s.bit_length] += 1
            for start, length in layout.static_fields:
                covered[start : start + length] += 1
            assert np.all(covered == 1), "specs + static fields must tile the payload"
            starts = [s.start_bit for s in layout.specs]
            assert starts == sorted(starts)


def oracle_bit_slice(payload, start, length):
    """Independent oracle: decode via the payload's bit string."""
    bits = "".join(f"{b:08b}" for b in payload)
    return int(bits[start : start + length], 2)


class TestCodec:
    def test_straddling_byte_boundary(self):
        layout = SignalLayout(0x1, 2, [SignalSpec(0x1, 0, 4, 8)], [])
        frame = CanFrame(0.0, "can0", 0x1, bytes([0x0F, 0xF0]))
        assert decode_signals(frame, layout).tolist() == [255.0]
        assert oracle_bit_slice([0x0F, 0xF0], 4, 8) == 255

    def test_full_byte(self):
        layout = SignalLayout(0x1, 1, [SignalSpec(0x1, 0, 0, 8)], [])
        frame = CanFrame(0.0, "can0", 0x1, bytes([0xFF]))
        assert decode_signals(frame, layout).tolist() == [255.0]

    def test_single_msb(self):
        layout = SignalLayout(0x1, 1, [SignalSpec(0x1, 0, 0, 1)], [])
        frame = CanFrame(0.0, "can0", 0x1, bytes([0x80]))
        assert decode_signals(frame, layout).tolist() == [1.0]

    def test_dlc_too_small_names_signal(self):
        layout = SignalLayout(0x1, 2, [SignalSpec(0x1, 0, 4, 8)], [])
        frame = CanFrame(0.0, "can0", 0x1, bytes([0x0F]))
        with pytest.raises(ValueError, match="signal 0"):
            decode_signals(frame, layout)

    def test_encode_inverse_of_decode_example(self):
        spec = SignalSpec(0x1, 0, 4, 8)
        assert encode_signal(bytes(2), spec, 255) == bytes([0x0F, 0xF0])

    def test_encode_out_of_range_rejected(self):
        spec = SignalSpec(0x1, 0, 0, 8)
        with pytest.raises(ValueError, match="fit"):
            encode_signal(bytes(1), spec, 256)

    def test_round_trip_and_locality_random(self):
        rng = np.random.default_rng(19)
        for _ in range(200):
            dlc = int(rng.integers(1, 9))
            start = int(rng.integers(0, dlc * 8))
            length = int(rng.integers(1, dlc * 8 - start + 1))
            spec = SignalSpec(0x5, 0, start, length)
            layout = SignalLayout(0x5, dlc, [spec], [])
            payload = bytes(rng.integers(0, 256, size=dlc, dtype=np.uint8))
            value = int(rng.integers(0, 2 ** min(length, 62)))
            encoded = encode_signal(payload, spec, value)
            frame = CanFrame(0.0, "can0", 0x5, encoded)
            assert decode_signal_ints(frame, layout)[0] == value
            assert oracle_bit_slice(encoded, start, length) == value
            # every bit outside the field is untouched
            xor = int.from_bytes(payload, "big") ^ int.from_bytes(encoded, "big")
            field_mask = ((1 << length) - 1) << (dlc * 8 - start - length)
            assert xor & ~field_mask == 0
            # re-encoding the decoded value is the identity
            assert encode_signal(encoded, spec, value) == encoded

    def test_decode_series_matches_per_frame(self):
        rng = np.random.default_rng(23)
        layout = SignalLayout(
            0x9, 4, [SignalSpec(0x9, 0, 0, 10), SignalSpec(0x9, 1, 10, 22)], []
        )
        frames = [
            CanFrame(float(i), "can0", 0x9, bytes(rng.integers(0, 256, 4, dtype=np.uint8)))
            for i in range(40)
        ]
        series = decode_series(frames, layout)
        expected = np.array([decode_signals(f, layout) for f in frames])
        np.testing.assert_array_equal(series, expected)


class TestNormalizer:
    def test_fit_and_apply(self):
        norm = Normalizer.fit([10.0, 20.0, 15.0])
        assert norm.vmin.tolist() == [10.0]
        assert norm.vmax.tolist() == [20.0]
        assert norm.apply(np.array([15.0])).tolist() == [0.5]

    def test_constant_series_maps_to_zero(self):
        norm = Normalizer.fit([7.0, 7.0, 7.0])
        assert norm.apply(np.array([7.0])).tolist() == [0.0]
        assert norm.apply(np.array([123.0])).tolist() == [0.0]

    def test_no_clamping(self):
        norm = Normalizer.fit([10.0, 20.0])
        assert norm.apply(np.array([25.0])).tolist() == [1.5]

    def test_apply_bounds_on_training_data(self):
        rng = np.random.default_rng(2)
        series = rng.random((100, 3)) * 50 - 10
        norm = Normalizer.fit(series)
        out = norm.apply(series)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_invert_is_exact_inverse(self):
        rng = np.random.default_rng(4)
        series = rng.random((50, 2)) * 100
        norm = Normalizer.fit(series)
        back = norm.invert(norm.apply(series))
        np.testing.assert_allclose(back, series, rtol=1e-12)

    def test_fit_empty_rejected(self):
        with pytest.raises(InsufficientDataError):
            Normalizer.fit(np.zeros((0, 2)))

    def test_dict_round_trip(self):
        norm = Normalizer.fit(np.array([[1.0, 2.0], [3.0, 5.0]]))
        again = Normalizer.from_dict(norm.to_dict())
        np.testing.assert_array_equal(again.vmin, norm.vmin)
        np.testing.assert_array_equal(again.vmax, norm.vmax)


def test_layout_json_round_trip():
    layout = SignalLayout(
        "id2", 3, [SignalSpec("id2", 0, 0, 10), SignalSpec("id2", 1, 12, 12)],
        [(10, 2)],
    )
    again = SignalLayout.from_json(layout.to_json())
    assert again.msg_id == "id2"
    assert again.dlc == 3
    assert [(s.start_bit, s.bit_length) for s in again.specs] == [(0, 10), (12, 12)]
    assert again.static_fields == [(10, 2)]


def test_layout_json_rejects_gaps_and_overlaps():
    with pytest.raises(ValueError, match="tile"):  # gap at bit 4
        SignalLayout.from_json(
            '{"msg_id": 1, "signals": [{"start_bit": 0, "bit_length": 4},'
            ' {"start_bit": 5, "bit_length": 4}], "static_fields": []}'
        )
    with pytest.raises(ValueError, match="tile"):  # overlap at bit 2
        SignalLayout.from_json(
            '{"msg_id": 1, "signals": [{"start_bit": 0, "bit_length": 6},'
            ' {"start_bit": 2, "bit_length": 2}], "static_fields": []}'
        )
    with pytest.raises(ValueError, match="byte"):  # 6 bits is no whole payload
        SignalLayout.from_json(
            '{"msg_id": 1, "signals": [{"start_bit": 0, "bit_length": 6}],'
            ' "static_fields": []}'
        )
