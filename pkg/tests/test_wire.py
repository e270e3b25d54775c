import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsms import codec, wire
from dsms.errors import FrameBuildError, MalformedFrameError


def random_round(rng, n, p=32):
    K = p // 2 + 1
    ks = rng.integers(1, K + 1, size=n)
    msgs = []
    for k in ks:
        c = rng.normal(size=k).astype(np.float32) + 1j * rng.normal(size=k).astype(np.float32)
        msgs.append(codec.ClippedSpectrum(c.astype(np.complex128), p))
    return 2 * ks, msgs


def test_single_agent_frame_layout():
    msg = codec.ClippedSpectrum(np.array([1.0 + 0j]), 32)
    frame = wire.encode_frame([2], [msg])
    assert len(frame) == 15
    assert frame == bytes([1, 1]) + struct.pack("<H", 32) + bytes([0]) + struct.pack("<H", 1) + struct.pack("<ff", 1.0, 0.0)


def test_empty_frame_is_header_only():
    frame = wire.encode_frame([], [])
    assert len(frame) == 4
    budgets, msgs = wire.decode_frame(frame)
    assert budgets.size == 0 and msgs == []


def test_random_rounds_round_trip_bit_exactly():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        budgets, msgs = random_round(rng, n)
        frame = wire.encode_frame(budgets, msgs)
        assert len(frame) == wire.frame_size(budgets) == 4 + 3 * n + 4 * budgets.sum()
        got_b, got = wire.decode_frame(frame)
        np.testing.assert_array_equal(got_b, budgets)
        for a, b in zip(got, msgs):
            assert a.original_len == b.original_len
            assert a.coefficients.tobytes() == b.coefficients.tobytes()
        assert wire.encode_frame(got_b, got) == frame


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_every_truncation_is_rejected(seed, n):
    budgets, msgs = random_round(np.random.default_rng(seed), n, p=8)
    frame = wire.encode_frame(budgets, msgs)
    for cut in range(len(frame)):
        with pytest.raises(MalformedFrameError):
            wire.decode_frame(frame[:cut])


def test_trailing_octets_rejected():
    budgets, msgs = random_round(np.random.default_rng(1), 3)
    with pytest.raises(MalformedFrameError) as exc:
        wire.decode_frame(wire.encode_frame(budgets, msgs) + b"\x00")
    assert exc.value.offset == wire.frame_size(budgets)


def test_unknown_version_rejected_at_offset_zero():
    frame = bytearray(wire.encode_frame(*random_round(np.random.default_rng(2), 2)))
    frame[0] = 2
    with pytest.raises(MalformedFrameError) as exc:
        wire.decode_frame(bytes(frame))
    assert exc.value.offset == 0


def test_non_monotone_ids_rejected_with_offset():
    budgets, msgs = random_round(np.random.default_rng(3), 3)
    frame = bytearray(wire.encode_frame(budgets, msgs))
    frame[4 + 3] = 0  # second agent id repeats the first
    with pytest.raises(MalformedFrameError) as exc:
        wire.decode_frame(bytes(frame))
    assert exc.value.offset == 7


def test_oversized_k_rejected():
    frame = bytearray(wire.encode_frame(*random_round(np.random.default_rng(4), 1, p=4)))
    frame[5:7] = struct.pack("<H", 4)
    with pytest.raises(MalformedFrameError):
        wire.decode_frame(bytes(frame))


def test_custom_agent_ids_survive():
    budgets, msgs = random_round(np.random.default_rng(5), 3)
    ids, _ = wire.parse_frame(wire.encode_frame(budgets, msgs, agent_ids=[1, 4, 9]))
    assert ids == [1, 4, 9]


def test_build_errors():
    budgets, msgs = random_round(np.random.default_rng(6), 2)
    with pytest.raises(FrameBuildError):
        wire.encode_frame(budgets[:1], msgs)
    with pytest.raises(FrameBuildError):
        wire.encode_frame(budgets + 2, msgs)
    with pytest.raises(FrameBuildError):
        wire.encode_frame(budgets, msgs, agent_ids=[3, 3])
    with pytest.raises(FrameBuildError):
        wire.encode_frame(budgets, [msgs[0], codec.ClippedSpectrum(msgs[1].coefficients, 40)])


def test_hexdump_annotates_every_field():
    budgets, msgs = random_round(np.random.default_rng(7), 2)
    frame = wire.encode_frame(budgets, msgs)
    text = wire.hexdump(frame)
    assert "version=1" in text and "n=2" in text and "p=32" in text
    assert text.count("coef") == sum(m.k for m in msgs)
    assert text.endswith(f"total {len(frame)} octets")
