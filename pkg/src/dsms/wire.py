"""Shared-medium frame: one communication round in a single octet string.

Layout, all multi-octet fields little-endian::

    offset  size  field
    0       1     version (= 1)
    1       1     n, number of agent blocks
    2       2     p, original message length (u16)
    4       3n    per agent: agent_id (u8), k (u16), agent_ids strictly increasing
    4+3n    8*sum(k)
                  payload: for each agent in header order, k coefficients as
                  (real, imag) pairs of IEEE-754 binary32

One coefficient occupies two bandwidth units of 4 octets each, so a frame is
exactly ``4 + 3n + 4 * sum(b_i)`` octets with ``b_i = 2 * k_i``.
"""
from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from .codec import ClippedSpectrum, num_coefficients
from .errors import FrameBuildError, MalformedFrameError

VERSION = 1
HEADER = struct.Struct("<BBH")
AGENT_HEADER = struct.Struct("<BH")
OCTETS_PER_UNIT = 4


def frame_size(budgets: Sequence[int]) -> int:
    return HEADER.size + AGENT_HEADER.size * len(budgets) + OCTETS_PER_UNIT * int(sum(budgets))


def encode_frame(budgets: Sequence[int], msgs: Sequence[ClippedSpectrum], agent_ids: Sequence[int] | None = None) -> bytes:
    n = len(msgs)
    if len(budgets) != n:
        raise FrameBuildError(f"{len(budgets)} budgets for {n} messages")
    if n > 255:
        raise FrameBuildError(f"at most 255 agents per frame, got {n}")
    if agent_ids is None:
        agent_ids = range(n)
    agent_ids = [int(a) for a in agent_ids]
    if len(agent_ids) != n:
        raise FrameBuildError("agent_ids length does not match messages")
    if any(not 0 <= a <= 255 for a in agent_ids) or any(a >= b for a, b in zip(agent_ids, agent_ids[1:])):
        raise FrameBuildError(f"agent_ids must be strictly increasing octets, got {agent_ids}")
    p = msgs[0].original_len if n else 0
    if not 0 <= p <= 0xFFFF:
        raise FrameBuildError(f"message length {p} does not fit in 16 bits")
    parts = [HEADER.pack(VERSION, n, p)]
    payload = []
    for aid, b, m in zip(agent_ids, budgets, msgs):
        if m.original_len != p:
            raise FrameBuildError("all messages in a frame must share the same length p")
        if int(b) != m.budget:
            raise FrameBuildError(f"agent {aid}: budget {b} but message carries {m.k} coefficients")
        parts.append(AGENT_HEADER.pack(aid, m.k))
        pairs = np.empty((m.k, 2), dtype="<f4")
        pairs[:, 0] = m.coefficients.real
        pairs[:, 1] = m.coefficients.imag
        payload.append(pairs.tobytes())
    return b"".join(parts + payload)


def parse_frame(data: bytes) -> tuple[list[int], list[ClippedSpectrum]]:
    """Decode a frame into (agent_ids, messages)."""
    data = bytes(data)
    if len(data) < HEADER.size:
        raise MalformedFrameError("truncated frame header", len(data))
    version, n, p = HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise MalformedFrameError(f"unknown frame version {version}", 0)
    off = HEADER.size
    if len(data) < off + AGENT_HEADER.size * n:
        raise MalformedFrameError("truncated agent headers", len(data))
    ids, ks = [], []
    for _ in range(n):
        aid, k = AGENT_HEADER.unpack_from(data, off)
        if ids and aid <= ids[-1]:
            raise MalformedFrameError(f"agent id {aid} not greater than {ids[-1]}", off)
        if k < 1 or k > num_coefficients(p):
            raise MalformedFrameError(f"agent {aid}: {k} coefficients invalid for p={p}", off + 1)
        ids.append(aid)
        ks.append(k)
        off += AGENT_HEADER.size
    expected = off + 8 * sum(ks)
    if len(data) < expected:
        raise MalformedFrameError(f"truncated payload: need {expected} octets, have {len(data)}", len(data))
    if len(data) > expected:
        raise MalformedFrameError(f"{len(data) - expected} trailing octets", expected)
    values = np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64)
    msgs = []
    pos = 0
    for k in ks:
        pairs = values[pos : pos + 2 * k]
        msgs.append(ClippedSpectrum(pairs[0::2] + 1j * pairs[1::2], p))
        pos += 2 * k
    return ids, msgs


def decode_frame(data: bytes) -> tuple[np.ndarray, list[ClippedSpectrum]]:
    _, msgs = parse_frame(data)
    return np.array([m.budget for m in msgs], dtype=np.int64), msgs


def hexdump(data: bytes) -> str:
    """Annotated hex listing of a frame, one field per line."""
    data = bytes(data)
    lines = []

    def emit(off, size, label):
        chunk = data[off : off + size]
        lines.append(f"{off:06x}  {chunk.hex(' '):<24}  {label}")

    version, n, p = HEADER.unpack_from(data, 0)
    emit(0, 1, f"version={version}")
    emit(1, 1, f"n={n}")
    emit(2, 2, f"p={p}")
    off = HEADER.size
    ks = []
    for _ in range(n):
        aid, k = AGENT_HEADER.unpack_from(data, off)
        emit(off, 3, f"agent_id={aid} k={k} (budget {2 * k})")
        ks.append((aid, k))
        off += 3
    for aid, k in ks:
        for j in range(k):
            re, im = struct.unpack_from("<ff", data, off)
            emit(off, 8, f"agent {aid} coef {j}: {re:+.6g} {im:+.6g}j")
            off += 8
    lines.append(f"total {len(data)} octets")
    return "\n".join(lines)
