"""Feature assembly: packet header fields and flow counters to 16-bit table indices.

The catalog covers ids 0-28.  Operators follow the usual conventions:
``^`` is XOR, ``{A, B}`` concatenates with B in the low bits, and
``min(A, N)`` caps a counter.  Capped-at-8 fields take 4 bits in a
concatenation; capped-at-16 fields take 5.  Every assembled value is folded
to 16 bits with :func:`fold16`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trace_io import TCP_FLAG_MASK, PacketRecord

N_FEATURES = 29
INDEX_BITS = 16
INDEX_MASK = (1 << INDEX_BITS) - 1

CAP8_WIDTH = 4
CAP16_WIDTH = 5

RANDOM_FEATURE = 0
NULL_FEATURE = 26

# the five features selected after three rounds of differential gain ranking
SELECTED_FEATURES = (6, 27, 21, 18, 10)

FEATURE_NAMES = {
    0: "uniform_random",
    1: "proto_min_port",
    2: "dst_service",
    3: "src_service",
    4: "flags",
    5: "port_pair",
    6: "tcp_flags_proto_hint",
    7: "ip_pair_upper",
    8: "ip_pair_middle",
    9: "ip_pair_lower",
    10: "flow_packets",
    11: "ip_length",
    12: "flow_id",
    13: "length_x_flow_id",
    14: "ref_count",
    15: "burst_count",
    16: "ref_burst",
    17: "ref_burst_x_flow_id",
    18: "ref_burst_x_ip_upper",
    19: "ref_burst_x_ip_middle",
    20: "ref_burst_x_ip_lower",
    21: "length_x_ip_upper",
    22: "length_x_ip_middle",
    23: "length_x_ip_lower",
    24: "frag_flags_length_flow_id",
    25: "flags_x_ip_upper",
    26: "null",
    27: "length_burst",
    28: "ref_burst_x_length",
}


@dataclass(slots=True)
class FeatureContext:
    packet: PacketRecord
    flow_id: int = 0
    flow_packets: int = 0
    ref_count: int = 0
    burst_count: int = 0
    rng: np.random.Generator | None = None

    @classmethod
    def for_packet(cls, packet: PacketRecord, flow_id: int, entry=None,
                   rng: np.random.Generator | None = None) -> "FeatureContext":
        """Context with stateful fields taken from ``entry`` only when it is cached."""
        if entry is not None and entry.cached:
            return cls(packet, flow_id, entry.flow_packets, entry.ref_count,
                       entry.burst_count, rng)
        return cls(packet, flow_id, 0, 0, 0, rng)


def fold16(v: int) -> int:
    """XOR together the 16-bit limbs of a non-negative integer."""
    out = 0
    while v:
        out ^= v & INDEX_MASK
        v >>= INDEX_BITS
    return out


def _f1(p: PacketRecord) -> int:
    return p.ip_proto ^ min(p.src_port, p.dst_port)


def _ip_xor(p: PacketRecord) -> int:
    return p.ipv4_src ^ p.ipv4_dst


def _f7(p):
    return (_ip_xor(p) >> 16) & 0xFFFF


def _f8(p):
    return (_ip_xor(p) >> 8) & 0xFFFF


def _f9(p):
    return _ip_xor(p) & 0xFFFF


def _f16(c: FeatureContext) -> int:
    return (min(c.ref_count, 8) << CAP8_WIDTH) | min(c.burst_count, 8)


def _raw(fid: int, c: FeatureContext) -> int:
    p = c.packet
    if fid == 0:
        if c.rng is None:
            raise ValueError("feature 0 needs an rng in the context")
        return int(c.rng.integers(0, 1 << INDEX_BITS))
    if fid == 1:
        return _f1(p)
    if fid == 2:
        return (p.ipv4_dst >> 16) ^ p.dst_port
    if fid == 3:
        return (p.ipv4_src >> 16) ^ p.src_port
    if fid == 4:
        return p.flags
    if fid == 5:
        return p.src_port ^ p.dst_port
    if fid == 6:
        return ((p.flags & TCP_FLAG_MASK) << 7) ^ _f1(p)
    if fid == 7:
        return _f7(p)
    if fid == 8:
        return _f8(p)
    if fid == 9:
        return _f9(p)
    if fid == 10:
        return min(c.flow_packets, 16)
    if fid == 11:
        return p.ip_length
    if fid == 12:
        return fold16(c.flow_id)
    if fid == 13:
        return fold16(c.flow_id) ^ p.ip_length
    if fid == 14:
        return min(c.ref_count, 16)
    if fid == 15:
        return min(c.burst_count, 16)
    if fid == 16:
        return _f16(c)
    if fid == 17:
        return _f16(c) ^ fold16(c.flow_id)
    if fid == 18:
        return _f16(c) ^ _f7(p)
    if fid == 19:
        return _f16(c) ^ _f8(p)
    if fid == 20:
        return _f16(c) ^ _f9(p)
    if fid == 21:
        return p.ip_length ^ _f7(p)
    if fid == 22:
        return p.ip_length ^ _f8(p)
    if fid == 23:
        return p.ip_length ^ _f9(p)
    if fid == 24:
        return p.ip_frag_offset ^ p.flags ^ p.ip_length ^ fold16(c.flow_id)
    if fid == 25:
        return _f7(p) ^ p.flags
    if fid == 26:
        return 0
    if fid == 27:
        return (p.ip_length << CAP8_WIDTH) | min(c.burst_count, 8)
    if fid == 28:
        return _f16(c) ^ p.ip_length
    raise ValueError(f"unknown feature id {fid}")


def assemble(fid: int, ctx: FeatureContext) -> int:
    """Table index of feature ``fid`` for this packet context."""
    return fold16(_raw(fid, ctx))


def assemble_vector(enabled: Sequence[int], ctx: FeatureContext) -> tuple[int, ...]:
    return tuple(fold16(_raw(fid, ctx)) for fid in enabled)


def validate_feature_ids(ids: Sequence[int]) -> tuple[int, ...]:
    out = tuple(int(i) for i in ids)
    for i in out:
        if not 0 <= i < N_FEATURES:
            raise ValueError(f"unknown feature id {i}")
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate feature ids in {out}")
    return out


def parse_feature_list(text: str) -> tuple[int, ...]:
    """Parse ``"6,27,21"`` style lists."""
    text = text.strip()
    if not text:
        return ()
    return validate_feature_ids([int(t) for t in text.split(",") if t.strip()])


def table_size(fid: int, index_bits: int = INDEX_BITS) -> int:
    return 1 if fid == NULL_FEATURE else 1 << index_bits
