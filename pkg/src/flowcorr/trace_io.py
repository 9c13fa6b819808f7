"""Packet trace ingestion, native text interchange and synthetic trace generation.

Every producer in this module yields :class:`PacketRecord` objects with
non-decreasing ``ts_ns``.  Capture files are parsed with :mod:`struct`; only
the classic (non block-based) capture format is understood.
"""
from __future__ import annotations

import io
import ipaddress
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, Sequence, TextIO

import numpy as np

# packed flag group, fixed bit layout
SYN = 1 << 0
FIN = 1 << 1
RST = 1 << 2
PSH = 1 << 3
ACK = 1 << 4
URG = 1 << 5
DF = 1 << 6
MF = 1 << 7
TCP_FLAG_MASK = 0x3F

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

ETH_IPV4 = 0x0800
ETH_VLAN = 0x8100

# on-wire TCP flag bit -> packed bit
_TCP_WIRE_TO_PACKED = (
    (0x02, SYN),
    (0x01, FIN),
    (0x04, RST),
    (0x08, PSH),
    (0x10, ACK),
    (0x20, URG),
)


class TraceFormatError(ValueError):
    """Raised for malformed capture or native trace input."""


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts_ns: int
    ipv4_src: int
    ipv4_dst: int
    ip_proto: int
    src_port: int = 0
    dst_port: int = 0
    ip_length: int = 0
    flags: int = 0
    ip_frag_offset: int = 0

    def reversed(self) -> "PacketRecord":
        """The same packet travelling in the opposite direction."""
        return PacketRecord(
            self.ts_ns, self.ipv4_dst, self.ipv4_src, self.ip_proto,
            self.dst_port, self.src_port, self.ip_length, self.flags,
            self.ip_frag_offset,
        )


def has_ports(proto: int) -> bool:
    return proto in (PROTO_TCP, PROTO_UDP)


# --------------------------------------------------------------------------
# monotone restamping

class _Restamper:
    """Clamp timestamps to the running maximum, counting adjustments."""

    def __init__(self) -> None:
        self.high = None
        self.adjusted = 0

    def __call__(self, ts: int) -> int:
        if self.high is None or ts >= self.high:
            self.high = ts
            return ts
        self.adjusted += 1
        return self.high


# --------------------------------------------------------------------------
# classic capture files

class PcapReader:
    """Iterate the IPv4 packets of a classic capture stream.

    After iteration, ``skipped`` counts non-IPv4 frames and ``adjusted``
    counts packets whose timestamps were clamped to keep the stream
    monotone.
    """

    def __init__(self, stream: BinaryIO):
        self._stream = stream
        self.skipped = 0
        self.adjusted = 0
        self._offset = 0
        header = stream.read(24)
        if len(header) < 24:
            raise TraceFormatError(
                f"capture global header truncated: {len(header)} of 24 bytes")
        self._offset = 24
        magic_le = struct.unpack("<I", header[:4])[0]
        if magic_le in (PCAP_MAGIC, PCAP_MAGIC_NS):
            self._endian = "<"
            magic = magic_le
        else:
            magic_be = struct.unpack(">I", header[:4])[0]
            if magic_be not in (PCAP_MAGIC, PCAP_MAGIC_NS):
                raise TraceFormatError(f"bad capture magic 0x{magic_le:08x}")
            self._endian = ">"
            magic = magic_be
        self.nanosecond = magic == PCAP_MAGIC_NS
        (self.version_major, self.version_minor, _zone, _sigfigs,
         self.snaplen, self.linktype) = struct.unpack(
            self._endian + "HHiIII", header[4:])
        if self.linktype != LINKTYPE_ETHERNET:
            raise TraceFormatError(f"unsupported link type {self.linktype}")

    @property
    def byte_order(self) -> str:
        return "little" if self._endian == "<" else "big"

    def __iter__(self) -> Iterator[PacketRecord]:
        restamp = _Restamper()
        first_ns = None
        rec_fmt = self._endian + "IIII"
        while True:
            start = self._offset
            hdr = self._stream.read(16)
            if not hdr:
                break
            if len(hdr) < 16:
                raise TraceFormatError(
                    f"truncated packet record header at byte offset {start}")
            ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(rec_fmt, hdr)
            data = self._stream.read(incl_len)
            if len(data) < incl_len:
                raise TraceFormatError(
                    f"truncated packet data at byte offset {start}: "
                    f"expected {incl_len} bytes, got {len(data)}")
            self._offset = start + 16 + incl_len
            ts = ts_sec * 1_000_000_000 + (ts_frac if self.nanosecond else ts_frac * 1000)
            pkt = _decode_ethernet(data)
            if pkt is None:
                self.skipped += 1
                continue
            if first_ns is None:
                first_ns = ts
            rel = restamp(ts - first_ns)
            self.adjusted = restamp.adjusted
            yield _with_ts(pkt, rel)


def _with_ts(p: PacketRecord, ts: int) -> PacketRecord:
    return PacketRecord(ts, p.ipv4_src, p.ipv4_dst, p.ip_proto, p.src_port,
                        p.dst_port, p.ip_length, p.flags, p.ip_frag_offset)


def _decode_ethernet(frame: bytes) -> PacketRecord | None:
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    off = 14
    if ethertype == ETH_VLAN:
        if len(frame) < 18:
            return None
        ethertype = struct.unpack_from("!H", frame, 16)[0]
        off = 18
    if ethertype != ETH_IPV4:
        return None
    return _decode_ipv4(frame, off)


def _decode_ipv4(frame: bytes, off: int) -> PacketRecord | None:
    if len(frame) < off + 20:
        return None
    ver_ihl, _tos, total_len, _ident, frag, _ttl, proto, _csum, src, dst = \
        struct.unpack_from("!BBHHHBBHII", frame, off)
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    flags = 0
    if frag & 0x4000:
        flags |= DF
    if frag & 0x2000:
        flags |= MF
    frag_offset = frag & 0x1FFF
    sport = dport = 0
    l4 = off + ihl
    # ports only live in the first fragment
    if has_ports(proto) and frag_offset == 0 and len(frame) >= l4 + 4:
        sport, dport = struct.unpack_from("!HH", frame, l4)
        if proto == PROTO_TCP and len(frame) >= l4 + 14:
            wire = frame[l4 + 13]
            for bit, packed in _TCP_WIRE_TO_PACKED:
                if wire & bit:
                    flags |= packed
    return PacketRecord(0, src, dst, proto, sport, dport, total_len, flags,
                        frag_offset)


def parse_pcap(stream: BinaryIO) -> list[PacketRecord]:
    """Parse a whole classic capture stream into packet records."""
    return list(PcapReader(stream))


def _encode_frame(p: PacketRecord) -> bytes:
    frag = p.ip_frag_offset & 0x1FFF
    if p.flags & DF:
        frag |= 0x4000
    if p.flags & MF:
        frag |= 0x2000
    if p.ip_proto == PROTO_TCP:
        wire = 0
        for bit, packed in _TCP_WIRE_TO_PACKED:
            if p.flags & packed:
                wire |= bit
        l4 = struct.pack("!HHIIBBHHH", p.src_port, p.dst_port, 0, 0, 5 << 4,
                         wire, 65535, 0, 0)
    elif p.ip_proto == PROTO_UDP:
        l4 = struct.pack("!HHHH", p.src_port, p.dst_port,
                         max(8, p.ip_length - 20) & 0xFFFF, 0)
    else:
        l4 = b""
    ip = struct.pack("!BBHHHBBHII", 0x45, 0, p.ip_length, 0, frag, 64,
                     p.ip_proto, 0, p.ipv4_src, p.ipv4_dst)
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + \
        struct.pack("!H", ETH_IPV4)
    return eth + ip + l4


def write_pcap(packets: Iterable[PacketRecord], stream: BinaryIO,
               byte_order: str = "little") -> None:
    """Write headers-only Ethernet/IPv4 frames as a nanosecond capture file."""
    e = "<" if byte_order == "little" else ">"
    stream.write(struct.pack(e + "IHHiIII", PCAP_MAGIC_NS, 2, 4, 0, 0, 65535,
                             LINKTYPE_ETHERNET))
    for p in packets:
        frame = _encode_frame(p)
        sec, ns = divmod(p.ts_ns, 1_000_000_000)
        stream.write(struct.pack(e + "IIII", sec, ns, len(frame), len(frame)))
        stream.write(frame)


# --------------------------------------------------------------------------
# native text format

NATIVE_FIELDS = ("ts_ns", "src_ip", "dst_ip", "proto", "src_port", "dst_port",
                 "ip_length", "flags", "frag_offset")

_LIMITS = (None, None, None, 0xFF, 0xFFFF, 0xFFFF, 0xFFFF, 0xFF, 0x1FFF)


def _ip_to_int(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


def _int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def iter_native(stream: TextIO) -> Iterator[PacketRecord]:
    restamp = _Restamper()
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise TraceFormatError(
                f"line {lineno}: expected 9 fields, got {len(parts)}")
        try:
            ts = int(parts[0])
            src = _ip_to_int(parts[1].strip())
            dst = _ip_to_int(parts[2].strip())
            nums = [int(x) for x in parts[3:]]
        except ValueError as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from None
        if ts < 0:
            raise TraceFormatError(f"line {lineno}: negative timestamp")
        for name, value, limit in zip(NATIVE_FIELDS[3:], nums, _LIMITS[3:]):
            if not 0 <= value <= limit:
                raise TraceFormatError(
                    f"line {lineno}: {name}={value} out of range")
        yield PacketRecord(restamp(ts), src, dst, *nums)


def parse_native(stream: TextIO) -> list[PacketRecord]:
    """Parse the comma-separated native trace format.

    Out-of-order timestamps are clamped to the running maximum, the same
    policy the capture parser uses.
    """
    return list(iter_native(stream))


def write_native(packets: Iterable[PacketRecord], stream: TextIO | None = None) -> str | None:
    """Serialize packets in native format.

    Returns the text when ``stream`` is None, otherwise writes to it.
    """
    out = io.StringIO() if stream is None else stream
    for p in packets:
        out.write(f"{p.ts_ns},{_int_to_ip(p.ipv4_src)},{_int_to_ip(p.ipv4_dst)},"
                  f"{p.ip_proto},{p.src_port},{p.dst_port},{p.ip_length},"
                  f"{p.flags},{p.ip_frag_offset}\n")
    if stream is None:
        return out.getvalue()
    return None


def load_trace(path) -> list[PacketRecord]:
    """Load a trace file, sniffing capture magic to pick the parser."""
    with open(path, "rb") as fh:
        head = fh.read(4)
        fh.seek(0)
        if len(head) == 4 and (
            struct.unpack("<I", head)[0] in (PCAP_MAGIC, PCAP_MAGIC_NS)
            or struct.unpack(">I", head)[0] in (PCAP_MAGIC, PCAP_MAGIC_NS)
        ):
            return parse_pcap(fh)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_native(fh)


# --------------------------------------------------------------------------
# synthetic traces

@dataclass(frozen=True)
class Dist:
    """A small integer/real distribution description.

    kinds: ``const`` (value), ``uniform`` (lo, hi inclusive, integer),
    ``geometric`` (mean >= 1), ``exponential`` (mean), ``choice``
    (values, optional weights).
    """

    kind: str
    params: tuple = ()
    weights: tuple | None = None

    @classmethod
    def const(cls, value) -> "Dist":
        return cls("const", (value,))

    @classmethod
    def uniform(cls, lo, hi) -> "Dist":
        return cls("uniform", (lo, hi))

    @classmethod
    def geometric(cls, mean) -> "Dist":
        return cls("geometric", (mean,))

    @classmethod
    def exponential(cls, mean) -> "Dist":
        return cls("exponential", (mean,))

    @classmethod
    def choice(cls, values, weights=None) -> "Dist":
        return cls("choice", tuple(values), None if weights is None else tuple(weights))

    def minimum(self):
        if self.kind == "const":
            return self.params[0]
        if self.kind == "uniform":
            return self.params[0]
        if self.kind == "geometric":
            return 1
        if self.kind == "exponential":
            return 0
        if self.kind == "choice":
            return min(self.params)
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    def sample(self, rng: np.random.Generator) -> float:
        k, p = self.kind, self.params
        if k == "const":
            return p[0]
        if k == "uniform":
            return int(rng.integers(p[0], p[1] + 1))
        if k == "geometric":
            return int(rng.geometric(1.0 / p[0]))
        if k == "exponential":
            return float(rng.exponential(p[0]))
        if k == "choice":
            w = None
            if self.weights is not None:
                w = np.asarray(self.weights, dtype=float)
                w = w / w.sum()
            return p[int(rng.choice(len(p), p=w))]
        raise ValueError(f"unknown distribution kind {k!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "params": list(self.params)}
        if self.weights is not None:
            d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d) -> "Dist":
        w = d.get("weights")
        return cls(d["kind"], tuple(d.get("params", ())), None if w is None else tuple(w))


@dataclass(frozen=True)
class HeaderTemplate:
    proto: int = PROTO_TCP
    # (base address, prefix length)
    src_net: tuple[str, int] = ("10.0.0.0", 8)
    dst_net: tuple[str, int] = ("192.168.0.0", 16)
    src_ports: Dist = Dist.uniform(1024, 65535)
    dst_ports: Dist = Dist.choice((80, 443))
    length: Dist = Dist.const(1500)
    first_flags: int = SYN | DF
    flags: int = ACK | PSH | DF


@dataclass(frozen=True)
class FlowArchetype:
    """One family of flows.

    Flows arrive as a Poisson process of ``arrival_rate`` flows/s (capped at
    ``max_flows`` when set).  Each flow emits ``bursts`` bursts of
    ``burst_len`` packets spaced ``intra_gap_ns`` apart, with
    ``inter_gap_ns`` between the end of one burst and the start of the next.
    """

    name: str
    arrival_rate: float
    burst_len: Dist = Dist.const(1)
    bursts: Dist = Dist.const(1)
    intra_gap_ns: Dist = Dist.const(1_000)
    inter_gap_ns: Dist = Dist.const(1_000_000)
    header: HeaderTemplate = field(default_factory=HeaderTemplate)
    max_flows: int | None = None


@dataclass(frozen=True)
class SyntheticSpec:
    duration_s: float
    archetypes: tuple[FlowArchetype, ...]
    seed: int = 0


def _validate(spec: SyntheticSpec) -> None:
    if spec.duration_s <= 0:
        raise ValueError("duration_s must be positive")
    for a in spec.archetypes:
        if a.arrival_rate <= 0:
            raise ValueError(f"archetype {a.name!r}: arrival_rate must be positive")
        if a.burst_len.minimum() < 1 or a.bursts.minimum() < 1:
            raise ValueError(f"archetype {a.name!r} can produce flows with zero packets")
        if a.max_flows is not None and a.max_flows < 1:
            raise ValueError(f"archetype {a.name!r}: max_flows must be >= 1")


def _draw_addr(rng: np.random.Generator, net: tuple[str, int]) -> int:
    base, plen = net
    b = _ip_to_int(base)
    host_bits = 32 - plen
    if host_bits == 0:
        return b
    mask = ((1 << 32) - 1) ^ ((1 << host_bits) - 1)
    return (b & mask) | int(rng.integers(0, 1 << host_bits))


def _canonical(src, dst, proto, sport, dport):
    a, b = (src, sport), (dst, dport)
    return (proto,) + (a + b if a <= b else b + a)


def generate_synthetic(spec: SyntheticSpec) -> list[PacketRecord]:
    """Generate a deterministic packet trace from ``spec``.

    Every generated flow gets a 5-tuple distinct from all others (draws are
    retried on collision).  The result is the timestamp-ordered merge of all
    flows, shifted so the first packet sits at ``ts_ns == 0``.
    """
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    horizon = int(spec.duration_s * 1e9)
    seen: set = set()
    # (ts, flow_seq, pkt_seq, record) sorts ties by generation order
    events: list[tuple[int, int, int, PacketRecord]] = []
    flow_seq = 0
    for arch in spec.archetypes:
        h = arch.header
        t = 0.0
        n = 0
        while arch.max_flows is None or n < arch.max_flows:
            t += rng.exponential(1e9 / arch.arrival_rate) if n else 0.0
            if t >= horizon:
                break
            for _ in range(64):
                src = _draw_addr(rng, h.src_net)
                dst = _draw_addr(rng, h.dst_net)
                if has_ports(h.proto):
                    sport = int(h.src_ports.sample(rng))
                    dport = int(h.dst_ports.sample(rng))
                else:
                    sport = dport = 0
                ck = _canonical(src, dst, h.proto, sport, dport)
                if ck not in seen:
                    break
            else:
                raise ValueError(f"archetype {arch.name!r}: address space exhausted")
            seen.add(ck)
            ts = int(t)
            k = 0
            for b in range(int(arch.bursts.sample(rng))):
                if b:
                    ts += int(arch.inter_gap_ns.sample(rng))
                for i in range(int(arch.burst_len.sample(rng))):
                    if i:
                        ts += int(arch.intra_gap_ns.sample(rng))
                    if h.proto == PROTO_TCP:
                        fl = h.first_flags if k == 0 else h.flags
                    else:
                        fl = (h.first_flags if k == 0 else h.flags) & (DF | MF)
                    length = int(h.length.sample(rng))
                    events.append((ts, flow_seq, k, PacketRecord(
                        0, src, dst, h.proto, sport, dport, length, fl, 0)))
                    k += 1
            flow_seq += 1
            n += 1
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    if not events:
        return []
    t0 = events[0][0]
    return [_with_ts(e[3], e[0] - t0) for e in events]


def scan_and_bursty_spec(seed: int = 2, duration_s: float = 4.0) -> SyntheticSpec:
    """Reference workload: SYN-only scan flows mixed with bursty sessions.

    Nine of ten flows are single-packet SYN scans aimed at random service
    ports; the rest are sessions that send several bursts of full-size
    packets to web ports with idle gaps in between.
    """
    scan = FlowArchetype(
        name="scan",
        arrival_rate=9_000.0,
        header=HeaderTemplate(
            proto=PROTO_TCP,
            src_net=("172.16.0.0", 12),
            dst_net=("192.168.0.0", 16),
            src_ports=Dist.uniform(1024, 65535),
            dst_ports=Dist.uniform(1, 1023),
            length=Dist.choice((44, 60)),
            first_flags=SYN | DF,
            flags=SYN | DF,
        ),
    )
    bursty = FlowArchetype(
        name="bursty",
        arrival_rate=1_000.0,
        burst_len=Dist.uniform(2, 6),
        bursts=Dist.uniform(3, 8),
        intra_gap_ns=Dist.exponential(20_000),
        inter_gap_ns=Dist.exponential(30_000_000),
        header=HeaderTemplate(
            proto=PROTO_TCP,
            src_net=("10.0.0.0", 8),
            dst_net=("203.0.113.0", 24),
            src_ports=Dist.uniform(32768, 60999),
            dst_ports=Dist.choice((80, 443)),
            length=Dist.choice((60, 576, 1500), (0.2, 0.2, 0.6)),
            first_flags=SYN | DF,
            flags=ACK | PSH | DF,
        ),
    )
    return SyntheticSpec(duration_s=duration_s, archetypes=(scan, bursty), seed=seed)


def spec_to_dict(spec: SyntheticSpec) -> dict:
    def hdr(h: HeaderTemplate) -> dict:
        return {
            "proto": h.proto, "src_net": list(h.src_net), "dst_net": list(h.dst_net),
            "src_ports": h.src_ports.to_dict(), "dst_ports": h.dst_ports.to_dict(),
            "length": h.length.to_dict(), "first_flags": h.first_flags,
            "flags": h.flags,
        }

    return {
        "duration_s": spec.duration_s,
        "seed": spec.seed,
        "archetypes": [
            {
                "name": a.name, "arrival_rate": a.arrival_rate,
                "burst_len": a.burst_len.to_dict(), "bursts": a.bursts.to_dict(),
                "intra_gap_ns": a.intra_gap_ns.to_dict(),
                "inter_gap_ns": a.inter_gap_ns.to_dict(),
                "header": hdr(a.header), "max_flows": a.max_flows,
            }
            for a in spec.archetypes
        ],
    }


def spec_from_dict(d: dict) -> SyntheticSpec:
    archs = []
    for a in d["archetypes"]:
        h = a.get("header", {})
        defaults = HeaderTemplate()
        header = HeaderTemplate(
            proto=h.get("proto", defaults.proto),
            src_net=tuple(h.get("src_net", defaults.src_net)),
            dst_net=tuple(h.get("dst_net", defaults.dst_net)),
            src_ports=Dist.from_dict(h["src_ports"]) if "src_ports" in h else defaults.src_ports,
            dst_ports=Dist.from_dict(h["dst_ports"]) if "dst_ports" in h else defaults.dst_ports,
            length=Dist.from_dict(h["length"]) if "length" in h else defaults.length,
            first_flags=h.get("first_flags", defaults.first_flags),
            flags=h.get("flags", defaults.flags),
        )
        kw = {}
        for key in ("burst_len", "bursts", "intra_gap_ns", "inter_gap_ns"):
            if key in a:
                kw[key] = Dist.from_dict(a[key])
        archs.append(FlowArchetype(name=a["name"], arrival_rate=a["arrival_rate"],
                                   header=header, max_flows=a.get("max_flows"), **kw))
    return SyntheticSpec(duration_s=d["duration_s"], archetypes=tuple(archs),
                         seed=d.get("seed", 0))


# --------------------------------------------------------------------------
# statistics

@dataclass(frozen=True)
class TraceStats:
    packets: int
    distinct_flows: int
    duration_ns: int
    packets_per_s: float
    new_flows_per_s: float


def trace_stats(packets: Iterable[PacketRecord]) -> TraceStats:
    """Single-pass packet and flow-turnover summary of a trace."""
    from .flow import canonical_key

    n = 0
    keys = set()
    first = last = 0
    for p in packets:
        if n == 0:
            first = p.ts_ns
        last = p.ts_ns
        keys.add(canonical_key(p))
        n += 1
    duration = last - first if n else 0
    if duration > 0:
        pps = n / (duration / 1e9)
        nfps = len(keys) / (duration / 1e9)
    else:
        pps = nfps = 0.0
    return TraceStats(n, len(keys), duration, pps, nfps)


def is_monotone(packets: Sequence[PacketRecord]) -> bool:
    return all(a.ts_ns <= b.ts_ns for a, b in zip(packets, packets[1:]))
