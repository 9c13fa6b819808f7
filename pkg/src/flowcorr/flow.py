"""Canonical flow keys and the backing stateful flow table."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .trace_io import PacketRecord, has_ports


class FlowKey(NamedTuple):
    ip_lo: int
    port_lo: int
    ip_hi: int
    port_hi: int
    proto: int


def canonical_key(p: PacketRecord) -> FlowKey:
    """Direction-insensitive 5-tuple; the smaller (address, port) end goes first."""
    if has_ports(p.ip_proto):
        a = (p.ipv4_src, p.src_port)
        b = (p.ipv4_dst, p.dst_port)
    else:
        a = (p.ipv4_src, 0)
        b = (p.ipv4_dst, 0)
    if b < a:
        a, b = b, a
    return FlowKey(a[0], a[1], b[0], b[1], p.ip_proto)


class InvariantViolation(RuntimeError):
    pass


@dataclass(slots=True)
class FlowTableEntry:
    flow_id: int
    flow_packets: int = 0
    ref_count: int = 0
    burst_count: int = 0
    cached: bool = False
    marked_dormant: bool = False


class FlowTable:
    """Unbounded table of every flow seen during a run.

    Flow ids are dense and assigned in order of first sight.  With
    ``strict`` set, a hit on an uncached entry raises; otherwise it is
    counted in ``violations``.
    """

    def __init__(self, strict: bool = True):
        self._entries: dict[FlowKey, FlowTableEntry] = {}
        self.strict = strict
        self.violations = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: FlowKey) -> bool:
        return key in self._entries

    def get(self, key: FlowKey) -> FlowTableEntry | None:
        return self._entries.get(key)

    def entries(self):
        return self._entries.values()

    def observe(self, key: FlowKey, ts: int = 0) -> tuple[FlowTableEntry, bool]:
        entry = self._entries.get(key)
        is_new = entry is None
        if is_new:
            entry = FlowTableEntry(len(self._entries))
            self._entries[key] = entry
        entry.flow_packets += 1
        return entry, is_new

    def on_cache_insert(self, entry: FlowTableEntry) -> None:
        if entry.cached:
            self._violation(f"insert of already cached flow {entry.flow_id}")
        entry.cached = True
        entry.ref_count = 0
        entry.burst_count = 0
        entry.marked_dormant = False

    def on_cache_hit(self, entry: FlowTableEntry, was_mru: bool) -> None:
        if not entry.cached:
            self._violation(f"hit on uncached flow {entry.flow_id}")
            return
        entry.ref_count += 1
        if was_mru:
            entry.burst_count += 1

    def on_cache_evict(self, entry: FlowTableEntry) -> None:
        if not entry.cached:
            self._violation(f"evict of uncached flow {entry.flow_id}")
        entry.cached = False
        entry.ref_count = 0
        entry.burst_count = 0
        entry.marked_dormant = False

    def _violation(self, msg: str) -> None:
        if self.strict:
            raise InvariantViolation(msg)
        self.violations += 1
