import random

import pytest

from flowcorr.trace_io import ACK, PROTO_TCP, PacketRecord, generate_synthetic, scan_and_bursty_spec


def flow_packet(k: int, ts: int = 0, flags: int = ACK, length: int = 100) -> PacketRecord:
    """Packet of toy flow ``k``: 10.0.0.k:(1000+k) -> 192.168.0.1:80."""
    return PacketRecord(ts, 0x0A000000 + k, 0xC0A80001, PROTO_TCP, 1000 + k, 80, length, flags, 0)


def toy_trace(seq) -> list[PacketRecord]:
    """Trace from a flow sequence; letters or ints, 1 us apart."""
    ids = [ord(c) - ord("A") if isinstance(c, str) else c for c in seq]
    return [flow_packet(k, ts=i * 1000) for i, k in enumerate(ids)]


def random_trace(rng: random.Random, length: int, flows: int) -> list[PacketRecord]:
    return toy_trace([rng.randrange(flows) for _ in range(length)])


@pytest.fixture(scope="session")
def shipped_trace():
    return generate_synthetic(scan_and_bursty_spec())


@pytest.fixture(scope="session")
def short_shipped_trace():
    return generate_synthetic(scan_and_bursty_spec(duration_s=2.0))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
