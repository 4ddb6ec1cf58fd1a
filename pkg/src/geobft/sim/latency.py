"""Region latency and bandwidth matrices."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

REGIONS = ("Oregon", "Iowa", "Montreal", "Belgium", "Taiwan", "Sydney")

# Ping round-trip times in ms between Google Cloud regions.
_RTT = (
    (0, 38, 65, 136, 118, 161),
    (38, 0, 33, 98, 153, 172),
    (65, 33, 0, 82, 186, 202),
    (136, 98, 82, 0, 252, 270),
    (118, 153, 186, 252, 0, 137),
    (161, 172, 202, 270, 137, 0),
)

# Measured bandwidth in Mbit/s; the diagonal is the intra-region rate.
_BANDWIDTH = (
    (7998, 669, 371, 194, 188, 136),
    (669, 10004, 752, 243, 144, 120),
    (371, 752, 7977, 283, 111, 102),
    (194, 243, 283, 9728, 79, 66),
    (188, 144, 111, 79, 7998, 160),
    (136, 120, 102, 66, 160, 7977),
)


@dataclass(frozen=True)
class LatencyMatrix:
    """Symmetric per-region round-trip times and bandwidths.

    Regions are addressed 1-based, matching cluster indices.
    """

    regions: tuple[str, ...]
    rtt_ms: tuple[tuple[float, ...], ...]
    bandwidth_mbps: tuple[tuple[float, ...], ...] | None = None
    intra_ms: float = 0.5
    jitter_pct: float = 10.0

    def __post_init__(self) -> None:
        k = len(self.regions)
        if len(self.rtt_ms) != k or any(len(row) != k for row in self.rtt_ms):
            raise ValueError("rtt matrix must be square over the regions")
        for i in range(k):
            for j in range(k):
                if self.rtt_ms[i][j] != self.rtt_ms[j][i] or self.rtt_ms[i][j] < 0:
                    raise ValueError("rtt matrix must be symmetric and non-negative")
            if self.rtt_ms[i][i] > 2 * self.intra_ms:
                raise ValueError("diagonal exceeds the intra-cluster delay")
        if self.bandwidth_mbps is not None:
            bw = self.bandwidth_mbps
            if len(bw) != k or any(len(row) != k for row in bw):
                raise ValueError("bandwidth matrix must be square over the regions")
            if any(v <= 0 for row in bw for v in row):
                raise ValueError("bandwidth must be positive")
        if self.jitter_pct < 0 or self.intra_ms < 0:
            raise ValueError("negative jitter or intra-cluster delay")

    @classmethod
    def table1(cls, names: Sequence[str] | int = 4, intra_ms: float = 0.5, jitter_pct: float = 10.0) -> "LatencyMatrix":
        if isinstance(names, int):
            if not 1 <= names <= len(REGIONS):
                raise ValueError(f"the measured table covers {len(REGIONS)} regions")
            names = REGIONS[:names]
        idx = []
        for name in names:
            matches = [i for i, r in enumerate(REGIONS) if r.lower() == name.strip().lower()]
            if not matches:
                raise ValueError(f"unknown region {name!r}")
            idx.append(matches[0])
        rtt = tuple(tuple(float(_RTT[a][b]) for b in idx) for a in idx)
        bw = tuple(tuple(float(_BANDWIDTH[a][b]) for b in idx) for a in idx)
        return cls(tuple(REGIONS[i] for i in idx), rtt, bw, intra_ms, jitter_pct)

    @classmethod
    def uniform(cls, k: int, rtt: float = 0.0, intra_ms: float = 0.5, jitter_pct: float = 0.0) -> "LatencyMatrix":
        rows = tuple(tuple(0.0 if i == j else float(rtt) for j in range(k)) for i in range(k))
        return cls(tuple(f"region{i + 1}" for i in range(k)), rows, None, intra_ms, jitter_pct)

    def __len__(self) -> int:
        return len(self.regions)

    def base_delay(self, a: int, b: int) -> float:
        """One-way propagation delay between regions ``a`` and ``b``."""
        if a == b:
            return self.intra_ms
        return self.rtt_ms[a - 1][b - 1] / 2.0

    def bandwidth(self, a: int, b: int) -> float | None:
        if self.bandwidth_mbps is None:
            return None
        return self.bandwidth_mbps[a - 1][b - 1]

    def serialization_ms(self, a: int, b: int, size: int) -> float:
        bw = self.bandwidth(a, b)
        if bw is None:
            return 0.0
        return size * 8.0 / (bw * 1000.0)


TABLE1 = LatencyMatrix.table1(6)


def deliver_delay(src, dst, matrix: LatencyMatrix, rng: random.Random,
                  region_of: Callable = lambda node: node.cluster) -> float:
    """Propagation delay from ``src`` to ``dst`` in ms, with seeded jitter
    of up to ``jitter_pct`` percent of the base delay on inter-region links."""
    a, b = region_of(src), region_of(dst)
    base = matrix.base_delay(a, b)
    if a == b or matrix.jitter_pct == 0:
        return base
    return base + rng.uniform(0.0, base * matrix.jitter_pct / 100.0)
