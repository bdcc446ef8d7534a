"""Per-kernel operation counters.

Counters record logical memory passes over vector operands (in units of
full n-by-m vector sweeps), floating-point work, and skipped kernel
bodies.  They are the observable behind two contracts: fused kernels
make strictly fewer passes than their unfused composition, and kernels
honor certified-zero flags by not touching memory.

Counts are attributed at the kernel-contract level, so both the
compiled and the pure-python backend report identical numbers for the
same call sequence.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field


@dataclass
class KernelCounter:
    calls: int = 0
    vector_reads: int = 0
    vector_writes: int = 0
    flops: int = 0
    skips: int = 0


@dataclass
class Counters:
    enabled: bool = True
    kernels: dict[str, KernelCounter] = field(
        default_factory=lambda: defaultdict(KernelCounter)
    )

    def record(self, kernel: str, reads: int = 0, writes: int = 0, flops: int = 0):
        if not self.enabled:
            return
        c = self.kernels[kernel]
        c.calls += 1
        c.vector_reads += reads
        c.vector_writes += writes
        c.flops += flops

    def record_skip(self, kernel: str):
        if not self.enabled:
            return
        c = self.kernels[kernel]
        c.calls += 1
        c.skips += 1

    def reset(self):
        self.kernels.clear()

    def get(self, kernel: str) -> KernelCounter:
        return self.kernels[kernel]

    def total(self, attr: str) -> int:
        return sum(getattr(c, attr) for c in self.kernels.values())

    def report(self) -> str:
        lines = ["kernel                     calls    reads   writes    skips"]
        for name in sorted(self.kernels):
            c = self.kernels[name]
            lines.append(
                f"{name:<24} {c.calls:>8} {c.vector_reads:>8}"
                f" {c.vector_writes:>8} {c.skips:>8}"
            )
        return "\n".join(lines)


#: Process-global counter registry used by the blas/blas2 dispatch layer.
counters = Counters()
