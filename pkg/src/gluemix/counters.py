"""Per-context operation counters used for cost accounting.

A counter object is owned by one run/phase (never global), so parallel
runs each keep their own tallies. Every forward pass, backward pass,
parameter blend, and expert inner-product sweep adds to the owning
context's counts.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class OpCounters:
    forwards: int = 0
    backwards: int = 0
    blends: int = 0
    inner_products: int = 0

    def snapshot(self) -> "OpCounters":
        return OpCounters(self.forwards, self.backwards, self.blends, self.inner_products)

    def as_dict(self) -> dict:
        return {
            "forwards": self.forwards,
            "backwards": self.backwards,
            "blends": self.blends,
            "inner_products": self.inner_products,
        }

    def __sub__(self, other: "OpCounters") -> "OpCounters":
        return OpCounters(
            self.forwards - other.forwards,
            self.backwards - other.backwards,
            self.blends - other.blends,
            self.inner_products - other.inner_products,
        )
