"""Branch-connection states of the network.

A state is an n-bit word where bit ``l`` (1-based) is the connection of
branch ``l``: 1 = in service, 0 = tripped. Written as a bit string, the
leftmost character is branch n and the rightmost is branch 1, so the word
read as a binary number is ``bits`` and the state index is ``bits + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DimensionMismatchError


@dataclass(frozen=True, order=True)
class TopologyState:
    n: int
    bits: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state needs at least one branch")
        if self.bits < 0 or self.bits >> self.n:
            raise ValueError(f"bits {self.bits:#x} do not fit in {self.n} branches")

    @classmethod
    def all_on(cls, n: int) -> "TopologyState":
        return cls(n, (1 << n) - 1)

    @classmethod
    def from_outages(cls, n: int, outaged: Iterable[int]) -> "TopologyState":
        bits = (1 << n) - 1
        for l in outaged:
            if not 1 <= l <= n:
                raise ValueError(f"branch id {l} outside 1..{n}")
            bits &= ~(1 << (l - 1))
        return cls(n, bits)

    @classmethod
    def from_string(cls, s: str) -> "TopologyState":
        """Parse a bit string with branch n on the left, e.g. ``"101"``."""
        s = s.strip().replace("_", "")
        if not s or set(s) - {"0", "1"}:
            raise ValueError(f"not a bit string: {s!r}")
        return cls(len(s), int(s, 2))

    @classmethod
    def from_index(cls, n: int, index: int) -> "TopologyState":
        if not 1 <= index <= (1 << n):
            raise ValueError(f"state index {index} outside 1..2^{n}")
        return cls(n, index - 1)

    @classmethod
    def from_hex(cls, n: int, text: str) -> "TopologyState":
        return cls(n, int(text, 16))

    @classmethod
    def from_mask(cls, mask) -> "TopologyState":
        mask = np.asarray(mask, dtype=bool)
        bits = 0
        for l in np.flatnonzero(mask):
            bits |= 1 << int(l)
        return cls(len(mask), bits)

    @property
    def index(self) -> int:
        return self.bits + 1

    def is_on(self, branch: int) -> bool:
        return bool((self.bits >> (branch - 1)) & 1)

    def outaged(self) -> tuple[int, ...]:
        return tuple(l for l in range(1, self.n + 1) if not (self.bits >> (l - 1)) & 1)

    def connected(self) -> tuple[int, ...]:
        return tuple(l for l in range(1, self.n + 1) if (self.bits >> (l - 1)) & 1)

    def mask(self) -> np.ndarray:
        """Boolean array, entry ``l-1`` true when branch ``l`` is on."""
        return np.array([(self.bits >> l) & 1 for l in range(self.n)], dtype=bool)

    def without(self, branches: Iterable[int]) -> "TopologyState":
        bits = self.bits
        for l in branches:
            bits &= ~(1 << (l - 1))
        return TopologyState(self.n, bits)

    def newly_outaged(self, successor: "TopologyState") -> tuple[int, ...]:
        """Branches on here and off in ``successor``."""
        check_same_width(self, successor)
        diff = self.bits & ~successor.bits
        return tuple(l for l in range(1, self.n + 1) if (diff >> (l - 1)) & 1)

    def can_reach(self, successor: "TopologyState") -> bool:
        """True when ``successor`` reconnects nothing (``i | j == i``)."""
        check_same_width(self, successor)
        return (self.bits | successor.bits) == self.bits

    def to_hex(self) -> str:
        return format(self.bits, "x")

    def __str__(self) -> str:
        return format(self.bits, f"0{self.n}b")


def check_same_width(a: TopologyState, b: TopologyState) -> None:
    if a.n != b.n:
        raise DimensionMismatchError(f"states have {a.n} and {b.n} bits")
