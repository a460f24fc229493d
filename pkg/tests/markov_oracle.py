"""Dense reference chain for small n, written directly from the product law."""

from __future__ import annotations

import numpy as np


def brute_row(bits: int, n: int, lam) -> np.ndarray:
    """Row ``bits`` of the 2^n x 2^n transition matrix (index = bits)."""
    row = np.zeros(2 ** n)
    for j in range(2 ** n):
        if bits | j != bits:
            continue
        p = 1.0
        for l in range(n):
            if (bits >> l) & 1:
                p *= lam[l] if not (j >> l) & 1 else 1.0 - lam[l]
        row[j] = p
    return row


def brute_matrix(n: int, lam_of) -> np.ndarray:
    """``lam_of(bits) -> lambda vector`` for each source state."""
    return np.array([brute_row(i, n, lam_of(i)) for i in range(2 ** n)])


def brute_trajectory(x0: np.ndarray, p: np.ndarray, steps: int, eps: float = 0.0):
    out = [x0]
    for _ in range(steps):
        x = out[-1] @ p
        out.append(np.where(x > eps, x, 0.0))
    return out

