"""Limited-memory BFGS approximation of the Lagrangian Hessian.

The approximation is kept in compact form

    B = xi * I + U M U^T,   U = [xi S, Y],   M = -[[xi S^T S, L], [L^T, -D]]^{-1}

where the columns of ``S`` and ``Y`` are the stored steps and gradient
differences, ``L`` is the strictly lower part of ``S^T Y`` and ``D`` its
diagonal.  Pairs with little curvature are discarded.
"""

from __future__ import annotations

from collections import deque

import numpy as np

__all__ = ["LbfgsMemory", "lbfgs_update"]


class LbfgsMemory:
    """Most recent ``m`` curvature pairs.

    Parameters
    ----------
    m : int
        Memory length.
    curvature_tol : float
        A pair is discarded when ``s^T y <= curvature_tol * |s| * |y|``.
    """

    def __init__(self, m=6, curvature_tol=1e-8, xi_bounds=(1e-8, 1e8)):
        self.m = int(m)
        self.curvature_tol = curvature_tol
        self.xi_bounds = xi_bounds
        self.S = deque(maxlen=self.m)
        self.Y = deque(maxlen=self.m)
        self.xi = 1.0
        self.n_skipped = 0

    def __len__(self):
        return len(self.S)

    def reset(self):
        self.S.clear()
        self.Y.clear()
        self.xi = 1.0

    def update(self, s, y):
        """Store the pair if it has enough curvature; returns whether it was kept."""
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        sy = float(s @ y)
        if not sy > self.curvature_tol * np.linalg.norm(s) * np.linalg.norm(y):
            self.n_skipped += 1
            return False
        self.S.append(s.copy())
        self.Y.append(y.copy())
        lo, hi = self.xi_bounds
        self.xi = float(np.clip((y @ y) / sy, lo, hi))
        return True

    def compact(self):
        """``(xi, U, M)`` with ``B = xi I + U M U^T``; ``U`` is ``None`` when empty."""
        if not self.S:
            return self.xi, None, None
        S = np.column_stack(self.S)
        Y = np.column_stack(self.Y)
        SY = S.T @ Y
        L = np.tril(SY, -1)
        Dg = np.diag(np.diag(SY))
        Q = np.block([[self.xi * (S.T @ S), L], [L.T, -Dg]])
        U = np.hstack([self.xi * S, Y])
        return self.xi, U, -np.linalg.inv(Q)

    def compact_q(self):
        """``(xi, U, Q)`` with ``B = xi I - U Q^{-1} U^T``."""
        if not self.S:
            return self.xi, None, None
        S = np.column_stack(self.S)
        Y = np.column_stack(self.Y)
        SY = S.T @ Y
        L = np.tril(SY, -1)
        Q = np.block([[self.xi * (S.T @ S), L], [L.T, -np.diag(np.diag(SY))]])
        return self.xi, np.hstack([self.xi * S, Y]), Q

    def dense(self, n):
        """Explicit ``n x n`` matrix (for tests and small problems)."""
        xi, U, M = self.compact()
        B = xi * np.eye(n)
        if U is not None:
            B += U @ M @ U.T
        return B


def lbfgs_update(memory, ds, deta):
    """Add the pair ``(ds, deta)`` to ``memory`` in place and return it."""
    memory.update(ds, deta)
    return memory
