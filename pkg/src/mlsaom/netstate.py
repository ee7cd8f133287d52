"""Joint one-mode/two-mode network state of a single group.

The one-mode network is a directed graph on the group's actors (no
self-ties); the two-mode network links actors to a shared set of
second-mode nodes.  States are small dense binary matrices with
incrementally maintained degree caches, so single-tie toggles are O(1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NET_X = "X"
NET_Z = "Z"
NETWORKS = (NET_X, NET_Z)


@dataclass(frozen=True)
class Toggle:
    """One mini-step outcome: flip a single tie variable, or change nothing.

    ``target is None`` encodes the no-change ("diagonal") outcome; such
    toggles carry no target index.
    """

    actor: int
    network: str
    target: int | None = None

    @property
    def diagonal(self) -> bool:
        return self.target is None

    def __post_init__(self):
        if self.network not in NETWORKS:
            raise ValueError(f"unknown network tag {self.network!r}")
        if self.network == NET_X and self.target == self.actor:
            raise ValueError("one-mode toggle may not target the actor itself")


class JointState:
    """Binary one-mode matrix ``x`` (n x n) and two-mode matrix ``z`` (n x h).

    The diagonal of ``x`` is stored but forced to zero.  Row/column sums
    are cached and updated on every toggle.
    """

    __slots__ = ("n", "h", "x", "z", "xout", "xin", "zout", "zin")

    def __init__(self, n: int, h: int = 0, x=None, z=None):
        if n < 1:
            raise ValueError("need at least one actor")
        if h < 0:
            raise ValueError("negative second-mode count")
        self.n = int(n)
        self.h = int(h)
        self.x = np.zeros((n, n), dtype=np.uint8) if x is None else self._checked(x, (n, n), "x")
        self.z = np.zeros((n, h), dtype=np.uint8) if z is None else self._checked(z, (n, h), "z")
        np.fill_diagonal(self.x, 0)
        self._refresh_degrees()

    @staticmethod
    def _checked(m, shape, name) -> np.ndarray:
        m = np.asarray(m)
        if m.shape != shape:
            raise ValueError(f"{name} has shape {m.shape}, expected {shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"{name} has entries outside {{0,1}}")
        return m.astype(np.uint8).copy()

    def _refresh_degrees(self):
        self.xout = self.x.sum(axis=1, dtype=np.int64)
        self.xin = self.x.sum(axis=0, dtype=np.int64)
        self.zout = self.z.sum(axis=1, dtype=np.int64)
        self.zin = self.z.sum(axis=0, dtype=np.int64)

    def copy(self) -> "JointState":
        dup = JointState.__new__(JointState)
        dup.n, dup.h = self.n, self.h
        dup.x = self.x.copy()
        dup.z = self.z.copy()
        dup.xout = self.xout.copy()
        dup.xin = self.xin.copy()
        dup.zout = self.zout.copy()
        dup.zin = self.zin.copy()
        return dup

    def toggle(self, t: Toggle) -> None:
        """Apply a toggle in place (no-op for diagonal toggles)."""
        if t.diagonal:
            return
        i, j = t.actor, t.target
        if not 0 <= i < self.n:
            raise IndexError(f"actor {i} out of range")
        if t.network == NET_X:
            if not 0 <= j < self.n:
                raise IndexError(f"target {j} out of range")
            if i == j:
                raise ValueError("self-tie toggle")
            new = 1 - int(self.x[i, j])
            self.x[i, j] = new
            d = 2 * new - 1
            self.xout[i] += d
            self.xin[j] += d
        else:
            if not 0 <= j < self.h:
                raise IndexError(f"second-mode target {j} out of range")
            new = 1 - int(self.z[i, j])
            self.z[i, j] = new
            d = 2 * new - 1
            self.zout[i] += d
            self.zin[j] += d

    def validate(self) -> None:
        """Check the state invariants; raises ValueError on violation."""
        if np.diagonal(self.x).any():
            raise ValueError("nonzero diagonal in one-mode matrix")
        for name, m in (("x", self.x), ("z", self.z)):
            if not np.isin(m, (0, 1)).all():
                raise ValueError(f"{name} has non-binary entries")
        if (self.xout != self.x.sum(1)).any() or (self.xin != self.x.sum(0)).any():
            raise ValueError("stale one-mode degree cache")
        if (self.zout != self.z.sum(1)).any() or (self.zin != self.z.sum(0)).any():
            raise ValueError("stale two-mode degree cache")

    def __eq__(self, other):
        if not isinstance(other, JointState):
            return NotImplemented
        return (
            self.n == other.n
            and self.h == other.h
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.z, other.z)
        )

    def __repr__(self):
        return f"JointState(n={self.n}, h={self.h}, ties_x={int(self.x.sum())}, ties_z={int(self.z.sum())})"


def apply_toggle(state: JointState, t: Toggle) -> JointState:
    """Return a copy of ``state`` with the toggle applied."""
    out = state.copy()
    out.toggle(t)
    return out


def hamming(a, b, exclude_diagonal: bool | None = None) -> int:
    """Number of differing entries between two binary matrices.

    For square (one-mode) matrices the diagonal is skipped; pass
    ``exclude_diagonal`` to override the default.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a != b
    if exclude_diagonal is None:
        exclude_diagonal = a.ndim == 2 and a.shape[0] == a.shape[1]
    if exclude_diagonal:
        diff = diff.copy()
        np.fill_diagonal(diff, False)
    return int(diff.sum())


def jaccard_stability(a, b) -> float:
    """Tie-overlap ratio sum(min(a,b)) / sum(max(a,b)) between two waves."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = np.maximum(a, b).sum()
    if union == 0:
        raise ValueError("Jaccard undefined: both matrices are empty")
    return float(np.minimum(a, b).sum() / union)
