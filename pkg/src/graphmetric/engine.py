"""Pairwise squared distances between uniform point clouds, with gradients.

Embeddings are uniform distributions, so each pair's 1-D plans only depend
on the two sort orders and on the sizes (n, m); the rank-space plan for a
size pair is cached and reused. Costs are gathered only along plan entries.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .ot import uniform_rank_plan

DISTANCES = ("rpw2", "sw2", "pw2")


class CloudSet:
    """Point clouds prepared for repeated pairwise evaluation.

    Parameters
    ----------
    clouds : sequence of (n_g, p) arrays
        Supports of uniform distributions.
    kind : {"rpw2", "sw2", "pw2"}
    directions : (p, M) array, optional
        Unit projection directions; required for ``sw2``/``pw2``. ``rpw2``
        uses the canonical axes.
    """

    def __init__(self, clouds: Sequence[np.ndarray], kind: str = "rpw2",
                 directions: np.ndarray | None = None):
        if kind not in DISTANCES:
            raise ValueError(f"unknown distance {kind!r}")
        if kind != "rpw2" and directions is None:
            raise ValueError(f"{kind} needs projection directions")
        self.kind = kind
        self.directions = directions
        self.clouds = [np.asarray(c, dtype=np.float64) for c in clouds]
        self.proj = []
        self.orders = []
        for y in self.clouds:
            proj = y if kind == "rpw2" else y @ directions
            self.proj.append(proj)
            self.orders.append(np.argsort(proj, axis=0, kind="stable"))
        self.num_dirs = self.proj[0].shape[1] if self.proj else 0

    def __len__(self) -> int:
        return len(self.clouds)

    def _gather(self, a: int, b: int):
        ya, yb = self.clouds[a], self.clouds[b]
        ri, rj, mass = uniform_rank_plan(ya.shape[0], yb.shape[0])
        si = self.orders[a][ri]  # (E, K) source rows per direction
        tj = self.orders[b][rj]
        return si, tj, mass

    def sq_distance(self, a: int, b: int) -> float:
        si, tj, mass = self._gather(a, b)
        if self.kind == "sw2":
            diff = (np.take_along_axis(self.proj[a], si, axis=0)
                    - np.take_along_axis(self.proj[b], tj, axis=0))
            per_entry = diff * diff
        else:
            diff = self.clouds[a][si] - self.clouds[b][tj]  # (E, K, p)
            per_entry = np.einsum("ekp,ekp->ek", diff, diff)
        return float(mass @ per_entry.sum(axis=1)) / self.num_dirs

    def sq_distance_and_grad(self, a: int, b: int):
        """Squared distance with its gradient w.r.t. both supports.

        The plans are held fixed (they are piecewise constant in the
        supports), so the gradient is exact away from sort-order changes.
        """
        si, tj, mass = self._gather(a, b)
        ya, yb = self.clouds[a], self.clouds[b]
        k = self.num_dirs
        if self.kind == "sw2":
            pa, pb = self.proj[a], self.proj[b]
            diff = np.take_along_axis(pa, si, axis=0) - np.take_along_axis(pb, tj, axis=0)
            d2 = float(mass @ (diff * diff).sum(axis=1)) / k
            coef = (2.0 / k) * mass[:, None] * diff  # dd2/dproj at each entry
            cols = np.broadcast_to(np.arange(k), si.shape)
            ga = np.zeros_like(pa)
            gb = np.zeros_like(pb)
            np.add.at(ga, (si, cols), coef)
            np.add.at(gb, (tj, cols), -coef)
            return d2, ga @ self.directions.T, gb @ self.directions.T
        diff = ya[si] - yb[tj]
        d2 = float(mass @ np.einsum("ekp,ekp->ek", diff, diff).sum(axis=1)) / k
        coef = (2.0 / k) * mass[:, None, None] * diff
        ga = np.zeros_like(ya)
        gb = np.zeros_like(yb)
        p = ya.shape[1]
        np.add.at(ga, si.ravel(), coef.reshape(-1, p))
        np.add.at(gb, tj.ravel(), -coef.reshape(-1, p))
        return d2, ga, gb

    def sq_distance_matrix(self) -> np.ndarray:
        """All pairwise squared distances; upper triangle computed, then mirrored."""
        n = len(self)
        out = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                out[a, b] = out[b, a] = self.sq_distance(a, b)
        return out

    def cross_sq_distances(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        out = np.zeros((len(rows), len(cols)))
        for i, a in enumerate(rows):
            for j, b in enumerate(cols):
                out[i, j] = 0.0 if a == b else self.sq_distance(a, b)
        return out
