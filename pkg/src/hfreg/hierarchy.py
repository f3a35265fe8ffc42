"""Nested predictor hierarchies and their level-specific summing matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .clustering import MergeSequence
from .exceptions import InsufficientSampleError, ValidationError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Cluster:
    members: Tuple[int, ...]
    signs: Tuple[int, ...]

    def __post_init__(self):
        if len(self.members) != len(self.signs):
            raise ValidationError("members and signs differ in length")
        if not self.members:
            raise ValidationError("empty cluster")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValidationError("signs must be +1 or -1")


@dataclass(frozen=True)
class Hierarchy:
    """Nested partitions of ``K`` predictors, root level first.

    ``levels[l]`` is a tuple of :class:`Cluster`; level ``l`` (0-based) of an
    unpruned hierarchy holds ``l + 1`` clusters. ``merges`` is kept when the
    hierarchy came from an agglomeration and is needed for nested sign
    orientation.
    """

    K: int
    levels: Tuple[Tuple[Cluster, ...], ...]
    heights: Tuple[float, ...] = ()
    merges: Optional[MergeSequence] = field(default=None, compare=False)

    def __post_init__(self):
        _validate_levels(self.K, self.levels)
        if self.heights and len(self.heights) != len(self.levels):
            raise ValidationError("one height per level required")

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def n_clusters(self) -> Tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)

    @property
    def n_nodes(self) -> int:
        return sum(self.n_clusters)

    def summing_matrix(self, level: int) -> np.ndarray:
        """Signed summing matrix of ``level`` (0-based): clusters x predictors."""
        clusters = self.levels[level]
        S = np.zeros((len(clusters), self.K))
        for c, cl in enumerate(clusters):
            S[c, list(cl.members)] = cl.signs
        return S

    def full_summing_matrix(self) -> np.ndarray:
        """All level blocks stacked top-down (nodes x predictors)."""
        return np.vstack([self.summing_matrix(lv) for lv in range(self.L)])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "k": self.K,
            "levels": [
                {
                    "clusters": [
                        {"members": list(cl.members), "signs": list(cl.signs)}
                        for cl in lv
                    ]
                }
                for lv in self.levels
            ],
            "heights": list(self.heights),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "Hierarchy":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported hierarchy schema_version {version!r}")
        try:
            levels = tuple(
                tuple(
                    Cluster(tuple(int(m) for m in c["members"]), tuple(int(s) for s in c["signs"]))
                    for c in lv["clusters"]
                )
                for lv in doc["levels"]
            )
            K = int(doc["k"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed hierarchy document: {exc}") from exc
        heights = tuple(float(h) for h in doc.get("heights", ()))
        return cls(K=K, levels=levels, heights=heights)

    @classmethod
    def from_json(cls, text: str) -> "Hierarchy":
        return cls.from_dict(json.loads(text))


def _validate_levels(K, levels):
    if K < 1:
        raise ValidationError("K must be positive")
    if not levels:
        raise ValidationError("hierarchy has no levels")
    full = set(range(K))
    prev = None
    for li, lv in enumerate(levels):
        owner = {}
        for ci, cl in enumerate(lv):
            for m in cl.members:
                if m in owner:
                    raise ValidationError(f"level {li}: predictor {m} in two clusters")
                owner[m] = ci
        if set(owner) != full:
            raise ValidationError(f"level {li} is not a partition of 0..{K - 1}")
        if prev is not None:
            for cl in lv:
                parents = {prev[m] for m in cl.members}
                if len(parents) != 1:
                    raise ValidationError(f"level {li} is not nested in level {li - 1}")
        prev = owner
    if len(levels[0]) != 1:
        raise ValidationError("root level must hold a single cluster")


def build_hierarchy(merges: MergeSequence, K: Optional[int] = None) -> Hierarchy:
    """Unsigned hierarchy with ``L = K`` levels from an agglomeration.

    Level ``K - t`` (1-based) is the partition after ``t`` merges; clusters
    within a level are ordered by their smallest member.
    """
    if K is None:
        K = merges.K
    if merges.K != K:
        raise ValidationError(f"merge sequence is for K={merges.K}, not {K}")
    groups = {i + 1: (i,) for i in range(K)}
    partitions = [sorted(groups.values())]
    cum = 0.0
    cum_heights = [0.0]
    for t, (a, b, cost) in enumerate(merges.steps):
        groups[K + t + 1] = tuple(sorted(groups.pop(a) + groups.pop(b)))
        partitions.append(sorted(groups.values()))
        cum += cost
        cum_heights.append(cum)
    partitions.reverse()
    cum_heights.reverse()
    levels = tuple(
        tuple(Cluster(g, (1,) * len(g)) for g in part) for part in partitions
    )
    return Hierarchy(K=K, levels=levels, heights=tuple(cum_heights), merges=merges)


def _sign(v):
    return 1 if v >= 0 else -1


def apply_sign_adjustment(h: Hierarchy, rho, mode: str = "rooted") -> Hierarchy:
    """Mirror negatively related predictors inside each cluster.

    ``mode="literal"`` gives member ``j`` of cluster ``C`` the sign of
    ``sum_{k in C} rho[j, k] - 1`` with ``sign(0) = +1``; clusters where every
    member comes out negative are re-anchored on their smallest member.

    ``mode="rooted"`` (default) evaluates that rule once, on the root
    cluster, and every lower cluster inherits the root's relative signs
    (oriented so that its smallest member is positive).

    ``mode="nested"`` orients whole child blocks at each merge: when
    clusters ``a`` and ``b`` join, ``b`` is flipped if its signed sum is
    negatively correlated with that of ``a``.

    In the rooted and nested modes sign patterns agree across levels, so
    every level feature lies in the span of the level below; the literal mode
    does not guarantee this.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (h.K, h.K):
        raise ValidationError(f"correlation matrix must be {h.K}x{h.K}")
    if mode == "literal":
        levels = tuple(
            tuple(_literal_cluster(cl.members, rho) for cl in lv) for lv in h.levels
        )
        return replace(h, levels=levels)
    if mode == "rooted":
        root = _literal_cluster(tuple(range(h.K)), rho)
        s = dict(zip(root.members, root.signs))
        levels = []
        for lv in h.levels:
            new = []
            for cl in lv:
                lead = s[cl.members[0]]
                new.append(Cluster(cl.members, tuple(lead * s[m] for m in cl.members)))
            levels.append(tuple(new))
        return replace(h, levels=tuple(levels))
    if mode != "nested":
        raise ValidationError(f"unknown sign mode {mode!r}")
    if h.merges is None:
        raise ValidationError("nested sign orientation needs the merge sequence")

    K = h.K
    blocks = {i + 1: {i: 1} for i in range(K)}
    for t, (a, b, _) in enumerate(h.merges.steps):
        sa, sb = blocks[a], blocks[b]
        ia, va = np.array(list(sa)), np.array(list(sa.values()))
        ib, vb = np.array(list(sb)), np.array(list(sb.values()))
        cross = va @ rho[np.ix_(ia, ib)] @ vb
        flip = _sign(cross)
        merged = dict(sa)
        merged.update({m: flip * s for m, s in sb.items()})
        blocks[K + t + 1] = merged
    lookup = {tuple(sorted(bl)): bl for bl in blocks.values()}
    levels = []
    for lv in h.levels:
        new = []
        for cl in lv:
            bl = lookup[cl.members]
            new.append(Cluster(cl.members, tuple(bl[m] for m in cl.members)))
        levels.append(tuple(new))
    return replace(h, levels=tuple(levels))


def _literal_cluster(members, rho) -> Cluster:
    idx = list(members)
    sums = rho[np.ix_(idx, idx)].sum(axis=1) - 1.0
    signs = [_sign(v) for v in sums]
    if len(idx) > 1 and all(s < 0 for s in signs):
        anchor = idx[0]
        signs = [1] + [_sign(rho[m, anchor]) for m in idx[1:]]
    return Cluster(tuple(members), tuple(signs))


def level_features(X, h: Hierarchy, level: int) -> np.ndarray:
    """Signed within-cluster sums of the columns of ``X`` at ``level`` (0-based)."""
    X = np.asarray(X, dtype=float)
    if not 0 <= level < h.L:
        raise ValidationError(f"level {level} out of range 0..{h.L - 1}")
    return X @ h.summing_matrix(level).T


def prune_levels(h: Hierarchy, N: int, M: int) -> Hierarchy:
    """Drop levels that cannot be estimated when ``K >= N - M``.

    Keeps the levels with at most ``N - M - 1`` clusters.
    """
    free = N - M
    if free < 2:
        raise InsufficientSampleError(
            f"N - M = {free}: at least two free observations are required"
        )
    if h.K < free:
        return h
    keep = [i for i, n in enumerate(h.n_clusters) if n <= free - 1]
    levels = tuple(h.levels[i] for i in keep)
    heights = tuple(h.heights[i] for i in keep) if h.heights else ()
    return replace(h, levels=levels, heights=heights)


def leaf_order(h: Hierarchy) -> Tuple[int, ...]:
    """Left-to-right leaf ordering consistent with the merge tree."""
    if h.merges is None:
        return tuple(m for cl in h.levels[-1] for m in cl.members)
    K = h.K
    order = {i + 1: (i,) for i in range(K)}
    for t, (a, b, _) in enumerate(h.merges.steps):
        order[K + t + 1] = order.pop(a) + order.pop(b)
    (root,) = order.values()
    return root
