"""Class balancing: adaptive synthetic oversampling plus undersampling.

Minority classes are grown by convex interpolation between same-class
nearest neighbours; base points are drawn with density weights favouring
borderline points (those with many out-of-class neighbours), with a flag
to fall back to uniform (vanilla) sampling. Majority classes are
randomly undersampled. Original minority points are never dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ContractError


@dataclass
class FeaturePoint:
    feature: np.ndarray
    label: str
    synthetic: bool = False
    source_id: str | None = None


def largest_remainder_counts(fractions: dict[str, float], total: int) -> dict[str, int]:
    """Integer counts summing to ``total`` that best match the fractions."""
    keys = sorted(fractions)
    norm = sum(fractions[k] for k in keys)
    raw = {k: fractions[k] / norm * total for k in keys}
    counts = {k: int(np.floor(raw[k])) for k in keys}
    leftover = total - sum(counts.values())
    for k in sorted(keys, key=lambda k: (raw[k] - counts[k], k), reverse=True)[:leftover]:
        counts[k] += 1
    return counts


def _knn_indices(x: np.ndarray, pool: np.ndarray, k: int, exclude_self: bool) -> np.ndarray:
    d = np.linalg.norm(pool - x, axis=1)
    order = np.argsort(d, kind="stable")
    if exclude_self:
        order = order[d[order] > 0.0] if (d == 0).any() else order
    return order[:k]


def balance(points: list[FeaturePoint], target: dict[str, float], k: int,
            seed: int, adaptive: bool = True) -> list[FeaturePoint]:
    """Resample ``points`` toward the target label distribution.

    Classes above their target count are randomly undersampled; classes
    below are topped up with synthetic points interpolated between
    same-class k-nearest neighbours. Returns the input unchanged when
    counts already match.
    """
    if k < 1:
        raise ContractError(f"neighbor count k must be >= 1, got {k}")
    labels = sorted({p.label for p in points})
    if any(l not in target for l in labels):
        raise ConfigurationError(f"target distribution missing labels: {labels}")
    by_class = {l: [p for p in points if p.label == l] for l in labels}
    counts = {l: len(by_class[l]) for l in labels}
    targets = largest_remainder_counts({l: target[l] for l in labels}, len(points))
    if counts == targets:
        return list(points)
    for l in labels:
        if targets[l] > counts[l] and counts[l] < k + 1:
            raise ConfigurationError(
                f"class {l!r} has {counts[l]} members; oversampling needs at least {k + 1}"
            )
    rng = np.random.default_rng(seed)
    all_feats = np.stack([p.feature for p in points])
    all_labels = np.array([p.label for p in points])
    out: list[FeaturePoint] = []
    for l in labels:
        members = by_class[l]
        want = targets[l]
        if want <= counts[l]:
            keep = rng.choice(counts[l], size=want, replace=False)
            out.extend(members[i] for i in sorted(keep))
            continue
        out.extend(members)
        feats = np.stack([p.feature for p in members])
        # density weights: fraction of out-of-class points among each
        # member's k nearest neighbours in the full set
        if adaptive:
            weights = np.empty(len(members))
            for i, p in enumerate(members):
                nn = _knn_indices(p.feature, all_feats, k, exclude_self=True)
                weights[i] = float((all_labels[nn] != l).mean()) if len(nn) else 0.0
            if weights.sum() <= 0.0:
                weights = np.ones(len(members))
        else:
            weights = np.ones(len(members))
        weights = weights / weights.sum()
        for _ in range(want - counts[l]):
            a = int(rng.choice(len(members), p=weights))
            nn = _knn_indices(feats[a], feats, k, exclude_self=True)
            b = int(rng.choice(nn))
            u = rng.uniform()
            feat = feats[a] + u * (feats[b] - feats[a])
            out.append(FeaturePoint(feature=feat, label=l, synthetic=True,
                                    source_id=members[a].source_id))
    return out
