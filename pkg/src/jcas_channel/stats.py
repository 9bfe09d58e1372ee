"""Delay/angle spread statistics, normal fits and Table-shaped summaries.

Spreads follow the usual power-weighted first/second moment definitions.
The angle spread resolves the wrap-around ambiguity by placing the 0/360
cut at the position that minimizes the spread. Between two consecutive
sample angles the spread does not depend on where the cut sits, so trying a
cut just below every sample angle covers every distinct configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

import numpy as np

from .core import ClusterKind, JcasError, LinkTag

__all__ = [
    "UndefinedSpreadError",
    "FitError",
    "Category",
    "SpreadRecord",
    "ClusterSummary",
    "SpreadReport",
    "rms_delay_spread",
    "rms_angle_spread",
    "circular_spread",
    "circular_mean_deg",
    "inter_cluster_spreads",
    "fit_normal",
    "empirical_cdf",
    "histogram_pdf",
    "summarize_clusters",
    "spread_report",
]


class UndefinedSpreadError(JcasError, ArithmeticError):
    pass


class FitError(JcasError, ValueError):
    pass


class Category(str, Enum):
    JOINT = "joint"
    COMMUNICATION = "comm"
    SENSING = "sensing"


def _weights(values: Sequence[float], powers: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(values, dtype=float).reshape(-1)
    p = np.asarray(powers, dtype=float).reshape(-1)
    if x.size != p.size or x.size == 0:
        raise ValueError("values and powers must be non-empty and of equal length")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or not np.all(np.isfinite(x)):
        raise ValueError("powers must be finite and >= 0, values finite")
    total = p.sum()
    if total <= 0:
        raise UndefinedSpreadError("spread undefined for zero total power")
    return x, p / total


def rms_delay_spread(delays: Sequence[float], powers: Sequence[float]) -> tuple[float, float]:
    """Power-weighted mean delay and rms delay spread.

    Returns
    -------
    (mean_delay, rms_ds)
    """
    tau, w = _weights(delays, powers)
    mean = float(np.dot(w, tau))
    var = float(np.dot(w, (tau - mean) ** 2))
    return mean, math.sqrt(max(var, 0.0))


def circular_spread(angles_deg: Sequence[float], powers: Sequence[float]) -> tuple[float, float]:
    """Ambiguity-free rms angle spread.

    Returns
    -------
    (mean_deg, spread_deg)
        ``mean_deg`` is the weighted linear mean taken with the optimal cut,
        wrapped back to ``[0, 360)``.
    """
    theta, w = _weights(angles_deg, powers)
    theta = np.mod(theta, 360.0)
    if theta.size == 1:
        return float(theta[0]), 0.0
    order = np.argsort(theta, kind="stable")
    a = theta[order]
    ww = w[order]
    # Cut just below a[i]: samples a[:i] move up by 360.
    cw = np.concatenate(([0.0], np.cumsum(ww)[:-1]))
    ca = np.concatenate(([0.0], np.cumsum(ww * a)[:-1]))
    s1 = np.dot(ww, a) + 360.0 * cw
    s2 = np.dot(ww, a * a) + 720.0 * ca + 360.0**2 * cw
    var_est = s2 - s1 * s1
    lo = var_est.min()
    candidates = np.flatnonzero(var_est <= lo + 1e-6 * (1.0 + abs(lo)))
    best_var, best_mean = math.inf, 0.0
    for i in candidates:
        x = a.copy()
        x[:i] += 360.0
        m = float(np.dot(ww, x))
        v = float(np.dot(ww, (x - m) ** 2))
        if v < best_var:
            best_var, best_mean = v, m
    return best_mean % 360.0, math.sqrt(max(best_var, 0.0))


def rms_angle_spread(angles_deg: Sequence[float], powers: Sequence[float]) -> float:
    """rms azimuth spread in degrees, minimized over the placement of the wrap cut."""
    return circular_spread(angles_deg, powers)[1]


def circular_mean_deg(angles_deg: Sequence[float], weights: Sequence[float] | None = None) -> float:
    theta = np.deg2rad(np.asarray(angles_deg, dtype=float))
    w = np.ones_like(theta) if weights is None else np.asarray(weights, dtype=float)
    z = np.sum(w * np.exp(1j * theta))
    if abs(z) < 1e-300:
        return 0.0
    return float(np.rad2deg(np.angle(z)) % 360.0)


def fit_normal(samples: Sequence[float]) -> tuple[float, float]:
    """Sample mean and population standard deviation."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 2:
        raise FitError(f"a normal fit needs at least 2 samples, got {x.size}")
    mu = float(x.mean())
    return mu, float(np.sqrt(np.mean((x - mu) ** 2)))


def empirical_cdf(samples: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values and ``P(X <= value)`` at each distinct value."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    if x.size == 0:
        raise ValueError("empirical CDF of an empty sample")
    values, counts = np.unique(x, return_counts=True)
    return values, np.cumsum(counts) / x.size


def histogram_pdf(
    samples: Sequence[float], bin_width: float, value_range: tuple[float, float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Density-normalized histogram; returns ``(bin_centers, density)``."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("histogram of an empty sample")
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    if value_range is None:
        lo = math.floor(x.min() / bin_width) * bin_width
        n_bins = max(1, int(math.floor((x.max() - lo) / bin_width)) + 1)
    else:
        lo, hi = value_range
        n_bins = max(1, int(round((hi - lo) / bin_width)))
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    if counts.sum() == 0:
        raise ValueError("no samples fall inside the histogram range")
    density = counts / (counts.sum() * bin_width)
    return edges[:-1] + bin_width / 2, density


# -- per-cluster summaries -------------------------------------------------


@dataclass(frozen=True)
class SpreadRecord:
    path_count: int
    power: float
    mean_delay_ns: float
    mean_aod_deg: float
    rms_ds_ns: float
    rms_as_deg: float

    def to_dict(self) -> dict[str, float]:
        return {
            "path_count": self.path_count,
            "power": self.power,
            "mean_delay_ns": self.mean_delay_ns,
            "mean_aod_deg": self.mean_aod_deg,
            "rms_ds_ns": self.rms_ds_ns,
            "rms_as_deg": self.rms_as_deg,
        }


@dataclass(frozen=True)
class ClusterSummary:
    """Spreads of one cluster: the whole cluster plus each per-link part."""

    cluster_id: int
    kind: ClusterKind
    joint: SpreadRecord
    comm: SpreadRecord | None
    sensing: SpreadRecord | None

    def record(self, category: Category) -> SpreadRecord | None:
        category = Category(category)
        if category is Category.JOINT:
            return self.joint
        return self.comm if category is Category.COMMUNICATION else self.sensing


def _spread_record(aod: np.ndarray, delay: np.ndarray, power: np.ndarray) -> SpreadRecord:
    mean_delay, ds = rms_delay_spread(delay, power)
    _, as_ = circular_spread(aod, power)
    return SpreadRecord(
        path_count=int(aod.size),
        power=float(power.sum()),
        mean_delay_ns=mean_delay,
        mean_aod_deg=circular_mean_deg(aod, power),
        rms_ds_ns=ds,
        rms_as_deg=as_,
    )


def _joint_record(
    aod: np.ndarray,
    delay: np.ndarray,
    power: np.ndarray,
    is_comm: np.ndarray,
    align_subclusters: bool,
) -> SpreadRecord:
    """Pooled spread of a cluster holding MPCs of both links.

    Communication powers are scaled so both links have the same mean MPC
    power inside the cluster, and (optionally) each link's delays are
    referenced to that link's mean delay, since the two links reach the
    scatterer over different path lengths.
    """
    base = _spread_record(aod, delay, power)
    comm, sens = is_comm, ~is_comm
    if not comm.any() or not sens.any():
        return base
    p = power.astype(float).copy()
    mean_c = p[comm].mean()
    if mean_c > 0:
        p[comm] *= p[sens].mean() / mean_c
    d = delay.astype(float).copy()
    if align_subclusters:
        for mask in (comm, sens):
            if p[mask].sum() > 0:
                d[mask] -= np.dot(p[mask], d[mask]) / p[mask].sum()
    if p.sum() <= 0:
        return base
    _, ds = rms_delay_spread(d, p)
    _, as_ = circular_spread(aod, p)
    return SpreadRecord(base.path_count, base.power, base.mean_delay_ns, base.mean_aod_deg, ds, as_)


def summarize_clusters(
    links: Sequence[LinkTag | str],
    aod_deg: Sequence[float],
    delay_ns: Sequence[float],
    power: Sequence[float],
    labels: Sequence[int],
    kinds: Mapping[int, ClusterKind] | None = None,
    align_subclusters: bool = True,
) -> list[ClusterSummary]:
    """Spread records for every labeled cluster of a joint MPC table.

    ``power`` should be the raw (uncompensated) received power. When
    ``kinds`` is omitted a cluster is shared iff it holds MPCs of both links.
    """
    is_comm = np.array([LinkTag(l) is LinkTag.COMMUNICATION for l in links], dtype=bool)
    aod = np.asarray(aod_deg, dtype=float)
    delay = np.asarray(delay_ns, dtype=float)
    p = np.asarray(power, dtype=float)
    lab = np.asarray(labels, dtype=np.int64)
    out = []
    for cid in np.unique(lab):
        m = lab == cid
        c, s = m & is_comm, m & ~is_comm
        if kinds is not None and int(cid) in kinds:
            kind = ClusterKind(kinds[int(cid)])
        elif c.any() and s.any():
            kind = ClusterKind.SHARED
        else:
            kind = ClusterKind.COMM_ONLY if c.any() else ClusterKind.SENSING_ONLY
        out.append(
            ClusterSummary(
                cluster_id=int(cid),
                kind=kind,
                joint=_joint_record(aod[m], delay[m], p[m], is_comm[m], align_subclusters),
                comm=_spread_record(aod[c], delay[c], p[c]) if c.any() and p[c].sum() > 0 else None,
                sensing=_spread_record(aod[s], delay[s], p[s]) if s.any() and p[s].sum() > 0 else None,
            )
        )
    return out


def inter_cluster_spreads(
    summaries: Sequence[ClusterSummary], category: Category | str = Category.JOINT
) -> tuple[float, float]:
    """rms DS and AS of the cluster centroids of one category.

    Centroids are weighted by the cluster's raw power. The communication and
    sensing categories use the per-link sub-cluster centroids.
    """
    category = Category(category)
    records = [r for r in (s.record(category) for s in summaries) if r is not None]
    if not records:
        raise UndefinedSpreadError(f"no clusters in category {category.value!r}")
    w = np.array([r.power for r in records])
    _, ds = rms_delay_spread([r.mean_delay_ns for r in records], w)
    as_ = rms_angle_spread([r.mean_aod_deg for r in records], w)
    return ds, as_


# -- Table III / IV shaped report -------------------------------------------

FIT_GROUPS = ("shared", "shared_comm", "shared_sensing", "comm_only", "sensing_only")


def _group_records(summaries: Sequence[ClusterSummary], group: str) -> list[SpreadRecord]:
    if group == "shared":
        return [s.joint for s in summaries if s.kind is ClusterKind.SHARED]
    if group == "shared_comm":
        return [s.comm for s in summaries if s.kind is ClusterKind.SHARED and s.comm is not None]
    if group == "shared_sensing":
        return [s.sensing for s in summaries if s.kind is ClusterKind.SHARED and s.sensing is not None]
    if group == "comm_only":
        return [s.joint for s in summaries if s.kind is ClusterKind.COMM_ONLY]
    if group == "sensing_only":
        return [s.joint for s in summaries if s.kind is ClusterKind.SENSING_ONLY]
    raise ValueError(f"unknown group {group!r}")


def fit_group(records: Sequence[SpreadRecord]) -> dict[str, tuple[float, float]] | None:
    """Normal fits of path count, log10 DS and log10 AS over multi-path clusters."""
    usable = [r for r in records if r.path_count >= 2 and r.rms_ds_ns > 0 and r.rms_as_deg > 0]
    if len(usable) < 2:
        return None
    return {
        "path_count": fit_normal([r.path_count for r in usable]),
        "log10_ds": fit_normal([math.log10(r.rms_ds_ns) for r in usable]),
        "log10_as": fit_normal([math.log10(r.rms_as_deg) for r in usable]),
    }


@dataclass(frozen=True)
class SpreadReport:
    clusters: tuple[ClusterSummary, ...]
    inter: Mapping[str, tuple[float, float] | None]
    fits: Mapping[str, dict[str, tuple[float, float]] | None]
    excluded_single_path: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "clusters": [
                {
                    "cluster_id": s.cluster_id,
                    "kind": s.kind.value,
                    "joint": s.joint.to_dict(),
                    "comm": None if s.comm is None else s.comm.to_dict(),
                    "sensing": None if s.sensing is None else s.sensing.to_dict(),
                }
                for s in self.clusters
            ],
            "inter_cluster": {
                k: None if v is None else {"rms_ds_ns": v[0], "rms_as_deg": v[1]} for k, v in self.inter.items()
            },
            "fits": {
                k: None if v is None else {name: list(mu_sigma) for name, mu_sigma in v.items()}
                for k, v in self.fits.items()
            },
            "excluded_single_path": self.excluded_single_path,
        }


def spread_report(summaries: Sequence[ClusterSummary]) -> SpreadReport:
    inter: dict[str, tuple[float, float] | None] = {}
    for cat in Category:
        try:
            inter[cat.value] = inter_cluster_spreads(summaries, cat)
        except UndefinedSpreadError:
            inter[cat.value] = None
    fits = {g: fit_group(_group_records(summaries, g)) for g in FIT_GROUPS}
    excluded = sum(1 for s in summaries if s.joint.path_count < 2)
    return SpreadReport(tuple(summaries), inter, fits, excluded)
