"""Joint KPowerMeans clustering of communication and sensing MPCs.

Pipeline: per-link denoising, power compensation of the communication MPCs,
merging of both links (link tags kept), KPowerMeans over a range of cluster
numbers, and selection of the cluster number with the combined
Davies-Bouldin / Calinski-Harabasz indicator.

The multipath component distance (MCD) between two MPCs is

    MCD = sqrt(MCD_angle**2 + MCD_delay**2)
    MCD_angle = |u(theta_a) - u(theta_b)| / 2
    MCD_delay = zeta * |tau_a - tau_b| / range_tau * std_tau / range_tau

with ``u`` the unit vector at the AOD. It is the Euclidean distance between
the points ``(cos(theta)/2, sin(theta)/2, s * tau)`` with
``s = zeta * std_tau / range_tau**2``, which is what the implementation
works with. Cluster centroids live on the same cylinder (angle on the
circle, delay free); the power-weighted circular mean angle and arithmetic
mean delay minimize the power-weighted squared MCD of the members, which
makes the KPowerMeans cost ``sum p * MCD**2`` nonincreasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Cluster,
    ClusterKind,
    JcasError,
    LinkChannel,
    LinkTag,
    Mpc,
    ParameterError,
    SdMode,
    UndefinedSDError,
    ValidationError,
    as_link_channel,
)
from .model import sharing_degree_from_amplitudes

__all__ = [
    "GammaPolicy",
    "UndefinedIndexError",
    "JointMpcSet",
    "McdParams",
    "Partition",
    "KScore",
    "ClusteringConfig",
    "KpmResult",
    "Classification",
    "denoise",
    "compute_gamma",
    "merge_links",
    "mcd",
    "kpowermeans",
    "best_of_restarts",
    "davies_bouldin",
    "calinski_harabasz",
    "combined_indicator",
    "select_k",
    "run_kpm_jca",
    "run_kpm_jca_snapshots",
    "classify_clusters",
]


class UndefinedIndexError(JcasError, ValueError):
    """Validity index requested for fewer than two clusters."""


class GammaPolicy(str, Enum):
    EQUAL_TOTAL = "equal_total"
    EQUAL_MEAN = "equal_mean"
    MANUAL = "manual"


# -- preprocessing ---------------------------------------------------------


def _threshold_mask(power: np.ndarray, p_th_db: float) -> np.ndarray:
    if power.size == 0:
        return np.zeros(0, dtype=bool)
    floor = power.max() * 10.0 ** (-p_th_db / 10.0)
    # relative slack keeps MPCs sitting exactly on the dynamic-range edge
    return power >= floor * (1.0 - 1e-12)


def denoise(mpcs: LinkChannel | Sequence[Mpc], p_th_db: float = 30.0):
    """Drop MPCs more than ``p_th_db`` below the strongest MPC of their link.

    The boundary is inclusive. A :class:`LinkChannel` yields a
    :class:`LinkChannel`; a list of MPCs (links may be mixed) yields a list.
    """
    if not p_th_db > 0:
        raise ParameterError("p_th_db must be > 0")
    if isinstance(mpcs, LinkChannel):
        return mpcs.subset(_threshold_mask(mpcs.power(), p_th_db))
    seq = list(mpcs)
    keep = np.zeros(len(seq), dtype=bool)
    for link in LinkTag:
        idx = np.array([i for i, m in enumerate(seq) if m.link is link], dtype=np.int64)
        if idx.size:
            power = np.array([seq[i].power for i in idx])
            keep[idx[_threshold_mask(power, p_th_db)]] = True
    return [m for m, k in zip(seq, keep) if k]


def compute_gamma(
    comm: LinkChannel | Sequence[Mpc],
    sens: LinkChannel | Sequence[Mpc],
    policy: GammaPolicy | str | float = GammaPolicy.EQUAL_TOTAL,
) -> float:
    """Power compensation factor applied to communication MPCs.

    ``policy`` is ``"equal_total"`` (sum of sensing power over sum of comm
    power), ``"equal_mean"`` (ratio of mean MPC powers) or a positive number
    used as is.
    """
    if not isinstance(policy, (str, GammaPolicy)):
        gamma = float(policy)
        if not gamma > 0 or not math.isfinite(gamma):
            raise ParameterError("a manual gamma must be finite and > 0")
        return gamma
    policy = GammaPolicy(policy)
    if policy is GammaPolicy.MANUAL:
        raise ParameterError("pass the manual gamma value itself as the policy")
    pc = as_link_channel(comm, LinkTag.COMMUNICATION).power()
    ps = as_link_channel(sens, LinkTag.SENSING).power()
    if pc.size == 0 or ps.size == 0:
        raise ParameterError("automatic gamma policies need MPCs on both links")
    if policy is GammaPolicy.EQUAL_TOTAL:
        num, den = ps.sum(), pc.sum()
    else:
        num, den = ps.mean(), pc.mean()
    if den <= 0:
        raise ZeroDivisionError("communication link has zero power")
    if num <= 0:
        raise ParameterError("sensing link has zero power")
    return float(num / den)


@dataclass(frozen=True, eq=False)
class JointMpcSet:
    """Sensing MPCs followed by communication MPCs, with link tags kept.

    ``power`` is the compensated power used for clustering;
    ``raw_power`` is the received power before compensation.
    """

    sensing: LinkChannel
    comm: LinkChannel
    gamma: float

    def __post_init__(self) -> None:
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ParameterError("gamma must be finite and > 0")
        n_s = len(self.sensing)
        object.__setattr__(self, "_is_comm", np.r_[np.zeros(n_s, bool), np.ones(len(self.comm), bool)])
        raw = np.r_[self.sensing.power(), self.comm.power()]
        object.__setattr__(self, "_raw", raw)
        object.__setattr__(self, "_power", np.where(self._is_comm, raw * self.gamma, raw))

    def __len__(self) -> int:
        return self._is_comm.size

    @property
    def is_comm(self) -> np.ndarray:
        return self._is_comm

    @property
    def links(self) -> list[LinkTag]:
        return [LinkTag.COMMUNICATION if c else LinkTag.SENSING for c in self._is_comm]

    @property
    def aod_deg(self) -> np.ndarray:
        return np.r_[self.sensing.aod_deg, self.comm.aod_deg]

    @property
    def delay_ns(self) -> np.ndarray:
        return np.r_[self.sensing.delay_ns, self.comm.delay_ns]

    @property
    def raw_power(self) -> np.ndarray:
        return self._raw

    @property
    def power(self) -> np.ndarray:
        return self._power

    @property
    def effective_amplitude(self) -> np.ndarray:
        """Uncompensated received amplitudes (RCS applied on sensing)."""
        return np.r_[self.sensing.effective_amplitude(), self.comm.amplitude]

    @property
    def mpcs(self) -> tuple[Mpc, ...]:
        return self.sensing.mpcs + self.comm.mpcs

    @property
    def truth_labels(self) -> np.ndarray | None:
        if self.sensing.cluster_id is None or self.comm.cluster_id is None:
            return None
        return np.r_[self.sensing.cluster_id, self.comm.cluster_id]


def merge_links(
    comm: LinkChannel | Sequence[Mpc], sens: LinkChannel | Sequence[Mpc], gamma: float
) -> JointMpcSet:
    return JointMpcSet(
        sensing=as_link_channel(sens, LinkTag.SENSING),
        comm=as_link_channel(comm, LinkTag.COMMUNICATION),
        gamma=float(gamma),
    )


# -- distance --------------------------------------------------------------


@dataclass(frozen=True)
class McdParams:
    zeta: float = 8.0
    delay_std_ns: float = 0.0
    delay_range_ns: float = 0.0

    def __post_init__(self) -> None:
        if not self.zeta > 0:
            raise ParameterError("zeta must be > 0")
        if self.delay_std_ns < 0 or self.delay_range_ns < 0:
            raise ParameterError("delay statistics must be >= 0")

    @classmethod
    def from_delays(cls, delays: Sequence[float], zeta: float = 8.0) -> "McdParams":
        d = np.asarray(delays, dtype=float)
        if d.size == 0:
            return cls(zeta)
        return cls(zeta, float(d.std()), float(d.max() - d.min()))

    @classmethod
    def from_joint(cls, joint: JointMpcSet, zeta: float = 8.0) -> "McdParams":
        return cls.from_delays(joint.delay_ns, zeta)

    @property
    def delay_scale(self) -> float:
        """MCD per nanosecond of delay difference."""
        if self.delay_range_ns <= 0:
            return 0.0
        return self.zeta * self.delay_std_ns / self.delay_range_ns**2


def _embed(aod_deg: np.ndarray, delay_ns: np.ndarray, params: McdParams, ref: float = 0.0) -> np.ndarray:
    t = np.deg2rad(np.asarray(aod_deg, dtype=float))
    z = params.delay_scale * (np.asarray(delay_ns, dtype=float) - ref)
    return np.column_stack([0.5 * np.cos(t), 0.5 * np.sin(t), z])


def _as_point(m) -> tuple[float, float]:
    if isinstance(m, Mpc):
        return m.aod_deg, m.delay_ns
    aod, delay = m
    return float(aod), float(delay)


def mcd(a: Mpc | tuple[float, float], b: Mpc | tuple[float, float], params: McdParams) -> float:
    """Multipath component distance between two MPCs (or (aod, delay) pairs)."""
    (ta, da), (tb, db) = _as_point(a), _as_point(b)
    x = _embed(np.array([ta, tb]), np.array([da, db]), params, ref=da)
    return float(np.linalg.norm(x[0] - x[1]))


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.maximum(((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2), 0.0)


# -- KPowerMeans -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Partition:
    """Cluster assignment of every MPC of a joint set.

    ``cost`` is the power-weighted sum of squared MCDs to the assigned
    centroids; ``cost_history`` records it after every update step.
    """

    k: int
    assignment: np.ndarray
    centroids: np.ndarray  # (k, 2): aod_deg, delay_ns
    cost: float
    db: float = math.nan
    ch: float = math.nan
    cost_history: tuple[float, ...] = ()
    n_iter: int = 0

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def with_indices(self, db: float, ch: float) -> "Partition":
        return Partition(self.k, self.assignment, self.centroids, self.cost, db, ch, self.cost_history, self.n_iter)


class _Space:
    """Embedded joint set plus the cylinder-constrained centroid algebra."""

    def __init__(self, aod: np.ndarray, delay: np.ndarray, power: np.ndarray, params: McdParams):
        if power.sum() <= 0:
            raise ParameterError("clustering needs positive total power")
        self.w = power.astype(float)
        self.ref = float(np.dot(self.w, delay) / self.w.sum())
        self.params = params
        self.x = _embed(aod, delay, params, self.ref)

    def centroid(self, idx: np.ndarray, previous: np.ndarray | None = None) -> np.ndarray:
        w = self.w[idx]
        x = self.x[idx]
        sx, sy = np.dot(w, x[:, 0]), np.dot(w, x[:, 1])
        r = math.hypot(sx, sy)
        if r > 1e-300:
            cx, cy = 0.5 * sx / r, 0.5 * sy / r
        elif previous is not None:
            cx, cy = previous[0], previous[1]
        else:
            cx, cy = 0.5, 0.0
        cz = np.dot(w, x[:, 2]) / w.sum() if w.sum() > 0 else x[:, 2].mean()
        return np.array([cx, cy, cz])

    def centroids(self, assign: np.ndarray, k: int, previous: np.ndarray | None = None) -> np.ndarray:
        return np.array([
            self.centroid(np.flatnonzero(assign == j), None if previous is None else previous[j]) for j in range(k)
        ])

    def cost(self, assign: np.ndarray, c: np.ndarray) -> float:
        d = ((self.x - c[assign]) ** 2).sum(axis=1)
        return float(np.dot(self.w, d))

    def decode(self, c: np.ndarray) -> np.ndarray:
        aod = np.rad2deg(np.arctan2(c[:, 1], c[:, 0])) % 360.0
        s = self.params.delay_scale
        delay = c[:, 2] / s + self.ref if s > 0 else np.full(len(c), self.ref)
        return np.column_stack([aod, delay])


def _init_seeds(
    space: _Space, k: int, rng: np.random.Generator | None, min_sep_frac: float
) -> list[int]:
    """Farthest-point seeding with a minimum-separation check.

    Without ``rng`` the strongest MPC starts and each next seed is the MPC
    farthest from the chosen ones. With ``rng`` the first seed is drawn by
    power and each next seed by ``power * distance**2`` among the MPCs at
    least ``min_sep_frac`` times the current maximum distance away.
    """
    x, w = space.x, space.w
    n = len(x)
    first = int(np.argmax(w)) if rng is None else int(rng.choice(n, p=w / w.sum()))
    seeds = [first]
    dmin = np.sqrt(((x - x[first]) ** 2).sum(axis=1))
    chosen = np.zeros(n, dtype=bool)
    chosen[first] = True
    for _ in range(k - 1):
        d = np.where(chosen, -1.0, dmin)
        far = d.max()
        if far <= 0:
            # every remaining MPC coincides with a seed
            free = np.flatnonzero(~chosen)
            nxt = int(free[0]) if rng is None else int(rng.choice(free))
        elif rng is None:
            nxt = int(np.argmax(d))
        else:
            cand = np.flatnonzero(d >= min_sep_frac * far)
            p = w[cand] * d[cand] ** 2
            nxt = int(cand[np.argmax(p)]) if p.sum() <= 0 else int(rng.choice(cand, p=p / p.sum()))
        seeds.append(nxt)
        chosen[nxt] = True
        dmin = np.minimum(dmin, np.sqrt(((x - x[nxt]) ** 2).sum(axis=1)))
    return seeds


def _repair_empty(space: _Space, assign: np.ndarray, c: np.ndarray, k: int) -> None:
    """Reseed empty clusters with the MPC farthest from its centroid (in place)."""
    for j in range(k):
        counts = np.bincount(assign, minlength=k)
        if counts[j]:
            continue
        d = ((space.x - c[assign]) ** 2).sum(axis=1)
        d[counts[assign] <= 1] = -1.0
        i = int(np.argmax(d))
        assign[i] = j
        c[j] = space.x[i]


def _cluster_cost(W, sx, sy, t, q):
    """Constrained-centroid cost from sufficient statistics (vectorized)."""
    W = np.asarray(W, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        delay_term = np.where(W > 0, q - t * t / np.where(W > 0, W, 1.0), 0.0)
    return np.where(W > 0, 0.5 * W - np.hypot(sx, sy) + delay_term, 0.0)


def _hartigan(space: _Space, assign: np.ndarray, k: int, max_sweeps: int = 50) -> int:
    """Single-MPC moves that strictly lower the cost (in place); returns #moves."""
    x, w = space.x, space.w
    wx, wy, wz = w * x[:, 0], w * x[:, 1], w * x[:, 2]
    wq = w * x[:, 2] ** 2
    stats = np.zeros((5, k))
    for arr, row in ((w, 0), (wx, 1), (wy, 2), (wz, 3), (wq, 4)):
        stats[row] = np.bincount(assign, weights=arr, minlength=k)
    counts = np.bincount(assign, minlength=k)
    contrib = np.stack([w, wx, wy, wz, wq])
    tol = 1e-12 * max(1.0, float(w.sum()))
    moves = 0

    def deltas(i: int) -> np.ndarray:
        a = assign[i]
        base = _cluster_cost(*stats)
        plus = _cluster_cost(*(stats + contrib[:, i:i + 1]))
        minus_a = _cluster_cost(*(stats[:, a] - contrib[:, i]))
        d = (plus - base) + (minus_a - base[a])
        d[a] = 0.0
        return d

    for _ in range(max_sweeps):
        base = _cluster_cost(*stats)
        own = stats[:, assign]  # (5, n)
        minus = _cluster_cost(*(own - contrib))
        gain_remove = minus - base[assign]
        plus = _cluster_cost(*(stats[:, None, :] + contrib[:, :, None]))  # (n, k)
        delta = plus - base[None, :] + gain_remove[:, None]
        delta[np.arange(len(x)), assign] = 0.0
        delta[counts[assign] <= 1] = 0.0
        best = delta.min(axis=1)
        cand = np.flatnonzero(best < -tol)
        if cand.size == 0:
            break
        moved = 0
        for i in cand[np.argsort(best[cand], kind="stable")]:
            a = assign[i]
            if counts[a] <= 1:
                continue
            d = deltas(i)
            b = int(np.argmin(d))
            if d[b] < -tol:
                stats[:, a] -= contrib[:, i]
                stats[:, b] += contrib[:, i]
                counts[a] -= 1
                counts[b] += 1
                assign[i] = b
                moved += 1
        moves += moved
        if moved == 0:
            break
    return moves


def _kpowermeans_space(
    space: _Space,
    k: int,
    rng: np.random.Generator | None,
    max_iter: int,
    refine: bool,
    min_sep_frac: float,
) -> Partition:
    n = len(space.x)
    seeds = _init_seeds(space, k, rng, min_sep_frac)
    c = space.x[seeds].copy()
    assign = np.full(n, -1)
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(_sq_dist(space.x, c), axis=1)
        _repair_empty(space, new, c, k)
        changed = not np.array_equal(new, assign)
        assign = new
        c = space.centroids(assign, k, previous=c)
        history.append(space.cost(assign, c))
        if not changed:
            break
    if refine and k > 1 and _hartigan(space, assign, k):
        c = space.centroids(assign, k, previous=c)
        history.append(space.cost(assign, c))
    cost = history[-1]
    return Partition(k, assign.copy(), space.decode(c), cost, cost_history=tuple(history), n_iter=it)


def _space_for(joint: JointMpcSet, params: McdParams) -> _Space:
    return _Space(joint.aod_deg, joint.delay_ns, joint.power, params)


def kpowermeans(
    joint: JointMpcSet,
    k: int,
    params: McdParams,
    rng: np.random.Generator | None = None,
    max_iter: int = 100,
    refine: bool = True,
    min_sep_frac: float = 0.5,
) -> Partition:
    """One KPowerMeans run.

    Parameters
    ----------
    rng
        ``None`` gives the deterministic farthest-point initialization;
        a generator gives a randomized distance-checked initialization.
    refine
        Finish with single-MPC moves that lower the cost further.
    """
    n = len(joint)
    if not 1 <= k <= n:
        raise ParameterError(f"k = {k} must lie in [1, {n}]")
    return _kpowermeans_space(_space_for(joint, params), k, rng, max_iter, refine, min_sep_frac)


def best_of_restarts(
    joint: JointMpcSet,
    k: int,
    params: McdParams,
    restarts: int = 10,
    seed: int | Sequence[int] = 0,
    max_iter: int = 100,
    refine: bool = True,
    min_sep_frac: float = 0.5,
) -> Partition:
    """Lowest-cost partition over ``restarts`` runs (first run deterministic).

    Restart ``r`` uses the RNG substream ``(seed, k, r)``; ties keep the
    earlier restart.
    """
    n = len(joint)
    if not 1 <= k <= n:
        raise ParameterError(f"k = {k} must lie in [1, {n}]")
    space = _space_for(joint, params)
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    best = None
    for r in range(max(1, restarts)):
        rng = None if r == 0 else np.random.default_rng(np.random.SeedSequence(list(key) + [k, r]))
        p = _kpowermeans_space(space, k, rng, max_iter, refine, min_sep_frac)
        if best is None or p.cost < best.cost:
            best = p
    return best


# -- validity indices ------------------------------------------------------


def _centroid_points(p: Partition, space: _Space) -> np.ndarray:
    return space.centroids(p.assignment, p.k)


def davies_bouldin(p: Partition, joint: JointMpcSet, params: McdParams) -> float:
    """Davies-Bouldin index with power-weighted mean MCD as cluster scatter."""
    if p.k < 2:
        raise UndefinedIndexError("Davies-Bouldin needs k >= 2")
    space = _space_for(joint, params)
    c = _centroid_points(p, space)
    d = np.sqrt(((space.x - c[p.assignment]) ** 2).sum(axis=1))
    scatter = np.array([
        np.dot(space.w[m], d[m]) / space.w[m].sum() if space.w[m].sum() > 0 else d[m].mean()
        for m in (p.assignment == j for j in range(p.k))
    ])
    sep = np.sqrt(_sq_dist(c, c))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (scatter[:, None] + scatter[None, :]) / sep
    r[sep == 0] = np.inf
    np.fill_diagonal(r, -np.inf)
    return float(r.max(axis=1).mean())


def calinski_harabasz(p: Partition, joint: JointMpcSet, params: McdParams) -> float:
    """Calinski-Harabasz index with power-weighted squared-MCD scatter."""
    if p.k < 2:
        raise UndefinedIndexError("Calinski-Harabasz needs k >= 2")
    space = _space_for(joint, params)
    n = len(space.x)
    c = _centroid_points(p, space)
    g = space.centroid(np.arange(n))
    wk = np.bincount(p.assignment, weights=space.w, minlength=p.k)
    between = float(np.dot(wk, ((c - g) ** 2).sum(axis=1)))
    within = space.cost(p.assignment, c)
    if within <= 0 or n == p.k:
        return math.inf if between > 0 else 0.0
    return (between / (p.k - 1)) / (within / (n - p.k))


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 1.0 if num == 0 else math.inf
    if math.isinf(den):
        return 1.0 if math.isinf(num) else 0.0
    return num / den


def combined_indicator(scores: Sequence[tuple[int, float, float]]) -> list[float]:
    """``(DB_min / DB(k) + CH(k) / CH_max) / 2`` for every entry."""
    if not scores:
        raise ValueError("no scores")
    db_min = min(s[1] for s in scores)
    ch_max = max(s[2] for s in scores)
    return [0.5 * (_ratio(db_min, db) + _ratio(ch, ch_max)) for _, db, ch in scores]


def select_k(scores: Sequence[tuple[int, float, float]]) -> int:
    """Cluster number maximizing the combined indicator; ties go to the smaller k."""
    combined = combined_indicator(scores)
    best_k, best_v = None, -math.inf
    for (k, _, _), v in sorted(zip(scores, combined), key=lambda t: t[0][0]):
        if v > best_v:
            best_k, best_v = k, v
    return int(best_k)


# -- pipeline --------------------------------------------------------------


@dataclass(frozen=True)
class ClusteringConfig:
    p_th_db: float = 30.0
    gamma_policy: str | float = GammaPolicy.EQUAL_TOTAL.value
    zeta: float = 8.0
    restarts: int = 10
    max_iter: int = 100
    seed: int = 0
    min_sep_frac: float = 0.5
    refine: bool = True
    min_count: int = 1
    allow_single_link: bool = False

    def __post_init__(self) -> None:
        if not self.p_th_db > 0:
            raise ParameterError("p_th_db must be > 0")
        if not self.zeta > 0:
            raise ParameterError("zeta must be > 0")
        if self.restarts < 1 or self.max_iter < 1 or self.min_count < 1:
            raise ParameterError("restarts, max_iter and min_count must be >= 1")
        if not 0 <= self.min_sep_frac <= 1:
            raise ParameterError("min_sep_frac must lie in [0, 1]")


@dataclass(frozen=True)
class KScore:
    k: int
    db: float
    ch: float
    combined: float


@dataclass(frozen=True, eq=False)
class KpmResult:
    joint: JointMpcSet
    params: McdParams
    k_star: int
    scores: tuple[KScore, ...]
    partitions: dict[int, Partition] = field(repr=False)

    @property
    def partition(self) -> Partition:
        return self.partitions[self.k_star]


def _prepare(comm, sens, cfg: ClusteringConfig) -> JointMpcSet:
    comm = denoise(as_link_channel(comm, LinkTag.COMMUNICATION), cfg.p_th_db)
    sens = denoise(as_link_channel(sens, LinkTag.SENSING), cfg.p_th_db)
    if not len(comm) or not len(sens):
        if not cfg.allow_single_link:
            raise ParameterError("joint clustering needs MPCs on both links (allow_single_link overrides)")
        gamma = compute_gamma(comm, sens, cfg.gamma_policy) if not isinstance(cfg.gamma_policy, str) else 1.0
    else:
        gamma = compute_gamma(comm, sens, cfg.gamma_policy)
    return merge_links(comm, sens, gamma)


def _check_range(k_range: Sequence[int], n: int) -> tuple[int, int]:
    k_min, k_max = int(k_range[0]), int(k_range[1])
    if k_min < 2:
        raise ParameterError("k_min must be >= 2 (validity indices need two clusters)")
    if k_max < k_min:
        raise ParameterError("k_max must be >= k_min")
    if k_max > n:
        raise ParameterError(f"k_max = {k_max} exceeds the {n} effective MPCs")
    return k_min, k_max


def _cluster_all_k(joint, params, k_min, k_max, cfg, seed_key):
    partitions = {}
    for k in range(k_min, k_max + 1):
        p = best_of_restarts(
            joint, k, params, cfg.restarts, seed_key, cfg.max_iter, cfg.refine, cfg.min_sep_frac
        )
        partitions[k] = p.with_indices(davies_bouldin(p, joint, params), calinski_harabasz(p, joint, params))
    return partitions


def run_kpm_jca(
    comm: LinkChannel | Sequence[Mpc],
    sens: LinkChannel | Sequence[Mpc],
    k_range: Sequence[int] = (2, 20),
    cfg: ClusteringConfig | None = None,
) -> KpmResult:
    """Denoise, compensate, merge, cluster every k in the range and select k*."""
    cfg = cfg or ClusteringConfig()
    joint = _prepare(comm, sens, cfg)
    k_min, k_max = _check_range(k_range, len(joint))
    params = McdParams.from_joint(joint, cfg.zeta)
    partitions = _cluster_all_k(joint, params, k_min, k_max, cfg, (cfg.seed,))
    raw = [(k, p.db, p.ch) for k, p in partitions.items()]
    combined = combined_indicator(raw)
    scores = tuple(KScore(k, db, ch, v) for (k, db, ch), v in zip(raw, combined))
    return KpmResult(joint, params, select_k(raw), scores, partitions)


def run_kpm_jca_snapshots(
    snapshots: Iterable[tuple[LinkChannel | Sequence[Mpc], LinkChannel | Sequence[Mpc]]],
    k_range: Sequence[int] = (2, 20),
    cfg: ClusteringConfig | None = None,
) -> tuple[int, tuple[KScore, ...], list[KpmResult]]:
    """Cluster several snapshots, average DB/CH per k, then select k*.

    Returns ``(k_star, averaged_scores, per_snapshot_results)``; each
    per-snapshot result has its ``k_star`` set to the common choice.
    """
    cfg = cfg or ClusteringConfig()
    results = []
    for s, (comm, sens) in enumerate(snapshots):
        joint = _prepare(comm, sens, cfg)
        k_min, k_max = _check_range(k_range, len(joint))
        params = McdParams.from_joint(joint, cfg.zeta)
        results.append((joint, params, _cluster_all_k(joint, params, k_min, k_max, cfg, (cfg.seed, s))))
    if not results:
        raise ParameterError("no snapshots")
    ks = sorted(results[0][2])
    raw = [
        (k, float(np.mean([r[2][k].db for r in results])), float(np.mean([r[2][k].ch for r in results])))
        for k in ks
    ]
    combined = combined_indicator(raw)
    scores = tuple(KScore(k, db, ch, v) for (k, db, ch), v in zip(raw, combined))
    k_star = select_k(raw)
    return k_star, scores, [KpmResult(j, pr, k_star, scores, parts) for j, pr, parts in results]


# -- classification --------------------------------------------------------


@dataclass(frozen=True)
class Classification:
    clusters: tuple[Cluster, ...]
    total: int
    sensing_count: int
    comm_count: int
    shared_count: int
    sd_comm: float | None
    sd_sensing: float | None

    @property
    def kinds(self) -> list[ClusterKind]:
        return [c.kind for c in self.clusters]

    @property
    def mpc_kinds(self) -> np.ndarray:
        n = sum(len(c.members) for c in self.clusters)
        out = np.empty(n, dtype="<U12")
        for c in self.clusters:
            out[list(c.members)] = c.kind.value
        return out

    def counts(self) -> dict[str, int]:
        return {"total": self.total, "sensing": self.sensing_count, "comm": self.comm_count, "shared": self.shared_count}


def classify_clusters(
    p: Partition, joint: JointMpcSet, min_count: int = 1, mode: SdMode | str = SdMode.INCOHERENT
) -> Classification:
    """Label clusters shared / comm-only / sensing-only and compute per-link SD.

    A cluster is shared when it holds at least ``min_count`` MPCs of each
    link. Otherwise it takes the kind of the link reaching ``min_count``,
    or of the majority link (sensing on a tie). SD uses raw powers.
    """
    if p.assignment.size != len(joint):
        raise ParameterError("partition does not cover the joint set")
    is_comm = joint.is_comm
    raw = joint.raw_power
    clusters = []
    shared_mpc = np.zeros(len(joint), dtype=bool)
    for j in range(p.k):
        members = np.flatnonzero(p.assignment == j)
        comm_sub = members[is_comm[members]]
        sens_sub = members[~is_comm[members]]
        nc, ns = comm_sub.size, sens_sub.size
        if nc >= min_count and ns >= min_count:
            kind = ClusterKind.SHARED
            shared_mpc[members] = True
        elif nc >= min_count:
            kind = ClusterKind.COMM_ONLY
        elif ns >= min_count:
            kind = ClusterKind.SENSING_ONLY
        else:
            kind = ClusterKind.COMM_ONLY if nc > ns else ClusterKind.SENSING_ONLY
        clusters.append(
            Cluster(
                id=j,
                members=tuple(int(i) for i in members),
                centroid=(float(p.centroids[j, 0]), float(p.centroids[j, 1]),
                          float(raw[members].mean()) if members.size else 0.0),
                kind=kind,
                comm_sub=tuple(int(i) for i in comm_sub),
                sensing_sub=tuple(int(i) for i in sens_sub),
            )
        )
    amp = joint.effective_amplitude

    def sd(mask: np.ndarray) -> float | None:
        if not mask.any():
            return None
        try:
            return sharing_degree_from_amplitudes(amp[mask], shared_mpc[mask], mode)
        except UndefinedSDError:
            return None

    kinds = [c.kind for c in clusters]
    return Classification(
        clusters=tuple(clusters),
        total=len(clusters),
        sensing_count=sum(k in (ClusterKind.SHARED, ClusterKind.SENSING_ONLY) for k in kinds),
        comm_count=sum(k in (ClusterKind.SHARED, ClusterKind.COMM_ONLY) for k in kinds),
        shared_count=kinds.count(ClusterKind.SHARED),
        sd_comm=sd(is_comm),
        sd_sensing=sd(~is_comm),
    )
