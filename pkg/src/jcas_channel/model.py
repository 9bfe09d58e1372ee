"""Joint generation of communication and sensing channel realizations.

A realization is built from three cluster populations:

* ``n0 + n2`` sensing clusters, every MPC carrying an RCS coefficient;
* ``n0`` shared communication sub-clusters, each reusing the centroid AOD of
  a randomly selected sensing cluster;
* ``n1`` communication-only clusters.

Cluster powers follow an exponential delay profile with lognormal
shadowing. Centroid delays are scaled so the power-weighted inter-cluster DS
equals its target; centroid AODs are drawn from a wrapped Gaussian around the
reference (LOS) direction, with the spread scaled until the power-weighted
circular AS is within 1 % of its target.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ChannelPair,
    ClusterKind,
    EmptyChannelError,
    IntraFit,
    LinkChannel,
    LinkTag,
    Mpc,
    Padp,
    ParameterError,
    ScenarioConfig,
    SdMode,
    UndefinedSDError,
    ValidationError,
    as_link_channel,
)
from .stats import rms_angle_spread

__all__ = [
    "GeneratedCluster",
    "GenerationTables",
    "generate_sensing_clusters",
    "derive_shared_comm_subclusters",
    "generate_nonshared_comm_clusters",
    "make_los_cluster",
    "synthesize_channel_pair",
    "generate_channel_pair",
    "generation_tables",
    "padp_from_mpcs",
    "sharing_degree",
    "sharing_degree_from_amplitudes",
    "aod_unit_vector",
    "aod_from_vector",
    "localize_scatterers",
    "bistatic_delay",
]

AS_REL_TOL = 0.01

# Substream indices under a realization seed.
_STREAM_SENSING = 0
_STREAM_SHARED = 1
_STREAM_COMM_ONLY = 2
_STREAM_LOS = 3


@dataclass(frozen=True, eq=False)
class GeneratedCluster:
    """One generated (sub-)cluster on a single link, with its draws."""

    cluster_id: int
    link: LinkTag
    kind: ClusterKind
    centroid_aod_deg: float
    centroid_delay_ns: float
    aod_deg: np.ndarray
    delay_ns: np.ndarray
    amplitude: np.ndarray
    rcs: np.ndarray | None
    intra_ds_ns: float
    intra_as_deg: float

    @property
    def n_paths(self) -> int:
        return int(self.aod_deg.size)

    def effective_amplitude(self) -> np.ndarray:
        return self.amplitude if self.rcs is None else self.amplitude * self.rcs

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.effective_amplitude()) ** 2))

    def scaled(self, factor: float) -> "GeneratedCluster":
        return dataclasses.replace(self, amplitude=self.amplitude * factor)


@dataclass(frozen=True, eq=False)
class GenerationTables:
    """Per-cluster parameter draws of one link, in cluster order."""

    cluster_id: np.ndarray
    centroid_delay_ns: np.ndarray
    centroid_aod_deg: np.ndarray
    power: np.ndarray
    path_count: np.ndarray
    intra_ds_ns: np.ndarray
    intra_as_deg: np.ndarray


def generation_tables(clusters: Sequence[GeneratedCluster]) -> GenerationTables:
    return GenerationTables(
        cluster_id=np.array([c.cluster_id for c in clusters], dtype=np.int64),
        centroid_delay_ns=np.array([c.centroid_delay_ns for c in clusters]),
        centroid_aod_deg=np.array([c.centroid_aod_deg for c in clusters]),
        power=np.array([c.power for c in clusters]),
        path_count=np.array([c.n_paths for c in clusters], dtype=np.int64),
        intra_ds_ns=np.array([c.intra_ds_ns for c in clusters]),
        intra_as_deg=np.array([c.intra_as_deg for c in clusters]),
    )


# -- stochastic building blocks --------------------------------------------


def _cluster_profile(n: int, cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Normalized delays u (units of DS) and unnormalized cluster powers."""
    r = cfg.delay_decay_factor
    u = -r * np.log1p(-rng.random(n))  # log1p(-U) with U in [0, 1) avoids log(0)
    shadow = rng.normal(0.0, cfg.shadow_std_db, n) if cfg.shadow_std_db > 0 else np.zeros(n)
    power = np.exp(-u * (r - 1.0) / r) * 10.0 ** (-shadow / 10.0)
    return u, power


def _path_count(fit: IntraFit, cfg: ScenarioConfig, rng: np.random.Generator) -> int:
    mu = fit.path_count[0]
    return max(1, int(round(rng.normal(mu, cfg.path_count_std(fit)))))


def _weighted_center_scale(x: np.ndarray, w: np.ndarray, target: float) -> np.ndarray:
    """Shift x to zero weighted mean and scale it to weighted rms ``target``."""
    xc = x - np.dot(w, x)
    rms = math.sqrt(float(np.dot(w, xc * xc)))
    if x.size < 2 or rms <= 0 or target <= 0:
        return np.zeros_like(x)
    return xc * (target / rms)


@dataclass
class _Draft:
    """Intra-cluster structure before the centroid is placed."""

    amplitude: np.ndarray
    rcs: np.ndarray | None
    delay_offset: np.ndarray
    aod_offset: np.ndarray
    ds: float
    as_: float

    @property
    def power(self) -> float:
        a = self.amplitude if self.rcs is None else self.amplitude * self.rcs
        return float(np.sum(np.abs(a) ** 2))


def _draft_cluster(
    power: float, fit: IntraFit, cfg: ScenarioConfig, rng: np.random.Generator, with_rcs: bool
) -> _Draft:
    m = _path_count(fit, cfg, rng)
    ds = 10.0 ** rng.normal(*fit.log10_ds)
    as_ = 10.0 ** rng.normal(*fit.log10_as)
    p = rng.exponential(size=m)
    p *= power / p.sum()
    amp = np.sqrt(p) * np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, m))
    rcs = None
    eff = p
    if with_rcs:
        rcs = 10.0 ** (rng.normal(cfg.rcs_median_db, cfg.rcs_std_db, m) / 20.0) if cfg.rcs_std_db > 0 \
            else np.full(m, 10.0 ** (cfg.rcs_median_db / 20.0))
        eff = p * rcs**2
    w = eff / eff.sum()
    delay_offset = _weighted_center_scale(rng.exponential(size=m), w, ds)
    aod_offset = _weighted_center_scale(rng.laplace(size=m), w, as_)
    if m == 1:
        ds = as_ = 0.0
    return _Draft(amp, rcs, delay_offset, aod_offset, ds, as_)


def _target_delays(u: np.ndarray, weights: np.ndarray, ds_target: float) -> np.ndarray:
    if u.size < 2:
        return np.zeros_like(u)
    w = weights / weights.sum()
    rms = math.sqrt(float(np.dot(w, (u - np.dot(w, u)) ** 2)))
    if rms <= 0:
        return np.zeros_like(u)
    return u * (ds_target / rms)


def _target_angles(
    weights: np.ndarray, as_target: float, ref_deg: float, rng: np.random.Generator, max_draws: int = 32
) -> np.ndarray:
    """Wrapped-Gaussian centroid AODs whose weighted circular AS hits the target."""
    n = weights.size
    if n == 1:
        return np.array([(ref_deg + as_target * rng.standard_normal()) % 360.0])
    w = weights / weights.sum()
    best, best_err = None, math.inf
    for _ in range(max_draws):
        z = rng.standard_normal(n)
        zc = z - np.dot(w, z)
        rms = math.sqrt(float(np.dot(w, zc * zc)))
        if rms <= 0:
            continue
        s0 = as_target / rms

        def spread(scale: float) -> float:
            return rms_angle_spread(ref_deg + scale * zc, w)

        lo, f_lo = 0.0, 0.0
        found = None
        for k in range(1, 65):
            hi = s0 * k / 8.0
            f_hi = spread(hi)
            err = abs(f_hi - as_target) / as_target
            if err < best_err:
                best, best_err = ref_deg + hi * zc, err
            if f_lo < as_target <= f_hi:
                found = (lo, hi)
                break
            lo, f_lo = hi, f_hi
        if found is not None:
            lo, hi = found
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                f_mid = spread(mid)
                err = abs(f_mid - as_target) / as_target
                if err < best_err:
                    best, best_err = ref_deg + mid * zc, err
                if err <= AS_REL_TOL / 10:
                    break
                if f_mid < as_target:
                    lo = mid
                else:
                    hi = mid
        if best_err <= AS_REL_TOL:
            break
    return np.mod(best, 360.0)


def _assemble(
    drafts: Sequence[_Draft],
    centroid_delays: np.ndarray,
    centroid_aods: np.ndarray,
    ids: Sequence[int],
    link: LinkTag,
    kind: ClusterKind,
) -> list[GeneratedCluster]:
    out = []
    for d, tau, theta, cid in zip(drafts, centroid_delays, centroid_aods, ids):
        out.append(
            GeneratedCluster(
                cluster_id=int(cid),
                link=link,
                kind=kind,
                centroid_aod_deg=float(theta) % 360.0,
                centroid_delay_ns=float(tau),
                aod_deg=np.mod(theta + d.aod_offset, 360.0),
                delay_ns=tau + d.delay_offset,
                amplitude=d.amplitude,
                rcs=d.rcs,
                intra_ds_ns=d.ds,
                intra_as_deg=d.as_,
            )
        )
    return out


def _first_arrival_shift(drafts: Sequence[_Draft], centroid_delays: np.ndarray, min_delay: float) -> float:
    earliest = min(float(tau + d.delay_offset.min()) for d, tau in zip(drafts, centroid_delays))
    return min_delay - earliest


def _generate_population(
    n: int,
    cfg: ScenarioConfig,
    rng: np.random.Generator,
    fit: IntraFit,
    ds_target: float,
    as_target: float,
    link: LinkTag,
    kind: ClusterKind,
    ids: Sequence[int],
) -> list[GeneratedCluster]:
    u, power = _cluster_profile(n, cfg, rng)
    drafts = [_draft_cluster(p, fit, cfg, rng, with_rcs=link is LinkTag.SENSING) for p in power]
    weights = np.array([d.power for d in drafts])
    tau = _target_delays(u, weights, ds_target)
    tau = tau + _first_arrival_shift(drafts, tau, cfg.min_delay_ns)
    theta = _target_angles(weights, as_target, cfg.reference_aod_deg, rng)
    return _assemble(drafts, tau, theta, ids, link, kind)


# -- public generators -----------------------------------------------------


def generate_sensing_clusters(cfg: ScenarioConfig, rng: np.random.Generator) -> list[GeneratedCluster]:
    """Draw the ``n0 + n2`` sensing clusters (kind is a placeholder until synthesis)."""
    n_s = cfg.n_s
    if n_s == 0:
        raise EmptyChannelError("n0 + n2 = 0: no sensing clusters to generate")
    return _generate_population(
        n_s, cfg, rng, cfg.intra_sensing, cfg.inter_ds_sens_ns, cfg.inter_as_sens_deg,
        LinkTag.SENSING, ClusterKind.SENSING_ONLY, range(n_s),
    )


def derive_shared_comm_subclusters(
    sensing: Sequence[GeneratedCluster], n0: int, cfg: ScenarioConfig, rng: np.random.Generator
) -> list[GeneratedCluster]:
    """Communication halves of ``n0`` shared clusters.

    The sensing clusters are chosen uniformly without replacement; each comm
    sub-cluster copies its twin's centroid AOD and cluster id. Everything
    else is drawn from the communication sub-cluster statistics. In
    ``geometric`` delay mode the centroid delay is the TX -> scatterer -> RX
    path of the scatterer located from the sensing centroid.
    """
    if n0 < 0 or n0 > len(sensing):
        raise ParameterError(f"n0 = {n0} exceeds the {len(sensing)} available sensing clusters")
    if n0 == 0:
        return []
    chosen = np.sort(rng.choice(len(sensing), size=n0, replace=False))
    twins = [sensing[i] for i in chosen]
    u, power = _cluster_profile(n0, cfg, rng)
    drafts = [_draft_cluster(p, cfg.intra_comm, cfg, rng, with_rcs=False) for p in power]
    if cfg.shared_delay_mode == "geometric":
        tau = np.array([
            bistatic_delay(
                _scatterer_point(t.centroid_aod_deg, t.centroid_delay_ns, cfg.tx_position, cfg.wave_speed_m_per_ns),
                cfg.tx_position, cfg.rx_position, cfg.wave_speed_m_per_ns,
            )
            for t in twins
        ])
        tau = tau + max(0.0, _first_arrival_shift(drafts, tau, 0.0))
    else:
        weights = np.array([d.power for d in drafts])
        tau = _target_delays(u, weights, cfg.inter_ds_comm_ns)
        tau = tau + _first_arrival_shift(drafts, tau, cfg.min_delay_ns)
    theta = np.array([t.centroid_aod_deg for t in twins])
    return _assemble(drafts, tau, theta, [t.cluster_id for t in twins], LinkTag.COMMUNICATION, ClusterKind.SHARED)


def generate_nonshared_comm_clusters(
    cfg: ScenarioConfig, n1: int, rng: np.random.Generator, id_offset: int = 0
) -> list[GeneratedCluster]:
    """Draw ``n1`` communication-only clusters (no RCS)."""
    if n1 < 0:
        raise ParameterError("n1 must be >= 0")
    if n1 == 0:
        return []
    return _generate_population(
        n1, cfg, rng, cfg.intra_comm, cfg.inter_ds_comm_ns, cfg.inter_as_comm_deg,
        LinkTag.COMMUNICATION, ClusterKind.COMM_ONLY, range(id_offset, id_offset + n1),
    )


def make_los_cluster(cfg: ScenarioConfig, power: float, cluster_id: int) -> GeneratedCluster:
    """Single-path communication cluster at the reference (LOS) angle."""
    if cfg.shared_delay_mode == "geometric":
        tx, rx = np.asarray(cfg.tx_position), np.asarray(cfg.rx_position)
        delay = float(np.linalg.norm(rx - tx)) / cfg.wave_speed_m_per_ns
    else:
        delay = cfg.min_delay_ns
    return GeneratedCluster(
        cluster_id=cluster_id,
        link=LinkTag.COMMUNICATION,
        kind=ClusterKind.COMM_ONLY,
        centroid_aod_deg=cfg.reference_aod_deg,
        centroid_delay_ns=delay,
        aod_deg=np.array([cfg.reference_aod_deg]),
        delay_ns=np.array([delay]),
        amplitude=np.array([math.sqrt(power) + 0j]),
        rcs=None,
        intra_ds_ns=0.0,
        intra_as_deg=0.0,
    )


def _link_table(clusters: Sequence[GeneratedCluster], link: LinkTag) -> LinkChannel:
    if not clusters:
        return LinkChannel.empty(link)
    rcs = None
    if link is LinkTag.SENSING:
        rcs = np.concatenate([c.rcs if c.rcs is not None else np.ones(c.n_paths) for c in clusters])
    return LinkChannel(
        link,
        np.concatenate([c.aod_deg for c in clusters]),
        np.concatenate([c.delay_ns for c in clusters]),
        np.concatenate([c.amplitude for c in clusters]),
        rcs=rcs,
        cluster_id=np.concatenate([np.full(c.n_paths, c.cluster_id) for c in clusters]),
        kind=np.concatenate([np.full(c.n_paths, c.kind.value) for c in clusters]),
    )


def _normalized(clusters: Sequence[GeneratedCluster]) -> list[GeneratedCluster]:
    total = sum(c.power for c in clusters)
    if total <= 0:
        return list(clusters)
    factor = 1.0 / math.sqrt(total)
    return [c.scaled(factor) for c in clusters]


def synthesize_channel_pair(
    sensing: Sequence[GeneratedCluster],
    shared_comm: Sequence[GeneratedCluster],
    comm_only: Sequence[GeneratedCluster],
) -> ChannelPair:
    """Superpose the cluster populations into one normalized channel pair.

    Sensing clusters whose id appears among ``shared_comm`` become shared;
    each link is scaled to unit total received power.
    """
    if not sensing and not shared_comm and not comm_only:
        raise EmptyChannelError("both links are empty")
    sens_ids = [c.cluster_id for c in sensing]
    shared_ids = {c.cluster_id for c in shared_comm}
    comm_ids = [c.cluster_id for c in shared_comm] + [c.cluster_id for c in comm_only]
    if len(set(sens_ids)) != len(sens_ids) or len(set(comm_ids)) != len(comm_ids):
        raise ValidationError("cluster ids must be unique per link")
    if not shared_ids <= set(sens_ids):
        raise ValidationError("every shared comm sub-cluster needs a sensing twin")
    if {c.cluster_id for c in comm_only} & set(sens_ids):
        raise ValidationError("communication-only cluster ids collide with sensing ids")
    sens = [
        dataclasses.replace(c, kind=ClusterKind.SHARED if c.cluster_id in shared_ids else ClusterKind.SENSING_ONLY)
        for c in sensing
    ]
    comm = list(shared_comm) + list(comm_only)
    sens, comm = _normalized(sens), _normalized(comm)
    counts = (len(shared_comm), len(comm_only), len(sensing) - len(shared_comm))
    return ChannelPair(
        comm=_link_table(comm, LinkTag.COMMUNICATION),
        sensing=_link_table(sens, LinkTag.SENSING),
        counts=counts,
        clusters=tuple(sens + comm),
    )


def _seed_sequence(seed: int | np.random.SeedSequence) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _substream(ss: np.random.SeedSequence, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (index,))
    )


def generate_channel_pair(
    cfg: ScenarioConfig, seed: int | np.random.SeedSequence | None = None
) -> ChannelPair:
    """Run the full generation pipeline for one realization.

    Each population draws from its own substream of ``seed`` (default
    ``cfg.seed``), so realizations that share a seed and ``n0 + n2`` have
    bit-identical sensing clusters whatever ``n0`` is.
    """
    ss = _seed_sequence(cfg.seed if seed is None else seed)
    sensing = generate_sensing_clusters(cfg, _substream(ss, _STREAM_SENSING)) if cfg.n_s else []
    shared = derive_shared_comm_subclusters(sensing, cfg.n0, cfg, _substream(ss, _STREAM_SHARED))
    comm_only = generate_nonshared_comm_clusters(cfg, cfg.n1, _substream(ss, _STREAM_COMM_ONLY), id_offset=cfg.n_s)
    if cfg.los:
        nlos = sum(c.power for c in shared) + sum(c.power for c in comm_only)
        f = cfg.los_power_fraction
        power = f / (1.0 - f) * nlos if nlos > 0 else 1.0
        comm_only = [make_los_cluster(cfg, power, cfg.n_s + cfg.n1)] + comm_only
    return synthesize_channel_pair(sensing, shared, comm_only)


# -- profiles, sharing degree, geometry --------------------------------------


def padp_from_mpcs(
    mpcs: LinkChannel | Sequence[Mpc], angle_bin_deg: float = 5.0, delay_bin_ns: float = 1.0
) -> Padp:
    """Accumulate MPC powers on an (AOD, delay) grid.

    Grid entries are the lower bin edges. Received power (RCS included) is
    summed per bin, so the PADP total equals the MPC total.
    """
    if not (angle_bin_deg > 0 and delay_bin_ns > 0):
        raise ValueError("bin widths must be > 0")
    if isinstance(mpcs, LinkChannel):
        aod, delay, power = mpcs.aod_deg, mpcs.delay_ns, mpcs.power()
    else:
        seq = list(mpcs)
        aod = np.array([m.aod_deg for m in seq], dtype=float)
        delay = np.array([m.delay_ns for m in seq], dtype=float)
        power = np.array([m.power for m in seq], dtype=float)
    if aod.size == 0:
        return Padp(np.zeros(0), np.zeros(0), np.zeros((0, 0)))
    n_angle = int(math.ceil(360.0 / angle_bin_deg - 1e-9))
    ia = np.minimum((aod // angle_bin_deg).astype(np.int64), n_angle - 1)
    idl = (delay // delay_bin_ns).astype(np.int64)
    grid = np.zeros((n_angle, int(idl.max()) + 1))
    np.add.at(grid, (ia, idl), power)
    return Padp(angle_bin_deg * np.arange(n_angle), delay_bin_ns * np.arange(grid.shape[1]), grid)


def sharing_degree_from_amplitudes(
    amplitude: np.ndarray, shared: np.ndarray, mode: SdMode | str = SdMode.INCOHERENT
) -> float:
    """Sharing degree from (RCS-weighted) amplitudes and a shared-MPC mask."""
    a = np.asarray(amplitude, dtype=complex).reshape(-1)
    mask = np.asarray(shared, dtype=bool).reshape(-1)
    if a.size != mask.size:
        raise ValueError("one shared flag per MPC is required")
    if SdMode(mode) is SdMode.INCOHERENT:
        p = a.real**2 + a.imag**2
        total = float(p.sum())
        if total <= 0:
            raise UndefinedSDError("sharing degree undefined: zero total power")
        return float(p[mask].sum()) / total
    total = abs(a.sum()) ** 2
    if total <= 0:
        raise UndefinedSDError("coherent sharing degree undefined: amplitudes sum to zero")
    return abs(a[mask].sum()) ** 2 / total


def _shared_mask(labels: Sequence, n: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.size != n:
        raise ValueError(f"labels must cover all {n} MPCs of the link")
    if arr.dtype == bool:
        return arr.reshape(-1)
    return np.array([ClusterKind(k) is ClusterKind.SHARED for k in arr.reshape(-1)], dtype=bool)


def sharing_degree(
    pair: ChannelPair,
    link: LinkTag | str = LinkTag.SENSING,
    mode: SdMode | str = SdMode.INCOHERENT,
    labels: Sequence | None = None,
) -> float:
    """Fraction of a link's received power carried by shared clusters.

    ``labels`` gives a cluster kind (or a shared flag) per MPC of the chosen
    link; it defaults to the generation truth.
    """
    lc = pair.link_channel(LinkTag(link))
    if labels is None:
        if lc.kind is None:
            raise ValueError("no labels given and the pair carries no truth labels")
        labels = lc.kind
    return sharing_degree_from_amplitudes(lc.effective_amplitude(), _shared_mask(labels, len(lc)), mode)


def aod_unit_vector(aod_deg: float | np.ndarray) -> np.ndarray:
    """(east, north) unit vector(s) for AODs measured clockwise from south."""
    t = np.deg2rad(np.asarray(aod_deg, dtype=float))
    return np.stack([-np.sin(t), -np.cos(t)], axis=-1)


def aod_from_vector(vec: Sequence[float]) -> float:
    e, n = float(vec[0]), float(vec[1])
    return math.degrees(math.atan2(-e, -n)) % 360.0


def _scatterer_point(aod_deg: float, delay_ns: float, tx: Sequence[float], c: float) -> np.ndarray:
    return np.asarray(tx, dtype=float) + (c * delay_ns / 2.0) * aod_unit_vector(aod_deg)


def localize_scatterers(
    sensing_mpcs: LinkChannel | Sequence[Mpc],
    tx_position: Sequence[float] = (0.0, 0.0),
    wave_speed: float = 0.3,
) -> np.ndarray:
    """Single-bounce scatterer positions of sensing echoes, shape ``(n, 2)``.

    The echo travels to the scatterer and back, so the range is half of
    ``wave_speed * delay``.
    """
    lc = as_link_channel(sensing_mpcs, LinkTag.SENSING)
    tx = np.asarray(tx_position, dtype=float)
    ranges = wave_speed * lc.delay_ns / 2.0
    return tx + ranges[:, None] * aod_unit_vector(lc.aod_deg).reshape(-1, 2)


def bistatic_delay(point: Sequence[float], tx: Sequence[float], rx: Sequence[float], wave_speed: float) -> float:
    """TX -> point -> RX propagation delay."""
    p = np.asarray(point, dtype=float)
    return float(np.linalg.norm(p - np.asarray(tx)) + np.linalg.norm(p - np.asarray(rx))) / wave_speed
