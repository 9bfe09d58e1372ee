"""Monte-Carlo studies on top of the channel model.

* :func:`run_sd_sweep` - sensing sharing degree versus the number of shared
  clusters, from generation truth labels.
* :func:`run_aod_sweep` - convergence of the communication and sensing
  centroid-AOD distributions as more clusters are shared.
* :func:`run_end_to_end` - generate, cluster blindly, and compare with truth.

Trial ``t`` of every sweep point uses the seed
``SeedSequence(master_seed, spawn_key=(t,))``, so points of a sweep are
paired and adding trials never changes earlier ones.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import ClusteringConfig, classify_clusters, run_kpm_jca
from .core import ChannelPair, ConfigError, LinkChannel, LinkTag, ParameterError, ScenarioConfig
from .model import generate_channel_pair, sharing_degree
from .stats import empirical_cdf, fit_normal, histogram_pdf

__all__ = [
    "Study",
    "SweepSpec",
    "SdPoint",
    "AodPoint",
    "EndToEndPoint",
    "trial_seed",
    "centroid_aods",
    "tv_distance",
    "run_sd_sweep",
    "run_aod_sweep",
    "run_end_to_end",
    "run_sweep",
    "planted_channel",
    "label_accuracy",
    "max_workers",
]

WORKERS_ENV = "JCAS_MAX_WORKERS"


class Study(str, Enum):
    SD_CDF = "sd_cdf"
    AOD_PDF = "aod_pdf"
    END_TO_END = "end_to_end"


def trial_seed(master_seed: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),))


def max_workers() -> int:
    """Worker cap from the environment (default 1, i.e. serial)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def _map(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    workers = max_workers() if workers is None else workers
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class SweepSpec:
    """A sweep over the number of shared clusters.

    Parameters
    ----------
    base
        Scenario for everything but the cluster counts.
    n0_values
        Shared-cluster counts to visit.
    sensing_total
        ``N_s`` kept fixed across the sweep (default ``base.n0 + base.n2``).
    comm_total
        ``N_c`` kept fixed across the sweep; when ``None`` the base ``n1`` is
        kept instead, so ``N_c = n0 + n1`` grows with ``n0``.
    """

    base: ScenarioConfig
    n0_values: tuple[int, ...]
    trials: int = 100
    studies: tuple[Study, ...] = (Study.SD_CDF,)
    master_seed: int = 0
    sensing_total: int | None = None
    comm_total: int | None = None
    aod_bin_deg: float = 5.0
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    k_range: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "n0_values", tuple(int(n) for n in self.n0_values))
        object.__setattr__(self, "studies", tuple(Study(s) for s in self.studies))
        if not self.n0_values:
            raise ConfigError("at least one n0 value is required", path="n0_values")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1", path="trials")
        if not self.aod_bin_deg > 0:
            raise ConfigError("must be > 0", path="aod_bin_deg")
        n_s = self.n_s
        for n0 in self.n0_values:
            if not 0 <= n0 <= n_s:
                raise ConfigError(f"n0 = {n0} outside [0, {n_s}]", path="n0_values")
            if self.comm_total is not None and n0 > self.comm_total:
                raise ConfigError(f"n0 = {n0} exceeds comm_total = {self.comm_total}", path="n0_values")
        if self.k_range is not None:
            k_min, k_max = self.k_range
            if k_min < 2 or k_max < k_min:
                raise ConfigError("k_range must satisfy 2 <= k_min <= k_max", path="k_range")

    @property
    def n_s(self) -> int:
        return self.base.n0 + self.base.n2 if self.sensing_total is None else int(self.sensing_total)

    def config_for(self, n0: int) -> ScenarioConfig:
        n1 = self.base.n1 if self.comm_total is None else self.comm_total - n0
        return self.base.replace(n0=n0, n1=n1, n2=self.n_s - n0)

    def seed(self, trial: int) -> np.random.SeedSequence:
        return trial_seed(self.master_seed, trial)

    def to_dict(self) -> dict[str, Any]:
        return {
            "base": self.base.to_dict(),
            "n0_values": list(self.n0_values),
            "trials": self.trials,
            "studies": [s.value for s in self.studies],
            "master_seed": self.master_seed,
            "sensing_total": self.sensing_total,
            "comm_total": self.comm_total,
            "aod_bin_deg": self.aod_bin_deg,
            "clustering": _clustering_to_dict(self.clustering),
            "k_range": None if self.k_range is None else list(self.k_range),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SweepSpec":
        allowed = {
            "schema_version", "base", "n0_values", "trials", "studies", "master_seed",
            "sensing_total", "comm_total", "aod_bin_deg", "clustering", "k_range",
        }
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", path=unknown[0])
        if "n0_values" not in data:
            raise ConfigError("missing required key", path="n0_values")
        kwargs: dict[str, Any] = {"base": ScenarioConfig.from_dict(data.get("base", {}), path="base")}
        for key in ("n0_values", "trials", "studies", "master_seed", "sensing_total", "comm_total", "aod_bin_deg"):
            if key in data:
                kwargs[key] = data[key]
        if "k_range" in data and data["k_range"] is not None:
            kwargs["k_range"] = tuple(int(k) for k in data["k_range"])
        if "clustering" in data:
            kwargs["clustering"] = _clustering_from_dict(data["clustering"], "clustering")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _clustering_to_dict(cfg: ClusteringConfig) -> dict[str, Any]:
    from dataclasses import asdict

    return asdict(cfg)


def _clustering_from_dict(data: Mapping[str, Any], path: str) -> ClusteringConfig:
    from dataclasses import fields

    names = {f.name for f in fields(ClusteringConfig)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {key!r}", path=f"{path}.{key}")
    try:
        return ClusteringConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path=path) from exc


# -- helpers ---------------------------------------------------------------


def centroid_aods(pair: ChannelPair) -> tuple[np.ndarray, np.ndarray]:
    """Cluster-centroid AODs of the (communication, sensing) links."""
    comm = [c.centroid_aod_deg for c in pair.clusters if c.link is LinkTag.COMMUNICATION]
    sens = [c.centroid_aod_deg for c in pair.clusters if c.link is LinkTag.SENSING]
    return np.array(comm, dtype=float), np.array(sens, dtype=float)


def _aod_pdf(samples: np.ndarray, bin_deg: float) -> tuple[np.ndarray, np.ndarray]:
    return histogram_pdf(samples, bin_deg, value_range=(0.0, 360.0))


def tv_distance(a: Sequence[float], b: Sequence[float], bin_deg: float = 5.0) -> float:
    """Total-variation distance between the binned AOD distributions of two samples."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    _, pa = _aod_pdf(a, bin_deg)
    _, pb = _aod_pdf(b, bin_deg)
    return float(0.5 * np.abs(pa - pb).sum() * bin_deg)


# -- SD sweep --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SdPoint:
    n0: int
    samples: np.ndarray
    cdf: tuple[np.ndarray, np.ndarray]
    fit: tuple[float, float]

    @property
    def mean(self) -> float:
        return float(self.samples.mean())


def _sd_trial(args: tuple[ScenarioConfig, np.random.SeedSequence]) -> float:
    cfg, seed = args
    pair = generate_channel_pair(cfg, seed)
    return sharing_degree(pair, LinkTag.SENSING, cfg.sd_mode)


def run_sd_sweep(spec: SweepSpec) -> dict[int, SdPoint]:
    """Sensing SD samples, empirical CDF and normal fit for every ``n0``."""
    out = {}
    for n0 in spec.n0_values:
        cfg = spec.config_for(n0)
        samples = np.array(_map(_sd_trial, [(cfg, spec.seed(t)) for t in range(spec.trials)]))
        fit = fit_normal(samples) if samples.size >= 2 else (float(samples[0]), 0.0)
        out[n0] = SdPoint(n0, samples, empirical_cdf(samples), fit)
    return out


# -- AOD sweep -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AodPoint:
    n0: int
    comm_aods: np.ndarray
    sensing_aods: np.ndarray
    pdf_comm: tuple[np.ndarray, np.ndarray]
    pdf_sensing: tuple[np.ndarray, np.ndarray]
    tv_per_trial: np.ndarray
    tv_pooled: float
    shared_aods_match: bool

    @property
    def mean_tv(self) -> float:
        return float(self.tv_per_trial.mean()) if self.tv_per_trial.size else math.nan


def _aod_trial(args: tuple[ScenarioConfig, np.random.SeedSequence, float]):
    cfg, seed, bin_deg = args
    pair = generate_channel_pair(cfg, seed)
    comm, sens = centroid_aods(pair)
    tv = tv_distance(comm, sens, bin_deg) if comm.size and sens.size else math.nan
    sens_set = set(sens.tolist())
    shared = [c.centroid_aod_deg for c in pair.clusters
              if c.link is LinkTag.COMMUNICATION and c.kind.value == "shared"]
    return comm, sens, tv, all(a in sens_set for a in shared)


def run_aod_sweep(spec: SweepSpec) -> dict[int, AodPoint]:
    """Pooled centroid AODs, 5-degree PDFs and TV distances for every ``n0``."""
    out = {}
    for n0 in spec.n0_values:
        cfg = spec.config_for(n0)
        rows = _map(_aod_trial, [(cfg, spec.seed(t), spec.aod_bin_deg) for t in range(spec.trials)])
        comm = np.concatenate([r[0] for r in rows])
        sens = np.concatenate([r[1] for r in rows])
        tvs = np.array([r[2] for r in rows if not math.isnan(r[2])])
        out[n0] = AodPoint(
            n0=n0,
            comm_aods=comm,
            sensing_aods=sens,
            pdf_comm=_aod_pdf(comm, spec.aod_bin_deg),
            pdf_sensing=_aod_pdf(sens, spec.aod_bin_deg),
            tv_per_trial=tvs,
            tv_pooled=tv_distance(comm, sens, spec.aod_bin_deg) if comm.size and sens.size else math.nan,
            shared_aods_match=all(r[3] for r in rows),
        )
    return out


# -- end to end ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EndToEndPoint:
    n0: int
    true_n: int
    k_star: np.ndarray
    shared_found: np.ndarray
    sd_true: np.ndarray
    sd_found: np.ndarray

    @property
    def median_k_error(self) -> float:
        return float(np.median(np.abs(self.k_star - self.true_n)))

    @property
    def median_shared_error(self) -> float:
        return float(np.median(np.abs(self.shared_found - self.n0)))

    @property
    def median_sd_error(self) -> float:
        err = np.abs(self.sd_found - self.sd_true)
        err = err[~np.isnan(err)]
        return float(np.median(err)) if err.size else math.nan

    @property
    def recoverable(self) -> bool:
        return self.median_k_error == 0 and self.median_sd_error <= 0.05

    def to_dict(self) -> dict[str, Any]:
        return {
            "n0": self.n0,
            "true_n": self.true_n,
            "median_abs_k_error": self.median_k_error,
            "median_abs_shared_error": self.median_shared_error,
            "median_abs_sd_error": self.median_sd_error,
            "recoverable": self.recoverable,
            "k_star": self.k_star.tolist(),
        }


def _e2e_trial(args):
    cfg, seed, k_range, ccfg, trial = args
    pair = generate_channel_pair(cfg, seed)
    n = len(pair.comm) + len(pair.sensing)
    k_hi = min(k_range[1], n)
    ccfg = ClusteringConfig(**{**_clustering_to_dict(ccfg), "seed": trial, "allow_single_link": True})
    res = run_kpm_jca(pair.comm, pair.sensing, (min(k_range[0], k_hi), k_hi), ccfg)
    cls = classify_clusters(res.partition, res.joint, ccfg.min_count)
    sd_true = sharing_degree(pair, LinkTag.SENSING)
    sd_found = math.nan if cls.sd_sensing is None else cls.sd_sensing
    return res.k_star, cls.shared_count, sd_true, sd_found


def run_end_to_end(spec: SweepSpec) -> dict[int, EndToEndPoint]:
    """Blind clustering of generated pairs, scored against the generation truth."""
    out = {}
    for n0 in spec.n0_values:
        cfg = spec.config_for(n0)
        k_range = spec.k_range or (2, max(2 * cfg.n, 4))
        rows = _map(_e2e_trial, [(cfg, spec.seed(t), k_range, spec.clustering, t) for t in range(spec.trials)])
        arr = np.array(rows, dtype=float)
        out[n0] = EndToEndPoint(n0, cfg.n, arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2], arr[:, 3])
    return out


def run_sweep(spec: SweepSpec) -> dict[Study, dict[int, Any]]:
    runners = {Study.SD_CDF: run_sd_sweep, Study.AOD_PDF: run_aod_sweep, Study.END_TO_END: run_end_to_end}
    return {s: runners[s](spec) for s in spec.studies}


# -- planted clusters ------------------------------------------------------


def planted_channel(
    rng: np.random.Generator,
    n_clusters: int = 5,
    shared: int = 3,
    sensing_only: int = 1,
    mpcs_per_link: int = 20,
    intra_as_deg: float = 2.0,
    intra_ds_ns: float = 1.0,
    delay_step_ns: float = 25.0,
) -> tuple[LinkChannel, LinkChannel]:
    """Well-separated clusters with known labels on both links.

    Centroids sit ``360 / n_clusters`` degrees apart (random common rotation)
    with delays ``delay_step_ns`` apart. Clusters ``0 .. shared-1`` appear on
    both links, the next ``sensing_only`` only on the sensing link and the
    rest only on the communication link. ``cluster_id``/``kind`` carry truth.
    """
    if shared + sensing_only > n_clusters:
        raise ParameterError("shared + sensing_only exceeds n_clusters")
    rot = rng.uniform(0.0, 360.0)
    order = rng.permutation(n_clusters)
    cols: dict[LinkTag, dict[str, list]] = {
        link: {"aod": [], "delay": [], "amp": [], "rcs": [], "cid": [], "kind": []} for link in LinkTag
    }
    for j in range(n_clusters):
        aod = rot + j * 360.0 / n_clusters
        delay = 20.0 + delay_step_ns * order[j]
        if j < shared:
            kind, links = "shared", (LinkTag.SENSING, LinkTag.COMMUNICATION)
        elif j < shared + sensing_only:
            kind, links = "sensing_only", (LinkTag.SENSING,)
        else:
            kind, links = "comm_only", (LinkTag.COMMUNICATION,)
        power = rng.uniform(0.5, 1.0)
        for link in links:
            m = mpcs_per_link
            p = rng.exponential(size=m)
            p *= power / p.sum()
            c = cols[link]
            c["aod"].append((aod + rng.normal(0.0, intra_as_deg, m)) % 360.0)
            c["delay"].append(delay + rng.normal(0.0, intra_ds_ns, m))
            c["amp"].append(np.sqrt(p) * np.exp(1j * rng.uniform(0, 2 * np.pi, m)))
            c["rcs"].append(10 ** (rng.normal(0.0, 1.0, m) / 20.0))
            c["cid"].append(np.full(m, j))
            c["kind"].append(np.full(m, kind))

    def table(link: LinkTag) -> LinkChannel:
        c = cols[link]
        if not c["aod"]:
            return LinkChannel.empty(link)
        cat = {k: np.concatenate(v) for k, v in c.items()}
        return LinkChannel(
            link, cat["aod"], cat["delay"], cat["amp"],
            rcs=cat["rcs"] if link is LinkTag.SENSING else None,
            cluster_id=cat["cid"], kind=cat["kind"],
        )

    return table(LinkTag.COMMUNICATION), table(LinkTag.SENSING)


def label_accuracy(pred: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of items labeled correctly under the best one-to-one label matching."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("label arrays differ in shape")
    if pred.size == 0:
        return 1.0
    pu, pi = np.unique(pred, return_inverse=True)
    tu, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pu.size, tu.size), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum()) / pred.size
