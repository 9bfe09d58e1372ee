"""Domain types shared by the model, clustering, statistics and CLI layers.

Angles are in degrees, measured clockwise from south, and normalized to
``[0, 360)``. Delays are in nanoseconds. Powers are always derived from the
complex amplitudes (and the RCS coefficient on sensing links); they are never
stored independently.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "JcasError",
    "ValidationError",
    "ConfigError",
    "ParameterError",
    "EmptyChannelError",
    "UndefinedSDError",
    "LinkTag",
    "ClusterKind",
    "SdMode",
    "Mpc",
    "LinkChannel",
    "Cluster",
    "ChannelPair",
    "Padp",
    "IntraFit",
    "ScenarioConfig",
    "normalize_angle",
    "mpc_power",
]


class JcasError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(JcasError, ValueError):
    """An input value violates a type invariant."""


class ConfigError(ValidationError):
    """A configuration tree failed validation.

    ``path`` names the offending field (dotted), ``line`` the source line when
    the error comes from the JSON decoder.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(f"field '{path}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ParameterError(JcasError, ValueError):
    """An operation was called with inconsistent parameters (e.g. k > #MPCs)."""


class EmptyChannelError(JcasError, ValueError):
    """A channel realization would contain no clusters."""


class UndefinedSDError(JcasError, ArithmeticError):
    """Sharing degree requested for a link with zero total power."""


class LinkTag(str, Enum):
    COMMUNICATION = "comm"
    SENSING = "sensing"


class ClusterKind(str, Enum):
    SHARED = "shared"
    COMM_ONLY = "comm_only"
    SENSING_ONLY = "sensing_only"


class SdMode(str, Enum):
    """Power-ratio (incoherent) or amplitude-sum (coherent) sharing degree."""

    INCOHERENT = "incoherent"
    COHERENT = "coherent"


def normalize_angle(angle_deg: float) -> float:
    """Wrap an angle in degrees to ``[0, 360)``."""
    angle = float(angle_deg)
    if not math.isfinite(angle):
        raise ValidationError(f"angle must be finite, got {angle_deg!r}")
    wrapped = angle % 360.0
    # -1e-17 % 360 rounds to 360.0
    return 0.0 if wrapped >= 360.0 else wrapped


def _wrap_array(angles: np.ndarray) -> np.ndarray:
    wrapped = np.mod(angles, 360.0)
    wrapped[wrapped >= 360.0] = 0.0
    return wrapped


@dataclass(frozen=True)
class Mpc:
    """One resolvable multipath component."""

    link: LinkTag
    aod_deg: float
    delay_ns: float
    amplitude: complex
    aoa_deg: float | None = None
    rcs: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "link", LinkTag(self.link))
        object.__setattr__(self, "aod_deg", normalize_angle(self.aod_deg))
        if self.aoa_deg is not None:
            object.__setattr__(self, "aoa_deg", normalize_angle(self.aoa_deg))
        delay = float(self.delay_ns)
        if not math.isfinite(delay) or delay < 0:
            raise ValidationError(f"delay_ns must be finite and >= 0, got {self.delay_ns!r}")
        object.__setattr__(self, "delay_ns", delay)
        amp = complex(self.amplitude)
        if not (math.isfinite(amp.real) and math.isfinite(amp.imag)):
            raise ValidationError("amplitude must be finite")
        object.__setattr__(self, "amplitude", amp)
        if self.rcs is not None:
            if self.link is not LinkTag.SENSING:
                raise ValidationError("an RCS coefficient is only valid on sensing MPCs")
            rcs = float(self.rcs)
            if not math.isfinite(rcs) or rcs < 0:
                raise ValidationError(f"rcs must be finite and >= 0, got {self.rcs!r}")
            object.__setattr__(self, "rcs", rcs)

    @property
    def power(self) -> float:
        """Received power, RCS included when present."""
        return mpc_power(self, include_rcs=True)


def mpc_power(m: Mpc, include_rcs: bool = True) -> float:
    """Return ``|a|**2``, or ``|a * rcs|**2`` when ``include_rcs`` and an RCS is set."""
    amp = m.amplitude
    if include_rcs and m.rcs is not None:
        amp = amp * m.rcs
    return amp.real * amp.real + amp.imag * amp.imag


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LinkChannel:
    """Column-oriented MPC table for a single link.

    Generation and clustering work on these arrays directly; :attr:`mpcs`
    gives the per-MPC object view. ``cluster_id``/``kind`` hold the
    generation-time truth labels when known.
    """

    link: LinkTag
    aod_deg: np.ndarray
    delay_ns: np.ndarray
    amplitude: np.ndarray
    rcs: np.ndarray | None = None
    aoa_deg: np.ndarray | None = None
    cluster_id: np.ndarray | None = None
    kind: np.ndarray | None = None

    def __post_init__(self) -> None:
        link = LinkTag(self.link)
        object.__setattr__(self, "link", link)
        aod = np.asarray(self.aod_deg, dtype=float).reshape(-1)
        n = aod.size
        delay = np.asarray(self.delay_ns, dtype=float).reshape(-1)
        amp = np.asarray(self.amplitude, dtype=complex).reshape(-1)
        if delay.size != n or amp.size != n:
            raise ValidationError("aod_deg, delay_ns and amplitude must have equal length")
        if not (np.all(np.isfinite(aod)) and np.all(np.isfinite(delay)) and np.all(np.isfinite(amp))):
            raise ValidationError("MPC parameters must be finite")
        if np.any(delay < 0):
            raise ValidationError("delays must be >= 0")
        object.__setattr__(self, "aod_deg", _readonly(_wrap_array(aod.copy())))
        object.__setattr__(self, "delay_ns", _readonly(delay.copy()))
        object.__setattr__(self, "amplitude", _readonly(amp.copy()))
        if self.rcs is not None:
            if link is not LinkTag.SENSING:
                raise ValidationError("RCS coefficients are only valid on the sensing link")
            rcs = np.asarray(self.rcs, dtype=float).reshape(-1)
            if rcs.size != n or np.any(~np.isfinite(rcs)) or np.any(rcs < 0):
                raise ValidationError("rcs must be finite, >= 0 and one per MPC")
            object.__setattr__(self, "rcs", _readonly(rcs.copy()))
        if self.aoa_deg is not None:
            aoa = np.asarray(self.aoa_deg, dtype=float).reshape(-1)
            if aoa.size != n:
                raise ValidationError("aoa_deg must have one entry per MPC")
            object.__setattr__(self, "aoa_deg", _readonly(aoa.copy()))
        if self.cluster_id is not None:
            cid = np.asarray(self.cluster_id, dtype=np.int64).reshape(-1)
            if cid.size != n:
                raise ValidationError("cluster_id must have one entry per MPC")
            object.__setattr__(self, "cluster_id", _readonly(cid.copy()))
        if self.kind is not None:
            kind = np.array([ClusterKind(k).value for k in np.asarray(self.kind).reshape(-1)], dtype="<U12")
            if kind.size != n:
                raise ValidationError("kind must have one entry per MPC")
            object.__setattr__(self, "kind", _readonly(kind))

    def __len__(self) -> int:
        return self.aod_deg.size

    def power(self, include_rcs: bool = True) -> np.ndarray:
        amp = self.amplitude
        if include_rcs and self.rcs is not None:
            amp = amp * self.rcs
        return amp.real**2 + amp.imag**2

    def effective_amplitude(self) -> np.ndarray:
        """Amplitude times RCS (the sensing echo amplitude)."""
        if self.rcs is None:
            return np.array(self.amplitude)
        return self.amplitude * self.rcs

    def subset(self, mask_or_index: np.ndarray) -> "LinkChannel":
        sel = np.asarray(mask_or_index)

        def take(a):
            return None if a is None else a[sel]

        return LinkChannel(
            self.link,
            self.aod_deg[sel],
            self.delay_ns[sel],
            self.amplitude[sel],
            rcs=take(self.rcs),
            aoa_deg=take(self.aoa_deg),
            cluster_id=take(self.cluster_id),
            kind=take(self.kind),
        )

    @property
    def mpcs(self) -> tuple[Mpc, ...]:
        out = []
        for i in range(len(self)):
            out.append(
                Mpc(
                    self.link,
                    float(self.aod_deg[i]),
                    float(self.delay_ns[i]),
                    complex(self.amplitude[i]),
                    aoa_deg=None if self.aoa_deg is None else float(self.aoa_deg[i]),
                    rcs=None if self.rcs is None else float(self.rcs[i]),
                )
            )
        return tuple(out)

    @classmethod
    def from_mpcs(cls, mpcs: Sequence[Mpc], link: LinkTag | None = None) -> "LinkChannel":
        """Build a table from MPC objects; all must carry the same link tag."""
        mpcs = list(mpcs)
        if link is None:
            if not mpcs:
                raise ValidationError("cannot infer the link of an empty MPC list")
            link = mpcs[0].link
        link = LinkTag(link)
        if any(m.link is not link for m in mpcs):
            raise ValidationError(f"all MPCs must carry link tag {link.value!r}")
        has_rcs = any(m.rcs is not None for m in mpcs)
        has_aoa = any(m.aoa_deg is not None for m in mpcs)
        return cls(
            link,
            np.array([m.aod_deg for m in mpcs], dtype=float),
            np.array([m.delay_ns for m in mpcs], dtype=float),
            np.array([m.amplitude for m in mpcs], dtype=complex),
            rcs=np.array([1.0 if m.rcs is None else m.rcs for m in mpcs]) if has_rcs else None,
            aoa_deg=np.array([np.nan if m.aoa_deg is None else m.aoa_deg for m in mpcs]) if has_aoa else None,
        )

    @classmethod
    def empty(cls, link: LinkTag) -> "LinkChannel":
        return cls(link, np.zeros(0), np.zeros(0), np.zeros(0, dtype=complex))


def as_link_channel(mpcs: LinkChannel | Sequence[Mpc], link: LinkTag | None = None) -> LinkChannel:
    if isinstance(mpcs, LinkChannel):
        if link is not None and mpcs.link is not LinkTag(link):
            raise ValidationError(f"expected a {LinkTag(link).value} link, got {mpcs.link.value}")
        return mpcs
    seq = list(mpcs)
    if not seq and link is not None:
        return LinkChannel.empty(link)
    return LinkChannel.from_mpcs(seq, link)


@dataclass(frozen=True)
class Cluster:
    """A labeled group of MPCs in a joint (communication + sensing) list."""

    id: int
    members: tuple[int, ...]
    centroid: tuple[float, float, float]  # (aod_deg, delay_ns, mean power)
    kind: ClusterKind
    comm_sub: tuple[int, ...]
    sensing_sub: tuple[int, ...]

    def __post_init__(self) -> None:
        if set(self.comm_sub) & set(self.sensing_sub):
            raise ValidationError("comm_sub and sensing_sub must be disjoint")
        if set(self.members) != set(self.comm_sub) | set(self.sensing_sub):
            raise ValidationError("members must be the union of the per-link sub-clusters")


@dataclass(frozen=True, eq=False)
class ChannelPair:
    """One joint realization: a communication and a sensing CIR.

    ``clusters`` holds the generated (sub-)clusters when the pair came from
    the stochastic model; clustering code never reads it.
    """

    comm: LinkChannel
    sensing: LinkChannel
    counts: tuple[int, int, int]
    clusters: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        if self.comm.link is not LinkTag.COMMUNICATION or self.sensing.link is not LinkTag.SENSING:
            raise ValidationError("ChannelPair expects (comm, sensing) link tables")
        n0, n1, n2 = (int(c) for c in self.counts)
        if min(n0, n1, n2) < 0:
            raise ValidationError("cluster counts must be >= 0")
        object.__setattr__(self, "counts", (n0, n1, n2))
        for lc, expected in ((self.comm, self.n_c), (self.sensing, self.n_s)):
            if lc.cluster_id is not None and len(lc):
                found = np.unique(lc.cluster_id).size
                if found != expected:
                    raise ValidationError(
                        f"{lc.link.value} truth labels name {found} clusters, counts imply {expected}"
                    )

    @property
    def n0(self) -> int:
        return self.counts[0]

    @property
    def n_c(self) -> int:
        return self.counts[0] + self.counts[1]

    @property
    def n_s(self) -> int:
        return self.counts[0] + self.counts[2]

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def comm_mpcs(self) -> tuple[Mpc, ...]:
        return self.comm.mpcs

    @property
    def sensing_mpcs(self) -> tuple[Mpc, ...]:
        return self.sensing.mpcs

    def link_channel(self, link: LinkTag) -> LinkChannel:
        return self.comm if LinkTag(link) is LinkTag.COMMUNICATION else self.sensing


@dataclass(frozen=True, eq=False)
class Padp:
    """Power-angular-delay profile on a regular (angle, delay) grid."""

    angle_grid_deg: np.ndarray
    delay_grid_ns: np.ndarray
    power: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.angle_grid_deg, dtype=float)
        d = np.asarray(self.delay_grid_ns, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if p.shape != (a.size, d.size):
            raise ValidationError("power must have shape (len(angles), len(delays))")
        if np.any(np.diff(a) <= 0) or np.any(np.diff(d) <= 0):
            raise ValidationError("grids must be strictly increasing")
        if np.any(p < 0):
            raise ValidationError("PADP power must be nonnegative")
        for name, v in (("angle_grid_deg", a), ("delay_grid_ns", d), ("power", p)):
            object.__setattr__(self, name, _readonly(v.copy()))

    @property
    def total_power(self) -> float:
        return float(self.power.sum())


# -- configuration ---------------------------------------------------------

Fit = tuple[float, float]


@dataclass(frozen=True)
class IntraFit:
    """Normal fits (mu, sigma) for intra-cluster path count, log10(DS), log10(AS)."""

    path_count: Fit
    log10_ds: Fit
    log10_as: Fit

    def __post_init__(self) -> None:
        for name in ("path_count", "log10_ds", "log10_as"):
            value = getattr(self, name)
            if len(value) != 2:
                raise ConfigError("expected a (mu, sigma) pair", path=name)
            mu, sigma = float(value[0]), float(value[1])
            if not (math.isfinite(mu) and math.isfinite(sigma)):
                raise ConfigError("fit parameters must be finite", path=name)
            if sigma < 0:
                raise ConfigError("sigma must be >= 0", path=name)
            object.__setattr__(self, name, (mu, sigma))


# Measured shared-cluster statistics (path number, log10 DS [ns], log10 AS [deg]).
SHARED_FIT = IntraFit((98.0, 695.0), (1.07, 0.03), (0.85, 0.02))
SHARED_COMM_FIT = IntraFit((24.0, 153.0), (0.55, 0.19), (0.73, 0.03))
SHARED_SENSING_FIT = IntraFit((75.0, 867.0), (1.08, 0.06), (0.88, 0.04))

SCHEMA_VERSION = 1
SHARED_DELAY_MODES = ("independent", "geometric")


@dataclass(frozen=True)
class ScenarioConfig:
    """All knobs of the joint channel generator.

    The path-count fits store ``(mu, s)``; ``path_count_s_is_variance``
    selects whether ``s`` is read as a variance (default) or a standard
    deviation.
    """

    n0: int = 10
    n1: int = 0
    n2: int = 5
    inter_as_comm_deg: float = 38.66
    inter_as_sens_deg: float = 91.29
    inter_ds_comm_ns: float = 13.87
    inter_ds_sens_ns: float = 28.82
    intra_shared: IntraFit = SHARED_FIT
    intra_comm: IntraFit = SHARED_COMM_FIT
    intra_sensing: IntraFit = SHARED_SENSING_FIT
    path_count_s_is_variance: bool = True
    delay_decay_factor: float = 3.6
    shadow_std_db: float = 3.0
    rcs_median_db: float = 0.0
    rcs_std_db: float = 3.0
    sd_mode: SdMode = SdMode.INCOHERENT
    reference_aod_deg: float = 0.0
    min_delay_ns: float = 10.0
    shared_delay_mode: str = "independent"
    tx_position: tuple[float, float] = (0.0, 0.0)
    rx_position: tuple[float, float] = (0.0, 8.0)
    wave_speed_m_per_ns: float = 0.3
    los: bool = False
    los_power_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n0", "n1", "n2"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigError("cluster counts must be integers >= 0", path=name)
            object.__setattr__(self, name, int(v))
        for name in ("inter_as_comm_deg", "inter_as_sens_deg", "inter_ds_comm_ns", "inter_ds_sens_ns",
                     "wave_speed_m_per_ns"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise ConfigError("must be finite and > 0", path=name)
            object.__setattr__(self, name, v)
        for name in ("shadow_std_db", "rcs_std_db", "min_delay_ns"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ConfigError("must be finite and >= 0", path=name)
            object.__setattr__(self, name, v)
        if not math.isfinite(self.delay_decay_factor) or self.delay_decay_factor < 1:
            raise ConfigError("must be >= 1", path="delay_decay_factor")
        if not 0 <= self.los_power_fraction < 1:
            raise ConfigError("must lie in [0, 1)", path="los_power_fraction")
        if self.shared_delay_mode not in SHARED_DELAY_MODES:
            raise ConfigError(f"must be one of {SHARED_DELAY_MODES}", path="shared_delay_mode")
        for name in ("intra_shared", "intra_comm", "intra_sensing"):
            v = getattr(self, name)
            if not isinstance(v, IntraFit):
                raise ConfigError("expected an IntraFit", path=name)
        object.__setattr__(self, "sd_mode", SdMode(self.sd_mode))
        object.__setattr__(self, "reference_aod_deg", normalize_angle(self.reference_aod_deg))
        for name in ("tx_position", "rx_position"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2 or not all(math.isfinite(x) for x in v):
                raise ConfigError("expected a finite 2-D point", path=name)
            object.__setattr__(self, name, v)
        seed = self.seed
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2**64)", path="seed")
        object.__setattr__(self, "seed", int(seed))

    @property
    def n_c(self) -> int:
        return self.n0 + self.n1

    @property
    def n_s(self) -> int:
        return self.n0 + self.n2

    @property
    def n(self) -> int:
        return self.n0 + self.n1 + self.n2

    def path_count_std(self, fit: IntraFit) -> float:
        s = fit.path_count[1]
        return math.sqrt(s) if self.path_count_s_is_variance else s

    @property
    def path_count_interpretation(self) -> str:
        return "variance" if self.path_count_s_is_variance else "std"

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, IntraFit):
                v = {k: list(getattr(v, k)) for k in ("path_count", "log10_ds", "log10_as")}
            elif isinstance(v, Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], path: str = "") -> "ScenarioConfig":
        """Validate a parsed JSON tree; unknown keys are rejected."""
        if not isinstance(data, Mapping):
            raise ConfigError("expected an object", path=path or None)
        prefix = f"{path}." if path else ""
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}", path=prefix + "schema_version")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", path=prefix + unknown[0])
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            kwargs[key] = _coerce_field(key, value, prefix + key)
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            if exc.path and not exc.path.startswith(prefix):
                raise ConfigError(str(exc).split(": ", 1)[-1], path=prefix + exc.path) from None
            raise


_INT_FIELDS = {"n0", "n1", "n2", "seed"}
_BOOL_FIELDS = {"path_count_s_is_variance", "los"}
_STR_FIELDS = {"sd_mode", "shared_delay_mode"}
_POINT_FIELDS = {"tx_position", "rx_position"}
_FIT_FIELDS = {"intra_shared", "intra_comm", "intra_sensing"}


def _coerce_field(key: str, value: Any, path: str) -> Any:
    if key in _FIT_FIELDS:
        if not isinstance(value, Mapping):
            raise ConfigError("expected an object with path_count/log10_ds/log10_as", path=path)
        unknown = sorted(set(value) - {"path_count", "log10_ds", "log10_as"})
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]!r}", path=f"{path}.{unknown[0]}")
        parts = {}
        for sub in ("path_count", "log10_ds", "log10_as"):
            if sub not in value:
                raise ConfigError("missing key", path=f"{path}.{sub}")
            pair = value[sub]
            if not isinstance(pair, (list, tuple)) or len(pair) != 2 or not all(_is_number(x) for x in pair):
                raise ConfigError("expected [mu, sigma]", path=f"{path}.{sub}")
            parts[sub] = (float(pair[0]), float(pair[1]))
        try:
            return IntraFit(**parts)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], path=f"{path}.{exc.path}") from None
    if key in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", path=path)
        return value
    if key in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError("expected true/false", path=path)
        return value
    if key in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError("expected a string", path=path)
        if key == "sd_mode":
            try:
                return SdMode(value)
            except ValueError:
                raise ConfigError(f"must be one of {[m.value for m in SdMode]}", path=path) from None
        return value
    if key in _POINT_FIELDS:
        if not isinstance(value, (list, tuple)) or len(value) != 2 or not all(_is_number(x) for x in value):
            raise ConfigError("expected [x, y]", path=path)
        return tuple(float(x) for x in value)
    if not _is_number(value):
        raise ConfigError("expected a number", path=path)
    return float(value)


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def iter_kinds(values: Iterable[Any]) -> list[ClusterKind]:
    return [ClusterKind(v) for v in values]
