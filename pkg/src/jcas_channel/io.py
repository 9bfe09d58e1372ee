"""File formats: the MPC CSV table, JSON documents and run manifests.

Every write goes to a temporary file in the target directory which is then
renamed over the destination, so a reader never sees a partial file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .core import ChannelPair, ConfigError, LinkChannel, LinkTag, ValidationError

__all__ = [
    "MPC_COLUMNS",
    "MpcTable",
    "atomic_write_bytes",
    "atomic_write_text",
    "write_json",
    "read_json",
    "format_float",
    "mpc_rows",
    "write_mpc_csv",
    "read_mpc_csv",
    "file_digest",
    "build_manifest",
]

MPC_COLUMNS = ("link", "aod_deg", "aoa_deg", "delay_ns", "amp_re", "amp_im", "rcs", "cluster_truth", "kind_truth")


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite_or_none(obj: Any) -> Any:
    # JSON has no inf/nan; encode them as strings the reader can recognise
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def dumps_json(data: Any) -> str:
    return json.dumps(_finite_or_none(data), indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path: str | os.PathLike, data: Any) -> Path:
    return atomic_write_text(path, dumps_json(data))


def read_json(path: str | os.PathLike) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc


def format_float(x: float | None) -> str:
    """Shortest round-tripping text for a float; empty for missing values."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


# -- MPC table -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MpcTable:
    """Contents of an MPC CSV file, split per link in file order."""

    comm: LinkChannel
    sensing: LinkChannel
    extra: Mapping[str, Mapping[LinkTag, list[str]]]

    def labels(self, column: str) -> tuple[np.ndarray, np.ndarray] | None:
        """Integer labels of a column as (comm, sensing) arrays, if fully present."""
        col = self.extra.get(column)
        if col is None:
            return None
        out = []
        for link in (LinkTag.COMMUNICATION, LinkTag.SENSING):
            vals = col[link]
            if any(v == "" for v in vals):
                return None
            out.append(np.array([int(v) for v in vals], dtype=np.int64))
        return out[0], out[1]


def mpc_rows(
    channel: LinkChannel,
    labels: Sequence[int] | None = None,
    kinds: Sequence[str] | None = None,
) -> list[list[str]]:
    rows = []
    for i in range(len(channel)):
        cid = channel.cluster_id[i] if channel.cluster_id is not None else None
        kind = channel.kind[i] if channel.kind is not None else ""
        row = [
            channel.link.value,
            format_float(channel.aod_deg[i]),
            "" if channel.aoa_deg is None else format_float(channel.aoa_deg[i]),
            format_float(channel.delay_ns[i]),
            format_float(channel.amplitude[i].real),
            format_float(channel.amplitude[i].imag),
            "" if channel.rcs is None else format_float(channel.rcs[i]),
            "" if cid is None else str(int(cid)),
            str(kind),
        ]
        if labels is not None:
            row += [str(int(labels[i])), "" if kinds is None else str(kinds[i])]
        rows.append(row)
    return rows


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_mpc_csv(path: str | os.PathLike, source: ChannelPair | Sequence[LinkChannel]) -> Path:
    """Write the comm then the sensing MPCs of a pair (or any link tables)."""
    channels = [source.comm, source.sensing] if isinstance(source, ChannelPair) else list(source)
    rows = [r for ch in channels for r in mpc_rows(ch)]
    return atomic_write_text(path, _csv_text(MPC_COLUMNS, rows))


def write_table_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    text_rows = [[format_float(v) if isinstance(v, float) else str(v) for v in r] for r in rows]
    return atomic_write_text(path, _csv_text(header, text_rows))


def _parse_float(text: str, line: int, column: str, optional: bool = False) -> float | None:
    if text == "":
        if optional:
            return None
        raise ConfigError(f"missing value in column {column!r}", path=column, line=line)
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"not a number: {text!r}", path=column, line=line) from exc


def read_mpc_csv(path: str | os.PathLike) -> MpcTable:
    """Parse an MPC CSV file; extra columns beyond the standard ones are kept as text."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError("empty MPC file", line=1) from None
    if tuple(header[: len(MPC_COLUMNS)]) != MPC_COLUMNS:
        raise ConfigError(f"header must start with {','.join(MPC_COLUMNS)}", line=1)
    extra_names = header[len(MPC_COLUMNS):]
    cols: dict[LinkTag, dict[str, list]] = {
        link: {k: [] for k in ("aod", "aoa", "delay", "amp", "rcs", "cid", "kind")} for link in LinkTag
    }
    extra = {name: {link: [] for link in LinkTag} for name in extra_names}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ConfigError(f"expected {len(header)} fields, got {len(row)}", line=line)
        try:
            link = LinkTag(row[0])
        except ValueError:
            raise ConfigError(f"unknown link tag {row[0]!r}", path="link", line=line) from None
        c = cols[link]
        c["aod"].append(_parse_float(row[1], line, "aod_deg"))
        aoa = _parse_float(row[2], line, "aoa_deg", optional=True)
        c["aoa"].append(math.nan if aoa is None else aoa)
        c["delay"].append(_parse_float(row[3], line, "delay_ns"))
        c["amp"].append(complex(_parse_float(row[4], line, "amp_re"), _parse_float(row[5], line, "amp_im")))
        c["rcs"].append(_parse_float(row[6], line, "rcs", optional=True))
        if row[7] != "":
            try:
                c["cid"].append(int(row[7]))
            except ValueError:
                raise ConfigError(f"not an integer: {row[7]!r}", path="cluster_truth", line=line) from None
        else:
            c["cid"].append(None)
        c["kind"].append(row[8])
        for name, value in zip(extra_names, row[len(MPC_COLUMNS):]):
            extra[name][link].append(value)

    def build(link: LinkTag) -> LinkChannel:
        c = cols[link]
        if not c["aod"]:
            return LinkChannel.empty(link)
        rcs = None
        if link is LinkTag.SENSING and any(r is not None for r in c["rcs"]):
            rcs = [1.0 if r is None else r for r in c["rcs"]]
        elif link is LinkTag.COMMUNICATION and any(r is not None for r in c["rcs"]):
            raise ConfigError("rcs given for a communication MPC", path="rcs")
        aoa = None if all(math.isnan(a) for a in c["aoa"]) else c["aoa"]
        cid = None if any(x is None for x in c["cid"]) else c["cid"]
        kind = None if any(k == "" for k in c["kind"]) else c["kind"]
        try:
            return LinkChannel(link, c["aod"], c["delay"], c["amp"], rcs=rcs, aoa_deg=aoa, cluster_id=cid, kind=kind)
        except (ValidationError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    return MpcTable(build(LinkTag.COMMUNICATION), build(LinkTag.SENSING), extra)


# -- manifests -------------------------------------------------------------


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the clock for byte-identical reruns
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch is not None else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def build_manifest(
    command: str,
    config: Mapping[str, Any],
    seed: int,
    inputs: Sequence[str | os.PathLike] = (),
    outputs: Sequence[str | os.PathLike] = (),
    extra: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Everything needed to rerun a command and check its outputs."""
    manifest = {
        "tool": "jcas-channel",
        "version": __version__,
        "command": command,
        "seed": int(seed),
        "config": dict(config),
        "inputs": {Path(p).name: file_digest(p) for p in inputs},
        "outputs": {Path(p).name: file_digest(p) for p in outputs},
        "timestamp": _timestamp(),
    }
    if extra:
        manifest.update(extra)
    return manifest
