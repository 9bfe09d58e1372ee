"""Command-line interface: ``jcas-channel {generate,cluster,stats,sweep}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .clustering import ClusteringConfig, GammaPolicy, classify_clusters, run_kpm_jca
from .core import ConfigError, JcasError, LinkTag, ScenarioConfig
from .io import (
    MPC_COLUMNS,
    build_manifest,
    mpc_rows,
    read_json,
    read_mpc_csv,
    write_json,
    write_mpc_csv,
    write_table_csv,
)
from .model import generate_channel_pair
from .sim import Study, SweepSpec, run_sweep
from .stats import FitError, summarize_clusters, spread_report

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse already exits with 2; keep the message format
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _k_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K_MIN:K_MAX, got {text!r}") from None
    return lo, hi


def _gamma_policy(text: str) -> str | float:
    norm = text.replace("-", "_").lower()
    if norm in {p.value for p in GammaPolicy if p is not GammaPolicy.MANUAL}:
        return norm
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected equal-total, equal-mean or a positive number") from None


def _load_config(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    data = read_json(path)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    return data


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- generate --------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    data = _load_config(args.config)
    cfg = ScenarioConfig.from_dict(data)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    _info(f"path-count spread interpreted as {cfg.path_count_interpretation}")
    pair = generate_channel_pair(cfg)
    out = Path(args.out)
    mpc_path = write_mpc_csv(out / "mpcs.csv", pair)
    manifest = build_manifest(
        "generate", cfg.to_dict(), cfg.seed, outputs=[mpc_path],
        extra={"counts": {"n0": pair.counts[0], "n1": pair.counts[1], "n2": pair.counts[2]}},
    )
    write_json(out / "manifest.json", manifest)
    print(f"wrote {len(pair.comm)} comm and {len(pair.sensing)} sensing MPCs to {mpc_path}")
    return EXIT_OK


# -- cluster ---------------------------------------------------------------


def _clustering_config(args: argparse.Namespace) -> ClusteringConfig:
    data = _load_config(args.config)
    known = set(asdict(ClusteringConfig()))
    unknown = sorted(set(data) - known - {"k_range", "schema_version"})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", path=unknown[0])
    values = {k: v for k, v in data.items() if k in known}
    overrides = {
        "p_th_db": args.p_th_db,
        "gamma_policy": args.gamma_policy,
        "zeta": args.zeta,
        "restarts": args.restarts,
        "seed": args.seed,
        "min_count": args.min_count,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.allow_single_link:
        values["allow_single_link"] = True
    try:
        return ClusteringConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_cluster(args: argparse.Namespace) -> int:
    cfg = _clustering_config(args)
    data = _load_config(args.config)
    k_range = args.k_range or tuple(data.get("k_range", (2, 20)))
    table = read_mpc_csv(args.input)
    if (not len(table.comm) or not len(table.sensing)) and not cfg.allow_single_link:
        raise ConfigError("input must contain both 'comm' and 'sensing' MPCs (or pass --allow-single-link)")
    res = run_kpm_jca(table.comm, table.sensing, k_range, cfg)
    part = res.partition
    cls = classify_clusters(part, res.joint, cfg.min_count)
    kinds = cls.mpc_kinds
    n_s = len(res.joint.sensing)
    out = Path(args.out)
    rows = mpc_rows(res.joint.sensing, part.assignment[:n_s], kinds[:n_s]) + mpc_rows(
        res.joint.comm, part.assignment[n_s:], kinds[n_s:]
    )
    part_path = write_table_csv(out / "partition.csv", MPC_COLUMNS + ("cluster", "kind"), rows)
    score_path = write_table_csv(
        out / "scores.csv", ("k", "db", "ch", "combined", "cost"),
        [(s.k, s.db, s.ch, s.combined, res.partitions[s.k].cost) for s in res.scores],
    )
    summary = {
        "k_star": res.k_star,
        "gamma": res.joint.gamma,
        "n_mpcs": {"comm": len(res.joint.comm), "sensing": n_s},
        "counts": cls.counts(),
        "sd": {"comm": cls.sd_comm, "sensing": cls.sd_sensing},
        "clusters": [
            {
                "id": c.id,
                "kind": c.kind.value,
                "centroid_aod_deg": c.centroid[0],
                "centroid_delay_ns": c.centroid[1],
                "n_comm": len(c.comm_sub),
                "n_sensing": len(c.sensing_sub),
            }
            for c in cls.clusters
        ],
        "scores": [asdict(s) for s in res.scores],
    }
    summary_path = write_json(out / "summary.json", summary)
    manifest = build_manifest(
        "cluster", {**asdict(cfg), "k_range": list(k_range)}, cfg.seed,
        inputs=[args.input], outputs=[part_path, score_path, summary_path],
    )
    write_json(out / "manifest.json", manifest)
    c = cls.counts()
    print(f"k* = {res.k_star}: {c['total']} clusters, {c['sensing']} sensing, {c['comm']} comm, {c['shared']} shared")
    return EXIT_OK


# -- stats -----------------------------------------------------------------


def cmd_stats(args: argparse.Namespace) -> int:
    data = _load_config(args.config)
    unknown = sorted(set(data) - {"align_subclusters", "schema_version"})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", path=unknown[0])
    table = read_mpc_csv(args.input)
    if not len(table.comm) and not len(table.sensing):
        raise ConfigError("input holds no MPCs")
    column = "cluster"
    labels = table.labels(column)
    if labels is None:
        column = "cluster_truth"
        if table.comm.cluster_id is None and len(table.comm) or table.sensing.cluster_id is None and len(table.sensing):
            raise ConfigError(f"every MPC needs a label in column {column!r}")
        labels = (
            np.asarray(table.comm.cluster_id if len(table.comm) else [], dtype=np.int64),
            np.asarray(table.sensing.cluster_id if len(table.sensing) else [], dtype=np.int64),
        )
    links = [LinkTag.COMMUNICATION] * len(table.comm) + [LinkTag.SENSING] * len(table.sensing)
    summaries = summarize_clusters(
        links,
        np.r_[table.comm.aod_deg, table.sensing.aod_deg],
        np.r_[table.comm.delay_ns, table.sensing.delay_ns],
        np.r_[table.comm.power(), table.sensing.power()],
        np.r_[labels[0], labels[1]],
        align_subclusters=bool(data.get("align_subclusters", True)),
    )
    report = spread_report(summaries)
    if report.excluded_single_path:
        _info(f"warning: {report.excluded_single_path} single-path cluster(s) excluded from the fits")
    out = Path(args.out)
    report_path = write_json(out / "spreads.json", {"label_column": column, **report.to_dict()})
    seed = 0 if args.seed is None else args.seed
    write_json(out / "manifest.json", build_manifest("stats", data, seed, inputs=[args.input], outputs=[report_path]))
    inter = report.inter.get("joint")
    if inter is not None:
        print(f"{len(summaries)} clusters; inter-cluster rms DS {inter[0]:.3f} ns, AS {inter[1]:.3f} deg")
    return EXIT_OK


# -- sweep -----------------------------------------------------------------


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.config is None:
        raise ConfigError("sweep needs a spec file (--config)")
    data = _load_config(args.config)
    if args.seed is not None:
        data = {**data, "master_seed": args.seed}
    spec = SweepSpec.from_dict(data)
    _info(f"path-count spread interpreted as {spec.base.path_count_interpretation}")
    results = run_sweep(spec)
    out = Path(args.out)
    written: list[Path] = []
    summary: dict[str, Any] = {}
    if Study.SD_CDF in results:
        block = {}
        for n0, pt in results[Study.SD_CDF].items():
            x, f = pt.cdf
            written.append(write_table_csv(out / f"sd_cdf_n0_{n0}.csv", ("sd", "cdf"), zip(map(float, x), map(float, f))))
            block[str(n0)] = {"mu": pt.fit[0], "sigma": pt.fit[1], "mean": pt.mean, "trials": int(pt.samples.size)}
        summary["sd_cdf"] = block
    if Study.AOD_PDF in results:
        block = {}
        for n0, pt in results[Study.AOD_PDF].items():
            for name, (centers, dens) in (("comm", pt.pdf_comm), ("sensing", pt.pdf_sensing)):
                written.append(write_table_csv(
                    out / f"aod_pdf_{name}_n0_{n0}.csv", ("aod_deg", "pdf"), zip(map(float, centers), map(float, dens))
                ))
            block[str(n0)] = {
                "mean_tv": pt.mean_tv,
                "pooled_tv": pt.tv_pooled,
                "shared_aods_match": pt.shared_aods_match,
            }
        summary["aod_pdf"] = block
    if Study.END_TO_END in results:
        block = {}
        for n0, pt in results[Study.END_TO_END].items():
            rows = zip(range(pt.k_star.size), pt.k_star.tolist(), pt.shared_found.tolist(),
                       map(float, pt.sd_true), map(float, pt.sd_found))
            written.append(write_table_csv(
                out / f"end_to_end_n0_{n0}.csv", ("trial", "k_star", "shared_found", "sd_true", "sd_found"), rows
            ))
            block[str(n0)] = pt.to_dict()
        summary["end_to_end"] = block
    summary_path = write_json(out / "summary.json", summary)
    written.append(summary_path)
    write_json(out / "manifest.json", build_manifest(
        "sweep", spec.to_dict(), spec.master_seed, inputs=[args.config], outputs=written
    ))
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jcas-channel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--config", type=Path, default=None, help="JSON configuration file")
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("generate", help="generate one joint channel realization")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("cluster", help="joint KPowerMeans clustering of an MPC file")
    p.add_argument("input", type=Path, help="MPC CSV file")
    common(p)
    p.add_argument("--k-range", type=_k_range, default=None, help="K_MIN:K_MAX (default 2:20)")
    p.add_argument("--p-th-db", type=float, default=None, help="per-link dynamic range in dB (default 30)")
    p.add_argument("--gamma-policy", type=_gamma_policy, default=None,
                   help="equal-total (default), equal-mean, or a fixed positive gamma")
    p.add_argument("--zeta", type=float, default=None, help="MCD delay scaling (default 8)")
    p.add_argument("--restarts", type=int, default=None, help="KPowerMeans restarts per k (default 10)")
    p.add_argument("--min-count", type=int, default=None, help="MPCs per link for a shared cluster (default 1)")
    p.add_argument("--allow-single-link", action="store_true", help="cluster even if one link is missing")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("stats", help="intra-/inter-cluster spread report")
    p.add_argument("input", type=Path, help="MPC CSV (uses 'cluster' labels if present, else cluster_truth)")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over the number of shared clusters")
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArithmeticError, FitError) as exc:
        _info(f"error: {exc}")
        return EXIT_NUMERIC
    except (JcasError, ValueError, OSError) as exc:
        _info(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
