"""Command-line orchestration: synth | cluster | eval | export-plots.

Every command is deterministic given its config, seed and input files.
The cluster command exits 0 on convergence and 2 when the split/merge loop
was cut by loop detection (results are still written); unusable inputs
exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .config import RunConfig
from .ekfsim import compare
from .emcluster import NllCache, clustering_from_json, clustering_to_json, report_stats
from .initializers import INIT_METHODS, feature_matrix, sweep
from .semantics import MetricError, davies_bouldin, profile_report
from .trajdata import (
    ColumnSchema,
    ManeuverSet,
    NoiseSpec,
    ScenarioSpec,
    load_csv,
    load_maneuver_json,
    rectify,
    save_maneuver_json,
    synthesize,
    write_csv,
)

HEATMAP_BIN = 0.5  # meters


def _add_schema_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("CSV columns")
    for field in ("frame", "track-id", "x", "y", "heading",
                  "lon-velocity", "lon-acceleration", "length"):
        g.add_argument(f"--col-{field}", default=field.replace("-", "_"),
                       metavar="NAME")
    g.add_argument("--heading-unit", choices=("radians", "degrees"),
                   default="radians")


def _schema_from_args(args) -> ColumnSchema:
    return ColumnSchema(
        frame=args.col_frame, track_id=args.col_track_id, x=args.col_x,
        y=args.col_y, heading=args.col_heading,
        lon_velocity=args.col_lon_velocity,
        lon_acceleration=args.col_lon_acceleration, length=args.col_length,
        heading_unit=args.heading_unit,
    )


def _load_data(path: str, args) -> ManeuverSet:
    p = Path(path)
    if p.suffix.lower() == ".json":
        return load_maneuver_json(p)
    return load_csv(p, _schema_from_args(args))


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {
        "t_kl": args.t_kl, "init_method": args.init, "seed": args.seed,
        "threads": args.threads, "n_resample": args.n_resample,
    }
    if args.n_k is not None:
        overrides["n_k_min"] = overrides["n_k_max"] = args.n_k
    if args.n_k_range is not None:
        overrides["n_k_min"], overrides["n_k_max"] = args.n_k_range
    for key, value in overrides.items():
        if value is not None:
            cfg = dataclasses.replace(cfg, **{key: value})
    return cfg


def _add_cluster_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--t-kl", type=float, default=None,
                        help="split/merge threshold (required; maneuver-specific)")
    parser.add_argument("--init", choices=INIT_METHODS, default=None)
    parser.add_argument("--n-k", type=int, default=None,
                        help="single initial cluster count")
    parser.add_argument("--n-k-range", type=int, nargs=2, default=None,
                        metavar=("MIN", "MAX"), help="sweep initial cluster counts")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--n-resample", type=int, default=None)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = ScenarioSpec()
    spec = dataclasses.replace(spec, path=dataclasses.replace(spec.path, kind=args.path))
    if args.samples_per_archetype is not None:
        spec = dataclasses.replace(spec, archetypes=tuple(
            dataclasses.replace(a, count=args.samples_per_archetype)
            for a in spec.archetypes))
    if args.duration is not None:
        spec = dataclasses.replace(spec, duration=args.duration)
    if args.noise_scale != 1.0:
        s = args.noise_scale
        n = spec.noise
        spec = dataclasses.replace(spec, noise=NoiseSpec(
            v0_sd=n.v0_sd * s, timing_sd=n.timing_sd * s,
            smooth_amp=n.smooth_amp * s,
            smooth_components=n.smooth_components if s > 0 else 0,
            lateral_sd=n.lateral_sd * s))
    mset, labels = synthesize(spec, args.seed)
    save_maneuver_json(mset, out / "maneuver.json")
    write_csv(mset, out / "maneuver.csv")
    lines = ["sample_id,label"]
    lines += [f"{sid},{labels[sid]}" for sid in sorted(labels)]
    (out / "labels.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(mset.samples)} samples to {out}")
    return 0


def cmd_cluster(args) -> int:
    cfg = _config_from_args(args)
    t_kl = cfg.require_t_kl()
    try:
        mset = _load_data(args.data, args)
    except Exception as exc:  # unparseable data
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.rectify:
        mset = rectify(mset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ekf = cfg.ekf_config()
    cache = NllCache(mset, ekf, n_jobs=cfg.threads)
    result = sweep(mset, cfg.init_method, cfg.n_k_range(), ekf, t_kl,
                   seed=cfg.seed, n_resample=cfg.n_resample, cache=cache,
                   max_em_iters=cfg.max_em_iters,
                   max_outer_iters=cfg.max_outer_iters)
    clustering, report = result.best
    (out / "clustering.json").write_text(clustering_to_json(clustering, report))
    lines = ["iteration,n_k,mu_ll,sigma_ll"]
    lines += [f"{i},{n},{mu:.17g},{sig:.17g}"
              for i, (n, mu, sig) in enumerate(report.history)]
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    if cfg.n_k_max > cfg.n_k_min:
        (out / "sweep.csv").write_text(result.to_csv())
    print(f"n_k_final={report.n_k} mu_ll={report.mu_ll:.3f} "
          f"sigma_ll={report.sigma_ll:.3f} n_inf={report.n_inf} "
          f"{'loop-detected' if report.loop_detected else 'converged'}")
    return 2 if report.loop_detected else 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    try:
        mset = _load_data(args.data, args)
        clustering = clustering_from_json(Path(args.clustering).read_text())
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if clustering.sample_ids != set(mset.sample_ids):
        print("error: clustering and data sample ids do not match", file=sys.stderr)
        return 1
    ekf = cfg.ekf_config()
    cache = NllCache(mset, ekf, n_jobs=cfg.threads)
    mu, sigma, n_inf = report_stats(clustering, cache)
    feats = feature_matrix(mset, cfg.n_resample)
    try:
        db = davies_bouldin(feats, clustering)
    except MetricError:
        db = math.nan
    doc = {"mu_ll": mu, "sigma_ll": sigma, "n_k": clustering.n_clusters,
           "n_inf": n_inf, "davies_bouldin": db}
    if args.labels:
        truth = _read_labels(args.labels)
        missing = set(mset.sample_ids) - set(truth)
        if missing:
            print(f"error: labels missing for {sorted(missing)[:3]}...", file=sys.stderr)
            return 1
        from sklearn.metrics import adjusted_rand_score

        ids = sorted(mset.sample_ids)
        doc["ari"] = float(adjusted_rand_score(
            [truth[i] for i in ids], clustering.labels_for(ids)))
    text = serialize.dumps(doc) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    if args.profile_groups:
        n_k_a, n_k_i = args.profile_groups
        trajs = {s.id: s for s in mset.samples}
        report = profile_report(clustering, trajs, n_k_a, n_k_i)
        target = Path(args.profiles_out or "profiles.json")
        target.write_text(serialize.dumps(report) + "\n")
        print(f"wrote behavior profiles to {target}")
    return 0


def _read_labels(path: str) -> dict[str, str]:
    labels = {}
    lines = Path(path).read_text().strip().splitlines()
    for line in lines[1:]:  # skip header
        sid, _, label = line.partition(",")
        labels[sid.strip()] = label.strip()
    return labels


def cmd_export_plots(args) -> int:
    cfg = _config_from_args(args)
    try:
        mset = _load_data(args.data, args)
        clustering = clustering_from_json(Path(args.clustering).read_text())
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clusters = sorted(clustering.clusters, key=lambda c: c.centroid_id)
    if args.cluster is not None:
        clusters = [c for c in clusters if c.centroid_id == args.cluster]
        if not clusters:
            print(f"error: unknown cluster id {args.cluster!r}", file=sys.stderr)
            return 1

    for c in clusters:
        lines = ["sample_id,t,v_lon"]
        for m in c.sorted_members:
            traj = mset.sample_by_id(m)
            lines += [f"{m},{p.t:.17g},{p.v_lon:.17g}" for p in traj.points]
        (out / f"cluster_{c.centroid_id}_profiles.csv").write_text(
            "\n".join(lines) + "\n")

    lines = ["cluster_id,t,x,y"]
    for c in clusters:
        traj = mset.sample_by_id(c.centroid_id)
        lines += [f"{c.centroid_id},{p.t:.17g},{p.s_x:.17g},{p.s_y:.17g}"
                  for p in traj.points]
    (out / "centroids.csv").write_text("\n".join(lines) + "\n")

    lines = ["cluster_id,ix,iy,x_center,y_center,count"]
    for c in clusters:
        counts: dict[tuple[int, int], int] = {}
        for m in c.sorted_members:
            traj = mset.sample_by_id(m)
            for p in traj.points:
                key = (math.floor(p.s_x / HEATMAP_BIN), math.floor(p.s_y / HEATMAP_BIN))
                counts[key] = counts.get(key, 0) + 1
        for (ix, iy), n in sorted(counts.items()):
            xc = (ix + 0.5) * HEATMAP_BIN
            yc = (iy + 0.5) * HEATMAP_BIN
            lines.append(f"{c.centroid_id},{ix},{iy},{xc:.17g},{yc:.17g},{n}")
    (out / "heatmap.csv").write_text("\n".join(lines) + "\n")

    if args.pair:
        sid, cid = args.pair
        try:
            sample = mset.sample_by_id(sid)
            centroid = mset.sample_by_id(cid)
        except KeyError as exc:
            print(f"error: unknown sample id {exc}", file=sys.stderr)
            return 1
        series = compare(sample, centroid, cfg.ekf_config(), with_trace=True)
        lines = ["t,d2,prob,mu_x,mu_y,mu_theta,mu_v,z_x,z_y,z_theta,z_v"]
        for row in series.trace:
            lines.append(",".join(f"{v:.17g}" for v in row))
        (out / f"trace_{sid}_{cid}.csv").write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivecluster",
        description="Discover longitudinal driving-behavior profiles from "
                    "intersection trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic maneuver set")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--path", choices=("turn", "straight"), default="turn")
    p.add_argument("--samples-per-archetype", type=int, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="run the full clustering pipeline")
    p.add_argument("--data", required=True, help="maneuver JSON or track CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--rectify", action="store_true",
                   help="trim trajectories to common start/end gates first")
    _add_cluster_flags(p)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="evaluate a clustering against data")
    p.add_argument("--clustering", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", help="ground-truth CSV (sample_id,label)")
    p.add_argument("--out")
    p.add_argument("--profile-groups", type=int, nargs=2, metavar=("N_A", "N_I"),
                   help="also group clusters into N_A assertiveness and N_I "
                        "interaction classes")
    p.add_argument("--profiles-out", help="where to write the profile report")
    _add_cluster_flags(p)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-plots", help="export plot-ready CSV files")
    p.add_argument("--clustering", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cluster", help="restrict to one cluster id")
    p.add_argument("--pair", nargs=2, metavar=("SAMPLE", "CENTROID"),
                   help="also dump the membership trace of one pair")
    _add_cluster_flags(p)
    _add_schema_flags(p)
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
