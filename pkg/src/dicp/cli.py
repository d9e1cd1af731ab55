"""Command-line entry point: ``dicp {simulate,register,odometry,evaluate,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 registration degeneracy,
4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, scenarios
from .cloud import estimate_normals
from .config import RunConfig, format_config, load_config
from .errors import CloudFormatError, ConfigError, MissingDopplerError, RegistrationError
from .evaluation import evaluate
from .solver import Mode, register, with_mode
from .solver import odometry as run_odometry

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_IO = 0, 2, 3, 4

ABLATION_MODES = (Mode.P2P, Mode.P2P_DR, Mode.P2P_DOR, Mode.DICP)
METRIC_HEADER = ["RPE Trans (m)", "RPE Rot (deg)", "Path Error (m)", "# Iters (mean)"]
PAIR_HEADER = ["pair", "iterations", "converged", "stop_reason", "geom_rmse_m", "doppler_rmse_mps",
               "inliers", "rejected_dynamic", "damped", "failed"]
DEFAULT_OUT = "dicp_out"

log = logging.getLogger("dicp")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--lambda-v", type=float, help="Doppler weight in [0, 1]")
    p.add_argument("--max-dist", type=float, help="correspondence distance gate (m)")
    p.add_argument("--max-vel-err", type=float, help="dynamic-point Doppler gate (m/s)")
    p.add_argument("--mode", choices=[m.value for m in Mode], help="registration mode")
    p.add_argument("--seed-mode", choices=["none", "constant_velocity"], help="odometry seeding")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicp", description="Doppler ICP registration and odometry")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a simulated sequence to PLY scans and a ground-truth trajectory")
    _add_common(p)

    p = sub.add_parser("register", help="align two clouds and print T_TS")
    p.add_argument("source")
    p.add_argument("target")
    _add_common(p)

    p = sub.add_parser("odometry", help="register consecutive scans of a directory")
    p.add_argument("scans", help="directory of .ply scans (lexicographic order)")
    _add_common(p)

    p = sub.add_parser("evaluate", help="RPE and path error of an estimate against ground truth")
    p.add_argument("estimate")
    p.add_argument("ground_truth")
    p.add_argument("--pairs", help="pairs.csv from odometry, for the mean iteration count")
    _add_common(p)

    p = sub.add_parser("ablate", help="run the four ablation modes on one sequence")
    p.add_argument("scans", nargs="?", help="scan directory (simulated from the config when omitted)")
    p.add_argument("ground_truth", nargs="?", help="ground-truth trajectory for the scans")
    _add_common(p)
    return parser


def _config(args) -> RunConfig:
    overrides = {
        "lambda_v": args.lambda_v,
        "max_dist_m": args.max_dist,
        "max_vel_err_mps": args.max_vel_err,
        "mode": args.mode,
        "seed_mode": args.seed_mode,
    }
    return load_config(args.config, overrides)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = io.ensure_dir(args.out or DEFAULT_OUT)
    (out / "effective_config.txt").write_text(format_config(cfg))
    return out


def _read_scans(directory) -> list:
    return [io.read_cloud(p) for p in io.scan_paths(directory)]


def _timestamps(scans) -> np.ndarray:
    stamps = np.array([s.timestamp_s for s in scans], dtype=float)
    if len(stamps) > 1 and np.all(np.diff(stamps) > 0):
        return stamps
    return np.arange(len(scans)) * scans[0].period_s


def _pair_rows(result):
    rows = []
    for i, (res, failed) in enumerate(zip(result.results, result.failed)):
        if res is None:
            rows.append([i, 0, 0, "failed", float("nan"), float("nan"), 0, 0, 0, 1])
            continue
        rejected = res.per_iteration[-1].rejected_dynamic_count if res.per_iteration else 0
        rows.append([i, res.iterations, int(res.converged), res.stop_reason, res.geom_rmse, res.doppler_rmse,
                     res.inlier_count, rejected, int(res.damped), int(failed)])
    return rows


def _metric_row(report):
    return [report.rpe_trans_rmse_m, report.rpe_rot_rmse_deg, report.path_error_m, report.mean_iterations]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    seq = scenarios.build(cfg.sequence, cfg.calib)
    scan_dir = io.ensure_dir(out / "scans")
    for i, scan in enumerate(seq.scans):
        io.write_cloud(scan, scan_dir / f"scan_{i:04d}.ply", precision=cfg.ply_precision)
    io.write_trajectory(out / "ground_truth.txt", [s.time_s for s in seq.samples], seq.ground_truth)
    print(f"wrote {len(seq.scans)} scans of {cfg.preset} to {scan_dir}")
    return EXIT_OK


def cmd_register(args) -> int:
    cfg = _config(args)
    source, target = io.read_cloud(args.source), io.read_cloud(args.target)
    if cfg.solver.mode.geometric and target.normals is None:
        target = estimate_normals(target, cfg.normals_k)
    res = register(source, target, cfg.solver, cfg.calib)
    M = res.transform.as_matrix()
    for row in M:
        print(" ".join(f"{v: .9f}" for v in row))
    print(f"iterations {res.iterations} converged {'yes' if res.converged else 'no'} stop {res.stop_reason}")
    if args.out:
        out = _out_dir(args, cfg)
        io.write_csv(out / "register.csv",
                     ["iterations", "converged", "stop_reason", "geom_rmse_m", "doppler_rmse_mps", "inliers",
                      "u_rx", "u_ry", "u_rz", "u_tx", "u_ty", "u_tz"],
                     [[res.iterations, int(res.converged), res.stop_reason, res.geom_rmse, res.doppler_rmse,
                       res.inlier_count, *res.state]])
    return EXIT_OK


def cmd_odometry(args) -> int:
    cfg = _config(args)
    scans = _read_scans(args.scans)
    out = _out_dir(args, cfg)
    result = run_odometry(scans, cfg.solver, cfg.calib, seeding=cfg.seed_mode, normals_k=cfg.normals_k)
    io.write_trajectory(out / "trajectory.txt", _timestamps(scans), result.poses)
    io.write_csv(out / "pairs.csv", PAIR_HEADER, _pair_rows(result))
    n_failed = sum(result.failed)
    print(f"registered {len(scans) - 1} pairs, mean iterations {result.mean_iterations:.2f}, failed {n_failed}")
    if n_failed:
        for i, msg in enumerate(result.errors):
            if msg:
                print(f"pair {i}: {msg}", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    _, est = io.read_trajectory(args.estimate)
    _, gt = io.read_trajectory(args.ground_truth)
    iterations = None
    if args.pairs:
        header, rows = io.read_csv(args.pairs)
        if "iterations" not in header:
            raise CloudFormatError(f"{args.pairs}: no 'iterations' column")
        col = header.index("iterations")
        iterations = [int(r[col]) for r in rows]
    try:
        report = evaluate(est, gt, iterations)
    except ValueError as exc:
        raise CloudFormatError(str(exc)) from None
    out = _out_dir(args, cfg)
    io.write_csv(out / "evaluation.csv", METRIC_HEADER, [_metric_row(report)])
    io.write_csv(out / "evaluation_pairs.csv", ["pair", "trans_err_m", "rot_err_deg", "est_step_m", "gt_step_m"],
                 [[p.index, p.trans_err_m, p.rot_err_deg, p.est_step_m, p.gt_step_m] for p in report.per_pair])
    summary = (f"pairs           {len(report.per_pair)}\n"
               f"RPE translation {report.rpe_trans_rmse_m:.6f} m\n"
               f"RPE rotation    {report.rpe_rot_rmse_deg:.6f} deg\n"
               f"path error      {report.path_error_m:.6f} m\n"
               f"mean iterations {report.mean_iterations:.2f}\n")
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if (args.scans is None) != (args.ground_truth is None):
        raise ConfigError("ablate needs both a scan directory and a ground-truth trajectory, or neither")
    if args.scans is None:
        seq = scenarios.build(cfg.sequence, cfg.calib)
        scans, gt = seq.scans, seq.ground_truth
    else:
        scans = _read_scans(args.scans)
        _, gt = io.read_trajectory(args.ground_truth)
        if len(gt) != len(scans):
            raise CloudFormatError(f"{len(scans)} scans but {len(gt)} ground-truth poses")
    out = _out_dir(args, cfg)
    rows, trajectories = [], {"ground_truth": gt}
    for mode in ABLATION_MODES:
        result = run_odometry(scans, with_mode(cfg.solver, mode), cfg.calib, seeding=cfg.seed_mode,
                              normals_k=cfg.normals_k)
        iters = [r.iterations for r in result.results if r is not None]
        report = evaluate(result.poses, gt, iters)
        rows.append([mode.value, *_metric_row(report)])
        trajectories[mode.value] = result.poses
    io.write_csv(out / "ablation.csv", ["Mode", *METRIC_HEADER], rows)
    io.write_gnuplot_xy(out / "trajectories_xy.dat", trajectories)
    width = max(len(h) for h in METRIC_HEADER)
    print("Mode     " + "  ".join(h.rjust(width) for h in METRIC_HEADER))
    for r in rows:
        print(f"{r[0]:8s} " + "  ".join(f"{v:{width}.4f}" for v in r[1:]))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "register": cmd_register,
    "odometry": cmd_odometry,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegistrationError as exc:
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (MissingDopplerError, CloudFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
