"""Experiment harness: config parsing, sweeps, and CSV emission.

Configs are plain ``key=value`` text (diffable experiment records); CLI
flags override file values.  Sweeps run one process per scenario cell,
write one summary row per run, and are resumable: cells whose output
already exists with a matching config hash are skipped.  All floating
point output uses 6 significant digits, UTF-8, LF line endings.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import VALID_CONTROLLERS, RoadGeometry, SimConfig
from .engine import ControllerParams, RunResult, World, run
from .metrics import MetricsCollector, spacetime_grid

DEFAULT_DENSITIES = [50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0]
DEFAULT_HDV_RATES = [0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0]
DEFAULT_SEEDS = [1, 2, 3, 4, 5]

SUMMARY_COLUMNS = [
    "scenario_id",
    "controller",
    "density_veh_km",
    "hdv_rate",
    "seed",
    "flow_veh_h",
    "flow_density_speed_veh_h",
    "mean_speed_m_s",
    "mean_lat_speed_cav",
    "mean_lat_speed_hdv",
    "ttc_cdf_1_5_pct",
    "ttc_cdf_3_0_pct",
    "sigma_ax",
    "sigma_ay",
    "sigma_jx",
    "sigma_jy",
    "collisions",
    "boundary_violations",
    "config_hash",
]

TRAJECTORY_COLUMNS = [
    "t_s", "veh_id", "class", "x_m", "y_m",
    "vx_m_s", "vy_m_s", "ax_m_s2", "ay_m_s2",
]

GRID_COLUMNS = ["t_bin_s", "x_bin_m", "mean_speed_m_s", "sample_count"]

_SCALAR_KEYS = {"duration", "dt", "warmup", "preset"}
_LIST_KEYS = {"densities", "hdv_rates", "controllers", "seeds"}
_OVERRIDE_PREFIXES = ("hdv.", "cav.", "apl.")


class ConfigError(ValueError):
    pass


@dataclass
class SweepSpec:
    densities: list = field(default_factory=lambda: list(DEFAULT_DENSITIES))
    hdv_rates: list = field(default_factory=lambda: list(DEFAULT_HDV_RATES))
    controllers: list = field(default_factory=lambda: ["pl"])
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    duration_s: float = 3600.0
    dt_s: float = 0.25
    warmup_s: float = 600.0
    preset: Optional[str] = None
    overrides: dict = field(default_factory=dict)

    def validate(self):
        if not self.densities:
            raise ConfigError("densities: list must be non-empty")
        if any(d <= 0 for d in self.densities):
            raise ConfigError("densities: values must be > 0 veh/km")
        if not self.hdv_rates:
            raise ConfigError("hdv_rates: list must be non-empty")
        if any(not 0.0 <= r <= 1.0 for r in self.hdv_rates):
            raise ConfigError("hdv_rates: values must lie in [0, 1]")
        if not self.controllers:
            raise ConfigError("controllers: list must be non-empty")
        for c in self.controllers:
            if c not in VALID_CONTROLLERS:
                raise ConfigError(
                    f"controllers: '{c}' is not one of {VALID_CONTROLLERS}"
                )
        if not self.seeds:
            raise ConfigError("seeds: list must be non-empty")
        if self.dt_s <= 0:
            raise ConfigError("dt: must be > 0 s")
        if self.duration_s <= 0:
            raise ConfigError("duration: must be > 0 s")
        if not 0 <= self.warmup_s < self.duration_s:
            raise ConfigError("warmup: must lie in [0, duration)")

    def controller_params(self) -> ControllerParams:
        params = ControllerParams()
        if self.preset:
            try:
                params = params.with_preset(self.preset)
            except KeyError as exc:
                raise ConfigError(str(exc)) from exc
        if self.overrides:
            try:
                params = params.with_overrides(self.overrides)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"parameter override rejected: {exc}") from exc
        return params

    def cells(self) -> list[SimConfig]:
        out = []
        for controller in self.controllers:
            for density in self.densities:
                for rate in self.hdv_rates:
                    for seed in self.seeds:
                        out.append(
                            SimConfig(
                                density_veh_km=density,
                                hdv_rate=rate,
                                seed=seed,
                                controller=controller,
                                dt_s=self.dt_s,
                                duration_s=self.duration_s,
                                warmup_s=self.warmup_s,
                            )
                        )
        return out


def _parse_value(raw: str):
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config(path: Optional[str] = None, text: Optional[str] = None) -> SweepSpec:
    """Build a SweepSpec from key=value text; unknown keys are rejected."""
    spec = SweepSpec()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    if text is None:
        spec.validate()
        return spec
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{line}'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in _LIST_KEYS:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if key == "controllers":
                setattr(spec, key, [s.lower() for s in items])
            elif key == "seeds":
                spec.seeds = [int(s) for s in items]
            else:
                setattr(spec, key, [float(s) for s in items])
        elif key in _SCALAR_KEYS:
            if key == "preset":
                spec.preset = raw
            else:
                setattr(spec, {"duration": "duration_s", "dt": "dt_s", "warmup": "warmup_s"}[key], float(raw))
        elif key.startswith(_OVERRIDE_PREFIXES):
            spec.overrides[key] = _parse_value(raw)
        else:
            raise ConfigError(
                f"line {lineno}: unknown key '{key}' "
                f"(known: {sorted(_LIST_KEYS | _SCALAR_KEYS)} or hdv./cav./apl. overrides)"
            )
    spec.validate()
    spec.controller_params()
    return spec


def config_hash(config: SimConfig, params: ControllerParams) -> str:
    """Short digest over everything that affects a run's numbers."""
    items = sorted(asdict(config).items())
    for section in ("hdv", "cav", "apl"):
        items += sorted(
            (f"{section}.{k}", v) for k, v in asdict(getattr(params, section)).items()
        )
    blob = "\n".join(f"{k}={v!r}" for k, v in items)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def fmt(value) -> str:
    """6-significant-digit float formatting; None becomes an empty field."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6g}"


def scenario_id(config: SimConfig) -> str:
    return (
        f"{config.controller}-d{config.density_veh_km:g}"
        f"-h{config.hdv_rate:g}-s{config.seed}"
    )


def summary_row(result: RunResult, digest: str) -> list[str]:
    f = result.frame
    c = result.config
    return [
        scenario_id(c),
        c.controller,
        fmt(c.density_veh_km),
        fmt(c.hdv_rate),
        str(c.seed),
        fmt(f.flow_veh_h),
        fmt(f.flow_density_speed_veh_h),
        fmt(f.mean_speed_m_s),
        fmt(f.mean_lat_speed_cav),
        fmt(f.mean_lat_speed_hdv),
        fmt(f.ttc_cdf_1_5_pct),
        fmt(f.ttc_cdf_3_0_pct),
        fmt(f.sigma_ax),
        fmt(f.sigma_ay),
        fmt(f.sigma_jx),
        fmt(f.sigma_jy),
        str(f.collisions),
        str(f.boundary_violations),
        digest,
    ]


def _write_csv(path: Path, header: list[str], rows, comment: Optional[str] = None):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


class _TrajectoryLogger:
    def __init__(self, path: Path, digest: str):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._fh.write(f"# config_hash={digest}\n")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(TRAJECTORY_COLUMNS)

    def __call__(self, t: float, world: World):
        rows = []
        for i in range(world.n):
            rows.append(
                [
                    fmt(t),
                    str(i),
                    "hdv" if world.is_hdv[i] else "cav",
                    fmt(world.x[i]),
                    fmt(world.y[i]),
                    fmt(world.vx[i]),
                    fmt(world.vy[i]),
                    fmt(world.ax[i]),
                    fmt(world.ay[i]),
                ]
            )
        self._writer.writerows(rows)

    def close(self):
        self._fh.close()


def _grid_rows(frame, t_bin: float = 10.0, x_bin: float = 10.0):
    rows = []
    nt, nx = frame.grid_counts.shape
    for ti in range(nt):
        for xi in range(nx):
            count = frame.grid_counts[ti, xi]
            if count == 0:
                continue
            rows.append(
                [fmt(ti * t_bin), fmt(xi * x_bin), fmt(frame.grid_mean[ti, xi]), str(count)]
            )
    return rows


def _extras(result: RunResult) -> dict:
    """Per-run quantities outside the summary schema (internal bookkeeping)."""
    frame = result.frame
    config = result.config
    t_bins = np.arange(frame.grid_counts.shape[0]) * 10.0
    steady = t_bins >= config.warmup_s
    cells = frame.grid_mean[steady][frame.grid_counts[steady] > 0]
    return {
        "comfort_limit_violations": int(frame.comfort_limit_violations),
        "grid_speed_std_steady": float(np.std(cells)) if cells.size else None,
        "n_vehicles": result.n_vehicles,
        "n_hdv": result.n_hdv,
        "ttc_total_samples": int(frame.ttc_total_samples),
    }


def run_cell(
    config: SimConfig,
    params: ControllerParams,
    out_dir: Path,
    traj_every: int = 0,
) -> tuple[list[str], dict]:
    """Execute one scenario cell; returns (summary row, extras)."""
    digest = config_hash(config, params)
    sid = scenario_id(config)
    logger = None
    if traj_every > 0:
        logger = _TrajectoryLogger(out_dir / f"trajectories-{sid}.csv", digest)
    try:
        result = run(config, params, traj_writer=logger, traj_every=traj_every)
    finally:
        if logger is not None:
            logger.close()
    if traj_every > 0:
        _write_csv(
            out_dir / f"grid-{sid}.csv",
            GRID_COLUMNS,
            _grid_rows(result.frame),
            comment=f"config_hash={digest}",
        )
    return summary_row(result, digest), _extras(result)


def _cell_worker(args) -> tuple[str, Optional[list[str]], Optional[str]]:
    config, params, out_dir, traj_every = args
    sid = scenario_id(config)
    row_path = Path(out_dir) / "runs" / f"{sid}.csv"
    digest = config_hash(config, params)
    if row_path.exists():
        with open(row_path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) == 2 and rows[1] and rows[1][-1] == digest:
            return sid, rows[1], None
    try:
        row, extras = run_cell(config, params, Path(out_dir), traj_every)
    except Exception as exc:  # per-cell failures are reported, not fatal
        return sid, None, f"{type(exc).__name__}: {exc}"
    extras_path = Path(out_dir) / "runs" / f"{sid}.json"
    extras_path.parent.mkdir(parents=True, exist_ok=True)
    extras_path.write_text(json.dumps(extras, sort_keys=True), encoding="utf-8")
    _write_csv(row_path, SUMMARY_COLUMNS, [row])
    return sid, row, None


def run_sweep(
    spec: SweepSpec,
    out_dir: Path,
    workers: int = 1,
    traj_every: int = 0,
    progress: bool = True,
) -> Path:
    """Run the whole scenario matrix; returns the summary.csv path.

    Already-computed cells (matching config hash) are skipped; the final
    summary is byte-identical regardless of worker count.
    """
    params = spec.controller_params()
    cells = spec.cells()
    jobs = [(c, params, str(out_dir), traj_every) for c in cells]
    results = []
    failures = []
    if workers <= 1:
        iterator = map(_cell_worker, jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        iterator = pool.map(_cell_worker, jobs)
    done = 0
    for sid, row, error in iterator:
        done += 1
        if error is not None:
            failures.append((sid, error))
            if progress:
                print(f"[{done}/{len(jobs)}] {sid} FAILED: {error}", file=sys.stderr)
        else:
            results.append(row)
            if progress:
                print(f"[{done}/{len(jobs)}] {sid} flow={row[5]}", file=sys.stderr)
    if workers > 1:
        pool.shutdown()
    results.sort(key=lambda r: r[0])
    summary_path = Path(out_dir) / "summary.csv"
    _write_csv(summary_path, SUMMARY_COLUMNS, results)
    if failures:
        raise RuntimeError(
            f"{len(failures)} of {len(jobs)} cells failed: "
            + "; ".join(f"{sid} ({err})" for sid, err in failures)
        )
    return summary_path


# --------------------------------------------------------------- subcommands


def _spec_from_args(args) -> SweepSpec:
    spec = parse_config(args.config) if args.config else SweepSpec()
    if getattr(args, "density", None) is not None:
        spec.densities = [args.density]
    if getattr(args, "hdv_rate", None) is not None:
        spec.hdv_rates = [args.hdv_rate]
    if getattr(args, "controller", None) is not None:
        spec.controllers = [args.controller]
    if getattr(args, "seed", None) is not None:
        spec.seeds = [args.seed]
    if getattr(args, "seeds", None) is not None:
        spec.seeds = [int(s) for s in args.seeds.split(",")]
    if args.duration is not None:
        spec.duration_s = args.duration
        if spec.warmup_s >= spec.duration_s:
            spec.warmup_s = min(600.0, spec.duration_s / 6.0)
    if args.dt is not None:
        spec.dt_s = args.dt
    spec.validate()
    return spec


def _cmd_run(args) -> int:
    spec = _spec_from_args(args)
    config = spec.cells()[0]
    params = spec.controller_params()
    out_dir = Path(args.out_dir)
    traj_every = args.traj_every if args.traj_every is not None else 4
    digest = config_hash(config, params)
    sid = scenario_id(config)
    logger = None
    if traj_every > 0:
        logger = _TrajectoryLogger(out_dir / "trajectories.csv", digest)
    try:
        result = run(config, params, traj_writer=logger, traj_every=traj_every)
    finally:
        if logger is not None:
            logger.close()
    _write_csv(out_dir / "summary.csv", SUMMARY_COLUMNS, [summary_row(result, digest)])
    _write_csv(
        out_dir / "grid.csv",
        GRID_COLUMNS,
        _grid_rows(result.frame),
        comment=f"config_hash={digest}",
    )
    f = result.frame
    print(
        f"{sid}: n={result.n_vehicles} ({result.n_hdv} HDV) "
        f"flow={fmt(f.flow_veh_h)} veh/h mean_speed={fmt(f.mean_speed_m_s)} m/s "
        f"collisions={f.collisions} boundary={f.boundary_violations}"
    )
    return 0


def _cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    traj_every = args.traj_every if args.traj_every is not None else 0
    path = run_sweep(
        spec, Path(args.out_dir), workers=args.workers, traj_every=traj_every
    )
    print(f"summary written to {path}")
    return 0


def _cmd_metrics(args) -> int:
    """Recompute the log-derivable metrics from a trajectory file."""
    path = Path(args.trajectories)
    digest = ""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("#"):
            digest = first.strip().lstrip("# ").partition("=")[2]
        else:
            fh.seek(0)
        reader = csv.DictReader(fh)
        cols = {c: [] for c in TRAJECTORY_COLUMNS}
        for rec in reader:
            for c in TRAJECTORY_COLUMNS:
                cols[c].append(rec[c])
    t = np.array(cols["t_s"], dtype=float)
    veh = np.array(cols["veh_id"], dtype=int)
    is_hdv = np.array([c == "hdv" for c in cols["class"]])
    x = np.array(cols["x_m"], dtype=float)
    vx = np.array(cols["vx_m_s"], dtype=float)
    vy = np.array(cols["vy_m_s"], dtype=float)
    ax = np.array(cols["ax_m_s2"], dtype=float)
    ay = np.array(cols["ay_m_s2"], dtype=float)

    length_m = args.road_length
    duration = float(t.max()) if t.size else 0.0
    warmup = min(600.0, duration / 6.0)
    window = duration - warmup
    steady = t > warmup

    # crossings: wrap events between consecutive logged frames per vehicle
    crossings = 0
    order = np.lexsort((t, veh))
    xv, tv, vv = x[order], t[order], veh[order]
    same = vv[1:] == vv[:-1]
    wrapped = (xv[1:] < xv[:-1]) & same & (tv[1:] > warmup)
    crossings = int(np.count_nonzero(wrapped))
    flow = crossings * 3600.0 / window if window > 0 else 0.0
    mean_speed = float(vx[steady].mean()) if steady.any() else None
    n_veh = int(veh.max()) + 1 if veh.size else 0
    density = n_veh / (length_m / 1000.0)

    def lat(mask):
        sel = steady & mask
        return float(np.abs(vy[sel]).mean()) if sel.any() else None

    def sig(values, mask):
        sel = steady & mask
        return float(np.std(values[sel])) if sel.any() else None

    # jerk from logged accelerations at the actual logged spacing
    jx = np.full_like(ax, np.nan)
    jy = np.full_like(ay, np.nan)
    d_t = tv[1:] - tv[:-1]
    valid = same & (d_t > 0)
    idx = order[1:][valid]
    jx[idx] = (ax[order][1:][valid] - ax[order][:-1][valid]) / d_t[valid]
    jy[idx] = (ay[order][1:][valid] - ay[order][:-1][valid]) / d_t[valid]

    def sig_j(values, mask):
        sel = steady & mask & ~np.isnan(values)
        return float(np.std(values[sel])) if sel.any() else None

    cav = ~is_hdv
    grid_mean, grid_counts = spacetime_grid(t, x, vx, duration, length_m)
    out_dir = Path(args.out_dir)
    row = [
        "from-trajectories", "", "", "", "",
        fmt(flow), fmt(density * (mean_speed or 0.0) * 3.6), fmt(mean_speed),
        fmt(lat(cav)), fmt(lat(is_hdv)), "", "",
        fmt(sig(ax, cav)), fmt(sig(ay, cav)), fmt(sig_j(jx, cav)), fmt(sig_j(jy, cav)),
        "", "", digest,
    ]
    _write_csv(out_dir / "metrics_summary.csv", SUMMARY_COLUMNS, [row])
    rows = []
    nt, nx_ = grid_counts.shape
    for ti in range(nt):
        for xi in range(nx_):
            if grid_counts[ti, xi]:
                rows.append(
                    [fmt(ti * 10.0), fmt(xi * 10.0), fmt(grid_mean[ti, xi]), str(grid_counts[ti, xi])]
                )
    _write_csv(out_dir / "grid.csv", GRID_COLUMNS, rows, comment=f"config_hash={digest}")
    print(f"metrics written to {out_dir / 'metrics_summary.csv'}")
    return 0


def _add_common(parser):
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--density", type=float, help="density in veh/km")
    parser.add_argument("--hdv-rate", dest="hdv_rate", type=float, help="HDV share in [0,1]")
    parser.add_argument(
        "--controller", choices=VALID_CONTROLLERS, help="CAV line strategy"
    )
    parser.add_argument("--seed", type=int, help="single RNG seed")
    parser.add_argument("--seeds", help="comma-separated RNG seeds")
    parser.add_argument("--duration", type=float, help="simulated seconds")
    parser.add_argument("--dt", type=float, help="step size in seconds")
    parser.add_argument("--out-dir", dest="out_dir", default="out", help="output directory")
    parser.add_argument(
        "--traj-every",
        dest="traj_every",
        type=int,
        default=None,
        help="log trajectories every Nth step (0 disables; run defaults to 4, sweep to 0)",
    )
    parser.add_argument("--workers", type=int, default=1, help="parallel scenario cells")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lanefree",
        description="Lane-free ring-road traffic simulation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a single scenario")
    _add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="run a scenario matrix")
    _add_common(p_sweep)
    p_metrics = sub.add_parser("metrics", help="recompute metrics from a trajectory log")
    p_metrics.add_argument("trajectories", help="trajectories.csv path")
    p_metrics.add_argument("--out-dir", dest="out_dir", default="out")
    p_metrics.add_argument(
        "--road-length", dest="road_length", type=float, default=1000.0
    )
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_metrics(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
