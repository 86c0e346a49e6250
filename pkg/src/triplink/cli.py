"""Command line front end: ``triplink attack|obfuscate|evaluate|synth``.

Options can also come from a ``--config`` file of ``key = value`` lines (keys are
the long option names). Precedence: command line > config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .attack import run_attack
from .core import CITY_PRESETS, AttackParams, TripDataset
from .grid import GridSpec
from .ingest import (
    ReadReport,
    filter_year,
    preprocess,
    read_assignment_csv,
    read_geolife,
    read_trips_csv,
    write_assignment_csv,
    write_trips_csv,
)
from .metrics import (
    REPORT_SCHEMA_VERSION,
    clustering_scores,
    median_f,
    regression_table,
    reid_evaluate,
    user_characteristics,
    write_characteristics_csv,
    write_median_f_csv,
    write_reid_csv,
)
from .obfuscate import TruncationSpec, truncate_dataset, write_drop_report
from .refine import MergeRecord, write_audit_csv
from .synth import SynthConfig, generate

log = logging.getLogger("triplink")

STAGE_FILES = ("stage1_assignment.csv", "stage2_assignment.csv", "stage3_assignment.csv")


class UsageError(Exception):
    pass


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=False, help="trips CSV file or GeoLife root directory")
    p.add_argument("--format", choices=["csv", "geolife"], default=None)
    p.add_argument("--geolife-tz", default=None, help="zone of GeoLife wall-clock times (default UTC)")


def _add_region(p: argparse.ArgumentParser) -> None:
    p.add_argument("--city", choices=sorted(CITY_PRESETS), default=None)
    p.add_argument("--bbox", nargs=4, type=float, metavar=("LAT_MIN", "LON_MIN", "LAT_MAX", "LON_MAX"), default=None)
    p.add_argument("--tz", default=None, help="IANA zone for the morning/evening windows")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value option file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triplink", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("attack", help="reconstruct user ids")
    _add_common(a)
    _add_input(a)
    _add_region(a)
    a.add_argument("--year", type=int, default=None, help="keep trips starting in this year")
    a.add_argument("--no-preprocess", action="store_true", default=None)
    a.add_argument("--min-length", type=float, default=None)
    a.add_argument("--min-points", type=int, default=None)
    a.add_argument("--trim-quantile", type=float, default=None)
    a.add_argument("--s-cell", type=float, default=None)
    a.add_argument("--h-concat", type=float, default=None)
    a.add_argument("--lcss-epsilon", type=float, default=None)
    a.add_argument("--s-cell-tfidf", type=float, default=None)
    a.add_argument("--n-matches", type=int, default=None)
    a.add_argument("--q-match", type=float, default=None)
    a.add_argument("--obfuscate", action="store_true", default=None, help="truncate trips before attacking")
    a.add_argument("--radius-min", type=float, default=None)
    a.add_argument("--radius-max", type=float, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--threads", type=int, default=None)

    o = sub.add_parser("obfuscate", help="truncate trip ends")
    _add_common(o)
    _add_input(o)
    o.add_argument("--radius-min", type=float, default=None)
    o.add_argument("--radius-max", type=float, default=None)
    o.add_argument("--seed", type=int, default=None)

    e = sub.add_parser("evaluate", help="score an assignment against ground truth")
    _add_common(e)
    _add_input(e)
    _add_region(e)
    e.add_argument("--attack-dir", default=None, help="directory holding stage*_assignment.csv")
    e.add_argument("--assignment", default=None, help="single assignment CSV (used as the final stage)")
    e.add_argument("--p", type=int, default=None)
    e.add_argument("--samples", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--s-cell", type=float, default=None, help="location grid for user characteristics")
    e.add_argument("--dataset-name", default=None)
    e.add_argument("--obfuscated", action="store_true", default=None)

    s = sub.add_parser("synth", help="write a synthetic labelled trips CSV")
    _add_common(s)
    _add_region(s)
    s.add_argument("--users", type=int, default=None)
    s.add_argument("--days", type=int, default=None)
    s.add_argument("--routine-strength", type=float, default=None)
    s.add_argument("--noise", type=float, default=None, help="per-point jitter sigma in meters")
    s.add_argument("--home-separation", type=float, default=None)
    s.add_argument("--points-per-km", type=float, default=None)
    s.add_argument("--start-date", default=None)
    s.add_argument("--seed", type=int, default=None)
    return parser


DEFAULTS: Dict[str, Dict[str, object]] = {
    "attack": {
        "format": "csv", "geolife_tz": "UTC", "no_preprocess": False, "min_length": 200.0,
        "min_points": 50, "trim_quantile": 0.05, "obfuscate": False, "radius_min": 100.0,
        "radius_max": 300.0, "seed": 0, "threads": os.cpu_count() or 1, "verbose": False,
    },
    "obfuscate": {"format": "csv", "geolife_tz": "UTC", "radius_min": 100.0, "radius_max": 300.0, "seed": 0, "verbose": False},
    "evaluate": {
        "format": "csv", "geolife_tz": "UTC", "p": 4, "samples": 100, "seed": 0, "s_cell": 200.0,
        "dataset_name": "dataset", "obfuscated": False, "verbose": False,
    },
    "synth": {
        "users": 20, "days": 14, "routine_strength": 1.0, "noise": 0.0, "home_separation": 1000.0,
        "points_per_km": 20.0, "start_date": "2022-10-31", "seed": 0, "verbose": False,
    },
}


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path: str, parser: argparse.ArgumentParser) -> Dict[str, object]:
    actions = {a.dest: a for a in parser._actions}
    out: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            dest = key.lstrip("-").replace("-", "_")
            action = actions.get(dest)
            if action is None or dest in ("config", "help"):
                raise UsageError(f"{path}:{lineno}: unknown option {key!r}")
            if isinstance(action, argparse._StoreTrueAction):
                out[dest] = _to_bool(value)
            elif action.nargs == 4:
                out[dest] = [float(v) for v in value.replace(",", " ").split()]
            else:
                conv = action.type or str
                try:
                    out[dest] = conv(value)
                except ValueError as exc:
                    raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
                if action.choices and out[dest] not in action.choices:
                    raise UsageError(f"{path}:{lineno}: {key} must be one of {sorted(action.choices)}")
    return out


def resolve(args: argparse.Namespace, sub_parser: argparse.ArgumentParser) -> argparse.Namespace:
    merged = dict(DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        merged.update(read_config(args.config, sub_parser))
    merged.update({k: v for k, v in vars(args).items() if v is not None})
    return argparse.Namespace(**{**{k: None for k in vars(args)}, **merged})


def _region(cfg: argparse.Namespace):
    bbox, tz = None, None
    if cfg.city:
        bbox, tz = CITY_PRESETS[cfg.city]
    if cfg.bbox:
        bbox = tuple(cfg.bbox)
    if cfg.tz:
        tz = cfg.tz
    return bbox, tz


def _load(cfg: argparse.Namespace, report: Optional[ReadReport] = None) -> TripDataset:
    if not cfg.input:
        raise UsageError("--input is required")
    path = Path(cfg.input)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    if cfg.format == "geolife":
        return read_geolife(path, tz=cfg.geolife_tz, report=report, n_jobs=getattr(cfg, "threads", None) or 1)
    return read_trips_csv(path, report=report)


def _commit(out_dir: str, writers: Dict[str, Callable[[Path], None]]) -> None:
    """Write every output into a scratch directory first, then move them into place."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".triplink-", dir=out.parent))
    try:
        for name, write in writers.items():
            write(scratch / name)
        out.mkdir(parents=True, exist_ok=True)
        for name in writers:
            os.replace(scratch / name, out / name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def _json_writer(obj) -> Callable[[Path], None]:
    def write(path: Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    return write


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not serializable: {type(o)}")


def cmd_attack(cfg: argparse.Namespace) -> int:
    bbox, tz = _region(cfg)
    if bbox is None:
        raise UsageError("attack needs --city or --bbox")
    if cfg.obfuscate and cfg.radius_min > cfg.radius_max:
        raise UsageError("--radius-min must not exceed --radius-max")
    overrides = {
        name: getattr(cfg, name)
        for name in ("s_cell", "h_concat", "lcss_epsilon", "s_cell_tfidf", "n_matches", "q_match")
        if getattr(cfg, name) is not None
    }
    if cfg.city:
        params = AttackParams.for_city(cfg.city, **overrides)
        params = AttackParams(**{**params.__dict__, "bbox": bbox, "timezone": tz})
    else:
        params = AttackParams(bbox=bbox, timezone=tz or "UTC", **overrides)

    read_report = ReadReport()
    ds = _load(cfg, read_report)
    if cfg.year is not None:
        ds = filter_year(ds, cfg.year, params.timezone)
    prep_report = None
    if not cfg.no_preprocess:
        ds, prep_report = preprocess(ds, bbox, cfg.min_length, cfg.min_points, cfg.trim_quantile)
    writers: Dict[str, Callable[[Path], None]] = {}
    if cfg.obfuscate:
        ds, drops = truncate_dataset(ds, TruncationSpec(cfg.radius_min, cfg.radius_max, cfg.seed))
        writers["drop_report.csv"] = lambda p, d=drops: write_drop_report(d, p)

    audit: List[MergeRecord] = []
    _, snapshots = run_attack(ds, params, n_jobs=max(1, cfg.threads), audit=audit)

    for name, snap in zip(STAGE_FILES, snapshots):
        writers[name] = lambda p, s=snap: write_assignment_csv(s, p)
    writers["trips_attacked.csv"] = lambda p: write_trips_csv(ds, p)
    writers["refine_audit.csv"] = lambda p: write_audit_csv(audit, p)
    writers["preprocess_report.json"] = _json_writer({
        "read": {k: v for k, v in read_report.__dict__.items() if k != "messages"},
        "preprocess": prep_report.as_dict() if prep_report else None,
        "params": {k: v for k, v in params.__dict__.items()},
        "n_trips_attacked": len(ds),
    })
    _commit(cfg.out, writers)
    log.info("wrote %d files to %s", len(writers), cfg.out)
    return 0


def cmd_obfuscate(cfg: argparse.Namespace) -> int:
    if cfg.radius_min > cfg.radius_max:
        raise UsageError("--radius-min must not exceed --radius-max")
    spec = TruncationSpec(cfg.radius_min, cfg.radius_max, cfg.seed)
    ds = _load(cfg)
    out, drops = truncate_dataset(ds, spec)
    _commit(cfg.out, {
        "trips_obfuscated.csv": lambda p: write_trips_csv(out, p),
        "drop_report.csv": lambda p: write_drop_report(drops, p),
    })
    return 0


def cmd_evaluate(cfg: argparse.Namespace) -> int:
    if not cfg.attack_dir and not cfg.assignment:
        raise UsageError("evaluate needs --attack-dir or --assignment")
    ds = _load(cfg)
    if ds.ground_truth is None:
        raise UsageError("evaluation requires labels")
    stages: Dict[str, object] = {}
    if cfg.attack_dir:
        for k, name in enumerate(STAGE_FILES, start=1):
            path = Path(cfg.attack_dir) / name
            if path.exists():
                stages[f"stage{k}"] = read_assignment_csv(path)
    if cfg.assignment:
        stages["final"] = read_assignment_csv(cfg.assignment)
    if not stages:
        raise FileNotFoundError(f"no assignment files found in {cfg.attack_dir}")
    final_key = list(stages)[-1]
    final = stages[final_key]
    missing = set(final.assignment) - set(ds.trips)
    if missing:
        raise ValueError(f"{len(missing)} assigned trip(s) not in the dataset, e.g. {sorted(missing)[0]!r}")
    ds = ds.subset(final.assignment)

    clustering = {}
    for key, snap in stages.items():
        clustering[key] = clustering_scores(snap.assignment, ds.ground_truth)

    reid = reid_evaluate(final, ds, p=cfg.p, n_samples=cfg.samples, rng_seed=cfg.seed)
    bbox, _ = _region(cfg)
    if bbox is None:
        lat = np.concatenate([t.lat for t in ds]) if len(ds) else np.array([0.0, 1.0])
        lon = np.concatenate([t.lon for t in ds]) if len(ds) else np.array([0.0, 1.0])
        bbox = (float(lat.min()) - 1e-6, float(lon.min()) - 1e-6, float(lat.max()) + 1e-6, float(lon.max()) + 1e-6)
    chars = user_characteristics(ds, GridSpec(bbox, cfg.s_cell))
    regression = regression_table(reid, chars)
    med = median_f(reid)
    median_row = {"dataset": cfg.dataset_name, "obfuscated": int(bool(cfg.obfuscated)), "s_cell": cfg.s_cell, "p": cfg.p, "median_f": med if med is not None else ""}
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "dataset": cfg.dataset_name,
        "n_trips": len(ds),
        "n_users": len(set(ds.ground_truth.values())),
        "clustering": clustering,
        "final_stage": final_key,
        "reid": {
            "p": cfg.p,
            "n_samples": cfg.samples,
            "seed": cfg.seed,
            "median_f": med,
            "users": [r.as_row() for r in reid],
        },
        "characteristics": [c.as_row() for c in chars],
        "regression": regression,
    }
    _commit(cfg.out, {
        "report.json": _json_writer(report),
        "reid_per_user.csv": lambda p: write_reid_csv(reid, p),
        "characteristics.csv": lambda p: write_characteristics_csv(chars, reid, p),
        "median_f.csv": lambda p: write_median_f_csv([median_row], p),
    })
    return 0


def cmd_synth(cfg: argparse.Namespace) -> int:
    bbox, tz = _region(cfg)
    extra = {}
    if bbox is not None:
        extra["bbox"] = bbox
    if tz is not None:
        extra["timezone"] = tz
    try:
        sc = SynthConfig(
            n_users=cfg.users, days=cfg.days, home_separation_m=cfg.home_separation,
            routine_strength=cfg.routine_strength, noise_sigma_m=cfg.noise,
            points_per_km=cfg.points_per_km, rng_seed=cfg.seed, start_date=cfg.start_date, **extra,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = generate(sc)
    _commit(cfg.out, {"trips.csv": lambda p: write_trips_csv(ds, p)})
    return 0


COMMANDS = {"attack": cmd_attack, "obfuscate": cmd_obfuscate, "evaluate": cmd_evaluate, "synth": cmd_synth}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub_parser = parser._subparsers._group_actions[0].choices[args.command]
    try:
        cfg = resolve(args, sub_parser)
        logging.basicConfig(level=logging.INFO if cfg.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        if not cfg.out:
            raise UsageError("--out is required")
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        sub_parser.print_usage(sys.stderr)
        print(f"triplink {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"triplink {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
