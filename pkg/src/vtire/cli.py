"""``vtire`` command line: dataset synthesis, fusion training, segmentation,
load calibration and report rendering.

Every command that produces results writes into ``<runs-dir>/<UTC time>-<hash>/``
where the hash covers the resolved configuration and the command arguments.
Exit status is 0 on success, 1 on a run-time error and 2 on a usage or
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import plotting
from .config import RunConfig, parse_assignments, read_config, write_config
from .datasets import DatasetManifest, build_dataset, default_workers, load_samples, split
from .errors import ConfigError, VTireError
from .modality import MODES

log = logging.getLogger("vtire")


# ---------------------------------------------------------------------------
# helpers

def _digest(cfg: RunConfig, command: dict, n=12):
    blob = json.dumps({"config": cfg.to_dict(), "command": command}, sort_keys=True,
                      separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:n]


def _run_dir(args, cfg, command):
    h = _digest(cfg, command)
    stamp = time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    path = Path(args.runs_dir) / f"{stamp}-{h}"
    k = 1
    while path.exists():
        path = Path(args.runs_dir) / f"{stamp}-{h}-{k}"
        k += 1
    path.mkdir(parents=True)
    write_config(cfg, path / "config.ini")
    (path / "command.json").write_text(json.dumps(command, indent=1, sort_keys=True, default=list) + "\n")
    return path, h


def _write_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _emit(args, result, lines):
    if args.json:
        print(json.dumps(result, sort_keys=True, default=_json_default))
    else:
        for line in lines:
            print(line)


def _config(args, extra=None):
    overrides = parse_assignments(args.set)
    overrides.update(extra or {})
    return read_config(args.config, overrides)


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args):
    extra = {}
    if args.count_per_class is not None:
        extra["dataset.count_per_class"] = args.count_per_class
    cfg = _config(args, extra)
    manifest = build_dataset(args.task, args.out, cfg.dataset, seed=args.seed, force=args.force,
                             workers=args.workers)
    n_png = sum(1 for _ in Path(args.out).rglob("*.png"))
    result = {"task": args.task, "out": str(args.out), "samples": len(manifest.samples),
              "png_files": n_png, "manifest_sha256": manifest.content_hash()}
    _emit(args, result, [f"wrote {len(manifest.samples)} samples ({n_png} PNG files) to {args.out}",
                         f"manifest sha256 {result['manifest_sha256']}"])
    return 0


# ---------------------------------------------------------------------------
# train

def _load_classification(args, cfg):
    from .experiments import from_disk, generate_in_memory

    if args.data is not None:
        data = from_disk(args.data)
        if data.manifest.task != args.task:
            raise VTireError(f"dataset at {args.data} is a {data.manifest.task!r} dataset, not {args.task!r}")
        return data
    return generate_in_memory(args.task, cfg.dataset, seed=args.data_seed, workers=args.workers)


def cmd_train(args):
    from .experiments import aggregate, run_mode

    extra = {}
    if args.epochs is not None:
        extra["fusion.epochs"] = args.epochs
    cfg = _config(args, extra)
    seeds = list(range(args.seeds))
    command = {"cmd": "train", "task": args.task, "modes": args.mode, "seeds": seeds,
               "data": str(args.data) if args.data else None, "data_seed": args.data_seed}
    run, h = _run_dir(args, cfg, command)
    data = _load_classification(args, cfg)
    classes = list(data.manifest.classes)
    hist_rows, summary = [], {"config_hash": h, "task": args.task, "modes": {}}
    for mode in args.mode:
        records = []
        for seed in seeds:
            rec = run_mode(data, mode, cfg.fusion, seed, cfg.dataset.split_ratio)
            records.append(rec)
            for e in rec.result.history:
                hist_rows.append({"mode": mode, "seed": seed, **e})
            conf = rec.result.confusion
            with open(run / f"confusion_{mode}_seed{seed}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["true\\pred"] + classes)
                for name, row in zip(classes, conf):
                    w.writerow([name] + [int(v) for v in row])
            rec.result.model.save(run / f"model_{mode}_seed{seed}.vtck")
            log.info("%s seed %d done in %.1fs", mode, seed, rec.seconds)
        summary["modes"][mode] = aggregate(records)
        plotting.plot_history({f"seed {r.seed}": r.result.history for r in records},
                              run / f"history_{mode}.png", title=f"{args.task} {mode}")
        plotting.plot_confusion(records[0].result.confusion, classes, run / f"confusion_{mode}.png",
                                title=f"{mode} seed {records[0].seed}")
    _write_csv(run / "history.csv", hist_rows, ["mode", "seed", "epoch", "loss", "eval_acc"])
    _write_json(run / "summary.json", summary)
    if len(args.mode) > 1:
        plotting.plot_mode_bars(summary["modes"], run / "modes.png")
    lines = [f"run directory {run}"]
    for mode, agg in summary["modes"].items():
        lines.append(f"{mode}: last-10 mean {agg['acc_last10_mean']:.4f} "
                     f"(+/- {agg['acc_last10_std']:.4f}), max {agg['acc_max_mean']:.4f}")
    _emit(args, {**summary, "run_dir": str(run)}, lines)
    return 0


# ---------------------------------------------------------------------------
# segment

def _seg_arrays(args, cfg, which):
    """``(train_x, train_m, eval_x, eval_m)`` from ``--data`` or freshly generated."""
    from .segment import crack_seg_data, object_seg_data

    task = {"object": "object_seg", "crack": "crack_seg"}[args.task]
    if args.data is not None:
        root = Path(args.data)
        manifest = DatasetManifest.load(root)
        if manifest.task != task:
            raise VTireError(f"dataset at {root} is a {manifest.task!r} dataset, not {task!r}")
        parts = split(manifest, manifest.split_ratio, manifest.seed)
        out = []
        for part in ("train", "eval"):
            samples = list(load_samples(parts[part], manifest, root))
            out += [np.stack([s.tactile_crop for s in samples]),
                    np.stack([s.contact_mask for s in samples])]
        return tuple(out)
    n = cfg.dataset.count_per_class
    if args.task == "object":
        per_kind = n or 30
        Xtr, Mtr = object_seg_data(per_kind, args.data_seed)
        Xev, Mev = object_seg_data(max(2, per_kind // 3), args.data_seed + 1)
    else:
        count = n or 120
        Xtr, Mtr = crack_seg_data(count, args.data_seed, cfg.dataset.crack_width_mm)
        Xev, Mev = crack_seg_data(max(4, count // 3), args.data_seed + 1, cfg.dataset.crack_width_mm)
    return Xtr, Mtr, Xev, Mev


def cmd_segment(args):
    from dataclasses import replace

    from .segment import (SegModel, evaluate_seg, object_search_protocol, predict_masks,
                          probe_resolution, train_seg)

    extra = {"seg.mode": args.task}
    if getattr(args, "epochs", None) is not None:
        extra["seg.epochs"] = args.epochs
    cfg = _config(args, extra)
    command = {"cmd": "segment", "action": args.action, "task": args.task,
               "data": str(args.data) if getattr(args, "data", None) else None,
               "model": str(getattr(args, "model", None)), "data_seed": getattr(args, "data_seed", 0)}
    if args.action == "probe":
        command["widths"] = args.widths
    if getattr(args, "data", None) is not None and not Path(args.data).exists():
        raise VTireError(f"dataset path {args.data} does not exist")
    run, h = _run_dir(args, cfg, command)
    result = {"config_hash": h, "run_dir": str(run), "task": args.task, "action": args.action}
    lines = [f"run directory {run}"]

    if args.action == "train":
        Xtr, Mtr, Xev, Mev = _seg_arrays(args, cfg, "train")
        res = train_seg(Xtr, Mtr, cfg.seg, Xev, Mev)
        res.model.save(run / "model.vtck")
        keys = sorted({k for h_ in res.history for k in h_})
        _write_csv(run / "history.csv", res.history, keys)
        metrics = res.summary()
        _write_json(run / "metrics.json", metrics)
        plotting.plot_masks(Xev[:4], Mev[:4], predict_masks(res.model, Xev[:4]), run / "masks.png")
        result.update(metrics)
        lines.append(f"eval pixel accuracy {metrics['pixel_acc']:.4f}, IoU {metrics['iou']:.4f}")
    else:
        model = SegModel.load(args.model)
        if model.config.mode != args.task:
            raise VTireError(f"model {args.model} was trained for {model.config.mode!r}, not {args.task!r}")
        if args.action == "eval":
            _, _, Xev, Mev = _seg_arrays(args, cfg, "eval")
            metrics = {**evaluate_seg(model, Xev, Mev), "threshold": 0.5}
            if args.task == "object":
                search = object_search_protocol(model, n_trials=args.trials, seed=args.data_seed)
                metrics["search_successes"] = search["successes"]
                metrics["search_trials"] = search["trials"]
                _write_csv(run / "search.csv", search["per_trial"], sorted(search["per_trial"][0]))
            _write_json(run / "metrics.json", metrics)
            plotting.plot_masks(Xev[:4], Mev[:4], predict_masks(model, Xev[:4]), run / "masks.png")
            result.update(metrics)
            lines.append(f"pixel accuracy {metrics['pixel_acc']:.4f}, IoU {metrics['iou']:.4f}")
            if "search_successes" in metrics:
                lines.append(f"object search {metrics['search_successes']}/{metrics['search_trials']}")
        else:
            if args.task != "crack":
                raise VTireError("the resolution probe needs a crack model")
            rep = probe_resolution(model, widths_mm=tuple(args.widths), seed=args.data_seed)
            _write_csv(run / "probe.csv", rep["per_width"], sorted(rep["per_width"][0]))
            _write_json(run / "probe.json", rep)
            plotting.plot_probe(rep["per_width"], run / "probe.png")
            result.update(rep)
            lines.append(f"smallest detected width: {rep['smallest_detected_mm']} mm")
    _emit(args, result, lines)
    return 0


# ---------------------------------------------------------------------------
# load

def _fem_model(cfg):
    from .loadsense import MATERIAL_PRESETS, FemModel, TireGeometry

    lc = cfg.load
    return FemModel(TireGeometry(width=lc.width), lc.n_r, lc.n_c, MATERIAL_PRESETS[lc.materials],
                    lc.penalty_scale)


def _calibrate(cfg, forces=None):
    from .loadsense import calibration_forces, fit_calibration, sweep_curve

    model = _fem_model(cfg)
    lc = cfg.load
    forces = forces or calibration_forces(lc.max_kg, lc.n_points, lc.overload_kg)
    curve = sweep_curve(model, sorted(forces))
    return model, curve, fit_calibration(curve, (0.0, lc.max_kg))


def cmd_load(args):
    from .loadsense import G_ACCEL, LoadCalibration, estimate_weight, load_protocol, solve_contact, write_vtk

    extra = {}
    if getattr(args, "mesh", None):
        extra["load.n_r"], extra["load.n_c"] = args.mesh
    cfg = _config(args, extra)
    if args.action == "estimate":
        cal = LoadCalibration.from_json(args.calibration)
        est = estimate_weight(args.offset, cal)
        _emit(args, est, [f"{est['kg']:.3f} kg" + ("  OVERLOAD" if est["overload"] else "")])
        return 0
    command = {"cmd": "load", "action": args.action,
               "forces": getattr(args, "forces", None),
               "calibration": str(getattr(args, "calibration", None))}
    run, h = _run_dir(args, cfg, command)
    result = {"config_hash": h, "run_dir": str(run)}
    lines = [f"run directory {run}"]
    if args.action == "calibrate" or args.calibration is None:
        model, curve, cal = _calibrate(cfg, getattr(args, "forces", None))
        curve.to_csv(run / "curve.csv")
        cal.to_json(run / "calibration.json")
        plotting.plot_load_curve(curve.forces, curve.offsets, cal, run / "curve.png")
        top = solve_contact(model, cfg.load.max_kg * G_ACCEL)
        write_vtk(run / "field.vtk", model.mesh, top.displacement)
        plotting.plot_deformed_mesh(model.mesh.nodes, model.mesh.elements, top.displacement,
                                    run / "deformed.png", title=f"{cfg.load.max_kg:g} kg")
        result["calibration"] = cal.to_dict()
        lines.append(f"slope {cal.slope:.5f} kg/mm, intercept {cal.intercept:.4f} kg, r2 {cal.r2:.5f}, "
                     f"range 0..{cal.valid_range[1]:.3f} mm, threshold {cal.threshold:.3f} mm")
    else:
        model = _fem_model(cfg)
        cal = LoadCalibration.from_json(args.calibration)
    if args.action == "protocol":
        lc = cfg.load
        weights = np.linspace(lc.max_kg / lc.n_weights, lc.max_kg, lc.n_weights)
        rep = load_protocol(model, cal, weights, lc.n_measurements, lc.noise_frac, lc.seed)
        _write_csv(run / "protocol.csv", rep["measurements"], list(rep["measurements"][0]))
        _write_json(run / "protocol.json", {k: v for k, v in rep.items() if k != "measurements"})
        plotting.plot_protocol(rep["measurements"], run / "protocol.png")
        result.update({k: v for k, v in rep.items() if k != "measurements"})
        lines.append(f"protocol MAE {rep['mae_kg']:.4f} kg over {len(rep['measurements'])} measurements")
    _emit(args, result, lines)
    return 0


# ---------------------------------------------------------------------------
# report

def cmd_report(args):
    """Re-render the figures of an existing run directory from its CSV/JSON files."""
    from .loadsense import LoadCalibration, LoadCurve

    run = Path(args.run_dir)
    if not run.is_dir():
        raise VTireError(f"{run} is not a run directory")
    made = []
    if (run / "history.csv").exists():
        with open(run / "history.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and "mode" in rows[0]:
            by_mode = {}
            for r in rows:
                hist = by_mode.setdefault(r["mode"], {}).setdefault(f"seed {r['seed']}", [])
                hist.append({"epoch": int(r["epoch"]), "loss": float(r["loss"]),
                             "eval_acc": float(r["eval_acc"])})
            for mode, runs in by_mode.items():
                made.append(plotting.plot_history(runs, run / f"history_{mode}.png", title=mode))
    for conf_path in sorted(run.glob("confusion_*_seed*.csv")):
        with open(conf_path, newline="") as fh:
            rows = list(csv.reader(fh))
        classes = rows[0][1:]
        conf = np.array([[int(v) for v in r[1:]] for r in rows[1:]])
        made.append(plotting.plot_confusion(conf, classes, conf_path.with_suffix(".png")))
    if (run / "summary.json").exists():
        summary = json.loads((run / "summary.json").read_text())
        if len(summary.get("modes", {})) > 1:
            made.append(plotting.plot_mode_bars(summary["modes"], run / "modes.png"))
    if (run / "curve.csv").exists():
        curve = LoadCurve.from_csv(run / "curve.csv")
        cal = LoadCalibration.from_json(run / "calibration.json") if (run / "calibration.json").exists() else None
        made.append(plotting.plot_load_curve(curve.forces, curve.offsets, cal, run / "curve.png"))
    if (run / "protocol.csv").exists():
        with open(run / "protocol.csv", newline="") as fh:
            rows = [{k: float(v) if k in ("weight_kg", "estimate_kg") else v for k, v in r.items()}
                    for r in csv.DictReader(fh)]
        made.append(plotting.plot_protocol(rows, run / "protocol.png"))
    if (run / "probe.json").exists():
        made.append(plotting.plot_probe(json.loads((run / "probe.json").read_text())["per_width"],
                                        run / "probe.png"))
    result = {"run_dir": str(run), "figures": [str(p) for p in made]}
    _emit(args, result, [f"rendered {p}" for p in made] or ["nothing to render"])
    return 0


# ---------------------------------------------------------------------------
# parser

def _common(p, runs=True):
    p.add_argument("--config", type=Path, help="key-value config file (INI sections)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--json", action="store_true", help="print a JSON result on stdout")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel worker cap (default: $VTIRE_WORKERS or 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    if runs:
        p.add_argument("--runs-dir", type=Path, default=Path("runs"))


def build_parser():
    parser = argparse.ArgumentParser(prog="vtire", description=__doc__.split("\n\n")[0].replace("\n", " "))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate an on-disk dataset")
    p.add_argument("task", choices=["terrain", "damage", "object_seg", "crack_seg"])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-per-class", type=int)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    _common(p, runs=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and evaluate the fusion classifier")
    p.add_argument("--task", choices=["terrain", "damage"], required=True)
    p.add_argument("--mode", choices=list(MODES), nargs="+", required=True)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds (0..N-1)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--data", type=Path, help="dataset directory (default: generate in memory)")
    p.add_argument("--data-seed", type=int, default=0)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="contact/crack segmentation")
    seg = p.add_subparsers(dest="action", required=True)
    for action in ("train", "eval", "probe"):
        q = seg.add_parser(action)
        q.add_argument("--task", choices=["object", "crack"], required=True)
        q.add_argument("--data-seed", type=int, default=0)
        if action in ("train", "eval"):
            q.add_argument("--data", type=Path, help="dataset directory (default: generate)")
        if action == "train":
            q.add_argument("--epochs", type=int)
        else:
            q.add_argument("--model", type=Path, required=True)
        if action == "eval":
            q.add_argument("--trials", type=int, default=50, help="object-search trials")
        if action == "probe":
            q.add_argument("--widths", type=float, nargs="+", default=[0.5, 0.4, 0.3, 0.25, 0.2])
        _common(q)
        q.set_defaults(func=cmd_segment)

    p = sub.add_parser("load", help="FEM load calibration and weighing")
    ld = p.add_subparsers(dest="action", required=True)
    for action in ("calibrate", "estimate", "protocol"):
        q = ld.add_parser(action)
        if action != "estimate":
            q.add_argument("--mesh", type=int, nargs=2, metavar=("N_R", "N_C"))
        if action == "calibrate":
            q.add_argument("--forces", type=float, nargs="+", help="sweep forces in N")
        if action == "estimate":
            q.add_argument("--calibration", type=Path, required=True)
            q.add_argument("--offset", type=float, required=True, help="measured offset in mm")
        if action == "protocol":
            q.add_argument("--calibration", type=Path, help="reuse a calibration JSON")
        _common(q, runs=action != "estimate")
        q.set_defaults(func=cmd_load)

    p = sub.add_parser("report", help="re-render figures of a run directory")
    p.add_argument("run_dir", type=Path)
    _common(p, runs=False)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers is None:
            args.workers = default_workers()
        if args.workers < 1:
            parser.error("--workers must be >= 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"vtire: config error: {exc}", file=sys.stderr)
        return 2
    except (VTireError, OSError) as exc:
        print(f"vtire: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
