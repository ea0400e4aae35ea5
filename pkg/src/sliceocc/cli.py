"""Command-line entry point.

``python -m sliceocc <command> [--config PATH] [--seed N] [--out DIR] [--set key=value ...]``

Commands: ``gradcheck``, ``overfit``, ``sweep``, ``export``, ``predict``.
Every command writes the resolved configuration next to its outputs, so a run
can be repeated from ``config.txt`` and the seed alone.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .io import export_grid, load_checkpoint, save_checkpoint
from .model import Geometry, SliceOccModel
from .numerics import NonFiniteError, no_grad
from .occupancy_head import VoxelGrid, default_class_names, miou, voxel_accuracy
from .synthscene import FeatureRenderer, SyntheticScene, generate_scene, render_views
from .training import CSV_HEADER, OverfitResult, format_row, overfit

log = logging.getLogger("sliceocc")

SWEEP_AXES = {"slices": ("S",), "resolution": ("W", "L"), "layers": ("layers",),
              "views": ("num_views",)}


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------
@dataclass
class Inputs:
    scene: SyntheticScene
    images: list[np.ndarray]
    geom: Geometry


def build_inputs(rc: RunConfig) -> Inputs:
    cfg = rc.scene_config()
    scene = generate_scene(rc.seed, rc.num_objects, stacking=rc.stacking, cfg=cfg,
                           num_classes=rc.C, num_views=rc.num_views, image_size=rc.image_size)
    return inputs_for_scene(rc, scene)


def inputs_for_scene(rc: RunConfig, scene: SyntheticScene) -> Inputs:
    renderer = FeatureRenderer(rc.renderer, rc.scales)
    return Inputs(scene, render_views(scene, renderer=renderer),
                  Geometry(scene.cfg, scene.cameras))


def _bounds(rc: RunConfig) -> dict:
    return {"x_range": list(rc.x_range), "y_range": list(rc.y_range),
            "z_range": list(rc.z_range)}


def _grid(labels: np.ndarray, C: int) -> VoxelGrid:
    return VoxelGrid(np.asarray(labels, dtype=np.int64), default_class_names(C))


def run_overfit(rc: RunConfig, out_dir=None) -> OverfitResult:
    """Train on one synthetic scene.

    With ``out_dir`` set, writes ``config.txt``, ``metrics.csv``,
    ``summary.json``, ``scene.json``, ``checkpoint.npz`` and the predicted and
    ground-truth grids (``pred.socc``, ``gt.socc`` plus sidecars).
    """
    rc.validate()
    inputs = build_inputs(rc)
    model = SliceOccModel(rc.scene_config(), rc.model_config(), rc.seed)
    csv_lines = [CSV_HEADER]
    result = overfit(model, inputs.images, inputs.geom, inputs.scene.gt, rc.steps, lr=rc.lr,
                     weight_decay=rc.weight_decay, eval_every=rc.eval_every,
                     on_row=lambda row: csv_lines.append(format_row(row)),
                     presence=rc.presence)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg_dict = rc.to_dict()
        rc.save(out / "config.txt")
        (out / "metrics.csv").write_text("\n".join(csv_lines) + "\n")
        summary = {"mIoU": result.miou, "accuracy": result.accuracy, "steps": result.steps,
                   "diagnostics": {k: v for k, v in model.diagnostics.items()
                                   if isinstance(v, (int, float))}}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        inputs.scene.save(out / "scene.json")
        save_checkpoint(out / "checkpoint.npz", model.state_dict(), cfg_dict)
        export_grid(_grid(result.final_labels, rc.C), out / "pred.socc", _bounds(rc), cfg_dict)
        export_grid(_grid(inputs.scene.gt, rc.C), out / "gt.socc", _bounds(rc), cfg_dict)
    return result


def run_sweep(rc: RunConfig, axis: str, values: list[int], out_dir=None) -> list[dict]:
    """One overfit run per value, all sharing ``rc.seed``; returns one row per setting."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    rows = []
    for value in values:
        sub = rc.with_overrides(**{k: int(value) for k in SWEEP_AXES[axis]}).validate()
        sub_dir = None if out_dir is None else Path(out_dir) / f"{axis}_{value}"
        t0 = time.perf_counter()
        res = run_overfit(sub, sub_dir)
        rows.append({"value": int(value), "mIoU": res.miou, "steps": res.steps,
                     "seconds": time.perf_counter() - t0})
        log.info("sweep %s=%s mIoU %.4f", axis, value, res.miou)
    if out_dir is not None:
        lines = [f"{axis},mIoU,steps,wall_seconds"]
        lines += [f"{r['value']},{r['mIoU']!r},{r['steps']},{r['seconds']:.2f}" for r in rows]
        Path(out_dir, "sweep.csv").write_text("\n".join(lines) + "\n")
    return rows


def run_gradcheck(rc: RunConfig, eps_values=(1e-5,), inject_nan: bool = False,
                  full: bool = True) -> dict:
    """Per-op and full-pipeline finite-difference suites; returns a JSON-able report."""
    from .gradcheck_suite import check_ops, check_pipeline, toy_pipeline

    report: dict = {"passed": True, "runs": []}
    if inject_nan:
        f, model = toy_pipeline(rc.seed)
        name, p = next(model.named_parameters())
        p.data = p.data.copy()
        p.data.flat[0] = np.nan
        try:
            f()
        except NonFiniteError as err:
            report.update(passed=False, error={"kind": "non-finite", "op": err.op,
                                               "count": err.count, "parameter": name})
            return report
        report.update(passed=False, error={"kind": "undetected NaN", "parameter": name})
        return report
    # per-op suites use their own step (1e-4); the eps sweep applies to the pipeline
    for r in check_ops(seed=rc.seed):
        report["runs"].append({"suite": r.name, "eps": r.report.eps,
                               "max_rel_err": r.report.max_rel_err,
                               "tol": r.report.tol, "passed": r.passed})
    for eps in eps_values if full else ():
        r = check_pipeline(eps=eps, seed=rc.seed)
        report["runs"].append({"suite": "pipeline", "eps": eps,
                               "max_rel_err": r.report.max_rel_err,
                               "tol": r.report.tol, "passed": r.passed})
    report["passed"] = all(run["passed"] for run in report["runs"])
    return report


def run_predict(checkpoint, scene_path, out_dir=None) -> VoxelGrid:
    state, cfg_dict = load_checkpoint(checkpoint)
    rc = RunConfig.from_dict(cfg_dict).validate()
    cfg = rc.scene_config()
    scene = SyntheticScene.load(scene_path, cfg)
    if len(scene.cameras) != rc.num_views:
        raise ConfigError(f"scene has {len(scene.cameras)} views, checkpoint expects "
                          f"{rc.num_views}")
    inputs = inputs_for_scene(rc, scene)
    model = SliceOccModel(cfg, rc.model_config(), rc.seed)
    model.load_state_dict(state)
    with no_grad():
        probs = model(inputs.images, inputs.geom).data
    grid = _grid(np.argmax(probs, axis=0), rc.C)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        export_grid(grid, out / "pred.socc", _bounds(rc), rc.to_dict())
        _, m = miou(grid.labels(), scene.gt, rc.C)
        metrics = {"mIoU": m, "accuracy": voxel_accuracy(grid.labels(), scene.gt)}
        (out / "predict.json").write_text(json.dumps(metrics, indent=2) + "\n")
    return grid


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------
def _resolve(args) -> RunConfig:
    rc = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key.strip()] = value  # bare strings
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        rc = RunConfig.from_dict({**rc.to_dict(), **overrides})
    return rc.validate()


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (JSON literal value)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sliceocc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    g.add_argument("--eps", type=float, nargs="+", default=[1e-5])
    g.add_argument("--ops-only", action="store_true", help="skip the full-pipeline check")
    g.add_argument("--inject-nan", action="store_true",
                   help="poison one weight to exercise the failure report")
    sub.add_parser("overfit", parents=[common], help="train on one synthetic scene")
    s = sub.add_parser("sweep", parents=[common], help="repeat overfit along one axis")
    s.add_argument("axis", choices=sorted(SWEEP_AXES))
    s.add_argument("values", type=int, nargs="+")
    sub.add_parser("export", parents=[common],
                   help="write the ground-truth grid and scene for the configured seed")
    pr = sub.add_parser("predict", parents=[common], help="run a checkpoint on a saved scene")
    pr.add_argument("checkpoint", type=Path)
    pr.add_argument("scene", type=Path)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        if args.command == "predict":
            out = Path(args.out) if args.out else None
            grid = run_predict(args.checkpoint, args.scene, out)
            print(f"predicted grid {grid.dims}, classes present: "
                  f"{np.unique(grid.labels()).tolist()}")
            return 0
        rc = _resolve(args)
        out = Path(rc.out)
        if args.command == "gradcheck":
            report = run_gradcheck(rc, args.eps, args.inject_nan, full=not args.ops_only)
            out.mkdir(parents=True, exist_ok=True)
            (out / "gradcheck.json").write_text(json.dumps(report, indent=2) + "\n")
            for run in report["runs"]:
                print(f"{'PASS' if run['passed'] else 'FAIL'} {run['suite']:<22} "
                      f"eps={run['eps']:g} max_rel_err={run['max_rel_err']:.3e}")
            if "error" in report:
                print("FAIL " + json.dumps(report["error"]))
            return 0 if report["passed"] else 1
        if args.command == "overfit":
            res = run_overfit(rc, out)
            print(f"mIoU {res.miou:.4f} accuracy {res.accuracy:.4f} steps {res.steps} -> {out}")
            return 0
        if args.command == "sweep":
            rows = run_sweep(rc, args.axis, args.values, out)
            for r in rows:
                print(f"{args.axis}={r['value']} mIoU {r['mIoU']:.4f} ({r['seconds']:.1f}s)")
            return 0
        if args.command == "export":
            inputs = build_inputs(rc)
            out.mkdir(parents=True, exist_ok=True)
            rc.save(out / "config.txt")
            inputs.scene.save(out / "scene.json")
            path = export_grid(_grid(inputs.scene.gt, rc.C), out / "gt.socc", _bounds(rc),
                               rc.to_dict())
            print(f"wrote {path} ({path.stat().st_size} bytes)")
            return 0
    except (ConfigError, ValueError, NonFiniteError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 2  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
