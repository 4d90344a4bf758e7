"""Command line entry point: ``adanas run | evaluate | report``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from pathlib import Path

from adanas.config import ConfigError, ExperimentConfig, load_config, parse_config
from adanas.data import eval_inputs
from adanas.ensemble import Ensemble, ensemble_loss, load_manifest, save_manifest
from adanas.search import SearchError, run

log = logging.getLogger("adanas")


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _score(ens, dataset, augment):
    loss, err = ensemble_loss(ens, eval_inputs(dataset.x_test, augment), dataset.y_test)
    return loss, err


def run_one(cfg: ExperimentConfig, dataset, seed, run_dir: Path, workers=1):
    """One seeded run into ``run_dir``; returns the run summary dict."""
    run_dir.mkdir(parents=True, exist_ok=True)
    _dump(run_dir / "config.json", cfg.raw)
    rc = cfg.run_config(seed)
    started = time.time()
    with open(run_dir / "metrics.log", "w") as fh:
        def sink(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

        result = run(rc, dataset, workers=workers, sink=sink)
        test_loss, test_err = _score(result.ensemble, dataset, cfg.augment)
        train_loss, train_err = ensemble_loss(
            result.ensemble, eval_inputs(dataset.x_train, cfg.augment), dataset.y_train)
        summary = {
            "name": cfg.name,
            "seed": seed,
            "config_hash": cfg.config_hash(),
            "dataset_hash": dataset.digest(),
            "kd_mode": rc.kd.mode.value,
            "weight_mode": rc.weight_mode.value,
            "generator": rc.generator.kind.value,
            "iterations_completed": len(result.reports),
            "stop_reason": result.stop_reason,
            "test_loss": test_loss,
            "test_error": test_err,
            "train_loss": train_loss,
            "train_error": train_err,
            "total_params": result.ensemble.total_params,
            "ensemble": [
                {"arch": str(m.arch), "weight": float(w), "params": m.params.total_count,
                 "checksum_at_selection": c, "checksum": m.checksum()}
                for m, w, c in zip(result.ensemble.members, result.ensemble.weights, result.selection_checksums)
            ],
        }
        sink({"type": "summary", **{k: summary[k] for k in ("test_error", "test_loss", "total_params")}})
    save_manifest(result.ensemble, run_dir, {
        "config_hash": summary["config_hash"], "dataset_hash": summary["dataset_hash"],
        "seed": seed, "test_error": test_err, "test_loss": test_loss,
    })
    _dump(run_dir / "summary.json", summary)
    _dump(run_dir / "timing.json", {"started": started, "wall_time": time.time() - started,
                                    "iterations": [r.wall_time for r in result.reports]})
    return summary


def aggregate(summaries):
    errors = [s["test_error"] for s in summaries]
    out = {
        "name": summaries[0]["name"],
        "config_hash": summaries[0]["config_hash"],
        "dataset_hash": summaries[0]["dataset_hash"],
        "seeds": [s["seed"] for s in summaries],
        "test_errors": errors,
        "mean_test_error": statistics.fmean(errors),
        "total_params": [s["total_params"] for s in summaries],
        "composition": [[(e["arch"], e["weight"]) for e in s["ensemble"]] for s in summaries],
    }
    if len(errors) > 1:
        out["std_test_error"] = statistics.stdev(errors)
    return out


def cmd_run(config_path, output_dir=None, seed=None, workers=None):
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg.seed = seed
        base = Path(config_path).resolve().parent
        for key in ("train_path", "test_path"):
            if cfg.dataset.get(key) is not None:
                cfg.dataset[key] = str(base / cfg.dataset[key])
                cfg.raw["dataset"][key] = cfg.dataset[key]
        dataset = cfg.load_data(base)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    root = Path(output_dir or cfg.output_dir) / cfg.name
    workers = workers or cfg.workers
    summaries = []
    started = time.time()
    for r in range(cfg.repeat):
        s = cfg.seed + r
        try:
            summaries.append(run_one(cfg, dataset, s, root / f"seed_{s}", workers))
        except SearchError as exc:
            print(f"error: run with seed {s} failed: {exc}", file=sys.stderr)
            return 1
        log.info("seed %d: test error %.4f", s, summaries[-1]["test_error"])
    agg = aggregate(summaries)
    _dump(root / "summary.json", agg)
    _dump(root / "timing.json", {"wall_time": time.time() - started})
    std = f" ± {agg['std_test_error']:.4f}" if "std_test_error" in agg else ""
    print(f"{cfg.name}: test error {agg['mean_test_error']:.4f}{std} over {len(summaries)} seed(s) -> {root}")
    return 0


def evaluate_manifest(manifest_path, dataset=None):
    ens, manifest = load_manifest(manifest_path)
    run_dir = Path(manifest_path).parent
    cfg = parse_config(json.loads((run_dir / "config.json").read_text()))
    if dataset is None:
        dataset = cfg.load_data(run_dir)
    x = eval_inputs(dataset.x_test, cfg.augment)
    loss, err = ensemble_loss(ens, x, dataset.y_test)
    members = [ensemble_loss(Ensemble([m], [1.0]), x, dataset.y_test)[1] for m in ens.members]
    return {
        "test_loss": loss,
        "test_error": err,
        "member_errors": members,
        "weights": [float(w) for w in ens.weights],
        "archs": [str(m.arch) for m in ens.members],
    }


def cmd_evaluate(manifest_path, data_config=None):
    try:
        dataset = load_config(data_config).load_data(Path(data_config).parent) if data_config else None
        metrics = evaluate_manifest(manifest_path, dataset)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _dump(Path(manifest_path).parent / "evaluation.json", metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _find_runs(paths):
    runs = []
    for p in map(Path, paths):
        candidates = [p] if (p / "manifest.json").exists() or (p / "metrics.log").exists() else sorted(
            d for d in p.glob("*/") if d.is_dir())
        for d in candidates:
            if (d / "summary.json").exists() and (d / "manifest.json").exists():
                runs.append(d)
            elif (d / "metrics.log").exists() or (d / "config.json").exists():
                log.warning("skipping incomplete run directory %s", d)
    return runs


def build_report(paths, out_dir):
    """Aggregate completed run directories into a table and a depth/width scatter."""
    runs = _find_runs(paths)
    if not runs:
        raise ValueError("no completed run directories found")
    summaries = [json.loads((d / "summary.json").read_text()) for d in runs]
    hashes = {s["dataset_hash"] for s in summaries}
    if len(hashes) > 1:
        raise ValueError("runs were trained on different datasets; refusing to aggregate")
    groups = {}
    for d, s in zip(runs, summaries):
        groups.setdefault(s["config_hash"], []).append((d, s))
    rows = []
    for members in groups.values():
        ss = [s for _, s in members]
        errs = [100 * s["test_error"] for s in ss]
        rows.append({
            "config": ss[0]["name"],
            "kd_mode": ss[0]["kd_mode"],
            "weight_mode": ss[0]["weight_mode"],
            "generator": ss[0]["generator"],
            "seeds": len(ss),
            "mean_error_pct": statistics.fmean(errs),
            "std_error_pct": statistics.stdev(errs) if len(errs) > 1 else None,
            "mean_params": statistics.fmean(s["total_params"] for s in ss),
        })
    rows.sort(key=lambda r: r["config"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    lines = ["| config | KD | weights | generator | seeds | test error (%) | params |",
             "|---|---|---|---|---|---|---|"]
    for r in rows:
        err = f"{r['mean_error_pct']:.2f}"
        if r["std_error_pct"] is not None:
            err += f" ± {r['std_error_pct']:.2f}"
        lines.append(f"| {r['config']} | {r['kd_mode']} | {r['weight_mode']} | {r['generator']} | "
                     f"{r['seeds']} | {err} | {r['mean_params']:.0f} |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    points = _trajectory_points(groups)
    _scatter(points, out / "trajectory.png")
    return rows, points


def _trajectory_points(groups):
    points = []
    for members in groups.values():
        for d, s in members:
            for line in (d / "metrics.log").read_text().splitlines():
                rec = json.loads(line)
                if rec.get("type") == "iteration":
                    depth, width = map(int, rec["selected_arch"].split("@"))
                    points.append({"config": s["name"], "seed": s["seed"], "iteration": rec["iteration"],
                                   "depth": depth, "width": width})
    return points


def _scatter(points, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name in sorted({p["config"] for p in points}):
        pts = [p for p in points if p["config"] == name]
        ax.scatter([p["width"] for p in pts], [p["depth"] for p in pts], label=name, alpha=0.7)
    ax.set_xlabel("width (channels)")
    ax.set_ylabel("depth (cells)")
    ax.set_title("selected subnetworks")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_report(run_dirs, out_dir="report"):
    try:
        rows, _ = build_report(run_dirs, out_dir)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print((Path(out_dir) / "report.md").read_text(), end="")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="adanas", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides config output_dir)")
    p_run.add_argument("--seed", type=int, help="base seed override")
    p_run.add_argument("--workers", type=int, help="threads for candidate training")
    p_eval = sub.add_parser("evaluate", help="re-score a saved ensemble on its test split")
    p_eval.add_argument("manifest")
    p_eval.add_argument("--data-config", help="config whose dataset block to evaluate on instead")
    p_rep = sub.add_parser("report", help="summarize completed runs")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", default="report")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "run":
        return cmd_run(args.config, args.out, args.seed, args.workers)
    if args.cmd == "evaluate":
        return cmd_evaluate(args.manifest, args.data_config)
    return cmd_report(args.run_dirs, args.out)


if __name__ == "__main__":
    sys.exit(main())
