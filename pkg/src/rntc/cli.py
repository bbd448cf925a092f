"""Command-line entry point: rntc {gen-data,train,eval-model,hj-solve,benchmark,report}."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from rntc.config import RunConfig
from rntc.errors import ConfigError, DatasetError, RntcError

log = logging.getLogger("rntc")


def _config(args, **overrides) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    flags = {"scale": getattr(args, "scale", None), "seed": getattr(args, "seed", None),
             "workers": getattr(args, "workers", None)}
    flags.update(overrides)
    return cfg.override(**flags)


def _parent_ok(path) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise DatasetError(f"output directory {p.parent} does not exist")
    return p


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    from rntc.dataset import Dataset, generate_dataset, write_dataset

    cfg = _config(args)
    dc = cfg.data_config()
    out = _parent_ok(args.out)

    def progress(done, total, dropped):
        if done == total or done % 10 == 0:
            print(f"labeled {done}/{total} (dropped {dropped})", file=sys.stderr)

    pairs, dropped = generate_dataset(dc, args.count, cfg.n_workers, progress)
    try:
        write_dataset(out, Dataset(dc.geometry(), pairs, dc.hash()))
    except OSError as e:
        raise DatasetError(f"cannot write {out}: {e}") from e
    cfg.echo(out)
    print(f"wrote {len(pairs)} pairs to {out}; dropped {dropped} non-converged scenarios")
    return 0


def cmd_train(args) -> int:
    from rntc.dataset import read_dataset
    from rntc.neural.checkpoint import save_checkpoint
    from rntc.neural.train import config_dict, train, write_history
    from rntc.scales import get_scale

    cfg = _config(args, **{"train.epochs": args.epochs})
    data = read_dataset(args.data)
    if not data.geometry.matches(cfg.data_config().geometry()):
        raise ConfigError(f"dataset geometry {data.geometry} does not match configuration "
                          f"(scale={cfg.scale})")
    scale = get_scale(cfg.scale)
    tc = cfg.train_config(args.mode)
    train_pairs, val_pairs = data.split()
    if not train_pairs:
        raise DatasetError("dataset has no training pairs")
    out = _parent_ok(args.out)

    def on_epoch(row):
        print(f"epoch {row['epoch']:3d} loss {row['train_loss']:.5f} "
              f"val_iou {row['val_iou']:.4f}", file=sys.stderr)

    res = train(train_pairs, val_pairs, scale.grid, scale.hyper_spec(), scale.main_spec(args.mode),
                tc, on_epoch, checkpoint_path=str(out) + ".nan")
    save_checkpoint(out, res.net, res.main_spec, tc, res.history,
                    {"config_hash": cfg.hash(), "history": res.history,
                     "train_config": config_dict(tc)})
    write_history(str(out) + ".history.csv", res.history, cfg.hash())
    cfg.echo(out)
    last = res.history[-1]
    print(f"wrote {out}; final train loss {last['train_loss']:.6f}, val IoU {last['val_iou']:.4f}")
    return 0


def cmd_eval_model(args) -> int:
    from rntc.dataset import read_dataset
    from rntc.neural.checkpoint import load_checkpoint
    from rntc.neural.train import TrainingArrays, evaluate
    from rntc.scales import get_scale

    ckpt = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    if ckpt.net.spec.in_size != data.geometry.sdf_size:
        raise ConfigError("checkpoint input size does not match the dataset SDF size")
    grid = get_scale(data.geometry.scale).grid
    gamma = float((ckpt.meta.get("train_config") or {}).get("gamma", 0.1))
    arrays = TrainingArrays(data.pairs, grid)
    ev = evaluate(ckpt.net, ckpt.main_spec, arrays, gamma)
    out = _parent_ok(args.out)
    chash = ckpt.meta.get("config_hash", "")
    with open(out, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n# mode={ckpt.mode}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", "iou", "cme_loss", "dominance_violations"])
        for p, i, l, v in zip(data.pairs, ev["iou"], ev["loss"], ev["violations"]):
            w.writerow([p.scenario_id, f"{i:.6f}", f"{l:.6f}", int(v)])
    print(f"mode={ckpt.mode} pairs={len(data.pairs)}")
    print(f"iou {ev['iou'].mean():.4f} +- {ev['iou'].std():.4f}")
    print(f"cme_loss {ev['loss'].mean():.6f} +- {ev['loss'].std():.6f}")
    print(f"dominance_violations total {int(ev['violations'].sum())}")
    return 0


def _load_scenario_json(path) -> tuple[list, float]:
    from rntc.geometry import Obstacle

    try:
        spec = json.loads(Path(path).read_text())
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed scenario JSON: {e}") from None
    try:
        obs = [Obstacle(tuple(o["center"]), float(o["radius"]), tuple(o.get("velocity", (0, 0))))
               for o in spec.get("obstacles", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad obstacle entry: {e}") from None
    return obs, float(spec.get("horizon", 8.0))


def cmd_hj_solve(args) -> int:
    from rntc.geometry import make_snapshot
    from rntc.hj import failure_from_snapshot, solve_brt
    from rntc.scales import get_scale

    cfg = _config(args)
    dc = cfg.data_config()
    obstacles, horizon = _load_scenario_json(args.scenario_json)
    grid = get_scale(cfg.scale).grid
    snap = make_snapshot(obstacles, size=dc.window_size)
    fn = failure_from_snapshot(snap, grid, dc.inflation)
    res = solve_brt(fn, grid, horizon, dc.tol, band=dc.band)
    out = _parent_ok(args.out)
    V = res.value.values.astype("<f4")
    with open(out, "wb") as fh:
        np.save(fh, V, allow_pickle=False)
    summary = {"shape": list(V.shape), "min": float(V.min()), "max": float(V.max()),
               "safe_fraction": float(np.mean(V >= 0)), "converged": res.converged,
               "change": res.change, "steps": res.steps, "config_hash": cfg.hash()}
    Path(str(out) + ".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"V min {summary['min']:.4f} max {summary['max']:.4f} "
          f"safe fraction {summary['safe_fraction']:.4f} converged {res.converged}")
    if not res.converged:
        print(f"warning: not converged (change {res.change:.3g} >= tol {dc.tol})", file=sys.stderr)
    return 0


def cmd_benchmark(args) -> int:
    from rntc.simulation import make_scenarios, run_benchmark, scenario_hash, write_results

    cfg = _config(args, **{"benchmark.modes": args.modes, "benchmark.horizons": args.horizons,
                           "benchmark.scenarios": args.scenarios,
                           "benchmark.scenario_seed": args.scenario_seed})
    modes, horizons = cfg.bench("modes"), cfg.bench("horizons")
    bad = [m for m in modes if m not in ("rntc", "sdf", "dcbf", "none")]
    if bad:
        raise ConfigError(f"unknown modes {bad}")
    ckpt = None
    if "rntc" in modes:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for rntc mode")
        from rntc.neural.checkpoint import load_checkpoint
        ckpt = load_checkpoint(args.checkpoint)
    scenarios = make_scenarios(cfg.bench("scenario_seed"), cfg.bench("scenarios"))

    def progress(r):
        tag = "success" if r.success else "collision" if r.collision else "timeout"
        print(f"{r.mode} N={r.N} scenario {r.scenario_id}: {tag}", file=sys.stderr)

    results = run_benchmark(scenarios, modes, horizons, ckpt, workers=cfg.n_workers,
                            checkpoint_path=args.checkpoint, mpc_kw=cfg.mpc_kwargs(),
                            progress=progress)
    out = Path(args.out_dir)
    try:
        paths = write_results(out, results, scenario_hash(scenarios), cfg.hash())
    except OSError as e:
        raise DatasetError(f"cannot write results to {out}: {e}") from e
    cfg.echo(out / "benchmark")
    from rntc.simulation import summarize
    for row in summarize(results):
        print(f"{row['mode']:5s} N={row['N']:2d} success {row['success_rate']:.2f} "
              f"opt {row['opt_time_mean_ms']:.1f} ms travel {row['travel_time_mean_s']:.1f} s")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


REPORT_INPUTS = ("success_vs_N.csv", "opt_time_vs_N.csv", "travel_time_vs_N.csv", "pareto.csv")


def cmd_report(args) -> int:
    from rntc.plots import line_plot, scatter_plot
    from rntc.simulation import read_results

    d = Path(args.in_dir)
    missing = [n for n in REPORT_INPUTS if not (d / n).is_file()]
    if missing:
        raise DatasetError(f"missing inputs in {d}: {', '.join(missing)}")
    tables = {n: read_results(d / n) for n in REPORT_INPUTS}

    def series(rows, col):
        out: dict = {}
        for r in rows:
            out.setdefault(r["mode"], ([], []))
            out[r["mode"]][0].append(float(r["N"]))
            out[r["mode"]][1].append(float(r[col]) if r[col] not in ("", "nan") else float("nan"))
        return out

    figures = {
        "success_rate.svg": line_plot(series(tables["success_vs_N.csv"], "success_rate"),
                                      "Success rate", "horizon N", "success rate"),
        "opt_time.svg": line_plot(series(tables["opt_time_vs_N.csv"], "opt_time_mean_ms"),
                                  "Mean optimization time", "horizon N", "ms"),
        "travel_time.svg": line_plot(series(tables["travel_time_vs_N.csv"], "travel_time_mean_s"),
                                     "Mean travel time", "horizon N", "s"),
        "pareto.svg": scatter_plot([(r["mode"], float(r["travel_time_mean_s"] or "nan"),
                                     float(r["success_rate"])) for r in tables["pareto.csv"]],
                                   "Success vs travel time", "travel time [s]", "success rate"),
    }
    lines = ["mode,N,success_rate,opt_time_mean_ms,travel_time_mean_s"]
    for s, o, t in zip(tables["success_vs_N.csv"], tables["opt_time_vs_N.csv"],
                       tables["travel_time_vs_N.csv"]):
        lines.append(f"{s['mode']},{s['N']},{s['success_rate']},{o['opt_time_mean_ms']},"
                     f"{t['travel_time_mean_s']}")
    summary = "\n".join(lines) + "\n"
    print(summary, end="")
    if not args.no_svg:
        out = Path(args.out_dir) if args.out_dir else d
        out.mkdir(parents=True, exist_ok=True)
        for name, svg in figures.items():
            (out / name).write_text(svg)
        (out / "summary.csv").write_text(summary)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rntc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=False):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--scale", choices=("desk", "paper"))
        sp.add_argument("--seed", type=int)
        if workers:
            sp.add_argument("--workers", type=int,
                            help="parallel processes (default: CPU count; 1 is the reference)")

    sp = sub.add_parser("gen-data", help="sample scenarios and label them with HJ values")
    common(sp, workers=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the hypernetwork")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=("rntc", "ntc"), default="rntc")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval-model", help="per-pair IoU, loss and dominance violations")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval_model)

    sp = sub.add_parser("hj-solve", help="ground-truth value function for one scenario")
    common(sp)
    sp.add_argument("--scenario-json", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_hj_solve)

    sp = sub.add_parser("benchmark", help="closed-loop corridor benchmark")
    common(sp, workers=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--modes")
    sp.add_argument("--horizons")
    sp.add_argument("--scenarios", type=int)
    sp.add_argument("--scenario-seed", type=int)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("report", help="summary table and SVG figures from benchmark CSVs")
    sp.add_argument("--in-dir", required=True)
    sp.add_argument("--out-dir")
    sp.add_argument("--no-svg", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RntcError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
