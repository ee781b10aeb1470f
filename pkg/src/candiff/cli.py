"""``candiff`` command line: synthetic data, training, generation, imputation, evaluation.

Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 file/checkpoint problem.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, diffusion, metrics, plotting, scenario, synthtrack
from . import denoiser as dn
from .datamodel import ChannelMask, Dataset, Region, ValidationError, load_dataset, load_lap, save_dataset, save_lap

log = logging.getLogger("candiff")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().generate_state(1)[0])
    return args.seed


def _out_dir(args, default: str, must_be_empty: bool = False) -> Path:
    out = Path(args.out or default)
    if must_be_empty and out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _write_report(args, out: Path, body: dict, name: str = "report.json") -> Path:
    path = Path(args.report) if args.report else out / name
    report = {"version": __version__, "command": args.command, "config": _config_echo(args), **body}
    path.write_text(json.dumps(report, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _vehicle_for(ds: Dataset, vehicle_id: str | None) -> str:
    vid = vehicle_id or sorted(ds.vehicles)[0]
    if vid not in ds.vehicles:
        raise UsageError(f"unknown vehicle {vid!r}; dataset has {sorted(ds.vehicles)}")
    if not ds.laps_for(vid):
        raise UsageError(f"vehicle {vid!r} has no laps in the dataset")
    return vid


def _lap_vehicle(path: Path, ds: Dataset, vehicle_id: str | None) -> str:
    if vehicle_id:
        return _vehicle_for(ds, vehicle_id)
    stem = path.stem
    if stem.startswith("lap_"):
        vid = stem[len("lap_") :].rsplit("_", 1)[0]
        if vid in ds.vehicles:
            return vid
    raise UsageError(f"cannot infer the vehicle of {path.name}; pass --vehicle")


def _load_model(path) -> dn.DenoiserModel:
    return dn.load_model(path)


def _plan_spec(args, default_schedule: str) -> scenario.PlanSpec:
    return scenario.PlanSpec(args.steps, getattr(args, "schedule", None) or default_schedule,
                             getattr(args, "j", 5), getattr(args, "r", 5))


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    seed = _resolve_seed(args)
    out = _out_dir(args, "data", must_be_empty=True)
    cfg = synthtrack.SynthConfig(
        n_vehicles=args.vehicles, total_laps=args.laps, laps_per_vehicle=args.laps_per_vehicle, T=args.length,
        spacing=args.spacing, fault_fraction=args.fault_fraction, fault_gain=args.fault_gain,
        **({"sigmas": tuple(args.sigmas)} if args.sigmas else {}))
    ds = synthtrack.make_dataset(cfg, seed)
    paths = save_dataset(ds, out)
    _write_report(args, out, {"laps": len(ds.laps), "vehicles": sorted(ds.vehicles), "files": [p.name for p in paths]},
                  "synth_report.json")
    print(f"wrote {len(ds.laps)} laps for {len(ds.vehicles)} vehicles to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    ds = load_dataset(args.data)
    out = _out_dir(args, str(Path(args.data) / "model"))
    mcfg = dn.ModelConfig(residual_blocks=args.blocks, channels=args.channels, mixer=args.mixer)
    tcfg = dn.TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, momentum=args.momentum, N=args.steps,
                          stride=args.stride, seed=seed, loss_reduction=args.loss_reduction,
                          grad_clip=args.grad_clip or None)
    model, curve = dn.train(ds, tcfg, mcfg)
    ckpt = out / "model.ckpt"
    dn.save_model(model, ckpt, {"train": tcfg.to_dict()})
    _write_csv(out / "curve.csv", ["epoch", "loss"], [(i, float(v)) for i, v in enumerate(curve)])
    fig = plotting.plot_loss_curve(curve, out / "curve.png")
    _write_report(args, out, {"model": asdict(mcfg), "train": tcfg.to_dict(), "schedule": model.schedule.to_dict(),
                              "curve": curve, "final_loss": curve[-1], "checkpoint": ckpt.name, "figure": fig.name})
    print(f"final loss {curve[-1]:.5f}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_gen_lap(args) -> int:
    seed = _resolve_seed(args)
    model = _load_model(args.model)
    ds = load_dataset(args.data)
    out = _out_dir(args, "generated")
    vid = _vehicle_for(ds, args.vehicle)
    rng = np.random.default_rng(seed)
    refs = ds.laps_for(vid)
    seed_lap = refs[int(rng.integers(len(refs)))]
    gcfg = scenario.GenerationConfig(args.candidates, _plan_spec(args, diffusion.STRIDED), seed)
    env = metrics.build_envelope(ds.laps, vid)
    lap, rep = scenario.generate_lap(model, seed_lap, ds.vehicles[vid], ds.track, gcfg, env)
    path = out / f"generated_{vid}.csv"
    save_lap(lap, path)
    fig = plotting.plot_lap(lap, out / f"generated_{vid}.png", env, f"generated lap, vehicle {vid}")
    _write_report(args, out, {**rep, "vehicle": vid, "lap": path.name, "figure": fig.name})
    m = rep["metrics"]
    print(f"lap {path}: mse_acc {m['mse_acc']}, signs {m['signs_score']}, mse_acc95 {m['mse_acc95']}")
    return EXIT_OK


def cmd_gen_window(args) -> int:
    seed = _resolve_seed(args)
    model = _load_model(args.model)
    ds = load_dataset(args.data)
    out = _out_dir(args, "windows")
    gcfg = scenario.GenerationConfig(args.candidates, _plan_spec(args, diffusion.STRIDED), seed)
    res = scenario.generate_windows(model, ds, gcfg, max_windows=args.max_windows)
    rows = []
    for k, ((li, s), g) in enumerate(zip(res.starts, res.generated)):
        for t, x in enumerate(g):
            rows.append((k, li, s, t, *map(float, x)))
    _write_csv(out / "windows.csv", ["window", "lap", "start", "t", "speed", "torque_left", "torque_right", "swa"], rows)
    summary = res.summary()
    _write_report(args, out, {**summary, "scores": res.scores})
    print(json.dumps(summary))
    return EXIT_OK


def _load_regions(path) -> list[Region]:
    data = json.loads(Path(path).read_text())
    items = data["regions"] if isinstance(data, dict) else data
    return [Region(int(a), int(b)) for a, b in items]


def cmd_impute(args) -> int:
    seed = _resolve_seed(args)
    model = _load_model(args.model)
    ds = load_dataset(args.data)
    out = _out_dir(args, "imputed")
    lap_path = Path(args.lap)
    vid = _lap_vehicle(lap_path, ds, args.vehicle)
    lap = load_lap(lap_path, vid, ds.track.spacing, len(ds.track))
    veh = ds.vehicles[vid]
    icfg = scenario.ImputationConfig(candidates=args.candidates, channels=ChannelMask.parse(args.channels),
                                     plan=_plan_spec(args, diffusion.NAIVE), seed=seed)
    icfg.plan.build(model.schedule.N)  # reject invalid schedule combinations before any work
    skipped: list[Region] = []
    if args.regions:
        regions = _load_regions(args.regions)
    else:
        # detected regions without a full past half of context cannot be imputed
        h = model.config.w // 2
        found = scenario.find_implausible_regions(lap, veh, ds.track, icfg)
        regions = [r for r in found if r.start >= h]
        skipped = [r for r in found if r.start < h]
        for r in skipped:
            log.warning("skipping detected region [%d, %d): starts within the first %d samples", r.start, r.end, h)
    new, rep = scenario.impute_lap(model, lap, regions, veh, ds.track, icfg)
    path = out / f"imputed_{lap_path.stem}.csv"
    save_lap(new, path)
    (out / "imputed_regions.json").write_text(json.dumps(
        {"regions": rep["regions"], "channels": args.channels}, indent=2) + "\n")
    _write_report(args, out, {**rep, "vehicle": vid, "lap": path.name, "regions_detected": args.regions is None,
                              "skipped_regions": [[r.start, r.end] for r in skipped]})
    print(f"imputed {len(regions)} regions: mse_acc {rep['mse_acc_before']} -> {rep['mse_acc_after']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    out = _out_dir(args, "eval")
    lap_path = Path(args.lap)
    vid = _lap_vehicle(lap_path, ds, args.vehicle)
    lap = load_lap(lap_path, vid, ds.track.spacing, len(ds.track))
    env = metrics.build_envelope(ds.laps, vid)
    m = scenario.lap_metrics(lap, ds.vehicles[vid], ds.track, env)
    fig = plotting.plot_lap(lap, out / f"eval_{lap_path.stem}.png", env, f"{lap_path.name}, vehicle {vid}")
    _write_report(args, out, {**m, "metric_config": metrics.DEFAULT_CONFIG.to_dict(), "vehicle": vid,
                              "figure": fig.name})
    print(json.dumps({k: m[k] for k in ("mse_acc", "mse_acc95", "signs_score", "tam_speed", "tam_swa")}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    seed = _resolve_seed(args)
    model = _load_model(args.model)
    ds = load_dataset(args.data)
    out = _out_dir(args, "ablation")
    rows = []
    for k in args.steps_list:
        gcfg = scenario.GenerationConfig(args.candidates, scenario.PlanSpec(k, diffusion.STRIDED), seed)
        s = scenario.generate_windows(model, ds, gcfg, max_windows=args.max_windows).summary()
        if s["mse_acc95"] is None:
            raise UsageError(f"only {s['windows']} windows; MSE_acc95 needs at least 20")
        rows.append((k, s["mse_acc95"], s["mse_speed"], s["mse_swa"]))
        log.info("steps %d: %s", k, s)
    _write_csv(out / "ablation.csv", ["steps", "mse_acc95", "mse_speed", "mse_swa"], rows)
    fig = plotting.plot_ablation([r[0] for r in rows], [r[1] for r in rows], out / "ablation.png")
    _write_report(args, out, {"rows": [dict(zip(("steps", "mse_acc95", "mse_speed", "mse_swa"), r)) for r in rows],
                              "figure": fig.name})
    for r in rows:
        print(",".join(map(str, r)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("step counts must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (a fresh one is drawn and recorded if omitted)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--report", default=None, help="report JSON path (default: inside --out)")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
    common.add_argument("--threads", type=int, default=None, help="cap on torch worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="candiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--vehicles", type=int, default=8)
    s.add_argument("--laps", type=int, default=66, help="total laps, spread evenly over vehicles")
    s.add_argument("--laps-per-vehicle", type=int, default=None)
    s.add_argument("--length", type=int, default=12554, help="samples per lap")
    s.add_argument("--spacing", type=float, default=0.5)
    s.add_argument("--sigmas", type=float, nargs=4, default=None, metavar=("SPEED", "TQ_L", "TQ_R", "SWA"))
    s.add_argument("--fault-fraction", type=float, default=0.0)
    s.add_argument("--fault-gain", type=float, default=1.5)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="train a denoiser")
    t.add_argument("data")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--lr", type=float, default=4e-4)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--steps", type=int, default=500, help="diffusion chain length N")
    t.add_argument("--stride", type=int, default=256, help="training window stride")
    t.add_argument("--channels", type=int, default=64)
    t.add_argument("--blocks", type=int, default=4)
    t.add_argument("--mixer", choices=dn.MIXERS, default="longconv")
    t.add_argument("--loss-reduction", choices=("norm", "mean"), default="norm")
    t.add_argument("--grad-clip", type=float, default=100.0, help="0 disables")
    t.set_defaults(func=cmd_train)

    def sampling(sp, candidates: int, schedules: Sequence[str] | None = None):
        sp.add_argument("--model", required=True)
        sp.add_argument("data")
        sp.add_argument("--candidates", type=int, default=candidates)
        sp.add_argument("--steps", type=int, default=500, help="reverse steps K")
        if schedules:
            sp.add_argument("--schedule", choices=schedules, default=schedules[0])
            sp.add_argument("--j", type=int, default=5)
            sp.add_argument("--r", type=int, default=5)

    g = sub.add_parser("gen-lap", parents=[common], help="generate a full lap")
    sampling(g, 16)
    g.add_argument("--vehicle", default=None)
    g.set_defaults(func=cmd_gen_lap)

    gw = sub.add_parser("gen-window", parents=[common], help="predict next windows of the dataset")
    sampling(gw, 1)
    gw.add_argument("--max-windows", type=int, default=None)
    gw.set_defaults(func=cmd_gen_window)

    im = sub.add_parser("impute", parents=[common], help="impute implausible regions of a lap")
    sampling(im, 16, (diffusion.NAIVE, diffusion.REPAINT))
    im.add_argument("lap")
    im.add_argument("--channels", choices=("all", "torques"), default="all")
    im.add_argument("--regions", default=None, help="JSON list of [start, end) pairs; detected if omitted")
    im.add_argument("--vehicle", default=None)
    im.set_defaults(func=cmd_impute)

    e = sub.add_parser("eval", parents=[common], help="metrics of a lap against the dataset")
    e.add_argument("lap")
    e.add_argument("data")
    e.add_argument("--vehicle", default=None)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common], help="sweep the number of reverse steps")
    a.add_argument("--model", required=True)
    a.add_argument("data")
    a.add_argument("--steps-list", type=_int_list, default=[2, 4, 8, 16])
    a.add_argument("--candidates", type=int, default=1)
    a.add_argument("--max-windows", type=int, default=None)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        import torch

        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except dn.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, diffusion.NumericalError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, UsageError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
