"""Command-line front end tying the pipeline together.

Subcommands: generate, preprocess, fit-rc, train, evaluate,
verify-consistency, ablate, report. All paths are relative to --workdir.
Every command writes its resolved configuration plus a content hash next
to its outputs so a run can be reconstructed from the directory alone.

Exit codes: 0 success, 1 validation or physical-consistency failure,
2 usage errors. ``THERMOSEED_THREADS`` caps numerical thread pools; it is
applied before the numerics load.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CONSISTENCY = 1
EXIT_USAGE = 2


def _apply_thread_cap():
    cap = os.environ.get("THERMOSEED_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _write_config(workdir, command, options):
    from .verify import config_hash

    payload = {"command": command, "options": options, "config_hash": config_hash({"command": command, "options": options})}
    path = workdir / f"{command}.config.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_tables(workdir, step=60):
    from .timeseries import load_csv

    data = workdir / "data"
    zone = load_csv(data / "zone.csv", ["temperature"], step)
    neighbor = load_csv(data / "neighbor.csv", ["temperature_neigh"], step)
    weather = load_csv(data / "weather.csv", ["temperature_out", "irradiation"], step)
    power = load_csv(data / "power.csv", ["power"], step)
    channels = {}
    for table in (zone, neighbor, weather, power):
        if table.start != zone.start or table.length != zone.length:
            raise ValueError("raw CSV files do not share one time grid")
        channels.update(table.channels)
    return type(zone)(zone.start, step, channels)


def _load_grid_and_windows(workdir):
    from .synthbuild import load_scenario
    from .timeseries import Normalizer, load_csv
    from .training import make_windows, split_seasonal

    norm = Normalizer.load(workdir / "normalizer.txt")
    grid = load_csv(
        workdir / "model_grid.csv",
        ["irradiation", "power", "temperature", "temperature_neigh", "temperature_out"],
        step=900,
    )
    scenario = load_scenario(workdir / "scenario.txt")
    windows = make_windows(grid, heating_months=scenario.heating_months)
    train_w, val_w = split_seasonal(windows)
    return norm, grid, scenario, train_w, val_w


def _load_model(path):
    from .nn import LstmForecaster, read_checkpoint
    from .pcnn import PcnnModel

    _, meta = read_checkpoint(path)
    kind = meta.get("kind", "pcnn")
    return PcnnModel.load(path) if kind == "pcnn" else LstmForecaster.load(path)


def cmd_generate(args):
    from .synthbuild import BuildingScenario, load_scenario, make_dataset, save_scenario

    workdir = args.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    scenario = load_scenario(args.scenario) if args.scenario else BuildingScenario(days=args.days)
    make_dataset(scenario, args.seed, workdir / "data")
    save_scenario(scenario, workdir / "scenario.txt")
    _write_config(workdir, "generate", {"seed": args.seed, "days": scenario.days})
    print(f"generated {scenario.days} days of raw data in {workdir / 'data'}")
    return EXIT_OK


def cmd_preprocess(args):
    from .timeseries import Normalizer, preprocess_pipeline, subsample_15min, write_csv

    workdir = args.workdir
    raw = _load_tables(workdir)
    clean = preprocess_pipeline(raw)
    write_csv(clean, workdir / "clean_1min.csv")
    grid = subsample_15min(clean)
    cut = int(args.train_fraction * grid.length)
    head = type(grid)(grid.start, grid.step, {n: v[:cut] for n, v in grid.channels.items()})
    norm = Normalizer(
        shared=("temperature", "temperature_out", "temperature_neigh"),
        zero_channels=("power",),
    ).fit(head)
    norm.save(workdir / "normalizer.txt")
    write_csv(norm.transform(grid), workdir / "model_grid.csv")
    _write_config(workdir, "preprocess", {"train_fraction": args.train_fraction})
    print(f"preprocessed {raw.length} rows -> {grid.length} model-grid rows")
    return EXIT_OK


def cmd_fit_rc(args):
    from .rc import RcModel
    from .timeseries import Normalizer, load_csv

    workdir = args.workdir
    clean = load_csv(
        workdir / "clean_1min.csv",
        ["irradiation", "power", "temperature", "temperature_neigh", "temperature_out"],
        step=60,
    )
    norm = Normalizer.load(workdir / "normalizer.txt")
    model = RcModel(latitude_deg=args.latitude, window_azimuth_deg=args.window_azimuth).fit(clean, normalizer=norm)
    model.params_.save(workdir / "rc_params.txt")
    diag = model.diagnostics_
    (workdir / "rc_diagnostics.json").write_text(
        json.dumps(
            {
                "n_rows": diag.n_rows,
                "condition_number": diag.condition_number,
                "residual_norm": diag.residual_norm,
                "plausible": diag.plausible,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    _write_config(workdir, "fit-rc", {"latitude": args.latitude, "window_azimuth": args.window_azimuth})
    print(f"rc fit over {diag.n_rows} rows, condition number {diag.condition_number:.3g}")
    return EXIT_OK if diag.plausible else EXIT_CONSISTENCY


def cmd_train(args):
    from .nn import LstmRegressor
    from .pcnn import PcnnRegressor

    workdir = args.workdir
    norm, _, _, train_w, val_w = _load_grid_and_windows(workdir)
    widths = dict(
        encoder=tuple(args.encoder),
        lstm_hidden=args.lstm_hidden,
        lstm_layers=args.lstm_layers,
        decoder=tuple(args.decoder),
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    factory = PcnnRegressor if args.model == "pcnn" else LstmRegressor
    reg = factory(**widths).fit(train_w, val_w, norm)
    tag = f"{args.model}_seed{args.seed}"
    reg.model_.save(workdir / f"{tag}.ckpt")
    with open(workdir / f"{tag}_loss_curve.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,lr,train_loss,val_loss\n")
        for epoch, lr, train_loss, val_loss in reg.result_.epochs:
            fh.write(f"{epoch},{lr:.17g},{train_loss:.17g},{val_loss:.17g}\n")
    metrics = {
        "best_epoch": reg.result_.best_epoch,
        "best_val_loss": reg.result_.best_val_loss,
        "final_train_loss": reg.result_.epochs[-1][2],
        "n_train_windows": len(train_w),
        "n_val_windows": len(val_w),
        "condition_violations": [list(f) for f in reg.result_.condition_flags],
    }
    (workdir / f"{tag}_metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    options = dict(widths)
    options["encoder"] = list(options["encoder"])
    options["decoder"] = list(options["decoder"])
    options["model"] = args.model
    _write_config(workdir, f"train_{tag}", options)
    print(f"trained {tag}: best val loss {reg.result_.best_val_loss:.6g} at epoch {reg.result_.best_epoch}")
    return EXIT_OK


def cmd_evaluate(args):
    from .training import evaluate

    workdir = args.workdir
    norm, _, _, _, val_w = _load_grid_and_windows(workdir)
    model = _load_model(args.checkpoint)
    report = evaluate(model, val_w, norm)
    prefix = workdir / (args.checkpoint.stem + "_eval")
    report.save(prefix)
    _write_config(workdir, f"evaluate_{args.checkpoint.stem}", {"checkpoint": str(args.checkpoint)})
    markers = {f"{s / 4:g}h": round(v, 6) for s, v in sorted(report.marker_mae.items())}
    print(f"evaluated {len(val_w)} windows; marker MAE (degC): {markers}")
    return EXIT_OK


def cmd_verify_consistency(args):
    from .verify import check_consistency, write_run_summary

    workdir = args.workdir
    _, _, _, _, val_w = _load_grid_and_windows(workdir)
    model = _load_model(args.checkpoint)
    windows = val_w[:: max(1, len(val_w) // args.windows)][: args.windows]
    report = check_consistency(
        model, windows, pairs_per_window=args.pairs, tolerance=args.tolerance, mode=args.mode, seed=args.seed
    )
    report.save(workdir / (args.checkpoint.stem + "_consistency.csv"))
    write_run_summary(
        workdir / (args.checkpoint.stem + "_consistency.json"),
        run_id=args.checkpoint.stem,
        config={"pairs": args.pairs, "tolerance": args.tolerance, "mode": args.mode, "seed": args.seed},
        metrics={},
        consistency=report.summary(),
    )
    status = "pass" if report.global_pass else "FAIL"
    print(f"consistency {status}: {len(report.records)} checks, {report.n_failed} failed, "
          f"conditions {list(report.condition_violations) or 'ok'}")
    return EXIT_OK if report.global_pass else EXIT_CONSISTENCY


def cmd_ablate(args):
    import numpy as np

    from .rc import RcModel, RcParams
    from .timeseries import Normalizer, load_csv
    from .verify import AblationOrderingError, run_control_ablation

    workdir = args.workdir
    norm, _, scenario, train_w, val_w = _load_grid_and_windows(workdir)
    model = _load_model(args.checkpoint)
    models = {"pcnn" if model.kind == "pcnn" else "lstm": model}
    rc_path = workdir / "rc_params.txt"
    if rc_path.exists():
        clean = load_csv(
            workdir / "clean_1min.csv",
            ["irradiation", "power", "temperature", "temperature_neigh", "temperature_out"],
            step=60,
        )
        rc_model = RcModel(latitude_deg=args.latitude, window_azimuth_deg=args.window_azimuth)
        rc_model.fit(clean, normalizer=norm)
        rc_model.params_ = RcParams.load(rc_path)
        models["rc"] = rc_model
    candidates = [w for w in val_w + train_w if w.season == "heating" and np.abs(w.u).sum() > 0]
    if not candidates:
        print("no powered heating window available", file=sys.stderr)
        return EXIT_CONSISTENCY
    window = candidates[args.window_index % len(candidates)]
    try:
        run = run_control_ablation(models, window)
    except AblationOrderingError as err:
        print(f"ablation ordering violated: {err}", file=sys.stderr)
        return EXIT_CONSISTENCY
    run.save(workdir / "ablation")
    _write_config(workdir, "ablate", {"checkpoint": str(args.checkpoint), "window_index": args.window_index})
    print(f"ablation ok: split at step {run.split_index}, energy balance {run.energy_balance:.3f}")
    return EXIT_OK


def cmd_report(args):
    from .verify import error_propagation

    workdir = args.workdir
    norm, _, _, _, val_w = _load_grid_and_windows(workdir)
    models = {}
    for spec in args.model_checkpoints:
        name, _, path = spec.partition("=")
        if not path:
            raise ValueError(f"--model expects NAME=CHECKPOINT, got {spec!r}")
        models[name] = _load_model(workdir / path if not os.path.isabs(path) else path)
    rc_path = workdir / "rc_params.txt"
    if rc_path.exists():
        from .rc import RcModel, RcParams
        from .timeseries import load_csv

        clean = load_csv(
            workdir / "clean_1min.csv",
            ["irradiation", "power", "temperature", "temperature_neigh", "temperature_out"],
            step=60,
        )
        rc_model = RcModel(latitude_deg=args.latitude, window_azimuth_deg=args.window_azimuth)
        rc_model.fit(clean, normalizer=norm)
        rc_model.params_ = RcParams.load(rc_path)
        models["rc"] = rc_model
    if not models:
        print("nothing to report: no checkpoints given and no rc_params.txt", file=sys.stderr)
        return EXIT_CONSISTENCY
    error_propagation(models, val_w, norm, prefix=str(workdir / "report"))
    _write_config(workdir, "report", {"models": sorted(models)})
    print(f"report written for models {sorted(models)} over {len(val_w)} windows")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="thermoseed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--workdir", type=_path, default=".", help="run directory (default: current)")
        return p

    p = add("generate", cmd_generate, help="simulate a synthetic building and write raw CSVs")
    p.add_argument("--scenario", type=_path, default=None, help="scenario key-value file (default: built-in)")
    p.add_argument("--days", type=int, default=180)
    p.add_argument("--seed", type=int, default=0)

    p = add("preprocess", cmd_preprocess, help="clean the raw data and build the normalized model grid")
    p.add_argument("--train-fraction", type=float, default=0.8)

    p = add("fit-rc", cmd_fit_rc, help="identify the RC baseline by least squares")
    p.add_argument("--latitude", type=float, default=47.4)
    p.add_argument("--window-azimuth", type=float, default=0.0)

    p = add("train", cmd_train, help="train a model on the prepared windows")
    p.add_argument("--model", choices=("pcnn", "lstm"), default="pcnn")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--encoder", type=int, nargs="+", default=[32, 32])
    p.add_argument("--lstm-hidden", type=int, default=64)
    p.add_argument("--lstm-layers", type=int, default=2)
    p.add_argument("--decoder", type=int, nargs="+", default=[32, 32])

    p = add("evaluate", cmd_evaluate, help="error statistics of a checkpoint on the validation windows")
    p.add_argument("--checkpoint", type=_path, required=True)

    p = add("verify-consistency", cmd_verify_consistency, help="check the sensitivity identities of a checkpoint")
    p.add_argument("--checkpoint", type=_path, required=True)
    p.add_argument("--windows", type=int, default=10)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--mode", choices=("exact", "sign"), default="exact")
    p.add_argument("--seed", type=int, default=0)

    p = add("ablate", cmd_ablate, help="run the control-ablation experiment on one heating window")
    p.add_argument("--checkpoint", type=_path, required=True)
    p.add_argument("--window-index", type=int, default=0)
    p.add_argument("--latitude", type=float, default=47.4)
    p.add_argument("--window-azimuth", type=float, default=0.0)

    p = add("report", cmd_report, help="model-vs-model error propagation tables")
    p.add_argument("--model", dest="model_checkpoints", action="append", default=[], metavar="NAME=CKPT")
    p.add_argument("--latitude", type=float, default=47.4)
    p.add_argument("--window-azimuth", type=float, default=0.0)

    return parser


def _path(text):
    from pathlib import Path

    return Path(text)


def main(argv=None):
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONSISTENCY


if __name__ == "__main__":
    sys.exit(main())
