"""Command-line entry point: ``dhgsil <command> [options]``.

Exit codes: 0 success, 2 usage, 3 missing file, 4 unparseable input,
5 invalid configuration, 6 training diverged.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import armf, checkpoint, evaluation, flowdata
from .config import VARIANTS, ConfigError, RunConfig
from .flowdata import FlowDataError, FlowSeries
from .geo import CityError, CoordinateError, CitySet, distance_matrix
from .diffcore import ShapeError
from .model import InsufficientHistoryError, fitted_variables, predict_variables_and_flow
from .training import DivergenceError, train

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_PARSE, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3, 4, 5, 6

log = logging.getLogger("dhgsil")


class MissingFileError(FileNotFoundError):
    pass


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not str(path) or not p.is_file():
        raise MissingFileError(f"{what} not found: {path or '(not set)'}")
    return p


def _load_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        overrides["variant"] = args.variant
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    for name in ("cities", "flows"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    if args.config:
        return RunConfig.load(_require(args.config, "config file"), **overrides)
    return RunConfig.from_mapping(overrides)


def _load_data(config: RunConfig) -> tuple[CitySet, FlowSeries]:
    cities = CitySet.from_csv(_require(config.cities, "cities file"))
    flows = flowdata.load_flows(_require(config.flows, "flows file"), cities, config.normalization)
    return cities, flows


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _next_label(label: str) -> str:
    return flowdata.month_labels(label, 2)[1]


def _write_matrix_csv(path: Path, label: str, matrix: np.ndarray) -> None:
    FlowSeries((label,), matrix[None]).to_csv(path)


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    """Synthetic cities, a T-step history, the held-out next step and ground-truth variables."""
    cfg = flowdata.preset(args.preset, n_steps=args.steps + 1, noise=args.noise, drift=args.drift,
                          seed=0 if args.seed is None else args.seed)
    cities, series, truth = flowdata.synthesize(cfg)
    scale = series.flows[:-1].max()
    flows = series.flows / scale
    # rescaling both intensities by sqrt(scale) keeps armf_flow(truth) equal to the flows
    truth = truth.copy()
    truth[..., [armf.ALPHA_DELTA, armf.ALPHA_MU]] /= np.sqrt(scale)
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    cities.to_csv(out / "cities.csv")
    FlowSeries(series.steps[:-1], flows[:-1]).to_csv(out / "flows.csv")
    FlowSeries(series.steps[-1:], flows[-1:]).to_csv(out / "next.csv")
    armf.write_variables_csv(out / "truth.csv", truth, series.steps)
    print(f"wrote {len(cities)} cities, {args.steps} steps to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    cities, flows = _load_data(config)
    result = train(flows, cities, config)
    out = _out_dir(config)
    checkpoint.save_checkpoint(result.state, out / "model.ckpt")
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "reconstruction", "cross_city", "cross_time", "total"])
        for epoch, rec in enumerate(result.history):
            writer.writerow([epoch] + [repr(rec[k]) for k in ("reconstruction", "cross_city", "cross_time", "total")])
    armf.write_variables_csv(out / "variables.csv", fitted_variables(result.state, flows), flows.steps)
    print(f"trained {len(result.history)} epochs, final loss {result.final_loss:.6g}; wrote {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    state = checkpoint.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    flows = flowdata.load_flows(_require(args.flows, "flows file"), state.cities, state.config.normalization)
    window = flows.flows[-state.config.window:]
    if window.shape[0] < state.config.window:
        raise FlowDataError(f"need at least {state.config.window} steps to predict, got {flows.n_steps}")
    variables, pred = predict_variables_and_flow(state, window)
    out = Path(args.out or state.config.out)
    out.mkdir(parents=True, exist_ok=True)
    label = _next_label(flows.steps[-1])
    _write_matrix_csv(out / "prediction.csv", label, pred)
    armf.write_variables_csv(out / "predicted_variables.csv", variables[None], [label])
    print(f"wrote prediction for {label} to {out / 'prediction.csv'}")
    return EXIT_OK


def _matrices_by_step(path: Path) -> dict[str, dict[tuple[int, int], float]]:
    cells: dict[str, dict[tuple[int, int], float]] = {}
    for rec in flowdata.read_flow_records(path):
        cells.setdefault(rec.step, {})[(rec.source, rec.target)] = rec.count
    return cells


def cmd_eval(args) -> int:
    pred = _matrices_by_step(_require(args.prediction, "prediction file"))
    truth = _matrices_by_step(_require(args.truth, "truth file"))
    missing = sorted(set(pred) - set(truth))
    if missing:
        raise FlowDataError(f"truth has no step {missing[0]}")
    p, t = [], []
    for step, cells in sorted(pred.items()):
        for key, value in sorted(cells.items()):
            if key not in truth[step]:
                raise FlowDataError(f"truth has no entry {step} {key[0]}->{key[1]}")
            p.append(value)
            t.append(truth[step][key])
    metrics = evaluation.evaluate(np.array(p), np.array(t))
    rows = [(name, args.label, value) for name, value in metrics.items()]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        evaluation.write_metrics(Path(args.out) / "metrics.csv", rows)
    for name, value in metrics.items():
        print(f"{name} {value:.6g}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    """Train every variant on all but the last step and score the last step."""
    config = _load_config(args)
    cities, flows = _load_data(config)
    if flows.n_steps <= config.window + 1:
        raise FlowDataError(f"ablation needs more than {config.window + 1} steps")
    history, truth = flows.window(0, flows.n_steps - 1), flows.flows[-1]
    rows = []
    variants = [args.variant] if args.variant else list(VARIANTS)
    for variant in variants:
        res = evaluation.ablation_run(history, truth, cities, variant, config)
        rows.extend(res.rows())
        print(f"{variant:8s} MAE {res.mae:.6g} RMSE {res.rmse:.6g}")
    rows.append(("MAE", "Mean", evaluation.evaluate(evaluation.baseline_mean(history), truth)["MAE"]))
    rows.append(("MAE", "LR", evaluation.evaluate(evaluation.baseline_lr(history), truth)["MAE"]))
    evaluation.write_metrics(_out_dir(config) / "ablation.csv", rows)
    return EXIT_OK


def cmd_explore(args) -> int:
    config = _load_config(args)
    cities, flows = _load_data(config)
    stats = flowdata.exploration_stats(flows, distance_matrix(cities))
    print(f"intention_distance_corr {stats['intention_distance_corr']:.6g}")
    print(f"inflow_outflow_corr {stats['inflow_outflow_corr']:.6g}")
    out = _out_dir(config)
    _write_exploration(out / "exploration.csv", cities, stats)
    return EXIT_OK


def _write_exploration(path: Path, cities: CitySet, stats: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["city_id", "name", "inflow", "outflow"])
        for i, name in enumerate(cities.names):
            writer.writerow([i, name, repr(float(stats["inflow"][i])), repr(float(stats["outflow"][i]))])


def cmd_export_figures(args) -> int:
    """Flat CSV data behind the exploration, variable-map, variance and threshold-sweep plots."""
    state = checkpoint.load_checkpoint(_require(args.checkpoint, "checkpoint"))
    config = state.config
    flows = flowdata.load_flows(_require(args.flows or "", "flows file (--flows)"), state.cities, config.normalization)
    out = Path(args.out or config.out)
    out.mkdir(parents=True, exist_ok=True)

    stats = flowdata.exploration_stats(flows, distance_matrix(state.cities))
    _write_exploration(out / "exploration.csv", state.cities, stats)
    variables = fitted_variables(state, flows)
    armf.write_variables_csv(out / "variable_maps.csv", variables, flows.steps)
    with open(out / "variable_maps_coords.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["city_id", "name", "lat", "lon"])
        for i, name in enumerate(state.cities.names):
            writer.writerow([i, name, repr(float(state.cities.lat[i])), repr(float(state.cities.lon[i]))])
    rows = [(k, "DHG-SIL", v) for k, v in evaluation.variance_study(variables).items()]

    if args.variance:
        for tag, study in evaluation.contrastive_variance(flows, state.cities, config).items():
            rows = [r for r in rows if r[1] != tag] + [(k, tag, v) for k, v in study.items()]
    evaluation.write_metrics(out / "variance.csv", rows)

    if args.sweep:
        eps = [float(e) for e in args.sweep.split(",")]
        history, truth = flows.window(0, flows.n_steps - 1), flows.flows[-1]
        sweep = []
        for e in eps:
            res = evaluation.ablation_run(history, truth, state.cities, "full", config.replace(epsilon_km=e))
            sweep.append(("MAE", f"eps={e:g}", res.mae))
            print(f"epsilon {e:g} km MAE {res.mae:.6g}")
        evaluation.write_metrics(out / "epsilon_sweep.csv", sweep)
    print(f"wrote figure data to {out}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhgsil", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--cities", help="cities CSV (overrides config)")
        p.add_argument("--flows", help="flows CSV (overrides config)")
        if variant:
            p.add_argument("--variant", choices=VARIANTS)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--preset", choices=sorted(flowdata.PRESETS), default="bth")
    p.add_argument("--steps", type=int, default=24, help="history length (one extra step is held out)")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--drift", type=float, default=0.3)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: data)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast the step after a flow series")
    p.add_argument("checkpoint")
    p.add_argument("--flows", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="MAE and RMSE between two flow CSVs")
    p.add_argument("prediction")
    p.add_argument("truth")
    p.add_argument("--label", default="model", help="variant column in metrics.csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train each variant and score the last step")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("explore", help="exploration correlations and per-city totals")
    common(p, variant=False)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("export-figures", help="write plot data as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--flows")
    p.add_argument("--out")
    p.add_argument("--variance", action="store_true", help="retrain with and without contrastive terms")
    p.add_argument("--sweep", metavar="EPS", help="comma-separated epsilon_km values to retrain and score")
    p.set_defaults(func=cmd_export_figures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except MissingFileError as exc:
        code, msg = EXIT_MISSING, str(exc)
    except FileNotFoundError as exc:
        code, msg = EXIT_MISSING, f"file not found: {exc.filename}"
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except (FlowDataError, CityError, CoordinateError, checkpoint.CheckpointError, ShapeError,
            InsufficientHistoryError, UnicodeDecodeError) as exc:
        code, msg = EXIT_PARSE, f"parse error: {exc}"
    except DivergenceError as exc:
        code, msg = EXIT_DIVERGED, f"training diverged: {exc}"
    print(f"dhgsil: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
