"""Forecast metrics, reference baselines, the variable-variance study and ablation runs."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .armf import VARIABLES
from .config import VARIANTS, RunConfig
from .geo import CitySet
from .model import InsufficientHistoryError, fitted_variables, forecast_flow
from .training import train


def evaluate(predicted, truth) -> dict[str, float]:
    """MAE and RMSE over all entries."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: predicted {p.shape} vs truth {t.shape}")
    err = p - t
    return {"MAE": float(np.mean(np.abs(err))), "RMSE": float(np.sqrt(np.mean(err * err)))}


def _stack(series) -> np.ndarray:
    return np.asarray(getattr(series, "flows", series), dtype=np.float64)


def baseline_mean(series) -> np.ndarray:
    flows = _stack(series)
    if flows.shape[0] < 1:
        raise InsufficientHistoryError("Mean baseline needs at least 1 step")
    return flows.mean(axis=0)


def baseline_lr(series) -> np.ndarray:
    """Per-pair least-squares line over step index 1..T, evaluated at T + 1."""
    flows = _stack(series)
    T = flows.shape[0]
    if T < 2:
        raise InsufficientHistoryError("LR baseline needs at least 2 steps")
    t = np.arange(1, T + 1, dtype=np.float64)
    tc = t - t.mean()
    y = flows.reshape(T, -1)
    slope = tc @ (y - y.mean(axis=0)) / (tc @ tc)
    pred = y.mean(axis=0) + slope * (T + 1 - t.mean())
    return pred.reshape(flows.shape[1:])


def variance_study(variables) -> dict[str, float]:
    """Average over cities of each variable's population variance across steps."""
    v = np.asarray(variables, dtype=np.float64)
    if v.ndim != 3 or v.shape[0] < 2 or v.shape[2] != 4:
        raise ValueError(f"need (T >= 2, C, 4) variables, got {v.shape}")
    per_city = v.var(axis=0)
    return {name: float(per_city[:, i].mean()) for i, name in enumerate(VARIABLES)}


@dataclass
class AblationResult:
    variant: str
    seed: int
    mae: float
    rmse: float
    final_loss: float

    def rows(self) -> list[tuple[str, str, float]]:
        return [("MAE", self.variant, self.mae), ("RMSE", self.variant, self.rmse)]


def ablation_run(history, truth, cities: CitySet, variant: str, config: RunConfig,
                 seed: int | None = None) -> AblationResult:
    """Train one variant on ``history`` and score its next-step forecast against ``truth``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    cfg = config.replace(variant=variant, seed=config.seed if seed is None else seed)
    result = train(history, cities, cfg)
    metrics = evaluate(forecast_flow(result.state, history), truth)
    return AblationResult(variant, cfg.seed, metrics["MAE"], metrics["RMSE"], result.final_loss)


def contrastive_variance(history, cities: CitySet, config: RunConfig, seed: int | None = None) -> dict[str, dict[str, float]]:
    """Variance study of fitted variables with and without the contrastive terms."""
    out = {}
    for tag, variant in (("DHG-SIL", "full"), ("DHG-SIL-NC", "NC")):
        cfg = config.replace(variant=variant, seed=config.seed if seed is None else seed)
        state = train(history, cities, cfg).state
        out[tag] = variance_study(fitted_variables(state, history))
    return out


def write_metrics(path, rows) -> None:
    """``metric,variant,value`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "variant", "value"])
        for metric, variant, value in rows:
            writer.writerow([metric, variant, repr(float(value))])


def read_metrics(path) -> list[tuple[str, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(r["metric"], r["variant"], float(r["value"])) for r in csv.DictReader(fh)]
