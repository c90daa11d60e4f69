"""Full objective and the full-batch Adam training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .config import RunConfig
from .diffcore import Tensor
from .geo import CitySet
from .losses import LossBreakdown, contrastive_terms, flow_error
from .model import (InsufficientHistoryError, ModelState, Prepared, forecast_variables,
                    prepare, static_forward)
from . import armf

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def total_loss(params: Mapping[str, Tensor], prep: Prepared, config: RunConfig) -> LossBreakdown:
    """Static reconstruction over all steps, one-step-ahead forecast error for
    every step with a full prior window, plus both contrastive sums."""
    n_steps = prep.flows.shape[0]
    if n_steps < 1:
        raise InsufficientHistoryError("need at least one step")
    squared = config.norm == "squared"
    fwd = static_forward(params, prep, config)
    recon = flow_error(fwd.static_flows, prep.flows, squared)
    targets = np.arange(config.window, n_steps)
    if targets.size and config.forecast_weight > 0:
        pred = armf.armf_flow(forecast_variables(fwd, params, prep, config, targets), prep.dist)
        recon = recon + config.forecast_weight * flow_error(pred, prep.flows[targets], squared)
    city, time = contrastive_terms(prep.flows, fwd.variables, config)
    return LossBreakdown(recon, city, time)


@dataclass
class TrainResult:
    state: ModelState
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]["total"] if self.history else float("nan")


def loss_and_grads(state: ModelState, prep: Prepared) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    params = {k: dc.parameter(v) for k, v in state.params.items()}
    try:
        breakdown = total_loss(params, prep, state.config)
    except dc.NonFiniteError as exc:
        raise DivergenceError(f"non-finite values in forward pass: {exc}") from None
    return breakdown, dc.gradient(breakdown.total, params)


def train(series, cities: CitySet, config: RunConfig, seed: int | None = None,
          state: ModelState | None = None) -> TrainResult:
    """Full-batch Adam on the total loss; deterministic for a given seed.

    Stops after ``config.epochs`` updates, or earlier when the best loss has not
    improved by a relative ``plateau_tol`` within ``patience`` epochs. The
    returned state holds the parameters (and optimizer moments) that scored the
    lowest loss.
    """
    if seed is not None:
        config = config.replace(seed=seed)
    flows = np.asarray(getattr(series, "flows", series))
    if flows.shape[0] <= config.window:
        raise InsufficientHistoryError(f"series length {flows.shape[0]} must exceed window {config.window}")
    state = state or ModelState.create(config, cities, flows)
    prep = prepare(config, cities, flows)
    history: list[dict[str, float]] = []
    best, best_epoch = np.inf, 0
    lowest, snapshot = np.inf, None
    for epoch in range(config.epochs):
        breakdown, grads = loss_and_grads(state, prep)
        record = breakdown.values()
        if not np.isfinite(record["total"]):
            raise DivergenceError(f"loss became non-finite at epoch {epoch}")
        history.append(record)
        if record["total"] < lowest:
            lowest, snapshot = record["total"], (state.params, _copy_optimizer(state.optimizer))
        if record["total"] < best * (1.0 - config.plateau_tol):
            best, best_epoch = record["total"], epoch
        elif epoch - best_epoch >= config.patience:
            log.info("plateau at epoch %d (loss %.6g)", epoch, record["total"])
            break
        state.params, state.optimizer = dc.adam_step(state.params, grads, state.optimizer)
        if epoch % 100 == 0:
            log.debug("epoch %d loss %.6g", epoch, record["total"])
    else:
        # the last update has not been scored yet
        if config.epochs and _score(state, prep) < lowest:
            snapshot = None
    if snapshot is not None:
        state.params, state.optimizer = snapshot
    return TrainResult(state, history)


def _score(state: ModelState, prep: Prepared) -> float:
    params = {k: dc.as_tensor(v) for k, v in state.params.items()}
    try:
        value = total_loss(params, prep, state.config).total.item()
    except dc.NonFiniteError:
        return np.inf
    return value


def _copy_optimizer(opt: dc.OptimizerState) -> dc.OptimizerState:
    # adam_step replaces moment arrays rather than mutating them, so shallow copies suffice
    return dc.OptimizerState(opt.lr, opt.beta1, opt.beta2, opt.eps, opt.step, dict(opt.m), dict(opt.v))


def evaluate_loss(state: ModelState, series) -> dict[str, float]:
    prep = prepare(state.config, state.cities, series)
    params = {k: dc.as_tensor(v) for k, v in state.params.items()}
    return total_loss(params, prep, state.config).values()
