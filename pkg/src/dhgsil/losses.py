"""Reconstruction and contrastive margin losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .armf import ALPHA_DELTA, ALPHA_MU
from .config import RunConfig
from .diffcore import Tensor


@dataclass
class LossBreakdown:
    reconstruction: Tensor
    cross_city: Tensor
    cross_time: Tensor

    @property
    def total(self) -> Tensor:
        return self.reconstruction + self.cross_city + self.cross_time

    def values(self) -> dict[str, float]:
        return {
            "reconstruction": self.reconstruction.item(),
            "cross_city": self.cross_city.item(),
            "cross_time": self.cross_time.item(),
            "total": self.total.item(),
        }


def contrastive_pair_loss(rho_flow, rho_alpha, margin: float):
    """max(0, -rho_flow * rho_alpha + margin), elementwise."""
    if isinstance(rho_alpha, Tensor) or isinstance(rho_flow, Tensor):
        return dc.maximum(margin - rho_flow * rho_alpha, 0.0)
    return np.maximum(0.0, -np.asarray(rho_flow) * np.asarray(rho_alpha) + margin)


def flow_totals(flows: np.ndarray, include_self: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(inflow, outflow), each (T, C): column and row sums."""
    flows = np.asarray(flows)
    if not include_self:
        flows = flows * (1.0 - np.eye(flows.shape[-1]))
    return flows.sum(axis=-2), flows.sum(axis=-1)


def cross_time_loss(flows, variables, j: int, t1: int, t2: int, config: RunConfig):
    """Contrastive term for city j between steps t1 and t2 (single value)."""
    inflow, outflow = flow_totals(flows, config.totals_include_self)
    v = variables
    d_term = contrastive_pair_loss(inflow[t1, j] - inflow[t2, j],
                                   v[t1, j, ALPHA_DELTA] - v[t2, j, ALPHA_DELTA], config.margin_delta)
    m_term = contrastive_pair_loss(outflow[t1, j] - outflow[t2, j],
                                   v[t1, j, ALPHA_MU] - v[t2, j, ALPHA_MU], config.margin_mu)
    return d_term + m_term


def cross_city_loss(flows, variables, j1: int, j2: int, t: int, config: RunConfig):
    """Contrastive term for cities j1, j2 at step t (single value)."""
    inflow, outflow = flow_totals(flows, config.totals_include_self)
    v = variables
    d_term = contrastive_pair_loss(inflow[t, j1] - inflow[t, j2],
                                   v[t, j1, ALPHA_DELTA] - v[t, j2, ALPHA_DELTA], config.margin_delta)
    m_term = contrastive_pair_loss(outflow[t, j1] - outflow[t, j2],
                                   v[t, j1, ALPHA_MU] - v[t, j2, ALPHA_MU], config.margin_mu)
    return d_term + m_term


def time_pairs(n_steps: int, mode: str = "all") -> tuple[np.ndarray, np.ndarray]:
    if mode == "consecutive":
        t = np.arange(n_steps - 1)
        return t, t + 1
    return np.triu_indices(n_steps, 1)


def contrastive_terms(flows: np.ndarray, variables: Tensor, config: RunConfig) -> tuple[Tensor, Tensor]:
    """Vectorized sums of all cross-city and cross-time terms (weighted, optionally averaged)."""
    zero = dc.Tensor(0.0)
    if not config.use_contrastive:
        return zero, zero
    inflow, outflow = flow_totals(flows, config.totals_include_self)
    a_delta = variables[..., ALPHA_DELTA]  # (T, C)
    a_mu = variables[..., ALPHA_MU]
    n_steps, n = inflow.shape

    def pair_sum(flow_tot, alpha, margin, first, second, axis):
        if axis == 1:
            rho_f = flow_tot[:, first] - flow_tot[:, second]
            rho_a = alpha[:, first] - alpha[:, second]
        else:
            rho_f = flow_tot[first] - flow_tot[second]
            rho_a = alpha[first] - alpha[second]
        return contrastive_pair_loss(rho_f, rho_a, margin).sum()

    j1, j2 = np.triu_indices(n, 1)
    city = zero
    if j1.size:
        city = (pair_sum(inflow, a_delta, config.margin_delta, j1, j2, 1)
                + pair_sum(outflow, a_mu, config.margin_mu, j1, j2, 1))
    t1, t2 = time_pairs(n_steps, config.cross_time_pairs)
    time = zero
    if t1.size:
        time = (pair_sum(inflow, a_delta, config.margin_delta, t1, t2, 0)
                + pair_sum(outflow, a_mu, config.margin_mu, t1, t2, 0))
    w = config.contrastive_weight
    if config.contrastive_normalize:
        city = city * (w / max(1, j1.size * n_steps))
        time = time * (w / max(1, t1.size * n))
    else:
        city, time = city * w, time * w
    return city, time


def flow_error(predicted: Tensor, truth: np.ndarray, squared: bool = False) -> Tensor:
    """Sum over leading steps of the per-step Frobenius norm (or its square)."""
    diff = predicted - truth
    if squared:
        return dc.square(diff).sum()
    return dc.norm(diff, axis=(-2, -1)).sum()
