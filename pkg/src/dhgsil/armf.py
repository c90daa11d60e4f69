"""Attraction-repulsion flow model.

City variables are stored as arrays of shape (..., n_cities, 4) with columns
``VARIABLES``. Attenuations are in 1/km so that ``d * sigma`` is dimensionless.
"""
from __future__ import annotations

import csv
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

VARIABLES = ("alpha_delta", "sigma_delta", "alpha_mu", "sigma_mu")
ALPHA_DELTA, SIGMA_DELTA, ALPHA_MU, SIGMA_MU = range(4)
POSITIVE_FLOOR = 1e-6


def positive(raw):
    return dc.softplus(raw) + POSITIVE_FLOOR


def variables_from_raw(raw, sigma_scale: float = 1.0) -> Tensor:
    """Map unconstrained (..., C, 4) outputs to strictly positive variables.

    The attenuation columns are multiplied by ``sigma_scale`` (1/km) so that a
    raw output of zero corresponds to a decay length of about ``1/sigma_scale`` km.
    """
    scale = np.ones(4)
    scale[[SIGMA_DELTA, SIGMA_MU]] = sigma_scale
    return positive(raw) * scale


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def init_head(rng: np.random.Generator, in_dim: int, hidden: int = 16,
              alpha0: float = 0.5) -> dict[str, np.ndarray]:
    """Small random output weights around a bias giving intensities ``alpha0`` and unit attenuations."""
    b2 = np.zeros(4)
    b2[[ALPHA_DELTA, ALPHA_MU]] = inverse_softplus(alpha0)
    b2[[SIGMA_DELTA, SIGMA_MU]] = inverse_softplus(1.0)
    return {
        "head.w1": rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, hidden)),
        "head.b1": np.zeros(hidden),
        "head.w2": rng.normal(0.0, 0.1 / np.sqrt(hidden), (hidden, 4)),
        "head.b2": b2,
    }


def head_raw(h, params: Mapping[str, Tensor]) -> Tensor:
    h = dc.as_tensor(h)
    w1 = dc.as_tensor(params["head.w1"])
    if h.shape[-1] != w1.shape[0]:
        raise dc.ShapeError(f"head: representation width {h.shape[-1]} != head input {w1.shape[0]}")
    hidden = dc.tanh(h @ w1 + params["head.b1"])
    return hidden @ params["head.w2"] + params["head.b2"]


def head_forward(h, params: Mapping[str, Tensor], sigma_scale: float = 1.0) -> Tensor:
    """City representations (..., C, width) -> positive variables (..., C, 4)."""
    return variables_from_raw(head_raw(h, params), sigma_scale)


def attraction_at(alpha_delta, sigma_delta, d):
    return alpha_delta * np.exp(-(d * d) * sigma_delta * sigma_delta)


def repulsion_at(alpha_mu, sigma_mu, d):
    return alpha_mu * np.exp(-(d * d) * sigma_mu * sigma_mu)


def armf_flow(variables, dist):
    """Flow matrix with entry (source c1, target c2) =
    alpha_delta[c2] * alpha_mu[c1] * exp(-d^2 (sigma_delta[c2]^2 + sigma_mu[c1]^2)).

    Accepts a Tensor (differentiable, returns a Tensor) or an array (returns an
    array). Leading batch dimensions are kept.
    """
    if not isinstance(variables, Tensor):
        return armf_flow(dc.as_tensor(variables), dist).data
    d2 = np.asarray(dist, dtype=np.float64) ** 2
    n = variables.shape[-2]
    if variables.shape[-1] != 4 or d2.shape != (n, n):
        raise dc.ShapeError(f"armf_flow: variables {variables.shape} vs distances {d2.shape}")
    lead = variables.shape[:-2]
    row, col = lead + (1, n), lead + (n, 1)
    a_delta = variables[..., ALPHA_DELTA].reshape(row)
    s_delta = variables[..., SIGMA_DELTA].reshape(row)
    a_mu = variables[..., ALPHA_MU].reshape(col)
    s_mu = variables[..., SIGMA_MU].reshape(col)
    decay = dc.exp(-(d2 * (dc.square(s_delta) + dc.square(s_mu))))
    return a_delta * a_mu * decay


def write_variables_csv(path, variables: np.ndarray, steps: Sequence[str]) -> None:
    """``step,city_id,alpha_delta,sigma_delta,alpha_mu,sigma_mu`` for a (T, C, 4) array."""
    variables = np.asarray(variables)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "city_id", *VARIABLES])
        for t, label in enumerate(steps):
            for c in range(variables.shape[1]):
                writer.writerow([label, c, *(repr(float(x)) for x in variables[t, c])])


def read_variables_csv(path) -> tuple[list[str], np.ndarray]:
    by_step: dict[str, dict[int, list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["step", "city_id", *VARIABLES]:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            by_step.setdefault(row["step"], {})[int(row["city_id"])] = [float(row[k]) for k in VARIABLES]
    steps = sorted(by_step)
    n = max(len(v) for v in by_step.values())
    out = np.zeros((len(steps), n, 4))
    for t, s in enumerate(steps):
        for c, vals in by_step[s].items():
            out[t, c] = vals
    return steps, out
