"""Per-step flow features and a doubly-residual N-BEATS stack (generic, seasonality, trend)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

BLOCKS = ("generic", "seasonality", "trend")


class WindowLengthError(ValueError):
    pass


# ------------------------------------------------------------ step features

def spectral_values(flows) -> np.ndarray:
    """Singular values (descending) of each C x C matrix in a (T, C, C) or (C, C) array."""
    return np.linalg.svd(np.asarray(flows, dtype=np.float64), compute_uv=False)


def init_compression(rng: np.random.Generator, n_cities: int) -> dict[str, np.ndarray]:
    d_in = n_cities * n_cities
    return {
        "compress.w": rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, n_cities)),
        "compress.b": np.zeros(n_cities),
    }


def compress(flows, params: Mapping[str, Tensor]) -> Tensor:
    flows = dc.as_tensor(flows)
    n = flows.shape[-1]
    flat = flows.reshape(flows.shape[:-2] + (n * n,))
    return dc.tanh(flat @ params["compress.w"] + params["compress.b"])


def step_features(flows, params: Mapping[str, Tensor]) -> Tensor:
    """[learned |C|-vector, |C| singular values] per step, shape (..., 2|C|)."""
    flows_arr = np.asarray(getattr(flows, "data", flows), dtype=np.float64)
    if flows_arr.shape[-1] != flows_arr.shape[-2]:
        raise dc.ShapeError(f"step_features: flow matrix must be square, got {flows_arr.shape}")
    return dc.concat([compress(flows_arr, params), spectral_values(flows_arr)], axis=-1)


# ------------------------------------------------------------------ N-BEATS

@dataclass(frozen=True)
class NBeatsShape:
    backcast: int = 5
    forecast: int = 1
    width: int = 256
    theta: int = 32
    trunk_layers: int = 2
    trend_degree: int = 3


def _time_grid(shape: NBeatsShape) -> tuple[np.ndarray, np.ndarray]:
    total = shape.backcast + shape.forecast
    t = np.arange(total) / total
    return t[:shape.backcast], t[shape.backcast:]


def trend_basis(shape: NBeatsShape) -> tuple[np.ndarray, np.ndarray]:
    """Polynomial rows t^p, p = 0..degree, over the backcast and forecast grids."""
    tb, tf = _time_grid(shape)
    powers = np.arange(shape.trend_degree + 1)[:, None]
    return tb[None, :] ** powers, tf[None, :] ** powers


def seasonality_basis(shape: NBeatsShape) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic rows cos(2 pi k t), sin(2 pi k t), k = 0..theta/2 - 1."""
    tb, tf = _time_grid(shape)
    k = np.arange(shape.theta // 2)[:, None]

    def rows(t):
        ang = 2 * np.pi * k * t[None, :]
        return np.concatenate([np.cos(ang), np.sin(ang)], axis=0)

    return rows(tb), rows(tf)


def _theta_dim(kind: str, shape: NBeatsShape) -> int:
    if kind == "trend":
        return shape.trend_degree + 1
    if kind == "seasonality":
        return 2 * (shape.theta // 2)
    return shape.theta


def init_nbeats(rng: np.random.Generator, shape: NBeatsShape, prefix: str = "nbeats") -> dict[str, np.ndarray]:
    params = {}
    for kind in BLOCKS:
        p = f"{prefix}.{kind}"
        d_in = shape.backcast
        for i in range(shape.trunk_layers):
            params[f"{p}.fc{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / d_in), (d_in, shape.width))
            params[f"{p}.fc{i}.b"] = np.zeros(shape.width)
            d_in = shape.width
        th = _theta_dim(kind, shape)
        params[f"{p}.theta_b"] = rng.normal(0.0, 0.1 / np.sqrt(shape.width), (shape.width, th))
        # zero forecast coefficients: an untrained stack predicts no change
        params[f"{p}.theta_f"] = np.zeros((shape.width, th))
        if kind == "generic":
            params[f"{p}.basis_b.w"] = rng.normal(0.0, 1.0 / np.sqrt(th), (th, shape.backcast))
            params[f"{p}.basis_b.b"] = np.zeros(shape.backcast)
            params[f"{p}.basis_f.w"] = rng.normal(0.0, 1.0 / np.sqrt(th), (th, shape.forecast))
            params[f"{p}.basis_f.b"] = np.zeros(shape.forecast)
    return params


@dataclass
class NBeatsOutput:
    forecast: Tensor
    residual: Tensor
    block_forecasts: list[Tensor]
    block_backcasts: list[Tensor]


def _block(x: Tensor, params: Mapping[str, Tensor], kind: str, shape: NBeatsShape,
           prefix: str) -> tuple[Tensor, Tensor]:
    p = f"{prefix}.{kind}"
    h = x
    for i in range(shape.trunk_layers):
        h = dc.relu(h @ params[f"{p}.fc{i}.w"] + params[f"{p}.fc{i}.b"])
    theta_b = h @ params[f"{p}.theta_b"]
    theta_f = h @ params[f"{p}.theta_f"]
    if kind == "generic":
        back = theta_b @ params[f"{p}.basis_b.w"] + params[f"{p}.basis_b.b"]
        fore = theta_f @ params[f"{p}.basis_f.w"] + params[f"{p}.basis_f.b"]
    else:
        vb, vf = trend_basis(shape) if kind == "trend" else seasonality_basis(shape)
        back = theta_b @ vb
        fore = theta_f @ vf
    return back, fore


def nbeats_forecast(window, params: Mapping[str, Tensor], shape: NBeatsShape = NBeatsShape(),
                    prefix: str = "nbeats") -> NBeatsOutput:
    """Run the stack on a (batch, backcast) window; each row is one channel."""
    x = dc.as_tensor(window)
    if x.ndim != 2 or x.shape[-1] != shape.backcast:
        raise WindowLengthError(f"window length must be {shape.backcast}, got shape {x.shape}")
    residual = x
    forecast = None
    backs, fores = [], []
    for kind in BLOCKS:
        back, fore = _block(residual, params, kind, shape, prefix)
        residual = residual - back
        forecast = fore if forecast is None else forecast + fore
        backs.append(back)
        fores.append(fore)
    return NBeatsOutput(forecast, residual, fores, backs)
