"""Intercity labor-migration flow forecasting with geography-aware graph
convolution, an attraction-repulsion flow decomposition and sequential
forecasting of the interpretable per-city variables."""
from .armf import VARIABLES, armf_flow
from .config import RunConfig
from .flowdata import FlowSeries, SynthConfig, preset, synthesize
from .geo import CitySet, distance_matrix, haversine
from .model import ModelState, forecast_flow
from .training import train

__version__ = "0.1.0"

__all__ = ["VARIABLES", "armf_flow", "RunConfig", "FlowSeries", "SynthConfig", "preset", "synthesize",
           "CitySet", "distance_matrix", "haversine", "ModelState", "forecast_flow", "train"]
