"""Origin-destination flow series: ingestion, normalization, synthesis, exploration."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .armf import ALPHA_DELTA, ALPHA_MU, SIGMA_DELTA, SIGMA_MU, armf_flow
from .geo import CitySet, distance_matrix

STEP_RE = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")
NORMALIZATIONS = ("global", "per_step", "none")


class FlowDataError(ValueError):
    pass


class UndefinedCorrelationError(FlowDataError):
    pass


class FlowRecord(NamedTuple):
    step: str
    source: int
    target: int
    count: float


def parse_step(label: str) -> tuple[int, int]:
    m = STEP_RE.match(label.strip())
    if not m:
        raise FlowDataError(f"unparseable step label {label!r} (expected YYYY-MM)")
    return int(m.group(1)), int(m.group(2))


def month_labels(start: str, n: int) -> tuple[str, ...]:
    year, month = parse_step(start)
    out = []
    for _ in range(n):
        out.append(f"{year:04d}-{month:02d}")
        month += 1
        if month > 12:
            year, month = year + 1, 1
    return tuple(out)


@dataclass(frozen=True)
class FlowSeries:
    """Stack of (T, C, C) flow matrices; row = source city, column = target city."""

    steps: tuple[str, ...]
    flows: np.ndarray

    def __post_init__(self):
        flows = np.array(self.flows, dtype=np.float64)
        if flows.ndim != 3 or flows.shape[1] != flows.shape[2]:
            raise FlowDataError(f"flows must have shape (T, C, C), got {flows.shape}")
        if len(self.steps) != flows.shape[0]:
            raise FlowDataError(f"{len(self.steps)} step labels for {flows.shape[0]} matrices")
        if not np.isfinite(flows).all() or (flows < 0).any():
            raise FlowDataError("flows must be finite and non-negative")
        flows.flags.writeable = False
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "flows", flows)

    @property
    def n_steps(self) -> int:
        return self.flows.shape[0]

    @property
    def n_cities(self) -> int:
        return self.flows.shape[1]

    def __len__(self) -> int:
        return self.n_steps

    def window(self, start: int, stop: int) -> "FlowSeries":
        return FlowSeries(self.steps[start:stop], self.flows[start:stop])

    def inflow(self) -> np.ndarray:
        """(T, C) column sums, self-flow included."""
        return self.flows.sum(axis=1)

    def outflow(self) -> np.ndarray:
        """(T, C) row sums, self-flow included."""
        return self.flows.sum(axis=2)

    def normalized(self, mode: str = "global") -> "FlowSeries":
        if mode not in NORMALIZATIONS:
            raise FlowDataError(f"unknown normalization {mode!r}; choose from {NORMALIZATIONS}")
        flows = np.array(self.flows)
        if mode == "global":
            top = flows.max()
            if top > 0:
                flows = flows / top
        elif mode == "per_step":
            top = flows.max(axis=(1, 2), keepdims=True)
            flows = np.divide(flows, top, out=flows, where=top > 0)
        return FlowSeries(self.steps, flows)

    def permuted(self, order) -> "FlowSeries":
        order = np.asarray(order)
        return FlowSeries(self.steps, self.flows[:, order][:, :, order])

    def to_csv(self, path) -> None:
        """``step,source_id,target_id,value`` with every entry written."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "source_id", "target_id", "value"])
            n = self.n_cities
            for t, label in enumerate(self.steps):
                for s in range(n):
                    for d in range(n):
                        writer.writerow([label, s, d, repr(float(self.flows[t, s, d]))])


def ingest(records: Iterable[FlowRecord], n_cities: int | CitySet, normalize: str = "global") -> FlowSeries:
    """Sum counts per (step, source, target), fill gaps with 0, then normalize."""
    n = len(n_cities) if isinstance(n_cities, CitySet) else int(n_cities)
    sums: dict[str, dict[tuple[int, int], float]] = {}
    for rec in records:
        parse_step(rec.step)
        for cid in (rec.source, rec.target):
            if not (0 <= int(cid) < n) or int(cid) != cid:
                raise FlowDataError(f"unknown city id {cid}")
        if not np.isfinite(rec.count) or rec.count < 0:
            raise FlowDataError(f"invalid count {rec.count} at {rec.step} {rec.source}->{rec.target}")
        cell = sums.setdefault(rec.step.strip(), {})
        key = (int(rec.source), int(rec.target))
        cell[key] = cell.get(key, 0.0) + float(rec.count)
    if not sums:
        raise FlowDataError("no flow records")
    steps = sorted(sums, key=parse_step)
    flows = np.zeros((len(steps), n, n))
    for t, label in enumerate(steps):
        for (s, d), v in sums[label].items():
            flows[t, s, d] = v
    return FlowSeries(tuple(steps), flows).normalized(normalize)


def read_flow_records(path) -> list[FlowRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["step", "source_id", "target_id", "value"]:
            raise FlowDataError(f"{path}: expected header step,source_id,target_id,value, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                records.append(FlowRecord(row["step"], int(row["source_id"]), int(row["target_id"]), float(row["value"])))
            except (TypeError, ValueError):
                raise FlowDataError(f"{path}:{line}: unparseable flow row {row}") from None
    return records


def load_flows(path, cities: int | CitySet, normalize: str = "global") -> FlowSeries:
    return ingest(read_flow_records(path), cities, normalize)


# ------------------------------------------------------------------ synthesis

@dataclass(frozen=True)
class SynthConfig:
    """Synthetic data generator settings.

    Ground-truth intensities drift as ``log a(t) = log a0 + drift * sin(2 pi t / period + phase)``
    where the phase varies smoothly in space, so nearby cities move together.
    Attenuations are constant in time. Noise is multiplicative log-normal.
    ``size_coupling`` in [0, 1] mixes a shared per-city size draw into both
    intensities (log scale), so cities that attract much also send much.
    """

    n_cities: int = 14
    n_steps: int = 24
    lat_range: tuple[float, float] = (30.0, 34.0)
    lon_range: tuple[float, float] = (117.0, 122.0)
    alpha_delta_range: tuple[float, float] = (0.2, 1.0)
    sigma_delta_range: tuple[float, float] = (1 / 500, 1 / 150)
    alpha_mu_range: tuple[float, float] = (0.2, 1.0)
    sigma_mu_range: tuple[float, float] = (1 / 500, 1 / 150)
    size_coupling: float = 0.7
    drift: float = 0.3
    period: float = 24.0
    phase_wavelength_km: float = 600.0
    noise: float = 0.1
    seed: int = 0
    start: str = "2020-01"

    def __post_init__(self):
        if self.n_cities < 2 or self.n_steps < 1:
            raise FlowDataError("need n_cities >= 2 and n_steps >= 1")
        for name in ("lat_range", "lon_range", "alpha_delta_range", "sigma_delta_range",
                     "alpha_mu_range", "sigma_mu_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise FlowDataError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            if name not in ("lat_range", "lon_range") and lo <= 0:
                raise FlowDataError(f"{name} must be positive, got {(lo, hi)}")
        if not 0.0 <= self.size_coupling <= 1.0:
            raise FlowDataError(f"size_coupling must be in [0, 1], got {self.size_coupling}")
        if self.noise < 0 or self.drift < 0 or self.period <= 0 or self.phase_wavelength_km <= 0:
            raise FlowDataError("noise and drift must be >= 0; period and wavelength > 0")
        parse_step(self.start)


# Urban-agglomeration-sized boxes: (n_cities, lat_range, lon_range)
PRESETS = {
    "prd": (9, (22.0, 24.2), (112.0, 114.6)),
    "bth": (14, (36.0, 41.0), (114.0, 119.0)),
    "yrd": (41, (28.5, 33.5), (116.5, 122.0)),
}


def preset(name: str, **overrides) -> SynthConfig:
    n, lat, lon = PRESETS[name]
    return SynthConfig(**{"n_cities": n, "lat_range": lat, "lon_range": lon, **overrides})


def _log_uniform(rng: np.random.Generator, bounds: tuple[float, float], n: int,
                 shared: np.ndarray | None = None, coupling: float = 0.0) -> np.ndarray:
    """Log-uniform draws; with ``shared`` the unit position mixes in that common draw."""
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    u = rng.uniform(0.0, 1.0, n)
    if shared is not None:
        u = coupling * shared + (1.0 - coupling) * u
    return np.exp(lo + (hi - lo) * u)


def sample_ground_truth(config: SynthConfig) -> tuple[CitySet, np.ndarray]:
    """Sample city locations and the (T, C, 4) ground-truth variable trajectories."""
    rng = np.random.default_rng(config.seed)
    n, T = config.n_cities, config.n_steps
    lat = rng.uniform(*config.lat_range, n)
    lon = rng.uniform(*config.lon_range, n)
    cities = CitySet(tuple(f"city{i:02d}" for i in range(n)), lat, lon)

    size = rng.uniform(0.0, 1.0, n)
    base = np.empty((n, 4))
    base[:, ALPHA_DELTA] = _log_uniform(rng, config.alpha_delta_range, n, size, config.size_coupling)
    base[:, SIGMA_DELTA] = _log_uniform(rng, config.sigma_delta_range, n)
    base[:, ALPHA_MU] = _log_uniform(rng, config.alpha_mu_range, n, size, config.size_coupling)
    base[:, SIGMA_MU] = _log_uniform(rng, config.sigma_mu_range, n)

    # planar km coordinates for the spatial phase field
    y = (lat - lat.mean()) * 111.2
    x = (lon - lon.mean()) * 111.2 * np.cos(np.radians(lat.mean()))
    k = 2 * np.pi / config.phase_wavelength_km
    phases = []
    for _ in range(2):
        theta = rng.uniform(0, 2 * np.pi)
        phases.append(k * (x * np.cos(theta) + y * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
    t = np.arange(T)[:, None]
    variables = np.broadcast_to(base, (T, n, 4)).copy()
    for col, phase in zip((ALPHA_DELTA, ALPHA_MU), phases):
        variables[:, :, col] *= np.exp(config.drift * np.sin(2 * np.pi * t / config.period + phase[None, :]))
    return cities, variables


def compose_flows(variables: np.ndarray, dist: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    flows = armf_flow(variables, dist)
    if noise > 0:
        flows = flows * np.exp(noise * rng.standard_normal(flows.shape))
    return flows


def synthesize(config: SynthConfig) -> tuple[CitySet, FlowSeries, np.ndarray]:
    """Cities, an ARMF-composed flow series (not renormalized) and its ground-truth variables.

    The flows are deterministic given ``config.seed``; with ``noise == 0`` they
    equal ``armf_flow`` of the returned variables.
    """
    cities, variables = sample_ground_truth(config)
    rng = np.random.default_rng([config.seed, 1])
    flows = compose_flows(variables, distance_matrix(cities), config.noise, rng)
    return cities, FlowSeries(month_labels(config.start, config.n_steps), flows), variables


# ---------------------------------------------------------------- exploration

def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation undefined: a variable is constant")
    xc, yc = x - x.mean(), y - y.mean()
    return float((xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc)))


def exploration_stats(series: FlowSeries, dist: np.ndarray) -> dict:
    """Intention-distance and inflow-outflow Pearson correlations plus per-city totals."""
    if series.n_steps < 1:
        raise FlowDataError("need at least one step")
    mean_flow = series.flows.mean(axis=0)
    off = ~np.eye(series.n_cities, dtype=bool)
    inflow = series.inflow().sum(axis=0)
    outflow = series.outflow().sum(axis=0)
    return {
        "intention_distance_corr": pearson(np.asarray(dist)[off], mean_flow[off]),
        "inflow_outflow_corr": pearson(inflow, outflow),
        "inflow": inflow,
        "outflow": outflow,
    }
