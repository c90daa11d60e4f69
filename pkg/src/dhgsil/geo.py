"""City registry, great-circle distances and the distance-threshold geography graph."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EARTH_RADIUS_KM = 6371.0


class CoordinateError(ValueError):
    pass


class CityError(ValueError):
    pass


def _check_coord(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0) or math.isnan(lat) or math.isnan(lon):
        raise CoordinateError(f"coordinate out of range: lat={lat}, lon={lon}")


@dataclass(frozen=True)
class CitySet:
    names: tuple[str, ...]
    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.lat, dtype=np.float64)
        lon = np.asarray(self.lon, dtype=np.float64)
        if lat.shape != lon.shape or lat.ndim != 1 or len(self.names) != lat.size:
            raise CityError("names, lat and lon must be equal-length 1-D sequences")
        if lat.size < 2:
            raise CityError(f"need at least 2 cities, got {lat.size}")
        for a, b in zip(lat, lon):
            _check_coord(float(a), float(b))
        lat.flags.writeable = False
        lon.flags.writeable = False
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)

    def __len__(self) -> int:
        return self.lat.size

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    def coords(self, i: int) -> tuple[float, float]:
        return float(self.lat[i]), float(self.lon[i])

    def permuted(self, order) -> "CitySet":
        order = np.asarray(order)
        return CitySet(tuple(self.names[i] for i in order), self.lat[order], self.lon[order])

    @classmethod
    def from_csv(cls, path) -> "CitySet":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "name", "lat", "lon"]:
                raise CityError(f"{path}: expected header id,name,lat,lon, got {reader.fieldnames}")
            for line, row in enumerate(reader, start=2):
                try:
                    rows.append((int(row["id"]), row["name"], float(row["lat"]), float(row["lon"])))
                except (TypeError, ValueError):
                    raise CityError(f"{path}:{line}: unparseable city row {row}") from None
        rows.sort(key=lambda r: r[0])
        ids = [r[0] for r in rows]
        if ids != list(range(len(rows))):
            raise CityError(f"{path}: city ids must be unique and contiguous from 0")
        return cls(tuple(r[1] for r in rows), np.array([r[2] for r in rows]), np.array([r[3] for r in rows]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "name", "lat", "lon"])
            for i, name in enumerate(self.names):
                writer.writerow([i, name, repr(float(self.lat[i])), repr(float(self.lon[i]))])


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees."""
    lat1, lon1 = a
    lat2, lon2 = b
    _check_coord(lat1, lon1)
    _check_coord(lat2, lon2)
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def distance_matrix(cities: CitySet) -> np.ndarray:
    """Pairwise great-circle distances; exactly symmetric with a zero diagonal."""
    lat = np.radians(cities.lat)
    lon = np.radians(cities.lon)
    dp = lat[None, :] - lat[:, None]
    dl = lon[None, :] - lon[:, None]
    h = np.sin(dp / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dl / 2) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))
    d = np.triu(d, 1)
    d = d + d.T
    d.flags.writeable = False
    return d


@dataclass(frozen=True)
class GeographyGraph:
    adjacency: np.ndarray
    epsilon: float
    neighbors: tuple[tuple[int, ...], ...] = field(repr=False)
    degree: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def edges(self) -> set[tuple[int, int]]:
        u, v = np.nonzero(np.triu(self.adjacency, 1))
        return set(zip(u.tolist(), v.tolist()))


def graph_from_distances(dist: np.ndarray, epsilon: float) -> GeographyGraph:
    if epsilon < 0 or math.isnan(epsilon):
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    adj = (dist <= epsilon).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    adj.flags.writeable = False
    neighbors = tuple(tuple(np.nonzero(row)[0].tolist()) for row in adj)
    degree = adj.sum(axis=1)
    degree.flags.writeable = False
    return GeographyGraph(adj, float(epsilon), neighbors, degree)


def build_geography_graph(cities: CitySet, epsilon: float) -> GeographyGraph:
    """Edge (u, v) for every distinct pair with great-circle distance <= epsilon km."""
    return graph_from_distances(distance_matrix(cities), epsilon)


def load_cities(path: str | Path) -> CitySet:
    return CitySet.from_csv(path)
