"""Station data: CSV ingestion, validation, projection and export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

CANONICAL_COLUMNS = ("station_id", "longitude", "latitude", "month", "response", "covariate")
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "-999"})
EARTH_RADIUS_KM = 6371.0
MIN_STATIONS = 30


@dataclass(frozen=True, eq=False)
class StationDataset:
    """Validated station-month records.

    ``coords`` holds the locations projected to the unit square (equirectangular
    about the centroid, isotropically rescaled).
    """

    station_id: np.ndarray
    longitude: np.ndarray
    latitude: np.ndarray
    month: np.ndarray
    response: np.ndarray
    covariate: np.ndarray
    dropped: int = 0
    coords: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.station_id)
        for name in CANONICAL_COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has the wrong length")
        if not (np.all(np.isfinite(self.longitude)) and np.all(np.isfinite(self.latitude))):
            raise DataError("coordinates must be finite")
        if np.any(np.abs(self.latitude) > 90) or np.any(np.abs(self.longitude) > 180):
            raise DataError("coordinates out of range")
        if np.any((self.month < 1) | (self.month > 12)):
            raise DataError("month must lie in 1..12")
        keys = set()
        for sid, m in zip(self.station_id, self.month):
            if (sid, int(m)) in keys:
                raise DataError(f"duplicate record for station {sid!r}, month {int(m)}")
            keys.add((sid, int(m)))
        if self.coords is None:
            object.__setattr__(self, "coords", project_unit_square(self.longitude, self.latitude))

    def __len__(self) -> int:
        return len(self.station_id)

    @property
    def months(self) -> list[int]:
        return sorted({int(m) for m in self.month})

    def subset(self, month: int) -> "StationDataset":
        sel = self.month == month
        return StationDataset(self.station_id[sel], self.longitude[sel], self.latitude[sel],
                              self.month[sel], self.response[sel], self.covariate[sel], 0,
                              self.coords[sel])


def project_unit_square(longitude, latitude) -> np.ndarray:
    """Equirectangular projection about the centroid, rescaled to fit ``[0, 1]^2``.

    One scale factor is used for both axes so distances keep their ratios.
    """
    lon = np.radians(np.asarray(longitude, dtype=float))
    lat = np.radians(np.asarray(latitude, dtype=float))
    if lon.size == 0:
        return np.zeros((0, 2))
    lat0 = float(np.mean(lat))
    lon0 = float(np.mean(lon))
    xy = EARTH_RADIUS_KM * np.column_stack([(lon - lon0) * math.cos(lat0), lat - lat0])
    xy -= xy.min(axis=0)
    span = float(np.max(xy.max(axis=0)))
    return xy / span if span > 0 else xy


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"line {line}: column {column!r} is not numeric: {text!r}") from None


def ingest_csv(path, column_map: dict | None = None) -> StationDataset:
    """Read a UTF-8 CSV with a header row.

    ``column_map`` maps the canonical names (``station_id``, ``longitude``,
    ``latitude``, ``month``, ``response``, ``covariate``) to header names in the
    file; unmapped names are looked up as-is.  Rows with a missing value are
    dropped and counted.
    """
    cmap = {c: c for c in CANONICAL_COLUMNS}
    if column_map:
        unknown = set(column_map) - set(CANONICAL_COLUMNS)
        if unknown:
            raise DataError(f"unknown column_map keys: {sorted(unknown)}")
        cmap.update(column_map)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot read {str(path)!r}: {err.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("file is empty") from None
        missing = [cmap[c] for c in CANONICAL_COLUMNS if cmap[c] not in header]
        if missing:
            raise DataError(f"missing columns: {missing}")
        idx = {c: header.index(cmap[c]) for c in CANONICAL_COLUMNS}
        cols = {c: [] for c in CANONICAL_COLUMNS}
        dropped = 0
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            vals = {c: row[idx[c]].strip() for c in CANONICAL_COLUMNS}
            if any(v.lower() in MISSING_TOKENS for v in vals.values()):
                dropped += 1
                continue
            cols["station_id"].append(vals["station_id"])
            for c in CANONICAL_COLUMNS[1:]:
                cols[c].append(_parse_float(vals[c], cmap[c], line))
    month = np.array(cols["month"], dtype=float)
    if np.any(month != np.round(month)):
        raise DataError("month must be an integer")
    return StationDataset(
        station_id=np.array(cols["station_id"], dtype=object),
        longitude=np.array(cols["longitude"], dtype=float),
        latitude=np.array(cols["latitude"], dtype=float),
        month=month.astype(int),
        response=np.array(cols["response"], dtype=float),
        covariate=np.array(cols["covariate"], dtype=float),
        dropped=dropped,
    )


def export_csv(dataset: StationDataset, path) -> None:
    """Write the canonical columns; floats use the shortest exact representation."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for i in range(len(dataset)):
            w.writerow([dataset.station_id[i], repr(float(dataset.longitude[i])),
                        repr(float(dataset.latitude[i])), int(dataset.month[i]),
                        repr(float(dataset.response[i])), repr(float(dataset.covariate[i]))])
