"""Daily weather per patch and the covariate basis functions built on it.

Four dimensionless responses in [0, 1] drive the functional rates:

    Bb  Briere biting response, averaged over a reconstructed 24 h profile
    Bm  Briere migration response (scale a_m), same diurnal averaging
    E   Eyring mortality response at the daily mean temperature
    L   logistic humidity response, averaged over six 4-hourly samples

Weather arrives either as a station CSV (``read_weather_csv`` then
``preprocess_daily``) or from ``synthetic_covariates``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError

WEATHER_COLUMNS = ("date", "station", "patch", "t_avg", "t_min", "t_max", "rh_min", "rh_max", "unit")
CACHE_COLUMNS = ("day", "T", "Tmin", "Tmax", "RH", "RHmin", "RHmax", "Bb", "Bm", "E", "L")
EARTH_RADIUS_MILES = 3958.8
_FIELDS = ("t_avg", "t_min", "t_max", "rh_min", "rh_max")


@dataclass(frozen=True)
class BasisParams:
    a_b: float = 2.71e-4
    a_m: float | None = None
    T_min: float = 14.67
    T_max: float = 41.0
    k: float = 0.1
    RH_opt: float = 70.0
    psi_ad: float = 13327.0
    AE_ad: float = 53135.0
    R: float = 8.314

    def __post_init__(self):
        if self.a_m is None:
            object.__setattr__(self, "a_m", self.a_b / 10.0)
        if not self.T_min < self.T_max:
            raise ConfigurationError("BasisParams needs T_min < T_max")
        for name in ("a_b", "a_m", "k", "psi_ad", "AE_ad", "R"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"BasisParams.{name} must be positive")


@dataclass(frozen=True)
class MigrationKernelParams:
    c_S: float = 1.0
    c_I: float = 1.0
    cutoff_miles: float = 3.0
    # one list of (lat, lon) boundary reference points per patch; the defaults share a point
    patch_points: tuple = (
        ((33.45, -112.07), (33.45, -111.90)),
        ((33.45, -111.90), (33.30, -111.90)),
    )

    def __post_init__(self):
        if not (self.c_S > 0 and self.c_I > 0):
            raise ConfigurationError("migration kernel constants must be positive")


@dataclass(frozen=True)
class StationRecord:
    date: _dt.date
    station: str
    patch: str
    t_avg: float | None
    t_min: float | None
    t_max: float | None
    rh_min: float | None
    rh_max: float | None
    unit: str = "C"


@dataclass
class PatchCovariateSeries:
    patch: str
    T: np.ndarray
    Tmin: np.ndarray
    Tmax: np.ndarray
    RHmin: np.ndarray
    RHmax: np.ndarray
    RH: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("T", "Tmin", "Tmax", "RHmin", "RHmax"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.RH is None:
            self.RH = 0.5 * (self.RHmin + self.RHmax)
        self.RH = np.asarray(self.RH, dtype=np.float64)

    def __len__(self):
        return self.T.shape[0]


@dataclass
class BasisDaily:
    Bb: np.ndarray
    Bm: np.ndarray
    E: np.ndarray
    L: np.ndarray

    def __len__(self):
        return self.Bb.shape[0]


# ---------------------------------------------------------------- basis functions

def f_to_c(t_f):
    out = (5.0 / 9.0) * (np.asarray(t_f, dtype=np.float64) - 32.0)
    return float(out) if out.ndim == 0 else out


def briere(T, a, T_min, T_max):
    """Briere thermal response, zero outside the open interval (T_min, T_max), clamped to [0, 1]."""
    T = np.asarray(T, dtype=np.float64)
    inside = (T > T_min) & (T < T_max)
    gap = np.where(inside, T_max - T, 0.0)
    out = np.where(inside, a * T * (T - T_min) * np.sqrt(gap), 0.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def hourly_temperature(T_d, T_dmin, T_dmax):
    """24-hour profile, shape (..., 24): T_d + half-range * sin(2*pi*h/24 - pi/2)."""
    h = np.arange(24, dtype=np.float64)
    T_dmin = np.minimum(T_dmin, T_d)
    T_dmax = np.maximum(T_dmax, T_d)
    amp = 0.5 * (np.asarray(T_dmax) - np.asarray(T_dmin))
    return np.asarray(T_d)[..., None] + np.asarray(amp)[..., None] * np.sin(2.0 * np.pi * h / 24.0 - np.pi / 2.0)


def briere_diurnal_avg(T_d, T_dmin, T_dmax, a, T_min, T_max):
    out = np.clip(np.mean(briere(hourly_temperature(T_d, T_dmin, T_dmax), a, T_min, T_max), axis=-1), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def eyring(T, psi_ad, AE_ad, R):
    T_k = np.asarray(T, dtype=np.float64) + 273.15
    out = np.clip(psi_ad * T_k * np.exp(-AE_ad / (R * T_k)), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def logistic_rh(RH, k, RH_opt):
    out = 1.0 / (1.0 + np.exp(-k * (np.asarray(RH, dtype=np.float64) - RH_opt)))
    return float(out) if out.ndim == 0 else out


RH_SAMPLE_HOURS = (0, 4, 8, 12, 16, 20)


def hourly_humidity(RH_dmin, RH_dmax, hours=RH_SAMPLE_HOURS):
    """Half-cosine profile sampled at ``hours``, shape (..., len(hours))."""
    h = np.asarray(hours, dtype=np.float64)
    lo = np.asarray(RH_dmin, dtype=np.float64)[..., None]
    hi = np.asarray(RH_dmax, dtype=np.float64)[..., None]
    return lo + 0.5 * (hi - lo) * (1.0 - np.cos(2.0 * np.pi * h / 24.0))


def rh_diurnal_logistic_avg(RH_dmin, RH_dmax, k, RH_opt):
    out = np.clip(np.mean(logistic_rh(hourly_humidity(RH_dmin, RH_dmax), k, RH_opt), axis=-1), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- migration kernel

def haversine_miles(p, q) -> float:
    lat1, lon1 = map(math.radians, p)
    lat2, lon2 = map(math.radians, q)
    s = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2.0 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(s)))


def patch_gap_miles(points_i: Sequence, points_j: Sequence) -> float:
    """Smallest Haversine distance between two patches' reference points."""
    return min(haversine_miles(p, q) for p in points_i for q in points_j)


def kernel_value(gap_miles: float, c: float, cutoff_miles: float = 3.0) -> float:
    if gap_miles > cutoff_miles:
        return 0.0
    return 1.0 / (c + gap_miles ** 2)


def migration_kernel(points_i: Sequence, points_j: Sequence, c: float, cutoff_miles: float = 3.0) -> float:
    return kernel_value(patch_gap_miles(points_i, points_j), c, cutoff_miles)


# ---------------------------------------------------------------- evaluation on series

def compute_basis(series: PatchCovariateSeries, params: BasisParams = BasisParams()) -> BasisDaily:
    Bb = briere_diurnal_avg(series.T, series.Tmin, series.Tmax, params.a_b, params.T_min, params.T_max)
    Bm = briere_diurnal_avg(series.T, series.Tmin, series.Tmax, params.a_m, params.T_min, params.T_max)
    E = eyring(series.T, params.psi_ad, params.AE_ad, params.R)
    L = rh_diurnal_logistic_avg(series.RHmin, series.RHmax, params.k, params.RH_opt)
    return BasisDaily(*(np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (Bb, Bm, E, L)))


# ---------------------------------------------------------------- ingestion

def _parse_float(text: str, row: int, column: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise IngestionError(f"row {row}: column {column!r} is not numeric: {text!r}") from None
    if not math.isfinite(value):
        raise IngestionError(f"row {row}: column {column!r} is not finite")
    return value


def read_weather_csv(path) -> list[StationRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in WEATHER_COLUMNS if c not in header]
        if missing:
            raise IngestionError(f"weather CSV is missing column(s): {', '.join(missing)}")
        for row_no, row in enumerate(reader, start=2):
            unit = row["unit"].strip().upper()
            if unit not in ("F", "C"):
                raise IngestionError(f"row {row_no}: unit must be F or C, got {row['unit']!r}")
            try:
                date = _dt.date.fromisoformat(row["date"].strip())
            except ValueError:
                raise IngestionError(f"row {row_no}: bad ISO-8601 date {row['date']!r}") from None
            vals = {c: _parse_float(row[c], row_no, c) for c in _FIELDS}
            for c in ("rh_min", "rh_max"):
                if vals[c] is not None and not 0.0 <= vals[c] <= 100.0:
                    raise IngestionError(f"row {row_no}: {c} outside [0, 100]")
            records.append(StationRecord(date, row["station"].strip(), row["patch"].strip(), unit=unit, **vals))
    return records


def write_weather_csv(path, records: Iterable[StationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WEATHER_COLUMNS)
        for r in records:
            cells = ["" if getattr(r, c) is None else repr(float(getattr(r, c))) for c in _FIELDS]
            w.writerow([r.date.isoformat(), r.station, r.patch, *cells, r.unit])


def _interpolate(values: np.ndarray) -> np.ndarray:
    ok = ~np.isnan(values)
    if ok.all():
        return values
    days = np.arange(values.shape[0])
    return np.interp(days, days[ok], values[ok])


def centered_moving_average(values: np.ndarray, window: int = 7) -> np.ndarray:
    """Centered mean; near the edges the window shrinks symmetrically."""
    half = window // 2
    n = values.shape[0]
    out = np.empty(n, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    for i in range(n):
        w = min(half, i, n - 1 - i)
        out[i] = (csum[i + w + 1] - csum[i - w]) / (2 * w + 1)
    return out


def preprocess_daily(records: Sequence[StationRecord], horizon: int, start: _dt.date | None = None,
                     patches: Sequence[str] | None = None, window: int = 7) -> dict[str, PatchCovariateSeries]:
    """Station records to gap-free per-patch daily series in degrees C.

    Order: unit conversion, per-station linear interpolation, centered
    moving average, per-day mean over the patch's stations.
    """
    if not records and not patches:
        raise IngestionError("no weather records")
    if start is None:
        start = min(r.date for r in records)
    found = sorted({r.patch for r in records})
    patch_ids = list(patches) if patches is not None else found
    by_station: dict[tuple[str, str], dict[str, np.ndarray]] = {}
    for r in records:
        offset = (r.date - start).days
        if not 0 <= offset < horizon:
            continue
        key = (r.patch, r.station)
        cols = by_station.setdefault(key, {c: np.full(horizon, np.nan) for c in _FIELDS})
        for c in _FIELDS:
            v = getattr(r, c)
            if v is None:
                continue
            if c.startswith("t_") and r.unit == "F":
                v = f_to_c(v)
            cols[c][offset] = v

    out = {}
    for patch in patch_ids:
        stations = [cols for (p, _), cols in sorted(by_station.items()) if p == patch]
        if not stations:
            raise ConfigurationError(f"patch {patch!r} has no weather stations")
        fields = {}
        for c in _FIELDS:
            smoothed = [centered_moving_average(_interpolate(s[c]), window)
                        for s in stations if np.count_nonzero(~np.isnan(s[c])) > 0]
            if not smoothed:
                raise IngestionError(f"patch {patch!r}: field {c!r} is entirely missing")
            fields[c] = np.mean(smoothed, axis=0)
        out[patch] = PatchCovariateSeries(patch, fields["t_avg"], fields["t_min"], fields["t_max"],
                                          fields["rh_min"], fields["rh_max"])
    return out


# ---------------------------------------------------------------- synthetic weather

@dataclass(frozen=True)
class SyntheticWeather:
    """Seasonal weather generator; defaults start in spring and keep most days inside (T_min, T_max)."""

    start_day_of_year: int = 80
    temp_mean: float = 24.0
    temp_amplitude: float = 10.0
    temp_peak_day: int = 200
    temp_half_range: float = 6.0
    temp_noise: float = 1.5
    rh_mean: float = 65.0
    rh_amplitude: float = 15.0
    rh_peak_day: int = 290
    rh_half_range: float = 18.0
    rh_noise: float = 5.0
    noise_persistence: float = 0.7
    patch_temp_offsets: tuple = (0.0, 2.0)
    patch_rh_offsets: tuple = (0.0, -8.0)


def _ar1(rng: np.random.Generator, n: int, sigma: float, phi: float) -> np.ndarray:
    eps = rng.standard_normal(n) * sigma * math.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    prev = rng.standard_normal() * sigma
    for i in range(n):
        prev = phi * prev + eps[i]
        out[i] = prev
    return out


def synthetic_covariates(seed: int, T: int = 365, n_patches: int = 2,
                         weather: SyntheticWeather = SyntheticWeather()) -> list[PatchCovariateSeries]:
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    doy = weather.start_day_of_year + np.arange(T, dtype=np.float64)
    season_t = np.sin(2.0 * np.pi * (doy - weather.temp_peak_day + 365.0 / 4.0) / 365.0)
    season_rh = np.sin(2.0 * np.pi * (doy - weather.rh_peak_day + 365.0 / 4.0) / 365.0)
    out = []
    for p in range(n_patches):
        t_off = weather.patch_temp_offsets[p % len(weather.patch_temp_offsets)]
        rh_off = weather.patch_rh_offsets[p % len(weather.patch_rh_offsets)]
        T_d = weather.temp_mean + t_off + weather.temp_amplitude * season_t + _ar1(
            rng, T, weather.temp_noise, weather.noise_persistence)
        half = np.maximum(0.5, weather.temp_half_range + 0.3 * weather.temp_noise * rng.standard_normal(T))
        mid = weather.rh_mean + rh_off + weather.rh_amplitude * season_rh + _ar1(
            rng, T, weather.rh_noise, weather.noise_persistence)
        rh_half = np.maximum(1.0, weather.rh_half_range + 0.3 * weather.rh_noise * rng.standard_normal(T))
        rh_min = np.clip(mid - rh_half, 0.0, 100.0)
        rh_max = np.clip(mid + rh_half, 0.0, 100.0)
        out.append(PatchCovariateSeries(str(p + 1), T_d, T_d - half, T_d + half, rh_min, rh_max))
    return out


# ---------------------------------------------------------------- cache files

def cache_path(directory, patch: str) -> Path:
    return Path(directory) / f"covariates_patch{patch}.csv"


def write_covariate_cache(directory, series: PatchCovariateSeries, basis: BasisDaily) -> Path:
    path = cache_path(directory, series.patch)
    cols = (series.T, series.Tmin, series.Tmax, series.RH, series.RHmin, series.RHmax,
            basis.Bb, basis.Bm, basis.E, basis.L)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CACHE_COLUMNS)
        for d in range(len(series)):
            w.writerow([d + 1, *(repr(float(c[d])) for c in cols)])
    return path


def read_covariate_cache(path) -> tuple[PatchCovariateSeries, BasisDaily]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CACHE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise IngestionError(f"{path.name}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    col = lambda name: np.array([float(r[name]) for r in rows])  # noqa: E731
    patch = path.stem.replace("covariates_patch", "")
    series = PatchCovariateSeries(patch, col("T"), col("Tmin"), col("Tmax"), col("RHmin"), col("RHmax"), col("RH"))
    return series, BasisDaily(col("Bb"), col("Bm"), col("E"), col("L"))
