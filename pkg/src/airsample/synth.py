"""Synthetic node + reference-station data with known ground truth.

Latent signals (pollutant concentrations, temperature, humidity) are sums
of sinusoids plus band-limited variation built from random-phase sinusoids
whose frequencies are drawn uniformly inside a band. Each gas sensor's
WE - AE signal is a linear function of all latents, and AE tracks
temperature, so the feature vector ``[<pol>_s..., temperature, humidity]``
is an invertible affine map of the latent vector and the MLR calibration
is exactly specified. The reference is the hourly mean of the latent
pollutant over the full acquisition grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .core import POLLUTANTS, ChannelId, PeriodSeries, RawSeries, ReferenceSeries, parse_timestamp

DAY = 86400.0
HOUR = 3600.0
PERIOD_BANDS = {"low": (6 * HOUR, math.inf), "mid": (HOUR, 6 * HOUR), "high": (0.0, HOUR)}
AMBIENT = ("temperature", "humidity")


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    period: float
    phase: float = 0.0


@dataclass(frozen=True)
class BandNoise:
    """Random-phase sinusoid sum with total standard deviation ``std`` and
    periods between ``min_period`` and ``max_period`` seconds."""

    std: float
    min_period: float
    max_period: float
    n_terms: int = 16


@dataclass(frozen=True)
class LatentSpec:
    mean: float
    sinusoids: tuple[Sinusoid, ...] = ()
    bands: tuple[BandNoise, ...] = ()


@dataclass(frozen=True)
class GasSensorSpec:
    pollutant: str
    response: Mapping[str, float]  # counts per unit of each latent
    zero: float = 0.0
    ae_base: float = 250.0
    ae_temp: float = 1.5
    noise: float = 0.0  # per-electrode white noise, counts


def default_latents() -> dict[str, LatentSpec]:
    return {
        "O3": LatentSpec(
            50.0,
            (Sinusoid(20.0, DAY, -2.0), Sinusoid(5.0, DAY / 2, 0.5)),
            (BandNoise(10.0, 6 * HOUR, 4 * DAY), BandNoise(5.0, 20 * 60, 3 * HOUR)),
        ),
        "NO2": LatentSpec(
            40.0,
            (Sinusoid(10.0, DAY, -2.0 + math.pi), Sinusoid(8.0, DAY / 2, 1.0)),
            (BandNoise(8.0, 6 * HOUR, 4 * DAY), BandNoise(6.0, 15 * 60, 3 * HOUR)),
        ),
        "NO": LatentSpec(
            12.0,
            (Sinusoid(6.0, DAY, -2.5), Sinusoid(4.0, DAY / 2, 0.3)),
            (BandNoise(4.0, 6 * HOUR, 4 * DAY), BandNoise(6.0, 5 * 60, 2 * HOUR)),
        ),
        "temperature": LatentSpec(
            14.0, (Sinusoid(5.0, DAY, -2.2),), (BandNoise(2.0, 12 * HOUR, 6 * DAY),)
        ),
        "humidity": LatentSpec(
            60.0, (Sinusoid(12.0, DAY, -2.2 + math.pi),), (BandNoise(6.0, 12 * HOUR, 6 * DAY),)
        ),
    }


def default_sensors(noise: float = 0.0) -> tuple[GasSensorSpec, ...]:
    return (
        GasSensorSpec("O3", {"O3": 1.6, "NO2": 1.3, "temperature": 2.0, "humidity": -0.3}, 30.0, 250.0, 1.5, noise),
        GasSensorSpec("NO2", {"NO2": 2.2, "O3": 0.15, "temperature": 1.2, "humidity": 0.2}, 20.0, 230.0, 1.2, noise),
        GasSensorSpec("NO", {"NO": 4.0, "temperature": 1.0, "humidity": 0.1}, 15.0, 260.0, 2.0, noise),
    )


@dataclass(frozen=True)
class ScenarioSpec:
    duration_days: float = 30.0
    t_s: float = 2.0
    start: str = "2021-01-15T00:00:00Z"
    latents: Mapping[str, LatentSpec] = field(default_factory=default_latents)
    sensors: tuple[GasSensorSpec, ...] = field(default_factory=default_sensors)
    temperature_noise: float = 0.0
    humidity_noise: float = 0.0
    outlier_rate: float = 0.0
    outlier_magnitude: float = 10.0  # multiples of the clean channel's standard deviation
    gap_rate: float = 0.0
    hold_period: float = 0.0  # > 0: latents held constant over blocks of this length
    seed: int = 0

    def __post_init__(self):
        if not self.duration_days > 0 or not self.t_s > 0:
            raise ValueError("duration and t_s must be positive")
        for name in ("temperature_noise", "humidity_noise", "outlier_magnitude", "hold_period"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if any(s.noise < 0 for s in self.sensors):
            raise ValueError("sensor noise must be non-negative")
        for name in ("outlier_rate", "gap_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        pols = [s.pollutant for s in self.sensors]
        if sorted(pols) != sorted(p for p in self.latents if p not in AMBIENT):
            raise ValueError("need exactly one gas sensor per pollutant latent")
        if any(a not in self.latents for a in AMBIENT):
            raise ValueError("latents must include temperature and humidity")

    @property
    def pollutants(self) -> tuple[str, ...]:
        return tuple(s.pollutant for s in self.sensors)

    @property
    def latent_names(self) -> tuple[str, ...]:
        return self.pollutants + AMBIENT

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f"{p.lower()}_s" for p in self.pollutants) + AMBIENT


@dataclass(frozen=True, eq=False)
class GroundTruth:
    feature_names: tuple[str, ...]
    latent_names: tuple[str, ...]
    mixing: np.ndarray  # features = mixing @ latents + offset
    offset: np.ndarray
    beta: dict[str, np.ndarray]  # per pollutant, intercept first, over feature_names
    latent_hourly: PeriodSeries

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.mixing))


def noiseless_scenario(**kw) -> ScenarioSpec:
    """Identifiable case: no noise, outliers or gaps, latents constant within each hour."""
    kw.setdefault("hold_period", HOUR)
    return ScenarioSpec(**kw)


def noisy_scenario(noise: float = 4.0, **kw) -> ScenarioSpec:
    kw.setdefault("sensors", default_sensors(noise))
    kw.setdefault("temperature_noise", 0.2)
    kw.setdefault("humidity_noise", 1.0)
    return ScenarioSpec(**kw)


def with_fast_component(spec: ScenarioSpec, pollutant: str, std: float = 8.0,
                        min_period: float = 120.0, max_period: float = 1200.0) -> ScenarioSpec:
    """Add a high-frequency band to one pollutant (an NO-like, spiky regime)."""
    latents = dict(spec.latents)
    lat = latents[pollutant]
    latents[pollutant] = replace(lat, bands=lat.bands + (BandNoise(std, min_period, max_period),))
    return replace(spec, latents=latents)


def _latent_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, index])


def _band_terms(band: BandNoise, rng: np.random.Generator):
    freqs = rng.uniform(1.0 / band.max_period, 1.0 / band.min_period, band.n_terms)
    phases = rng.uniform(0.0, 2 * math.pi, band.n_terms)
    amps = np.full(band.n_terms, band.std * math.sqrt(2.0 / band.n_terms))
    return freqs, phases, amps


def _components(spec: ScenarioSpec, name: str):
    """(amplitude, frequency, phase) of every sinusoid making up one latent."""
    lat = spec.latents[name]
    rng = _latent_rng(spec.seed, spec.latent_names.index(name))
    amps = [s.amplitude for s in lat.sinusoids]
    freqs = [1.0 / s.period for s in lat.sinusoids]
    phases = [s.phase for s in lat.sinusoids]
    for band in lat.bands:
        f, p, a = _band_terms(band, rng)
        freqs.extend(f)
        phases.extend(p)
        amps.extend(a)
    return np.asarray(amps), np.asarray(freqs), np.asarray(phases)


def spectral_profile(spec: ScenarioSpec, pollutant: str) -> dict[str, float]:
    """Variance of one latent split into period bands (low >= 6 h, mid 1-6 h, high < 1 h).

    Returns fractions per band plus ``total`` (the absolute variance). With
    zero total variance the fractions are NaN and ``degenerate`` is 1.
    """
    amps, freqs, _ = _components(spec, pollutant)
    var = amps ** 2 / 2
    periods = 1.0 / freqs if len(freqs) else np.empty(0)
    total = float(var.sum())
    out = {}
    for band, (lo, hi) in PERIOD_BANDS.items():
        v = float(var[(periods >= lo) & (periods < hi)].sum())
        out[band] = v / total if total > 0 else math.nan
    out["total"] = total
    out["degenerate"] = float(total == 0)
    return out


def _evaluate_latent(spec: ScenarioSpec, name: str, t: np.ndarray) -> np.ndarray:
    amps, freqs, phases = _components(spec, name)
    out = np.full(len(t), spec.latents[name].mean)
    for a, f, p in zip(amps, freqs, phases):
        if a:
            out += a * np.cos(2 * math.pi * f * t + p)
    return out


def mixing_matrix(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(M, offset)`` with ``features = M @ latents + offset``."""
    names = spec.latent_names
    n = len(names)
    M = np.zeros((n, n))
    offset = np.zeros(n)
    for i, sensor in enumerate(spec.sensors):
        for latent, gain in sensor.response.items():
            M[i, names.index(latent)] = gain
        offset[i] = sensor.zero
    for i, name in enumerate(AMBIENT, start=len(spec.sensors)):
        M[i, names.index(name)] = 1.0
    return M, offset


def true_beta(spec: ScenarioSpec) -> dict[str, np.ndarray]:
    M, offset = mixing_matrix(spec)
    inv = np.linalg.inv(M)
    out = {}
    for i, pol in enumerate(spec.pollutants):
        c = inv[i]
        out[pol] = np.concatenate(([-c @ offset], c))
    return out


def generate(spec: ScenarioSpec):
    """Build ``(raw, references, truth)``.

    ``references`` maps each pollutant to its hourly ReferenceSeries; the raw
    series carries ``<pol>_we``/``<pol>_ae`` pairs plus temperature and
    humidity on a ``t_s`` grid.
    """
    start = parse_timestamp(spec.start)
    n = int(round(spec.duration_days * DAY / spec.t_s))
    t = np.arange(n, dtype=np.float64) * spec.t_s
    t_eval = t - np.fmod(t, spec.hold_period) if spec.hold_period > 0 else t
    latents = {name: _evaluate_latent(spec, name, t_eval) for name in spec.latent_names}

    M, offset = mixing_matrix(spec)
    if np.linalg.matrix_rank(M) < len(M):
        raise ValueError("sensor response is not invertible")
    L = np.column_stack([latents[k] for k in spec.latent_names])
    features = L @ M.T + offset

    noise_rng = np.random.default_rng([spec.seed, 2])
    channels, ids, cols = [], [], []
    for i, sensor in enumerate(spec.sensors):
        ae = sensor.ae_base + sensor.ae_temp * latents["temperature"]
        we = ae + features[:, i]
        if sensor.noise > 0:
            we = we + noise_rng.normal(0.0, sensor.noise, n)
            ae = ae + noise_rng.normal(0.0, sensor.noise, n)
        low = sensor.pollutant.lower()
        channels += [f"{low}_we", f"{low}_ae"]
        ids += [ChannelId("gas_we", sensor.pollutant), ChannelId("gas_ae", sensor.pollutant)]
        cols += [we, ae]
    for name, sd in (("temperature", spec.temperature_noise), ("humidity", spec.humidity_noise)):
        v = latents[name]
        if sd > 0:
            v = v + noise_rng.normal(0.0, sd, n)
        channels.append(name)
        ids.append(ChannelId(name))
        cols.append(v)
    values = np.column_stack(cols)

    if spec.outlier_rate > 0:
        out_rng = np.random.default_rng([spec.seed, 3])
        for j, cid in enumerate(ids):
            if not cid.is_gas:
                continue
            hit = out_rng.random(n) < spec.outlier_rate
            sign = np.where(out_rng.random(n) < 0.5, -1.0, 1.0)
            scale = spec.outlier_magnitude * float(np.std(values[:, j]))
            values[hit, j] += sign[hit] * scale

    times = start + np.round(t).astype(np.int64)
    keep = np.ones(n, dtype=bool)
    if spec.gap_rate > 0:
        keep = np.random.default_rng([spec.seed, 4]).random(n) >= spec.gap_rate
    raw = RawSeries(times[keep], values[keep], tuple(channels), tuple(ids), spec.t_s)

    hour = (times // int(HOUR)) * int(HOUR)
    keys, inverse = np.unique(hour, return_inverse=True)
    counts = np.bincount(inverse)
    hourly = np.column_stack([np.bincount(inverse, weights=latents[k]) / counts for k in spec.latent_names])
    latent_hourly = PeriodSeries(HOUR, keys, spec.latent_names, hourly)
    references = {
        pol: ReferenceSeries(HOUR, pol, keys, hourly[:, spec.latent_names.index(pol)]) for pol in spec.pollutants
    }
    truth = GroundTruth(spec.feature_names, spec.latent_names, M, offset, true_beta(spec), latent_hourly)
    return raw, references, truth


PRESETS = {"default": noisy_scenario, "noisy": noisy_scenario, "noiseless": noiseless_scenario}


def scenario_from_dict(d: Mapping) -> ScenarioSpec:
    """Build a scenario from a config section: ``preset`` plus scalar fields.

    ``noise`` sets the electrode noise of every gas sensor; ``fast`` lists
    pollutants that get an extra high-frequency band.
    """
    d = dict(d)
    preset = d.pop("preset", "default")
    fast = d.pop("fast", [])
    if preset not in PRESETS:
        raise ValueError(f"unknown scenario preset {preset!r}; choose from {sorted(PRESETS)}")
    if "noise" in d and preset == "noiseless":
        d["sensors"] = default_sensors(float(d.pop("noise")))
    known = set(ScenarioSpec.__dataclass_fields__) | {"noise"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown scenario fields {sorted(unknown)}")
    spec = PRESETS[preset](**d)
    for pol in fast:
        spec = with_fast_component(spec, pol)
    return spec
