"""Synthetic ground-truth building data for training and verification.

The generator is a one-zone thermal simulation at a 1-minute step whose
linear core is exactly the RC recursion, driven by a hysteresis thermostat,
sinusoidal weather, solar irradiation from the site geometry, plus two
deliberately nonlinear, unmodeled heat gains (an occupancy schedule and a
quadratic irradiation term). A plain RC fit is therefore biased by design,
while the nonlinear part is predictable from time and irradiation features.

Everything is deterministic given (scenario, seed). Measurement noise is
added to the stored zone temperature only; the noise-free trajectory stays
available in the ``temperature_true`` channel for oracle tests.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import rc
from .timeseries import TimeSeriesTable, write_csv

__all__ = ["BuildingScenario", "simulate_building", "inject_faults", "make_dataset", "load_scenario", "save_scenario"]


@dataclass
class BuildingScenario:
    """Ground-truth parameters and drivers for one simulated building."""

    # linear core at the 1-minute step, sized so that an average heating
    # power moves the zone ~1 degC in 2 h and a 25 degC colder outside
    # drains ~1.5 degC in 6 h (the usual small-building regime)
    a: float = 6.9e-6  # degC per W-minute of heating power
    b: float = 1.7e-4  # loss rate to the outside, 1/min
    c: float = 1.2e-4  # loss rate to the neighbour, 1/min
    e1: float = 8.0e-6  # degC per (W/m2)-minute of transformed irradiation

    # unmodeled nonlinear gains injected into dT
    occupancy_gain: float = 0.0014  # degC/min while occupied
    irr_quad_gain: float = 0.002  # degC/min at 1000 W/m2, scales with (I/1000)^2

    # thermostat
    control_mode: str = "thermostat"  # thermostat | off | constant
    constant_power: float = 0.0
    setpoint_heating: float = 21.0
    setpoint_cooling: float = 23.0
    deadband: float = 1.0
    heater_power: float = 1200.0  # W, sized to overcome the design-day losses
    cooler_power: float = -900.0  # W, negative by convention
    heating_months: tuple = (1, 2, 3, 4, 11, 12)
    cooling_months: tuple = (5, 6, 7, 8)

    # weather and site
    t_out_mean: float = 10.0
    t_out_seasonal: float = 12.5  # coldest at new year
    t_out_daily: float = 4.5
    t_out_noise: float = 0.6
    irr_peak: float = 650.0  # clear-sky horizontal peak, W/m2
    latitude_deg: float = 47.4
    window_azimuth_deg: float = 0.0  # north-south aligned plane facing east
    neigh_setpoint: float = 22.0
    neigh_swing: float = 3.0  # daily setpoint swing, peaking mid-afternoon

    # measurement and span
    noise_std: float = 0.1  # degC, stored zone temperature only
    days: int = 180
    start_year: int = 2021
    start_month: int = 1
    start_day: int = 1
    fault_rate: float = 0.0  # injected sensor faults per 30 simulated days

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.e1) <= 0:
            raise ValueError("core parameters a, b, c, e1 must be positive")
        if 1.0 - self.b - self.c <= 0:
            raise ValueError("decay 1 - b - c must stay positive")
        if self.noise_std < 0:
            raise ValueError("noise level must be non-negative")
        if self.control_mode not in ("thermostat", "off", "constant"):
            raise ValueError(f"unknown control mode {self.control_mode!r}")

    @property
    def start(self):
        return datetime(self.start_year, self.start_month, self.start_day, tzinfo=timezone.utc)


def _ar1(rng, n, scale, rho=0.995):
    noise = np.empty(n)
    noise[0] = 0.0
    eps = rng.normal(0.0, scale * np.sqrt(1.0 - rho * rho), n)
    for k in range(1, n):
        noise[k] = rho * noise[k - 1] + eps[k]
    return noise


def simulate_building(scenario, seed):
    """1-minute table with channels temperature, temperature_true,
    temperature_out, temperature_neigh, irradiation and power."""
    rng = np.random.default_rng(seed)
    n = scenario.days * 1440
    start = scenario.start
    stamps = np.datetime64(start.replace(tzinfo=None), "s") + np.arange(n) * np.timedelta64(60, "s")

    day_of_year = (stamps.astype("datetime64[D]") - stamps.astype("datetime64[Y]").astype("datetime64[D]")).astype(int)
    minute_of_day = ((stamps - stamps.astype("datetime64[D]")).astype("timedelta64[m]")).astype(int)
    month = (stamps.astype("datetime64[M]").astype(int) % 12) + 1
    weekday = ((stamps.astype("datetime64[D]").astype(int) + 4) % 7).astype(int)  # Monday = 0
    hour = minute_of_day // 60

    t_out = (
        scenario.t_out_mean
        - scenario.t_out_seasonal * np.cos(2.0 * np.pi * day_of_year / 365.0)
        - scenario.t_out_daily * np.cos(2.0 * np.pi * (minute_of_day - 120.0) / 1440.0)
        + _ar1(rng, n, scenario.t_out_noise)
    )

    _, altitude = rc.solar_position(stamps, np.deg2rad(scenario.latitude_deg))
    irradiation = scenario.irr_peak * np.maximum(np.sin(altitude), 0.0)
    azimuth, _ = rc.solar_position(stamps, np.deg2rad(scenario.latitude_deg))
    geom = rc.SolarGeometry(azimuth, altitude, np.deg2rad(scenario.window_azimuth_deg), irradiation)
    q_irr = rc.irradiance_transform(geom)

    # occupancy: evenings and nights, all day on weekends
    occupied = (hour >= 18) | (hour < 7) | (weekday >= 5)
    g_nl = scenario.occupancy_gain * occupied + scenario.irr_quad_gain * (irradiation / 1000.0) ** 2

    # neighbour zone: filtered outside influence plus its own daily
    # setpoint schedule (out of phase with the occupancy pattern so the
    # neighbour-gradient coefficient stays identifiable)
    neigh_target = scenario.neigh_setpoint + scenario.neigh_swing * np.sin(
        2.0 * np.pi * (minute_of_day - 540.0) / 1440.0
    )
    t_neigh = np.empty(n)
    t_neigh[0] = scenario.neigh_setpoint
    for k in range(n - 1):
        t_neigh[k + 1] = (
            t_neigh[k]
            + 0.0008 * (t_out[k] - t_neigh[k])
            + 0.004 * (neigh_target[k] - t_neigh[k])
        )

    heating_season = np.isin(month, scenario.heating_months)
    cooling_season = np.isin(month, scenario.cooling_months)

    temp = np.empty(n)
    temp[0] = scenario.setpoint_heating
    power = np.zeros(n)
    heater_on = False
    cooler_on = False
    half_band = scenario.deadband / 2.0
    a, b, c, e1 = scenario.a, scenario.b, scenario.c, scenario.e1
    for k in range(n - 1):
        if scenario.control_mode == "constant":
            q = scenario.constant_power
        elif scenario.control_mode == "off":
            q = 0.0
        elif heating_season[k]:
            if temp[k] < scenario.setpoint_heating - half_band:
                heater_on = True
            elif temp[k] > scenario.setpoint_heating + half_band:
                heater_on = False
            q = scenario.heater_power if heater_on else 0.0
        elif cooling_season[k]:
            if temp[k] > scenario.setpoint_cooling + half_band:
                cooler_on = True
            elif temp[k] < scenario.setpoint_cooling - half_band:
                cooler_on = False
            q = scenario.cooler_power if cooler_on else 0.0
        else:
            q = 0.0
        power[k] = q
        temp[k + 1] = (
            temp[k]
            + a * q
            - b * (temp[k] - t_out[k])
            - c * (temp[k] - t_neigh[k])
            + e1 * q_irr[k]
            + g_nl[k]
        )

    stored = temp + (rng.normal(0.0, scenario.noise_std, n) if scenario.noise_std > 0 else 0.0)
    return TimeSeriesTable(
        start,
        60,
        {
            "temperature": stored,
            "temperature_true": temp.copy(),
            "temperature_out": t_out,
            "temperature_neigh": t_neigh,
            "irradiation": irradiation,
            "power": power,
        },
    )


def inject_faults(table, scenario, rng):
    """Sensor faults: constant streaks and missing runs, seeded."""
    n_faults = int(round(scenario.fault_rate * scenario.days / 30.0))
    if n_faults == 0:
        return table
    out = table
    n = table.length
    for i in range(n_faults):
        kind = i % 3
        if kind == 0:  # stuck irradiation sensor for 25 h (past the 20 h threshold)
            span = 25 * 60
            start = int(rng.integers(0, max(1, n - span)))
            values = out.channel("irradiation").copy()
            values[start : start + span] = values[start]
            out = out.with_channel("irradiation", values)
        elif kind == 1:  # stuck outside-temperature sensor for 45 min
            span = 45
            start = int(rng.integers(0, max(1, n - span)))
            values = out.channel("temperature_out").copy()
            values[start : start + span] = values[start]
            out = out.with_channel("temperature_out", values)
        else:  # zone sensor dropout for 2 h (too long to interpolate)
            span = 120
            start = int(rng.integers(0, max(1, n - span)))
            values = out.channel("temperature").copy()
            values[start : start + span] = np.nan
            out = out.with_channel("temperature", values)
    return out


DATASET_FILES = {
    "zone": ("temperature",),
    "neighbor": ("temperature_neigh",),
    "weather": ("temperature_out", "irradiation"),
    "power": ("power",),
}


def make_dataset(scenario, seed, outdir):
    """Simulate and write the raw CSV files (zone, neighbor, weather, power).

    Injected faults exercise the preprocessing stage; the noise-free
    trajectory is withheld from the CSVs on purpose (a real building would
    not provide it). Returns the file paths keyed by their role.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    table = simulate_building(scenario, seed)
    table = inject_faults(table, scenario, np.random.default_rng(seed + 1))
    paths = {}
    for name, channels in DATASET_FILES.items():
        path = outdir / f"{name}.csv"
        write_csv(table, path, channels=channels)
        paths[name] = path
    return paths


def save_scenario(scenario, path):
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(scenario):
            value = getattr(scenario, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            fh.write(f"{f.name} {value}\n")


def load_scenario(path):
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = line.split(None, 1)
            entries[key] = value
    kwargs = {}
    for f in dataclasses.fields(BuildingScenario):
        if f.name not in entries:
            continue
        raw = entries.pop(f.name)
        if f.type in ("float", float):
            kwargs[f.name] = float(raw)
        elif f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("tuple", tuple):
            kwargs[f.name] = tuple(int(v) for v in raw.split(",")) if raw else ()
        else:
            kwargs[f.name] = raw
    if entries:
        raise ValueError(f"unknown scenario keys: {sorted(entries)}")
    return BuildingScenario(**kwargs)
