"""Lumped RC baseline: solar transform, least-squares fit, simulation.

One thermal state at a 1-minute step:

    T[k+1] = T[k] + a*Qheat[k] - b*(T[k] - Tout[k]) - c*(T[k] - Tneigh[k])
             + e1*Qirr[k]

with Qirr the horizontal irradiation reflected through the window plane.
The four coefficients lump capacitance, resistances and window
permissivity; they are identified in one least-squares solve and should
come out positive for a physical building (checked as a diagnostic, not
enforced).

When compared against the 15-minute models, the control input is held
constant over each 15-minute interval while the recursion still runs at
1 minute; exogenous series are upsampled linearly.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import timedelta, timezone

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_is_fitted, require_channels

__all__ = [
    "RcParams",
    "FitDiagnostics",
    "SolarGeometry",
    "solar_position",
    "irradiance_transform",
    "fit_least_squares",
    "rc_step",
    "rc_simulate",
    "rc_closed_form",
    "upsample_linear",
    "RcModel",
]

MINUTE = 60
STEPS_PER_CONTROL = 15


@dataclass
class RcParams:
    """Lumped coefficients at a 1-minute step: (a, b, c, e1)."""

    a: float
    b: float
    c: float
    e1: float

    def as_array(self):
        return np.array([self.a, self.b, self.c, self.e1])

    @classmethod
    def from_array(cls, values):
        a, b, c, e1 = (float(v) for v in values)
        return cls(a, b, c, e1)

    def physically_plausible(self):
        """All-positive coefficients with a contracting state: diagnostic only."""
        return self.a > 0 and self.b > 0 and self.c > 0 and self.e1 > 0 and (1.0 - self.b - self.c) > 0

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for name in ("a", "b", "c", "e1"):
                fh.write(f"{name} {getattr(self, name):.17g}\n")

    @classmethod
    def load(cls, path):
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    key, value = line.split()
                    values[key] = float(value)
        return cls(values["a"], values["b"], values["c"], values["e1"])


@dataclass
class FitDiagnostics:
    n_rows: int
    condition_number: float
    residual_norm: float
    plausible: bool


@dataclass
class SolarGeometry:
    """Sun angles plus the window orientation and measured irradiation.

    ``azimuth`` is measured from north, clockwise; ``orientation`` is the
    counter-clockwise rotation of a north-south-aligned, east-facing window
    plane. Altitude and both angles are in radians.
    """

    azimuth: np.ndarray
    altitude: np.ndarray
    orientation: float
    irradiation: np.ndarray


def _day_of_year_and_seconds(timestamps):
    if isinstance(timestamps, (list, tuple)) and timestamps and hasattr(timestamps[0], "tzinfo"):
        timestamps = [
            t.astimezone(timezone.utc).replace(tzinfo=None) if t.tzinfo else t for t in timestamps
        ]
    stamps = np.asarray(timestamps, dtype="datetime64[s]")
    days = stamps.astype("datetime64[D]")
    years = stamps.astype("datetime64[Y]")
    doy = (days - years.astype("datetime64[D]")).astype(np.int64) + 1
    secs = (stamps - days).astype(np.int64)
    return doy.astype(np.float64), secs.astype(np.float64)


def solar_position(timestamps, latitude):
    """Approximate sun azimuth/altitude (rad) from declination + hour angle.

    Accuracy is of the order of one degree (no equation of time, solar noon
    taken at 12:00 UTC), which is sufficient for the irradiation transform.
    """
    doy, secs = _day_of_year_and_seconds(timestamps)
    decl = np.deg2rad(23.45) * np.sin(2.0 * np.pi * (284.0 + doy) / 365.0)
    hour_angle = np.deg2rad((secs / 3600.0 - 12.0) * 15.0)
    sin_alt = np.sin(latitude) * np.sin(decl) + np.cos(latitude) * np.cos(decl) * np.cos(hour_angle)
    altitude = np.arcsin(np.clip(sin_alt, -1.0, 1.0))
    azimuth = np.arctan2(
        np.sin(hour_angle),
        np.cos(hour_angle) * np.sin(latitude) - np.tan(decl) * np.cos(latitude),
    ) + np.pi
    return azimuth % (2.0 * np.pi), altitude


def irradiance_transform(geometry, min_altitude=np.deg2rad(1.0)):
    """Reflect horizontal irradiation onto the window plane.

    Qirr = sin(azimuth - orientation) * cos(altitude) / sin(altitude) * I,
    clamped to zero when the sun is at or below ``min_altitude`` (the
    formula is singular at the horizon) or behind the window plane.
    """
    az = np.asarray(geometry.azimuth, dtype=np.float64)
    alt = np.asarray(geometry.altitude, dtype=np.float64)
    irr = np.asarray(geometry.irradiation, dtype=np.float64)
    facing = np.sin(az - geometry.orientation)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = facing * np.cos(alt) / np.sin(alt) * irr
    q = np.where((alt <= min_altitude) | (facing < 0.0), 0.0, q)
    return q


def fit_least_squares(temperature, q_heat, t_out, t_neigh, q_irr):
    """Identify (a, b, c, e1) from 1-minute data by least squares.

    The regression is dT[k] = y[k] . p with y = [Qheat, -(T - Tout),
    -(T - Tneigh), Qirr]; rows containing any missing value are skipped.
    Solved with an SVD-backed least-squares routine; the condition number
    of the regressor matrix is reported alongside.
    """
    temperature = np.asarray(temperature, dtype=np.float64)
    q_heat, t_out, t_neigh, q_irr = (np.asarray(v, dtype=np.float64) for v in (q_heat, t_out, t_neigh, q_irr))
    dT = temperature[1:] - temperature[:-1]
    Y = np.column_stack(
        [
            q_heat[:-1],
            -(temperature[:-1] - t_out[:-1]),
            -(temperature[:-1] - t_neigh[:-1]),
            q_irr[:-1],
        ]
    )
    keep = np.isfinite(dT) & np.all(np.isfinite(Y), axis=1)
    Y, X = Y[keep], dT[keep]
    if Y.shape[0] < 4:
        raise ValueError(f"need at least 4 complete rows, got {Y.shape[0]}")
    p, residuals, rank, _ = np.linalg.lstsq(Y, X, rcond=None)
    if rank < 4:
        raise ValueError("regressor matrix is rank-deficient; the data does not excite all parameters")
    resid = float(np.sqrt(residuals[0])) if residuals.size else float(np.linalg.norm(X - Y @ p))
    params = RcParams.from_array(p)
    diag = FitDiagnostics(
        n_rows=int(Y.shape[0]),
        condition_number=float(np.linalg.cond(Y)),
        residual_norm=resid,
        plausible=params.physically_plausible(),
    )
    return params, diag


def rc_step(params, temperature, q_heat, t_out, t_neigh, q_irr):
    """One 1-minute update of the RC state."""
    return (
        temperature
        + params.a * q_heat
        - params.b * (temperature - t_out)
        - params.c * (temperature - t_neigh)
        + params.e1 * q_irr
    )


def upsample_linear(nodes, steps=STEPS_PER_CONTROL):
    """Linear interpolation of 15-minute node values onto the 1-minute grid.

    ``nodes`` has h+1 entries (interval boundaries); the result has h*steps
    entries, one per minute of the h intervals.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    n = len(nodes) - 1
    xi = np.arange(n * steps, dtype=np.float64) / steps
    return np.interp(xi, np.arange(n + 1, dtype=np.float64), nodes)


def rc_simulate(params, t0, q_heat_ctrl, t_out_nodes, t_neigh_nodes, q_irr_minutely):
    """Simulate h control intervals; report the state on the 15-minute grid.

    ``q_heat_ctrl`` holds h control values, each applied for 15 one-minute
    steps. ``t_out_nodes`` and ``t_neigh_nodes`` carry h+1 boundary values
    and are upsampled linearly; ``q_irr_minutely`` must already be on the
    1-minute grid (h*15 values). Returns the h temperatures at the end of
    each control interval.
    """
    q_heat_ctrl = np.asarray(q_heat_ctrl, dtype=np.float64)
    h = len(q_heat_ctrl)
    q_heat = np.repeat(q_heat_ctrl, STEPS_PER_CONTROL)
    t_out = upsample_linear(t_out_nodes)
    t_neigh = upsample_linear(t_neigh_nodes)
    q_irr = np.asarray(q_irr_minutely, dtype=np.float64)
    n = h * STEPS_PER_CONTROL
    if len(t_out) != n or len(t_neigh) != n or len(q_irr) != n:
        raise ValueError("input series do not cover the simulation span")
    temp = float(t0)
    out = np.empty(h)
    for k in range(n):
        temp = rc_step(params, temp, q_heat[k], t_out[k], t_neigh[k], q_irr[k])
        if (k + 1) % STEPS_PER_CONTROL == 0:
            out[k // STEPS_PER_CONTROL] = temp
    return out


def rc_closed_form(params, t0, q_heat, t_out, t_neigh, q_irr, i):
    """Temperature i one-minute steps ahead, evaluated in closed form.

    T[k+i] = (1-b-c)^i T[k] + sum_{j=1..i} (1-b-c)^(j-1) *
             [a Qheat + b Tout + c Tneigh + e1 Qirr] at step k+i-j.

    Equals the iterated :func:`rc_step` exactly (up to float rounding) and
    serves as its independent oracle. The decay base 1-b-c should lie in
    (0, 1] for a physical model; values outside only weaken the
    interpretation, not the algebra.
    """
    decay = 1.0 - params.b - params.c
    contrib = (
        params.a * np.asarray(q_heat[:i], dtype=np.float64)
        + params.b * np.asarray(t_out[:i], dtype=np.float64)
        + params.c * np.asarray(t_neigh[:i], dtype=np.float64)
        + params.e1 * np.asarray(q_irr[:i], dtype=np.float64)
    )
    powers = decay ** np.arange(i, dtype=np.float64)
    return decay**i * float(t0) + float(np.dot(powers, contrib[::-1]))


class RcModel(BaseEstimator):
    """Estimator facade over the RC fit, with window-level prediction.

    ``fit`` consumes a preprocessed 1-minute table in raw physical units
    (channels: temperature, power, temperature_out, temperature_neigh,
    irradiation). ``predict_window`` anchors at the measured temperature at
    the start of the horizon and simulates the window's controls with
    15-minute holds, returning degrees Celsius.
    """

    CHANNELS = ("temperature", "power", "temperature_out", "temperature_neigh", "irradiation")

    def __init__(self, latitude_deg=47.4, window_azimuth_deg=0.0, min_altitude_deg=1.0):
        self.latitude_deg = latitude_deg
        self.window_azimuth_deg = window_azimuth_deg
        self.min_altitude_deg = min_altitude_deg

    def _transform_irradiation(self, timestamps, irradiation):
        az, alt = solar_position(timestamps, np.deg2rad(self.latitude_deg))
        geom = SolarGeometry(az, alt, np.deg2rad(self.window_azimuth_deg), irradiation)
        return irradiance_transform(geom, min_altitude=np.deg2rad(self.min_altitude_deg))

    def fit(self, table, normalizer=None):
        require_channels(table, self.CHANNELS)
        if table.step != MINUTE:
            raise ValueError("RC identification expects the 1-minute table")
        q_irr = self._transform_irradiation(table.timestamps(), table.channel("irradiation"))
        self.params_, self.diagnostics_ = fit_least_squares(
            table.channel("temperature"),
            table.channel("power"),
            table.channel("temperature_out"),
            table.channel("temperature_neigh"),
            q_irr,
        )
        self.normalizer_ = normalizer
        return self

    def predict_window(self, window, denormalize=True):
        """Horizon prediction in degrees Celsius for a 15-minute window."""
        check_is_fitted(self, "params_")
        if self.normalizer_ is None:
            raise RuntimeError("fit() must receive the normalizer to decode 15-minute windows")
        norm = self.normalizer_
        anchor = window.warm_steps
        h = window.horizon
        temp0 = norm.denormalize_values("temperature", window.temp[anchor])
        u = norm.denormalize_values("power", window.u[anchor : anchor + h])
        t_out = norm.denormalize_values("temperature_out", window.t_out[anchor : anchor + h + 1])
        t_neigh = norm.denormalize_values("temperature_neigh", window.t_neigh[anchor : anchor + h + 1])
        irr_nodes = norm.denormalize_values("irradiation", window.irradiation[anchor : anchor + h + 1])
        irr_minutely = upsample_linear(irr_nodes)
        first_minute = window.start_time + timedelta(seconds=anchor * 900)
        stamps = np.datetime64(first_minute.replace(tzinfo=None), "s") + np.arange(h * STEPS_PER_CONTROL) * np.timedelta64(
            MINUTE, "s"
        )
        q_irr = self._transform_irradiation(stamps, irr_minutely)
        return rc_simulate(self.params_, temp0, u, t_out, t_neigh, q_irr)
