"""Phase stabilization of the unbalanced interferometer.

The plant is the interferometer phase phi = drift + actuator.  The drift part
wanders (constant rate plus a random walk), the actuator part is a phase
shifter with a slew limit and a finite span.  A power meter samples OUT1 at
``meter_rate_hz``; a discrete PID on the OUT1 fraction steers the actuator so
that phi sits at the quadrature point pi/2 (OUT1 = P_in / 2).

The controller output is applied as an actuator increment, a <- a - u, so the
proportional term acts like an integrator on the phase (a piezo stepped by
its driver).  Near quadrature e = setpoint - OUT1/P_in ~ (V/2)(phi - pi/2),
so a positive error means phi is too large and the actuator moves down.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .physsim import make_rng

QUADRATURE = math.pi / 2


@dataclass(frozen=True)
class PlantConfig:
    drift_rate: float = 0.005          # rad/s
    drift_noise: float = 1e-4          # rad^2/s
    fringe_visibility: float = 0.98
    input_power_mw: float = 1.0
    meter_noise: float = 0.002         # relative RMS
    meter_rate_hz: float = 10.0
    actuator_range_rad: float = 4 * math.pi
    actuator_slew_rad_per_s: float = 20.0

    def __post_init__(self):
        for name in ("drift_noise", "input_power_mw", "meter_noise", "meter_rate_hz",
                     "actuator_range_rad", "actuator_slew_rad_per_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.fringe_visibility <= 1:
            raise ValueError("fringe_visibility must be in [0, 1]")
        if self.meter_rate_hz == 0:
            raise ValueError("meter_rate_hz must be > 0")
        if self.actuator_range_rad and self.actuator_range_rad < 2 * math.pi:
            raise ValueError("actuator_range_rad must span at least 2 pi (or 0 for unlimited)")

    @property
    def dt(self):
        return 1.0 / self.meter_rate_hz

    def with_(self, **changes) -> "PlantConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.8
    ki: float = 0.2
    kd: float = 0.0
    integral_clamp: float = 0.02
    setpoint: float = 0.5

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("gains must be >= 0")
        if self.integral_clamp <= 0:
            raise ValueError("integral_clamp must be > 0")
        if not 0 <= self.setpoint <= 1:
            raise ValueError("setpoint is an OUT1 fraction in [0, 1]")

    @classmethod
    def zero(cls, **kw) -> "PidGains":
        return cls(kp=0.0, ki=0.0, kd=0.0, **kw)


@dataclass
class PlantState:
    drift_phase: float = QUADRATURE
    actuator_phase: float = 0.0
    t: float = 0.0

    @property
    def phase(self):
        return self.drift_phase + self.actuator_phase


def port_powers(phase, plant: PlantConfig):
    """Noise-free (OUT1, OUT2) in mW."""
    c = plant.fringe_visibility * np.cos(phase)
    p = plant.input_power_mw
    return p * (1 + c) / 2, p * (1 - c) / 2


def step_plant(state: PlantState, control_phase, dt, plant: PlantConfig, rng=None, events=None):
    """Advance one meter interval.

    ``control_phase`` is the requested actuator phase; the actuator moves
    towards it at most ``slew * dt``.  Returns (new state, out1_mw, out2_mw)
    where the powers are meter readings (with read noise when ``rng`` is
    given) at the end of the interval.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    move = control_phase - state.actuator_phase
    limit = plant.actuator_slew_rad_per_s * dt
    move = min(max(move, -limit), limit)
    actuator = state.actuator_phase + move
    half = plant.actuator_range_rad / 2
    if half and abs(actuator) > half:
        wrapped = actuator - math.copysign(2 * math.pi, actuator)
        if events is not None:
            events.append({"t": state.t + dt, "event": "actuator_wrap", "from": actuator, "to": wrapped})
        actuator = wrapped
    drift = state.drift_phase + plant.drift_rate * dt
    n_drift = rng.standard_normal() if rng is not None else 0.0
    n_meter = rng.standard_normal() if rng is not None else 0.0
    drift += math.sqrt(plant.drift_noise * dt) * n_drift
    new = PlantState(drift, actuator, state.t + dt)
    out1, out2 = port_powers(new.phase, plant)
    out1 = out1 * (1 + plant.meter_noise * n_meter)
    out2 = out2 * (1 + plant.meter_noise * n_meter)
    return new, float(out1), float(out2)


@dataclass
class StabilityTrace:
    t: np.ndarray
    out1_mw: np.ndarray
    out2_mw: np.ndarray
    phi_rad: np.ndarray
    control: np.ndarray
    input_power_mw: float
    setpoint: float
    events: list = field(default_factory=list)

    @property
    def deviation(self) -> np.ndarray:
        """OUT1 deviation from the setpoint as a fraction of the input power."""
        return self.out1_mw / self.input_power_mw - self.setpoint

    @property
    def rms_deviation(self) -> float:
        return float(np.sqrt(np.mean(self.deviation ** 2)))

    def settling_step(self, start, tol=0.01) -> int | None:
        """Steps after ``start`` until OUT1 stays within ``tol`` (relative to the setpoint)."""
        ok = np.abs(self.deviation[start:]) <= tol * self.setpoint
        bad = np.flatnonzero(~ok)
        if bad.size == 0:
            return 0
        if bad[-1] == ok.size - 1:
            return None
        return int(bad[-1] + 1)

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "out1_mw", "phi_rad", "control"])
            for row in zip(self.t, self.out1_mw, self.phi_rad, self.control):
                w.writerow([repr(float(v)) for v in row])
        return Path(path)


def _n_steps(plant, duration_s):
    if duration_s <= 0:
        raise ValueError("duration must be > 0")
    steps = int(round(duration_s * plant.meter_rate_hz))
    if steps < 10:
        raise ValueError("duration gives fewer than 10 control steps")
    return steps


def _disturbance_map(disturbances, dt):
    out = {}
    for t, rad in disturbances or ():
        k = int(round(t / dt))
        out[k] = out.get(k, 0.0) + float(rad)
    return out


def run_closed_loop(plant: PlantConfig, gains: PidGains, duration_s, seed=0,
                    disturbances=None, initial_phase=QUADRATURE, noise=True) -> StabilityTrace:
    """Simulate the PID loop.  ``disturbances`` is a list of (time_s, phase step)."""
    steps = _n_steps(plant, duration_s)
    dt = plant.dt
    rng = make_rng(seed) if noise else None
    kicks = _disturbance_map(disturbances, dt)
    state = PlantState(initial_phase, 0.0, 0.0)
    out1, _ = port_powers(state.phase, plant)
    reading = float(out1)
    integral = 0.0
    prev_e = None
    events = []
    cols = np.empty((5, steps))
    command = 0.0
    for k in range(steps):
        e = gains.setpoint - reading / plant.input_power_mw if plant.input_power_mw else 0.0
        integral = min(max(integral + e * dt, -gains.integral_clamp), gains.integral_clamp)
        deriv = 0.0 if prev_e is None else (e - prev_e) / dt
        prev_e = e
        u = gains.kp * e + gains.ki * integral + gains.kd * deriv
        command = state.actuator_phase - u
        if k in kicks:
            state = PlantState(state.drift_phase + kicks[k], state.actuator_phase, state.t)
        state, reading, out2 = step_plant(state, command, dt, plant, rng, events)
        cols[:, k] = state.t, reading, out2, state.phase, u
    return StabilityTrace(cols[0], cols[1], cols[2], cols[3], cols[4],
                          plant.input_power_mw, gains.setpoint, events)


def run_open_loop(plant: PlantConfig, duration_s, seed=0, disturbances=None,
                  initial_phase=QUADRATURE, noise=True, setpoint=0.5) -> StabilityTrace:
    """The same plant with the actuator held still."""
    steps = _n_steps(plant, duration_s)
    dt = plant.dt
    rng = make_rng(seed) if noise else None
    kicks = _disturbance_map(disturbances, dt)
    state = PlantState(initial_phase, 0.0, 0.0)
    events = []
    cols = np.empty((5, steps))
    for k in range(steps):
        if k in kicks:
            state = PlantState(state.drift_phase + kicks[k], state.actuator_phase, state.t)
        state, out1, out2 = step_plant(state, state.actuator_phase, dt, plant, rng, events)
        cols[:, k] = state.t, out1, out2, state.phase, 0.0
    return StabilityTrace(cols[0], cols[1], cols[2], cols[3], cols[4],
                          plant.input_power_mw, setpoint, events)
