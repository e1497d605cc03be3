"""Fixed-step time-domain simulation of the joint model.

Scenarios start from a solved steady state, apply reference steps or grid
switches at scheduled times, and record the standard output channels.
The integrator is classical RK4 with a fixed step; event times snap to
the step grid so runs at different steps see the same disturbance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .blocks import ControlScheme
from .errors import ConfigError, DegenerateVoltageError, ParameterError
from .plant import GridParams, SystemParams
from .system import FreezeMode, GfmSystem, solve_operating_point


@dataclass(frozen=True)
class StepPref:
    """Set the active power reference to ``value`` (p.u.)."""
    value: float


@dataclass(frozen=True)
class StepQref:
    """Set the reactive power reference to ``value`` (p.u.)."""
    value: float


@dataclass(frozen=True)
class StepVref:
    """Set the voltage reference to ``value`` (p.u.)."""
    value: float


@dataclass(frozen=True)
class SetGrid:
    """Switch the Thevenin grid; electrical states carry over."""
    grid: GridParams


Action = Union[StepPref, StepQref, StepVref, SetGrid]
Event = tuple[float, Action]


@dataclass(frozen=True)
class SimConfig:
    dt: float = 5e-5  # s
    record_decimation: int = 4
    divergence_limit: float = 1e3  # p.u.; any state beyond this aborts the run

    def __post_init__(self):
        if not 0.0 < self.dt <= 1e-4:
            raise ParameterError("step must be positive and at most 1e-4 s")
        if self.record_decimation < 1:
            raise ParameterError("record decimation must be at least 1")
        if self.divergence_limit <= 0.0:
            raise ParameterError("divergence limit must be strictly positive")


@dataclass(frozen=True)
class Scenario:
    """A steady state, a disturbance schedule and a duration."""

    params: SystemParams
    scheme: ControlScheme
    p_ref: float
    q_ref: float = 0.0
    v_ref: float | None = None
    events: tuple[Event, ...] = ()
    duration: float = 2.0
    label: str = ""

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ParameterError("duration must be strictly positive")
        times = [t for t, _ in self.events]
        if any(t < 0.0 or t > self.duration for t in times):
            raise ParameterError("event times must lie within the run")
        if times != sorted(times):
            raise ParameterError("events must be sorted by time")


@dataclass
class SimTrace:
    """Recorded channels of one run.

    ``diverged_at`` is the time at which a state left the admissible
    region (None for a clean run).  ``channels`` maps output labels to
    arrays aligned with ``t``.
    """

    t: np.ndarray
    channels: dict[str, np.ndarray]
    dt: float
    events: tuple[tuple[float, str], ...] = ()
    diverged_at: float | None = None
    label: str = ""

    CSV_COLUMNS = ("t", "P", "Q", "vd", "vq", "id", "iq", "Vmag", "omega", "theta")
    _CSV_SOURCE = ("t", "P", "Q", "v_d", "v_q", "i_d", "i_q", "v_mag", "omega", "theta")

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def last_event_time(self) -> float:
        return max((t for t, _ in self.events), default=0.0)

    def channel(self, name: str) -> np.ndarray:
        if name == "t":
            return self.t
        try:
            return self.channels[name]
        except KeyError:
            raise ParameterError(f"no channel {name!r}; have {tuple(self.channels)}")

    def after(self, t0: float) -> "SimTrace":
        """Copy restricted to t >= t0 (analysis windows)."""
        keep = self.t >= t0 - 1e-12
        return SimTrace(t=self.t[keep],
                        channels={k: v[keep] for k, v in self.channels.items()},
                        dt=self.dt, events=self.events,
                        diverged_at=self.diverged_at, label=self.label)

    def to_csv(self, path) -> None:
        """Canonical byte-stable CSV of the standard channels."""
        cols = [self.t] + [self.channels[k] for k in self._CSV_SOURCE[1:]]
        lines = [",".join(self.CSV_COLUMNS)]
        for row in zip(*cols):
            lines.append(",".join(f"{v:.12g}" for v in row))
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")


def _rk4_step(sysm: GfmSystem, t: float, x: np.ndarray, u, dt: float) -> np.ndarray:
    k1 = sysm.rhs(t, x, u)
    k2 = sysm.rhs(t + 0.5 * dt, x + (0.5 * dt) * k1, u)
    k3 = sysm.rhs(t + 0.5 * dt, x + (0.5 * dt) * k2, u)
    k4 = sysm.rhs(t + dt, x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _describe(action: Action) -> str:
    if isinstance(action, StepPref):
        return f"p_ref={action.value:g}"
    if isinstance(action, StepQref):
        return f"q_ref={action.value:g}"
    if isinstance(action, StepVref):
        return f"v_ref={action.value:g}"
    return f"grid scr={action.grid.scr:g}"


def run_scenario(scn: Scenario, sim: SimConfig = SimConfig()) -> SimTrace:
    """Integrate a scenario from its solved steady state."""
    op = solve_operating_point(scn.params, scn.scheme, scn.p_ref,
                               q_ref=scn.q_ref, v_ref=scn.v_ref)
    return run_from_operating_point(op, scn, sim)


def apply_event(u, sysm, action):
    """Apply one event between integration steps; returns ``(u, system)``.

    Reference steps rewrite the matching input slot; ``SetGrid`` swaps the
    grid parameters.  Integrator and circuit states are never touched.
    """
    u = list(u)
    if isinstance(action, StepPref):
        u[0] = action.value
    elif isinstance(action, StepQref):
        u[1] = action.value
    elif isinstance(action, StepVref):
        u[2] = action.value
    elif isinstance(action, SetGrid):
        if action.grid.x_g <= 0.0 or math.hypot(action.grid.r_g, action.grid.x_g) <= 0.0:
            raise ConfigError("grid swap needs a strictly positive impedance")
        sysm = sysm.with_grid(action.grid)
    else:
        raise ParameterError(f"unknown event action {action!r}")
    return u, sysm


def run_from_operating_point(op, scn: Scenario, sim: SimConfig = SimConfig()) -> SimTrace:
    """Integrate a scenario whose steady state is already solved."""
    sysm: GfmSystem = op.model
    if sysm is None or sysm.freeze is not FreezeMode.NONE:
        raise ParameterError("scenario runs need a closed-loop operating point")
    dt = sim.dt
    n_steps = int(round(scn.duration / dt))
    u = list(sysm.default_inputs())

    # snap events to step boundaries (first boundary at or after the time)
    schedule = [(min(int(math.ceil(t / dt - 1e-9)), n_steps), act)
                for t, act in scn.events]

    x = np.array(op.x0, float)
    rows: list[np.ndarray] = []
    times: list[float] = []
    applied: list[tuple[float, str]] = []
    diverged_at: float | None = None
    next_ev = 0

    for i in range(n_steps + 1):
        t = i * dt
        while next_ev < len(schedule) and schedule[next_ev][0] == i:
            action = schedule[next_ev][1]
            u, sysm = apply_event(u, sysm, action)
            applied.append((t, _describe(action)))
            next_ev += 1
        if i % sim.record_decimation == 0 or i == n_steps:
            try:
                y = sysm.outputs(t, x, tuple(u))
            except DegenerateVoltageError:
                diverged_at = t
                break
            times.append(t)
            rows.append(y)
        if i == n_steps:
            break
        try:
            x = _rk4_step(sysm, t, x, tuple(u), dt)
        except (DegenerateVoltageError, OverflowError):
            diverged_at = t
            break
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > sim.divergence_limit:
            diverged_at = t + dt
            break

    data = np.vstack(rows) if rows else np.zeros((0, len(sysm.output_labels)))
    channels = {lab: np.ascontiguousarray(data[:, k])
                for k, lab in enumerate(sysm.output_labels)}
    return SimTrace(t=np.asarray(times), channels=channels, dt=dt,
                    events=tuple(applied), diverged_at=diverged_at,
                    label=scn.label)
