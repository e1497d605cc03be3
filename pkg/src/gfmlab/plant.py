"""Electrical plant: per-unit bases, grid Thevenin equivalent and LC filter.

Conventions used throughout the package:

* dq pairs are stored as Python complex numbers, ``z = d + 1j*q``.
* Electrical states live in a synchronous reference frame rotating at the
  nominal frequency ``omega_1``; the infinite bus is on the d axis
  (``v_g = V_g + 0j``), so every equilibrium is a constant vector.
* Inductances are stored as per-unit reactance at ``omega_1`` and
  capacitances as per-unit susceptance at ``omega_1``.  Divide by
  ``omega_1`` to obtain the time constants used in the differential
  equations.
* Powers are per-unit with a scaling factor kappa = 1 internally.  The
  kappa field on :class:`ConverterParams` documents the convention used
  when translating to peak-valued SI quantities (kappa = 1.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import ParameterError

if TYPE_CHECKING:  # pragma: no cover
    from .system import GfmSystem

# dq phasor stored as d + 1j*q
ComplexDq = complex

#: nominal angular frequency of the bench plant, rad/s (50 Hz)
OMEGA_1 = 2.0 * math.pi * 50.0


@dataclass(frozen=True)
class PerUnitBase:
    """Voltage/power base pair; impedance base follows from the two."""

    v_base: float  # line-to-line RMS voltage, V
    s_base: float  # three-phase apparent power, W
    omega_base: float = OMEGA_1  # rad/s

    def __post_init__(self):
        if self.v_base <= 0.0 or self.s_base <= 0.0 or self.omega_base <= 0.0:
            raise ParameterError("per-unit bases must be strictly positive")

    @property
    def z_base(self) -> float:
        return self.v_base ** 2 / self.s_base


@dataclass(frozen=True)
class GridParams:
    """Thevenin equivalent seen from the point of connection.

    ``x_g`` is the per-unit reactance at ``omega_1``; the short-circuit
    ratio is ``1/|r_g + j x_g|``.
    """

    r_g: float
    x_g: float
    v_g: float = 1.0
    omega_1: float = OMEGA_1

    def __post_init__(self):
        if self.r_g < 0.0:
            raise ParameterError("grid resistance must be non-negative")
        if self.x_g <= 0.0:
            raise ParameterError("grid reactance must be strictly positive")
        if self.v_g <= 0.0:
            raise ParameterError("grid voltage must be strictly positive")
        if self.omega_1 <= 0.0:
            raise ParameterError("omega_1 must be strictly positive")

    @property
    def scr(self) -> float:
        return 1.0 / math.hypot(self.r_g, self.x_g)


def make_grid_from_scr(scr: float, x_over_r: float, v_g: float = 1.0,
                       omega_1: float = OMEGA_1) -> GridParams:
    """Build grid parameters from a short-circuit ratio and X/R ratio.

    ``|Z| = 1/scr`` is split so that ``x_g/r_g == x_over_r``; an infinite
    ratio gives a purely inductive grid.
    """
    if not scr > 0.0:
        raise ParameterError(f"scr must be positive, got {scr}")
    if not x_over_r > 0.0:
        raise ParameterError(f"x_over_r must be positive, got {x_over_r}")
    z = 1.0 / scr
    if math.isinf(x_over_r):
        r, x = 0.0, z
    else:
        phi = math.atan(x_over_r)
        r, x = z * math.cos(phi), z * math.sin(phi)
    return GridParams(r_g=r, x_g=x, v_g=v_g, omega_1=omega_1)


@dataclass(frozen=True)
class ConverterParams:
    """LC filter of the converter plus the power scaling convention."""

    l_f: float  # filter reactance, p.u. at omega_1
    c_f: float  # filter susceptance, p.u. at omega_1 (0 = no capacitor)
    r_f: float = 0.005  # filter series resistance, p.u.
    kappa: float = 1.0  # power scaling: 1.0 for p.u. work, 1.5 for peak-valued SI

    def __post_init__(self):
        if self.l_f <= 0.0:
            raise ParameterError("filter reactance must be strictly positive")
        if self.c_f < 0.0:
            raise ParameterError("filter susceptance must be non-negative")
        if self.r_f < 0.0:
            raise ParameterError("filter resistance must be non-negative")
        if self.kappa not in (1.0, 1.5):
            raise ParameterError("kappa must be 1.0 (p.u.) or 1.5 (peak-valued)")


@dataclass(frozen=True)
class SystemParams:
    """Complete electrical description: bases, grid and converter filter."""

    base: PerUnitBase
    grid: GridParams
    converter: ConverterParams

    def __post_init__(self):
        if abs(self.grid.omega_1 - self.base.omega_base) > 1e-9 * self.base.omega_base:
            raise ParameterError("grid omega_1 must equal the base frequency")

    @property
    def omega_1(self) -> float:
        return self.grid.omega_1


def circuit_derivatives(i_f: ComplexDq, v: ComplexDq, i_g: ComplexDq,
                        e: ComplexDq, grid: GridParams,
                        conv: ConverterParams) -> tuple[ComplexDq, ComplexDq, ComplexDq]:
    """Time derivatives of the LCL states in the synchronous frame.

    ``e`` is the converter internal voltage, ``v`` the capacitor (POC)
    voltage and ``i_g`` the current into the grid; all in the frame
    rotating at ``omega_1`` where the cross-coupling appears as a constant
    ``-j omega_1 L`` term.
    """
    if conv.c_f <= 0.0:
        raise ParameterError("circuit_derivatives needs c_f > 0; "
                             "use series_circuit_derivatives for the LC-less path")
    w1 = grid.omega_1
    l_f = conv.l_f / w1
    c_f = conv.c_f / w1
    l_g = grid.x_g / w1
    di_f = (e - v - conv.r_f * i_f - 1j * conv.l_f * i_f) / l_f
    dv = (i_f - i_g - 1j * conv.c_f * v) / c_f
    di_g = (v - grid.v_g - grid.r_g * i_g - 1j * grid.x_g * i_g) / l_g
    return di_f, dv, di_g


def series_circuit_derivatives(i: ComplexDq, e: ComplexDq, grid: GridParams,
                               conv: ConverterParams) -> ComplexDq:
    """Single-current limit when the filter capacitor is removed (c_f = 0)."""
    w1 = grid.omega_1
    l_t = (conv.l_f + grid.x_g) / w1
    r_t = conv.r_f + grid.r_g
    x_t = conv.l_f + grid.x_g
    return (e - grid.v_g - r_t * i - 1j * x_t * i) / l_t


def instantaneous_power(v: ComplexDq, i: ComplexDq, kappa: float = 1.0) -> tuple[float, float]:
    """Active/reactive power of a voltage/current dq pair.

    ``p = kappa*(v_d i_d + v_q i_q)``, ``q = kappa*(v_q i_d - v_d i_q)``;
    both are invariant under a common rotation of ``v`` and ``i``.
    """
    s = v * i.conjugate()
    return kappa * s.real, kappa * s.imag


def dq_to_abc(z: ComplexDq, theta: float) -> tuple[float, float, float]:
    """Project a dq pair onto the three phases for frame angle ``theta``."""
    d, q = z.real, z.imag
    a = d * math.cos(theta) - q * math.sin(theta)
    b = d * math.cos(theta - 2.0 * math.pi / 3.0) - q * math.sin(theta - 2.0 * math.pi / 3.0)
    c = d * math.cos(theta + 2.0 * math.pi / 3.0) - q * math.sin(theta + 2.0 * math.pi / 3.0)
    return a, b, c


def abc_to_dq(a: float, b: float, c: float, theta: float) -> ComplexDq:
    """Amplitude-invariant inverse of :func:`dq_to_abc`."""
    tb = theta - 2.0 * math.pi / 3.0
    tc = theta + 2.0 * math.pi / 3.0
    d = (2.0 / 3.0) * (a * math.cos(theta) + b * math.cos(tb) + c * math.cos(tc))
    q = -(2.0 / 3.0) * (a * math.sin(theta) + b * math.sin(tb) + c * math.sin(tc))
    return complex(d, q)


@dataclass
class OperatingPoint:
    """Solved steady state of the closed loop.

    ``v0``, ``i0_f`` and ``i0_g`` are expressed in the converter control
    frame (internal voltage on the d axis up to controller offsets);
    ``theta0`` is the control frame angle relative to the grid frame.
    ``model`` and ``x0`` carry the assembled joint system and its full
    state vector so simulations and linearizations start from the exact
    solved point.
    """

    theta0: float
    e0: float
    v0: ComplexDq
    i0_f: ComplexDq
    i0_g: ComplexDq
    p0: float
    q0: float
    refs: Any = None
    model: "GfmSystem | None" = field(default=None, repr=False)
    x0: np.ndarray | None = field(default=None, repr=False)
