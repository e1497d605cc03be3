"""Control blocks for the two grid-forming structures.

Structure A (open-loop voltage control): power synchronization + reactive
droop/AVC produce an angle and a magnitude, the internal voltage is
commanded directly, optionally shaped by a virtual resistance (VR), a
power-reference feedforward on the d axis (PRF) and angle/magnitude
cross-injections (PDC, wired at the system level).

Structure B (closed-loop voltage control): the same outer loops feed a
cascaded voltage controller and current controller.  Variants replace the
voltage controller with a virtual admittance, add a virtual impedance on
the reference, blend in grid-following loops (hybrid), add an active
susceptance path, or synchronize through a PLL (GFM-VCC).

State passed to the ``*_step`` functions is a flat sequence ordered as
reported by the matching ``*_state_labels`` helper; each step returns the
block outputs plus the state derivatives in the same order.

Gain conventions: droop and v_q-feedforward gains are stored in rad/s per
p.u. (multiply a per-unit gain by ``omega_1``); voltage-loop gains are
p.u./p.u. with integral gains in 1/s.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateVoltageError, ParameterError, VariantMismatchError
from .plant import OMEGA_1, ComplexDq

_V_GUARD = 0.05  # p.u.; division guard for the power-tracking loops


# ---------------------------------------------------------------------------
# power synchronization (angle) loop


@dataclass(frozen=True)
class PureDroop:
    """Proportional power droop, omega = omega_1 + k_p*(p_ref - p)."""

    k_p: float  # rad/s per p.u. power
    k_vq: float = 0.0  # rad/s per p.u. voltage; q-axis voltage feedforward

    def __post_init__(self):
        if self.k_p <= 0.0:
            raise ParameterError("droop gain must be strictly positive")


@dataclass(frozen=True)
class DroopLpf:
    """Droop with a first-order filter in the power error path.

    Also represents a virtual synchronous machine: an emulated swing with
    inertia M and damping D is equivalent to k_p = omega_1/D and
    omega_c = D/M (see :func:`psc_from_vsm`).
    """

    k_p: float  # rad/s per p.u. power
    omega_c: float  # rad/s, filter cut-off
    k_vq: float = 0.0

    def __post_init__(self):
        if self.k_p <= 0.0:
            raise ParameterError("droop gain must be strictly positive")
        if self.omega_c <= 0.0:
            raise ParameterError("filter cut-off must be strictly positive")


@dataclass(frozen=True)
class LeadLag:
    """Droop + filter with a series lead-lag compensator num(s)/den(s)."""

    k_p: float
    omega_c: float
    num: tuple[float, ...]
    den: tuple[float, ...]
    k_vq: float = 0.0

    def __post_init__(self):
        if self.k_p <= 0.0:
            raise ParameterError("droop gain must be strictly positive")
        if self.omega_c <= 0.0:
            raise ParameterError("filter cut-off must be strictly positive")
        if len(self.num) > len(self.den) or len(self.den) < 2:
            raise ParameterError("lead-lag must be proper with at least one pole")
        if self.den[0] == 0.0:
            raise ParameterError("lead-lag leading denominator coefficient is zero")


PscConfig = Union[PureDroop, DroopLpf, LeadLag]


def psc_from_vsm(inertia: float, damping: float, omega_1: float = OMEGA_1,
                 k_vq: float = 0.0) -> DroopLpf:
    """Droop+filter equivalent of an emulated swing equation.

    ``inertia`` is the per-unit mechanical time constant (s) and
    ``damping`` the per-unit damping coefficient.
    """
    if inertia <= 0.0 or damping <= 0.0:
        raise ParameterError("inertia and damping must be strictly positive")
    return DroopLpf(k_p=omega_1 / damping, omega_c=damping / inertia, k_vq=k_vq)


@functools.lru_cache(maxsize=None)
def psc_state_labels(cfg: PscConfig) -> tuple[str, ...]:
    if isinstance(cfg, PureDroop):
        return ()
    if isinstance(cfg, DroopLpf):
        return ("psc_lpf",)
    n_ll = len(cfg.den) - 1
    return ("psc_lpf",) + tuple(f"psc_ll{i}" for i in range(n_ll))


@functools.lru_cache(maxsize=32)
def _ll_realization(num: tuple[float, ...], den: tuple[float, ...]):
    from scipy import signal

    a, b, c, d = signal.tf2ss(np.asarray(num, float), np.asarray(den, float))
    return a, b.ravel(), c.ravel(), float(np.atleast_2d(d)[0, 0])


def psc_step(cfg: PscConfig, st: Sequence[float], p_meas: float, p_ref: float,
             v_q_meas: float, omega_1: float = OMEGA_1):
    """Angle loop update.

    Returns ``(omega, dtheta, derivs)`` where ``dtheta`` is the rate of the
    control-frame angle measured in the synchronous frame
    (``omega - omega_1``) and ``derivs`` matches :func:`psc_state_labels`.
    """
    labels = psc_state_labels(cfg)
    if len(st) != len(labels):
        raise VariantMismatchError(
            f"psc state length {len(st)} does not match variant {type(cfg).__name__}")
    err = p_ref - p_meas
    if isinstance(cfg, PureDroop):
        domega = cfg.k_p * err
        derivs: tuple[float, ...] = ()
    elif isinstance(cfg, DroopLpf):
        lpf = st[0]
        domega = cfg.k_p * lpf
        derivs = (cfg.omega_c * (err - lpf),)
    else:
        lpf = st[0]
        a, b, c, d = _ll_realization(cfg.num, cfg.den)
        x_ll = np.asarray(st[1:], float)
        y = float(c @ x_ll) + d * lpf
        dx = a @ x_ll + b * lpf
        domega = cfg.k_p * y
        derivs = (cfg.omega_c * (err - lpf),) + tuple(dx)
    omega = omega_1 + domega + cfg.k_vq * v_q_meas
    return omega, omega - omega_1, derivs


# ---------------------------------------------------------------------------
# reactive power droop / AVC (magnitude) loop


@dataclass(frozen=True)
class AvcConfig:
    """PI regulator on the POC voltage magnitude."""

    k_p: float = 0.5
    k_i: float = 20.0

    def __post_init__(self):
        if self.k_p < 0.0 or self.k_i < 0.0:
            raise ParameterError("AVC gains must be non-negative")


@dataclass(frozen=True)
class OuterVoltageConfig:
    """Magnitude command E = v_ref + k_q*(q_ref - q) plus optional AVC."""

    k_q: float = 0.02  # p.u. voltage per p.u. reactive power
    avc: AvcConfig | None = None
    v_ref: float = 1.0  # default magnitude reference

    def __post_init__(self):
        if self.k_q < 0.0:
            raise ParameterError("reactive droop gain must be non-negative")
        if self.v_ref <= 0.0:
            raise ParameterError("voltage reference must be strictly positive")


@functools.lru_cache(maxsize=None)
def outer_state_labels(cfg: OuterVoltageConfig) -> tuple[str, ...]:
    return ("avc_i",) if cfg.avc is not None else ()


def outer_voltage_step(cfg: OuterVoltageConfig, st: Sequence[float],
                       q_meas: float, v_mag_meas: float,
                       q_ref: float = 0.0, v_ref: float | None = None):
    """Returns ``(E, derivs)``; with all errors zero, E equals v_ref."""
    labels = outer_state_labels(cfg)
    if len(st) != len(labels):
        raise VariantMismatchError("outer-loop state length does not match configuration")
    if v_ref is None:
        v_ref = cfg.v_ref
    e_mag = v_ref + cfg.k_q * (q_ref - q_meas)
    if cfg.avc is None:
        return e_mag, ()
    err = v_ref - v_mag_meas
    e_mag += cfg.avc.k_p * err + st[0]
    return e_mag, (cfg.avc.k_i * err,)


# ---------------------------------------------------------------------------
# open-loop (direct voltage command) inner structure


@dataclass(frozen=True)
class VrConfig:
    """Virtual resistance acting on the high-passed output current."""

    r_a: float
    omega_v: float = 2.0 * math.pi * 7.5  # rad/s, high-pass corner

    def __post_init__(self):
        if self.r_a <= 0.0:
            raise ParameterError("virtual resistance must be strictly positive")
        if self.omega_v < 0.0:
            raise ParameterError("high-pass corner must be non-negative")


@dataclass(frozen=True)
class PrfConfig:
    """d-axis current tracking of p_ref/V with proportional gain r_a."""

    r_a: float

    def __post_init__(self):
        if self.r_a <= 0.0:
            raise ParameterError("power-tracking gain must be strictly positive")


@dataclass(frozen=True)
class PdcConfig:
    """Decoupler built from grid-impedance estimates (see :mod:`gfmlab.pdc`)."""

    r_g_hat: float
    x_g_hat: float
    include_filter_and_vr: bool = True

    def __post_init__(self):
        if self.r_g_hat < 0.0 or self.x_g_hat <= 0.0:
            raise ParameterError("grid estimates must be physical (r >= 0, x > 0)")


@dataclass(frozen=True)
class OpenLoopVvc:
    vr: VrConfig | None = None
    prf: PrfConfig | None = None
    pdc: PdcConfig | None = None


@functools.lru_cache(maxsize=None)
def open_loop_state_labels(cfg: OpenLoopVvc) -> tuple[str, ...]:
    if cfg.vr is None:
        return ()
    if cfg.prf is None:
        return ("vr_hd", "vr_hq")
    return ("vr_hq",)  # d axis is taken over by the power-tracking loop


def open_loop_inner_step(cfg: OpenLoopVvc, st: Sequence[float], e_mag: float,
                         i: ComplexDq, p_ref: float, v_mag: float):
    """Direct voltage command with VR/PRF shaping.

    Returns ``(e_cmd, derivs)`` in the control frame.  The PDC
    cross-injections act on the angle/magnitude commands upstream of this
    block and are wired by the joint system.
    """
    labels = open_loop_state_labels(cfg)
    if len(st) != len(labels):
        raise VariantMismatchError("open-loop inner state length does not match configuration")
    e_cmd = complex(e_mag, 0.0)
    derivs: tuple[float, ...] = ()
    if cfg.vr is not None and cfg.prf is None:
        h = complex(st[0], st[1])
        hp = i - h  # high-passed current
        e_cmd -= cfg.vr.r_a * hp
        derivs = (cfg.vr.omega_v * hp.real, cfg.vr.omega_v * hp.imag)
    elif cfg.vr is not None:
        hq = i.imag - st[0]
        e_cmd -= 1j * (cfg.vr.r_a * hq)
        derivs = (cfg.vr.omega_v * hq,)
    if cfg.prf is not None:
        if v_mag <= _V_GUARD:
            raise DegenerateVoltageError(
                f"power-tracking loop needs |v| > {_V_GUARD} p.u., got {v_mag:.4f}")
        e_cmd += cfg.prf.r_a * (p_ref / v_mag - i.real)
    return e_cmd, derivs


# ---------------------------------------------------------------------------
# closed-loop (cascaded voltage/current) inner structure


@dataclass(frozen=True)
class PiGains:
    k_p: float
    k_i: float

    def __post_init__(self):
        if self.k_p < 0.0 or self.k_i < 0.0:
            raise ParameterError("PI gains must be non-negative")


@dataclass(frozen=True)
class ViAddon:
    """Virtual impedance: v_ref <- v_ref - (r_v + j x_v + s l_v)*i_g."""

    r_v: float
    l_v: float  # p.u. reactance
    omega_lpf: float = 2.0 * math.pi * 75.0  # derivative-path filter, rad/s

    def __post_init__(self):
        if self.r_v < 0.0 or self.l_v < 0.0:
            raise ParameterError("virtual impedance must be non-negative")
        if self.omega_lpf <= 0.0:
            raise ParameterError("derivative filter corner must be strictly positive")


@dataclass(frozen=True)
class VaAddon:
    """Virtual admittance replacing the voltage PI loop."""

    r_v: float
    l_v: float  # p.u. reactance

    def __post_init__(self):
        if self.r_v < 0.0 or self.l_v <= 0.0:
            raise ParameterError("virtual admittance needs r_v >= 0 and l_v > 0")


@dataclass(frozen=True)
class HybridAddon:
    """Grid-following loops blended into the voltage controller.

    The d-to-q integral path shares the q-loop integrator; with
    ``prf_enabled`` the d-axis current reference is p_ref/V instead of a
    voltage PI.
    """

    k_i_dq: float
    prf_enabled: bool = True

    def __post_init__(self):
        if self.k_i_dq < 0.0:
            raise ParameterError("d-to-q integral gain must be non-negative")


@dataclass(frozen=True)
class ActiveSusceptanceAddon:
    """Hybrid paths plus a q-voltage to d-current feedback -b_a*v_q."""

    b_a: float = 1.0
    k_i_dq: float = 0.0
    prf_enabled: bool = True

    def __post_init__(self):
        if self.b_a < 0.0:
            raise ParameterError("active susceptance must be non-negative")
        if self.k_i_dq < 0.0:
            raise ParameterError("d-to-q integral gain must be non-negative")


@dataclass(frozen=True)
class GfmVccAddon:
    """Virtual admittance fed by a PLL-synchronized frame plus p_ref/V injection."""

    va: VaAddon
    pll_k_p: float  # rad/s per p.u. voltage
    pll_k_i: float  # rad/s^2 per p.u. voltage

    def __post_init__(self):
        if self.pll_k_p <= 0.0 or self.pll_k_i <= 0.0:
            raise ParameterError("PLL gains must be strictly positive")


InnerAddon = Union[None, ViAddon, VaAddon, HybridAddon, ActiveSusceptanceAddon, GfmVccAddon]


@dataclass(frozen=True)
class ClosedLoopVvc:
    vvc: PiGains
    vcc: PiGains
    cap_decoupling: bool = True
    ind_decoupling: bool = True
    v_feedforward: bool = True
    ig_feedforward: bool = True
    add_on: InnerAddon = None
    e_max: float | None = None  # optional magnitude clamp on the voltage command

    def __post_init__(self):
        if self.e_max is not None and self.e_max <= 0.0:
            raise ParameterError("voltage command clamp must be strictly positive")


InnerConfig = Union[OpenLoopVvc, ClosedLoopVvc]


@functools.lru_cache(maxsize=None)
def inner_state_labels(cfg: InnerConfig) -> tuple[str, ...]:
    if isinstance(cfg, OpenLoopVvc):
        return open_loop_state_labels(cfg)
    add = cfg.add_on
    if isinstance(add, (VaAddon, GfmVccAddon)):
        return ("va_d", "va_q", "vcc_id", "vcc_iq")
    labels: tuple[str, ...] = ()
    if isinstance(add, ViAddon):
        labels += ("vi_ld", "vi_lq")
    prf_on = isinstance(add, (HybridAddon, ActiveSusceptanceAddon)) and add.prf_enabled
    if not prf_on:
        labels += ("vvc_id",)
    labels += ("vvc_iq", "vcc_id", "vcc_iq")
    return labels


def closed_loop_inner_step(cfg: ClosedLoopVvc, st: Sequence[float], e_mag: float,
                           v: ComplexDq, i_f: ComplexDq, i_g: ComplexDq,
                           p_ref: float, v_mag: float,
                           l_f: float, c_f: float, omega_1: float = OMEGA_1,
                           idref_extra: float = 0.0):
    """Cascaded voltage/current control update in the control frame.

    Returns ``(e_cmd, i_ref, derivs)`` where ``i_ref`` is the current
    reference produced by the controller (before the optional
    ``idref_extra`` disturbance injection).
    """
    labels = inner_state_labels(cfg)
    if len(st) != len(labels):
        raise VariantMismatchError("closed-loop inner state length does not match configuration")
    add = cfg.add_on
    k = 0
    derivs: list[float] = []

    if isinstance(add, (VaAddon, GfmVccAddon)):
        va = add.va if isinstance(add, GfmVccAddon) else add
        i_va = complex(st[0], st[1])
        k = 2
        dva = ((complex(e_mag, 0.0) - v) - (va.r_v + 1j * va.l_v) * i_va) / (va.l_v / omega_1)
        derivs += [dva.real, dva.imag]
        i_ref = i_va
        if isinstance(add, GfmVccAddon):
            if v_mag <= _V_GUARD:
                raise DegenerateVoltageError(
                    f"power injection needs |v| > {_V_GUARD} p.u., got {v_mag:.4f}")
            i_ref += p_ref / v_mag
    else:
        v_ref_vec = complex(e_mag, 0.0)
        if isinstance(add, ViAddon):
            x_lp = complex(st[0], st[1])
            k = 2
            dlp = add.omega_lpf * (i_g - x_lp)
            derivs += [dlp.real, dlp.imag]
            v_ref_vec -= (add.r_v + 1j * add.l_v) * i_g + (add.l_v / omega_1) * dlp
        err = v_ref_vec - v
        hybrid_like = isinstance(add, (HybridAddon, ActiveSusceptanceAddon))
        if hybrid_like and add.prf_enabled:
            if v_mag <= _V_GUARD:
                raise DegenerateVoltageError(
                    f"power-tracking loop needs |v| > {_V_GUARD} p.u., got {v_mag:.4f}")
            i_d_ref = p_ref / v_mag
        else:
            i_d_ref = cfg.vvc.k_p * err.real + st[k]
            derivs.append(cfg.vvc.k_i * err.real)
            k += 1
        i_q_ref = cfg.vvc.k_p * err.imag + st[k]
        dxi_q = cfg.vvc.k_i * err.imag
        if hybrid_like and add.k_i_dq != 0.0:
            # shares the q-loop integrator; skipped when zero so the scheme
            # reproduces the plain cascade bit for bit.  Negative sense:
            # behind an inductive grid dv_d/di_q < 0, so raising v_d takes
            # a q-current decrease
            dxi_q = dxi_q - add.k_i_dq * (e_mag - v.real)
        derivs.append(dxi_q)
        k += 1
        if isinstance(add, ActiveSusceptanceAddon):
            i_d_ref += as_feedback(add.b_a, v.imag)
        i_ref = complex(i_d_ref, i_q_ref)
        if cfg.cap_decoupling and c_f > 0.0:
            i_ref += 1j * c_f * v
        if cfg.ig_feedforward:
            # with the power-tracking d-reference active, the d-axis
            # already commands the full output current; feeding the grid
            # current forward there would leave no consistent steady state
            prf_d = hybrid_like and add.prf_enabled
            i_ref += complex(0.0, i_g.imag) if prf_d else i_g

    # current controller on the converter-side inductor current
    xi_c = complex(st[k], st[k + 1])
    ierr = (i_ref + idref_extra) - i_f
    e_cmd = cfg.vcc.k_p * ierr + xi_c
    if cfg.ind_decoupling:
        e_cmd += 1j * l_f * i_f
    if cfg.v_feedforward:
        e_cmd += v
    derivs += [cfg.vcc.k_i * ierr.real, cfg.vcc.k_i * ierr.imag]
    if cfg.e_max is not None:
        mag = abs(e_cmd)
        if mag > cfg.e_max:
            e_cmd *= cfg.e_max / mag
    return e_cmd, i_ref, tuple(derivs)


def pll_step(cfg: GfmVccAddon, st: Sequence[float], v_q_meas: float,
             omega_1: float = OMEGA_1):
    """PI phase-locked loop on the q-axis voltage; returns (omega, derivs)."""
    if len(st) != 1:
        raise VariantMismatchError("PLL carries exactly one integrator state")
    omega = omega_1 + cfg.pll_k_p * v_q_meas + st[0]
    return omega, (cfg.pll_k_i * v_q_meas,)


def as_feedback(b_a: float, v_q: float) -> float:
    """Active-susceptance d-current correction, exactly -b_a*v_q."""
    return -b_a * v_q


# ---------------------------------------------------------------------------
# full scheme


@dataclass(frozen=True)
class ControlScheme:
    """Complete control stack: angle loop, magnitude loop, inner structure."""

    psc: PscConfig | None
    outer: OuterVoltageConfig
    inner: InnerConfig
    omega_meas: float = 2.0 * math.pi * 500.0  # power measurement filter, rad/s

    def __post_init__(self):
        if self.omega_meas <= 0.0:
            raise ParameterError("measurement filter corner must be strictly positive")
        pll_synced = isinstance(self.inner, ClosedLoopVvc) and \
            isinstance(self.inner.add_on, GfmVccAddon)
        if self.psc is None and not pll_synced:
            raise ParameterError("only the PLL-synchronized variant may omit the angle loop")

    @property
    def uses_pll(self) -> bool:
        return isinstance(self.inner, ClosedLoopVvc) and \
            isinstance(self.inner.add_on, GfmVccAddon)
