"""Bench parameter set and ready-made control schemes.

The numbers mirror a 3 kW, 190.5 V, 50 Hz two-level converter bench with
an LC filter: per-unit filter inductance 0.078, capacitance 0.038, and a
small parasitic resistance 0.005.  Grids are specified by short-circuit
ratio and X/R.

Droop-style gains are quoted in per unit here (0.05 means 0.05*omega_1
rad/s per p.u.) and converted to rad/s where the blocks expect them.
"""

from __future__ import annotations

import math

from .blocks import (
    ActiveSusceptanceAddon,
    AvcConfig,
    ClosedLoopVvc,
    ControlScheme,
    DroopLpf,
    GfmVccAddon,
    HybridAddon,
    InnerAddon,
    OpenLoopVvc,
    OuterVoltageConfig,
    PdcConfig,
    PiGains,
    PrfConfig,
    PureDroop,
    VaAddon,
    VrConfig,
)
from .plant import (
    OMEGA_1,
    ConverterParams,
    GridParams,
    PerUnitBase,
    SystemParams,
    make_grid_from_scr,
)

V_NOM = 190.5  # V, phase peak
P_NOM = 3000.0  # W

L_F_PU = 0.078
C_F_PU = 0.038
R_F_PU = 0.005

K_P_PU = 0.05  # droop gain, p.u.
OMEGA_C = 0.1 * OMEGA_1  # power-filter cut-off, rad/s
ALPHA_C = 2.0 * math.pi * 500.0  # current-loop bandwidth, rad/s
ALPHA_V = 2.0 * math.pi * 50.0  # voltage-loop bandwidth, rad/s


def bench_base() -> PerUnitBase:
    return PerUnitBase(v_base=V_NOM, s_base=P_NOM, omega_base=OMEGA_1)


def bench_converter(c_f: float = C_F_PU) -> ConverterParams:
    return ConverterParams(l_f=L_F_PU, c_f=c_f, r_f=R_F_PU)


def bench_system(scr: float, x_over_r: float = 10.0, v_g: float = 1.0,
                 c_f: float = C_F_PU) -> SystemParams:
    """Bench converter against a Thevenin grid of the given strength."""
    grid = make_grid_from_scr(scr, x_over_r=x_over_r, v_g=v_g)
    return SystemParams(base=bench_base(), grid=grid, converter=bench_converter(c_f))


def droop_rad_s(k_pu: float, omega_1: float = OMEGA_1) -> float:
    """Per-unit droop-style gain to rad/s per p.u."""
    return k_pu * omega_1


def default_psc(k_p_pu: float = K_P_PU, omega_c: float = OMEGA_C,
                k_vq_pu: float = 0.0) -> DroopLpf:
    """Filtered droop synchronization at the bench design point."""
    return DroopLpf(k_p=droop_rad_s(k_p_pu), omega_c=omega_c,
                    k_vq=droop_rad_s(k_vq_pu))


def pure_droop(k_p_pu: float, k_vq_pu: float = 0.0) -> PureDroop:
    return PureDroop(k_p=droop_rad_s(k_p_pu), k_vq=droop_rad_s(k_vq_pu))


def default_outer(k_q: float = 0.02, avc: bool = False,
                  v_ref: float = 1.0) -> OuterVoltageConfig:
    """Reactive droop, optionally with the magnitude PI stacked on top."""
    return OuterVoltageConfig(k_q=k_q, avc=AvcConfig() if avc else None,
                              v_ref=v_ref)


def default_vvc_gains(c_f: float = C_F_PU, alpha_v: float = ALPHA_V,
                      omega_1: float = OMEGA_1) -> PiGains:
    """Voltage PI: proportional for alpha_v crossover, integral placing the
    closed voltage loop at alpha_v with damping 0.5."""
    cap = c_f / omega_1
    return PiGains(k_p=alpha_v * cap, k_i=alpha_v ** 2 * cap)


def default_vcc_gains(l_f: float = L_F_PU, r_f: float = R_F_PU,
                      alpha_c: float = ALPHA_C, omega_1: float = OMEGA_1) -> PiGains:
    """Current PI: proportional for alpha_c bandwidth, integral cancelling
    the filter pole (zero at R/L)."""
    ind = l_f / omega_1
    return PiGains(k_p=alpha_c * ind, k_i=alpha_c * r_f)


def default_pll(f_n: float = 10.0, zeta: float = 0.7) -> tuple[float, float]:
    """Loop-shaped PLL gains (k_p, k_i) for the given natural frequency."""
    omega_n = 2.0 * math.pi * f_n
    return 2.0 * zeta * omega_n, omega_n ** 2


def open_loop_scheme(k_p_pu: float = K_P_PU, omega_c: float | None = OMEGA_C,
                     k_vq_pu: float = 0.0, vr: VrConfig | None = None,
                     prf: PrfConfig | None = None, pdc: PdcConfig | None = None,
                     outer: OuterVoltageConfig | None = None) -> ControlScheme:
    """Open-loop structure: droop angle, direct magnitude command, optional
    virtual resistance / power-reference feedback / decoupler."""
    if omega_c is None:
        psc = pure_droop(k_p_pu, k_vq_pu)
    else:
        psc = default_psc(k_p_pu, omega_c, k_vq_pu)
    return ControlScheme(psc=psc, outer=outer or default_outer(),
                         inner=OpenLoopVvc(vr=vr, prf=prf, pdc=pdc))


def closed_loop_scheme(add_on: InnerAddon = None, k_p_pu: float = K_P_PU,
                       omega_c: float | None = OMEGA_C, k_vq_pu: float = 0.0,
                       outer: OuterVoltageConfig | None = None,
                       vvc: PiGains | None = None, vcc: PiGains | None = None,
                       c_f: float = C_F_PU, l_f: float = L_F_PU,
                       v_feedforward: bool | None = None) -> ControlScheme:
    """Cascaded structure: droop angle, voltage PI into current PI, with the
    chosen inner add-on.

    Emulated-source variants default to no POC-voltage feedforward: past
    the current-loop bandwidth the feedforward hands the grid-side tank a
    negative resistance, which the voltage PI is no longer there to mask.
    """
    if omega_c is None:
        psc = pure_droop(k_p_pu, k_vq_pu)
    else:
        psc = default_psc(k_p_pu, omega_c, k_vq_pu)
    if v_feedforward is None:
        v_feedforward = not isinstance(add_on, (VaAddon, GfmVccAddon))
    inner = ClosedLoopVvc(vvc=vvc or default_vvc_gains(c_f=c_f),
                          vcc=vcc or default_vcc_gains(l_f=l_f),
                          add_on=add_on, v_feedforward=v_feedforward)
    return ControlScheme(psc=psc, outer=outer or default_outer(), inner=inner)


def hybrid_scheme(k_i_dq: float = 10.0, k_vq_pu: float = 0.5,
                  k_p_pu: float = K_P_PU, omega_c: float | None = OMEGA_C,
                  alpha_v: float = 2.0 * math.pi * 150.0,
                  outer: OuterVoltageConfig | None = None) -> ControlScheme:
    """Cascaded structure with the hybrid inner loops: power-reference
    d-current feedforward plus the d-to-q voltage loop, paired with the
    q-axis feedforward on the synchronization droop.  The voltage PI is
    retuned faster; at the stock bandwidth the surviving q-axis loop is
    too slow to hold the magnitude once the d-axis PI is bypassed."""
    return closed_loop_scheme(add_on=HybridAddon(k_i_dq=k_i_dq),
                              k_p_pu=k_p_pu, omega_c=omega_c, k_vq_pu=k_vq_pu,
                              outer=outer, vvc=default_vvc_gains(alpha_v=alpha_v))


def as_scheme(b_a: float = 1.0, k_i_dq: float = 10.0,
              k_p_pu: float = K_P_PU, omega_c: float | None = OMEGA_C,
              outer: OuterVoltageConfig | None = None) -> ControlScheme:
    """Cascaded structure with the active-susceptance inner loops: the
    hybrid's reference paths plus a q-voltage-proportional d-current
    injection that mimics a shunt susceptance at the POC."""
    return closed_loop_scheme(
        add_on=ActiveSusceptanceAddon(b_a=b_a, k_i_dq=k_i_dq),
        k_p_pu=k_p_pu, omega_c=omega_c, outer=outer)


def va_scheme(r_v: float = 0.1, l_v: float = 0.3,
              k_p_pu: float = K_P_PU, omega_c: float | None = OMEGA_C,
              outer: OuterVoltageConfig | None = None) -> ControlScheme:
    """Cascaded structure with the emulated-source add-on: the voltage PI
    is replaced by R_V + L_V source dynamics feeding the current PI."""
    return closed_loop_scheme(add_on=VaAddon(r_v=r_v, l_v=l_v),
                              k_p_pu=k_p_pu, omega_c=omega_c,
                              outer=outer or default_outer(avc=True))


def gfm_vcc_scheme(r_v: float = 0.1, l_v: float = 0.3, f_pll: float = 10.0,
                   outer: OuterVoltageConfig | None = None,
                   vcc: PiGains | None = None) -> ControlScheme:
    """Current-control structure with emulated source dynamics and a PLL
    supplying the frame angle; power tracks via the reference-current path."""
    k_p, k_i = default_pll(f_pll)
    add = GfmVccAddon(va=VaAddon(r_v=r_v, l_v=l_v), pll_k_p=k_p, pll_k_i=k_i)
    inner = ClosedLoopVvc(vvc=default_vvc_gains(), vcc=vcc or default_vcc_gains(),
                          add_on=add, v_feedforward=False)
    return ControlScheme(psc=None, outer=outer or default_outer(), inner=inner)


def grid_for(scr: float, x_over_r: float = 10.0, v_g: float = 1.0) -> GridParams:
    return make_grid_from_scr(scr, x_over_r=x_over_r, v_g=v_g)
