"""Joint converter/grid model: one ODE combining circuit and controls.

The full state vector is assembled from labelled groups so simulations,
equilibrium solving and linearization all share one layout:

    circuit | theta | power filters | angle loop | outer loop | PLL |
    inner structure | decoupler

Freeze modes cut the loop for measurements that would otherwise be
polluted by synchronization or outer-loop dynamics:

* ``NONE``        - everything closed, inputs are the references.
* ``FROZEN_OUTER`` - angle and magnitude commands become inputs; the
  inner structure and its states stay live.
* ``PLANT``       - circuit only, driven directly by the converter
  voltage in the synchronous frame.

All electrical states are kept in the synchronous grid frame; control
blocks see them rotated into the converter frame by the (possibly
decoupler-shifted) angle.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import blocks
from .blocks import ClosedLoopVvc, ControlScheme, GfmVccAddon, OpenLoopVvc
from .errors import DegenerateVoltageError, NoEquilibriumError, ParameterError
from .pdc import PdcDesign, design_pdc
from .plant import (GridParams, OperatingPoint, SystemParams, circuit_derivatives,
                    instantaneous_power, series_circuit_derivatives)

_NEWTON_TOL = 1e-10
_NEWTON_MAX_ITER = 50
_RESTART_SEED = 12345


class FreezeMode(enum.Enum):
    NONE = "none"
    FROZEN_OUTER = "frozen_outer"
    PLANT = "plant"


@dataclass(frozen=True)
class Refs:
    """Reference set of a closed-loop run.

    ``theta0``/``e0`` are the decoupler pick-off values: the command
    deviations it responds to are measured from these.
    """

    p_ref: float = 0.0
    q_ref: float = 0.0
    v_ref: float = 1.0
    theta0: float = 0.0
    e0: float = 1.0


class GfmSystem:
    """Grid-forming converter, its filter and the Thevenin grid as one ODE."""

    def __init__(self, params: SystemParams, scheme: ControlScheme,
                 freeze: FreezeMode = FreezeMode.NONE,
                 refs: Refs | None = None,
                 pdc_design: PdcDesign | None = None):
        self.params = params
        self.scheme = scheme
        self.freeze = freeze
        self.refs = refs if refs is not None else Refs(v_ref=scheme.outer.v_ref)
        self.pdc_design = pdc_design

        self._has_cap = params.converter.c_f > 0.0
        self._closed = isinstance(scheme.inner, ClosedLoopVvc)
        self._uses_pll = scheme.uses_pll
        if not self._has_cap:
            if self._closed:
                raise ParameterError(
                    "the cascaded structure needs a filter capacitor (c_f > 0); "
                    "the voltage feedback is otherwise algebraic in the command")
            if isinstance(scheme.inner, OpenLoopVvc) and scheme.inner.prf is not None:
                raise ParameterError(
                    "power tracking needs a filter capacitor (c_f > 0): "
                    "the measured voltage magnitude is otherwise algebraic in the command")
            if scheme.outer.avc is not None:
                raise ParameterError(
                    "the AVC needs a filter capacitor (c_f > 0): "
                    "the measured voltage magnitude is otherwise algebraic in the command")
        if pdc_design is not None and not isinstance(scheme.inner, OpenLoopVvc):
            raise ParameterError("the decoupler applies to the open-loop structure only")

        # state layout
        labels: list[str] = []
        if self._has_cap:
            labels += ["i_fd", "i_fq", "v_d", "v_q", "i_gd", "i_gq"]
        else:
            labels += ["i_d", "i_q"]
        self._n_circ = len(labels)
        if freeze is FreezeMode.NONE:
            labels.append("theta")
            labels += ["pm_p", "pm_q"]
            if not self._uses_pll:
                labels += list(blocks.psc_state_labels(scheme.psc))
            labels += list(blocks.outer_state_labels(scheme.outer))
            if self._uses_pll:
                labels.append("pll_i")
        if freeze is not FreezeMode.PLANT:
            labels += list(blocks.inner_state_labels(scheme.inner))
        if freeze is not FreezeMode.PLANT and pdc_design is not None:
            labels += list(pdc_design.state_labels)
        self.state_labels: tuple[str, ...] = tuple(labels)
        self.n_states = len(labels)
        self.x_index = {lab: i for i, lab in enumerate(labels)}

        idx = self._n_circ
        if freeze is FreezeMode.NONE:
            self._i_theta = idx
            self._i_pm = idx + 1
            idx += 3
            if not self._uses_pll:
                self._n_psc = len(blocks.psc_state_labels(scheme.psc))
                self._i_psc = idx
                idx += self._n_psc
            self._n_outer = len(blocks.outer_state_labels(scheme.outer))
            self._i_outer = idx
            idx += self._n_outer
            if self._uses_pll:
                self._i_pll = idx
                idx += 1
        if freeze is not FreezeMode.PLANT:
            self._n_inner = len(blocks.inner_state_labels(scheme.inner))
            self._i_inner = idx
            idx += self._n_inner
        if freeze is not FreezeMode.PLANT and pdc_design is not None:
            self._i_pdc = idx
            idx += pdc_design.n_states
        assert idx == self.n_states

        # input/output layout
        if freeze is FreezeMode.NONE:
            inputs = ["p_ref", "q_ref", "v_ref"]
            if self._closed:
                inputs.append("u_idref")
        elif freeze is FreezeMode.FROZEN_OUTER:
            inputs = ["u_theta", "u_v", "p_ref"]
            if self._closed:
                inputs.append("u_idref")
        else:
            inputs = ["e_d", "e_q"]
        self.input_labels: tuple[str, ...] = tuple(inputs)

        outputs = ["P", "Q", "v_d", "v_q", "i_d", "i_q", "v_mag"]
        if freeze is not FreezeMode.PLANT:
            outputs += ["omega", "theta"]
            if self._closed:
                outputs.append("i_dref")
        self.output_labels: tuple[str, ...] = tuple(outputs)

        # hot-loop constants
        p = params
        self._w1 = p.omega_1
        self._l_f_t = p.converter.l_f / self._w1
        self._l_g_t = p.grid.x_g / self._w1
        self._vg = complex(p.grid.v_g, 0.0)
        self._kappa = p.converter.kappa
        self._zg = complex(p.grid.r_g, p.grid.x_g)

    # -- construction helpers ------------------------------------------------

    def with_grid(self, grid: GridParams) -> "GfmSystem":
        """Same scheme and layout on a different Thevenin grid."""
        return GfmSystem(replace(self.params, grid=grid), self.scheme,
                         freeze=self.freeze, refs=self.refs,
                         pdc_design=self.pdc_design)

    def frozen(self, mode: FreezeMode) -> "GfmSystem":
        keep_pdc = self.pdc_design if mode is not FreezeMode.PLANT else None
        return GfmSystem(self.params, self.scheme, freeze=mode, refs=self.refs,
                         pdc_design=keep_pdc)

    def default_inputs(self) -> tuple[float, ...]:
        """Input vector matching ``input_labels`` built from the stored refs."""
        r = self.refs
        if self.freeze is FreezeMode.NONE:
            u = [r.p_ref, r.q_ref, r.v_ref]
            if self._closed:
                u.append(0.0)
        elif self.freeze is FreezeMode.FROZEN_OUTER:
            u = [r.theta0, r.e0, r.p_ref]
            if self._closed:
                u.append(0.0)
        else:
            u = [self._vg.real, self._vg.imag]
        return tuple(u)

    # -- dynamics ------------------------------------------------------------

    def rhs(self, t: float, x, u) -> np.ndarray:
        dx, _ = self._eval(x, u)
        return np.asarray(dx)

    def outputs(self, t: float, x, u) -> np.ndarray:
        _, out = self._eval(x, u)
        return np.asarray(out)

    def _eval(self, x, u):
        """Derivatives and outputs in one pass; scalar math throughout."""
        xs = x.tolist() if isinstance(x, np.ndarray) else list(x)
        p = self.params
        scheme = self.scheme
        w1 = self._w1

        if self._has_cap:
            i_f = complex(xs[0], xs[1])
            v = complex(xs[2], xs[3])
            i_g = complex(xs[4], xs[5])
        else:
            i_g = complex(xs[0], xs[1])
            i_f = i_g

        if self.freeze is FreezeMode.PLANT:
            e_grid = complex(u[0], u[1])
            if self._has_cap:
                di_f, dv, di_g = circuit_derivatives(i_f, v, i_g, e_grid,
                                                     p.grid, p.converter)
                dx = [di_f.real, di_f.imag, dv.real, dv.imag, di_g.real, di_g.imag]
            else:
                di = series_circuit_derivatives(i_g, e_grid, p.grid, p.converter)
                v = self._vg + self._zg * i_g + self._l_g_t * di
                dx = [di.real, di.imag]
            pm_p, pm_q = instantaneous_power(v, i_g, self._kappa)
            out = (pm_p, pm_q, v.real, v.imag, i_g.real, i_g.imag, abs(v))
            return dx, out

        if self.freeze is FreezeMode.NONE:
            theta = xs[self._i_theta]
            pm_p = xs[self._i_pm]
            pm_q = xs[self._i_pm + 1]
            p_ref = u[0]
            q_ref = u[1]
            v_ref = u[2]
            idref_extra = u[3] if self._closed else 0.0

            if self._has_cap:
                v_mag = abs(v)
            else:
                v_mag = 0.0  # no AVC/PRF allowed in this configuration
            e_outer, outer_derivs = blocks.outer_voltage_step(
                scheme.outer, xs[self._i_outer:self._i_outer + self._n_outer],
                pm_q, v_mag, q_ref, v_ref)

            if self.pdc_design is not None:
                pdc_st = xs[self._i_pdc:]
                inj_theta, inj_v, pdc_derivs = self.pdc_design.step(
                    pdc_st, theta - self.refs.theta0, e_outer - self.refs.e0)
                theta_eff = theta + inj_theta
                e_eff = e_outer + inj_v
            else:
                pdc_derivs = ()
                theta_eff = theta
                e_eff = e_outer
        else:  # FROZEN_OUTER
            p_ref = u[2]
            idref_extra = u[3] if self._closed else 0.0
            v_mag = abs(v) if self._has_cap else 0.0
            if self.pdc_design is not None:
                pdc_st = xs[self._i_pdc:]
                inj_theta, inj_v, pdc_derivs = self.pdc_design.step(
                    pdc_st, u[0] - self.refs.theta0, u[1] - self.refs.e0)
                theta_eff = u[0] + inj_theta
                e_eff = u[1] + inj_v
            else:
                theta_eff = u[0]
                e_eff = u[1]
                pdc_derivs = ()

        rot = cmath.exp(1j * theta_eff)
        rot_c = rot.conjugate()
        i_f_c = i_f * rot_c
        i_g_c = i_g * rot_c
        if self._has_cap:
            v_c = v * rot_c

        # inner structure -> converter voltage command (control frame)
        if self._closed:
            e_ctrl, i_ref, inner_derivs = blocks.closed_loop_inner_step(
                scheme.inner, xs[self._i_inner:self._i_inner + self._n_inner],
                e_eff, v_c, i_f_c, i_g_c, p_ref, v_mag,
                p.converter.l_f, p.converter.c_f, w1, idref_extra)
        else:
            # VR/PRF act on the converter-side current: the emulated
            # resistance sits in series with the filter inductor, keeping
            # the LC modes passive (grid-side feedback destabilizes them)
            e_ctrl, inner_derivs = blocks.open_loop_inner_step(
                scheme.inner, xs[self._i_inner:self._i_inner + self._n_inner],
                e_eff, i_f_c, p_ref, v_mag)
            i_ref = None
        e_grid = e_ctrl * rot

        # circuit
        if self._has_cap:
            di_f, dv, di_g = circuit_derivatives(i_f, v, i_g, e_grid,
                                                 p.grid, p.converter)
            dx_circ = [di_f.real, di_f.imag, dv.real, dv.imag, di_g.real, di_g.imag]
        else:
            di = series_circuit_derivatives(i_g, e_grid, p.grid, p.converter)
            v = self._vg + self._zg * i_g + self._l_g_t * di
            v_c = v * rot_c
            v_mag = abs(v)
            dx_circ = [di.real, di.imag]

        p_inst, q_inst = instantaneous_power(v, i_g, self._kappa)

        if self.freeze is FreezeMode.FROZEN_OUTER:
            dx = dx_circ + list(inner_derivs) + list(pdc_derivs)
            out = [p_inst, q_inst, v_c.real, v_c.imag, i_g_c.real, i_g_c.imag,
                   v_mag, w1, theta_eff]
            if self._closed:
                out.append(i_ref.real)
            return dx, tuple(out)

        # synchronization
        if self._uses_pll:
            omega, pll_derivs = blocks.pll_step(
                scheme.inner.add_on, (xs[self._i_pll],), v_c.imag, w1)
            psc_derivs = ()
        else:
            omega, _, psc_derivs = blocks.psc_step(
                scheme.psc, xs[self._i_psc:self._i_psc + self._n_psc],
                pm_p, p_ref, v_c.imag, w1)
            pll_derivs = ()

        om = scheme.omega_meas
        dx = dx_circ + [omega - w1, om * (p_inst - pm_p), om * (q_inst - pm_q)]
        dx += list(psc_derivs)
        dx += list(outer_derivs)
        dx += list(pll_derivs)
        dx += list(inner_derivs)
        dx += list(pdc_derivs)

        out = [p_inst, q_inst, v_c.real, v_c.imag, i_g_c.real, i_g_c.imag,
               v_mag, omega, theta]
        if self._closed:
            out.append(i_ref.real)
        return dx, tuple(out)

    # -- analysis helpers ----------------------------------------------------

    def map_state_from(self, op: OperatingPoint) -> np.ndarray:
        """Pull this layout's states out of a solved operating point by label.

        Labels absent from the operating point (e.g. fresh decoupler
        states) start at zero.
        """
        if op.model is None or op.x0 is None:
            raise ParameterError("operating point does not carry a solved model")
        src = op.model.x_index
        x = np.zeros(self.n_states)
        for i, lab in enumerate(self.state_labels):
            j = src.get(lab)
            if j is not None:
                x[i] = op.x0[j]
        return x

    def equilibrium_inputs_from(self, op: OperatingPoint) -> tuple[float, ...]:
        """Input vector holding this system at the operating point."""
        r = op.refs if op.refs is not None else self.refs
        if self.freeze is FreezeMode.NONE:
            u = [r.p_ref, r.q_ref, r.v_ref]
            if self._closed:
                u.append(0.0)
        elif self.freeze is FreezeMode.FROZEN_OUTER:
            u = [op.theta0, op.e0, r.p_ref]
            if self._closed:
                u.append(0.0)
        else:
            e_grid = op.e0 * cmath.exp(1j * op.theta0)
            u = [e_grid.real, e_grid.imag]
        return tuple(u)

    def linear_model_at(self, op: OperatingPoint):
        """Linearize this system around a solved operating point."""
        from .smallsignal import linearize

        x0 = self.map_state_from(op)
        u0 = self.equilibrium_inputs_from(op)
        return linearize(self, x0, u0)


# ---------------------------------------------------------------------------
# equilibrium solving


def _safe_rhs(sysm: GfmSystem, x: np.ndarray, u) -> np.ndarray | None:
    try:
        return sysm.rhs(0.0, x, u)
    except (DegenerateVoltageError, OverflowError, ValueError):
        return None


def _fd_jacobian(sysm: GfmSystem, x: np.ndarray, u, f0: np.ndarray) -> np.ndarray:
    n = x.size
    jac = np.empty((n, n))
    for j in range(n):
        h = 1e-8 * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        fp = _safe_rhs(sysm, xp, u)
        if fp is None:
            xp[j] = x[j] - h
            fm = _safe_rhs(sysm, xp, u)
            if fm is None:
                raise NoEquilibriumError("Jacobian evaluation left the model's domain")
            jac[:, j] = (f0 - fm) / h
        else:
            jac[:, j] = (fp - f0) / h
    return jac


def _newton(sysm: GfmSystem, x_init: np.ndarray, u) -> np.ndarray | None:
    x = np.array(x_init, float)
    f = _safe_rhs(sysm, x, u)
    if f is None:
        return None
    r = float(np.linalg.norm(f))
    for _ in range(_NEWTON_MAX_ITER):
        if r < _NEWTON_TOL:
            return x
        jac = _fd_jacobian(sysm, x, u, f)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac, -f, rcond=None)[0]
        lam = 1.0
        accepted = False
        while lam > 1e-6:
            xn = x + lam * dx
            fn = _safe_rhs(sysm, xn, u)
            if fn is not None:
                rn = float(np.linalg.norm(fn))
                if rn < r * (1.0 - 0.25 * lam) + 1e-14:
                    x, f, r = xn, fn, rn
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            return None
    return x if r < _NEWTON_TOL else None


def _start_vector(sysm: GfmSystem, refs: Refs) -> np.ndarray:
    """Power-flow-based initial guess for the Newton solve."""
    p = sysm.params
    grid, conv = p.grid, p.converter
    s0 = complex(refs.p_ref, refs.q_ref)
    vg = complex(grid.v_g, 0.0)
    i_g0 = (s0 / vg).conjugate() if abs(s0) > 0.0 else 0j
    v0 = vg + complex(grid.r_g, grid.x_g) * i_g0
    i_f0 = i_g0 + 1j * conv.c_f * v0
    e0 = v0 + complex(conv.r_f, conv.l_f) * i_f0
    theta0 = cmath.phase(e0)
    rot_c = cmath.exp(-1j * theta0)
    p0, q0 = instantaneous_power(v0, i_g0, conv.kappa)

    x = np.zeros(sysm.n_states)
    idx = sysm.x_index

    def put(lab: str, val: float):
        j = idx.get(lab)
        if j is not None:
            x[j] = val

    if sysm._has_cap:
        put("i_fd", i_f0.real)
        put("i_fq", i_f0.imag)
        put("v_d", v0.real)
        put("v_q", v0.imag)
        put("i_gd", i_g0.real)
        put("i_gq", i_g0.imag)
    else:
        put("i_d", i_g0.real)
        put("i_q", i_g0.imag)
    put("theta", theta0)
    put("pm_p", p0)
    put("pm_q", q0)

    inner = sysm.scheme.inner
    v_c = v0 * rot_c
    i_f_c = i_f0 * rot_c
    i_g_c = i_g0 * rot_c
    if isinstance(inner, OpenLoopVvc):
        put("vr_hd", i_f_c.real)
        put("vr_hq", i_f_c.imag)
    else:
        add = inner.add_on
        if isinstance(add, (blocks.VaAddon, GfmVccAddon)):
            va = add.va if isinstance(add, GfmVccAddon) else add
            i_va = (complex(abs(e0), 0.0) - v_c) / complex(va.r_v, va.l_v)
            put("va_d", i_va.real)
            put("va_q", i_va.imag)
        else:
            put("vi_ld", i_g_c.real)
            put("vi_lq", i_g_c.imag)
            # at equilibrium the integrators hold the full current reference
            prf_d = isinstance(add, (blocks.HybridAddon, blocks.ActiveSusceptanceAddon)) \
                and add.prf_enabled
            i_ref = i_f_c
            if inner.cap_decoupling and conv.c_f > 0.0:
                i_ref -= 1j * conv.c_f * v_c
            if inner.ig_feedforward:
                i_ref -= complex(0.0, i_g_c.imag) if prf_d else i_g_c
            put("vvc_id", i_ref.real)
            put("vvc_iq", i_ref.imag)
        e_ctrl = e0 * rot_c
        xi_c = e_ctrl
        if inner.ind_decoupling:
            xi_c -= 1j * conv.l_f * i_f_c
        if inner.v_feedforward:
            xi_c -= v_c
        put("vcc_id", xi_c.real)
        put("vcc_iq", xi_c.imag)
    return x


def solve_operating_point(params: SystemParams, scheme: ControlScheme,
                          p_ref: float, q_ref: float = 0.0,
                          v_ref: float | None = None) -> OperatingPoint:
    """Solve the closed-loop steady state for the given references.

    A damped Newton iteration runs from a power-flow start; randomized
    restarts cover poorly conditioned cases.  For schemes carrying a
    decoupler the plain system is solved first, the decoupler is designed
    and pinned to that point, and the assembled system is polished.
    """
    if v_ref is None:
        v_ref = scheme.outer.v_ref
    has_pdc = isinstance(scheme.inner, OpenLoopVvc) and scheme.inner.pdc is not None
    if has_pdc:
        scheme0 = replace(scheme, inner=replace(scheme.inner, pdc=None))
        op0 = solve_operating_point(params, scheme0, p_ref, q_ref=q_ref, v_ref=v_ref)
        design = design_pdc(params, scheme, p_ref, q_ref=q_ref, v_ref=v_ref)
        refs = replace(op0.refs, theta0=op0.theta0, e0=op0.e0)
        sysm = GfmSystem(params, scheme, refs=refs, pdc_design=design)
        x_start = sysm.map_state_from(op0)
        u0 = sysm.default_inputs()
        x_eq = _newton(sysm, x_start, u0)
        if x_eq is None:
            raise NoEquilibriumError(
                "no steady state found after attaching the decoupler")
        return _pack_operating_point(sysm, x_eq, refs)

    refs = Refs(p_ref=p_ref, q_ref=q_ref, v_ref=v_ref)
    sysm = GfmSystem(params, scheme, refs=refs)
    u0 = sysm.default_inputs()
    x_start = _start_vector(sysm, refs)
    x_eq = _newton(sysm, x_start, u0)
    if x_eq is None:
        rng = np.random.default_rng(_RESTART_SEED)
        scale = np.maximum(np.abs(x_start), 0.2)
        for _ in range(3):
            x_try = x_start + rng.normal(scale=0.1, size=x_start.size) * scale
            x_eq = _newton(sysm, x_try, u0)
            if x_eq is not None:
                break
    if x_eq is None:
        raise NoEquilibriumError(
            f"no steady state for p_ref={p_ref:g}, q_ref={q_ref:g}, "
            f"v_ref={v_ref:g} (scr={params.grid.scr:g})")
    return _pack_operating_point(sysm, x_eq, refs)


def _pack_operating_point(sysm: GfmSystem, x_eq: np.ndarray, refs: Refs) -> OperatingPoint:
    xs = x_eq.tolist()
    idx = sysm.x_index
    if sysm._has_cap:
        i_f = complex(xs[idx["i_fd"]], xs[idx["i_fq"]])
        v = complex(xs[idx["v_d"]], xs[idx["v_q"]])
        i_g = complex(xs[idx["i_gd"]], xs[idx["i_gq"]])
    else:
        i_g = complex(xs[idx["i_d"]], xs[idx["i_q"]])
        i_f = i_g
        _, out = sysm._eval(x_eq, sysm.default_inputs())
        v = complex(out[2], out[3]) * cmath.exp(1j * xs[idx["theta"]])
    theta0 = xs[idx["theta"]]
    pm_q = xs[idx["pm_q"]]
    n_outer = sysm._n_outer
    e0, _ = blocks.outer_voltage_step(
        sysm.scheme.outer, xs[sysm._i_outer:sysm._i_outer + n_outer],
        pm_q, abs(v), refs.q_ref, refs.v_ref)
    rot_c = cmath.exp(-1j * theta0)
    p0, q0 = instantaneous_power(v, i_g, sysm.params.converter.kappa)
    # pin the pick-off refs so frozen/decoupled variants sit at this point
    refs = replace(refs, theta0=theta0, e0=e0)
    sysm.refs = refs
    return OperatingPoint(theta0=theta0, e0=e0, v0=v * rot_c, i0_f=i_f * rot_c,
                          i0_g=i_g * rot_c, p0=p0, q0=q0, refs=refs,
                          model=sysm, x0=x_eq)
