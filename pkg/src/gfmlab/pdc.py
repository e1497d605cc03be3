"""Power-coupling decoupler for the open-loop structure.

At stiff operating points the angle command moves mostly active power and
the magnitude command mostly reactive power, but under load or weak grids
the channels couple.  The decoupler injects a filtered copy of each
command's deviation into the other channel so that the 2x2 map from
(angle, magnitude) to (P, Q) becomes diagonal again at the design point.

The design plant is built from grid-impedance *estimates*: the converter
and its inner shaping are kept (optionally reduced to the series
impedance), the actual grid is replaced by the estimate, the outer loops
are frozen, and the plant is linearized around the estimated-plant
equilibrium.  Because all four transfer entries share the plant
characteristic polynomial, each injection is a ratio of zero polynomials
only, realized in controllable canonical form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import NonProperWarning, NumericFailureError, ParameterError, \
    VariantMismatchError
from .plant import GridParams, SystemParams

_COEF_TOL = 1e-9  # relative cut for stripping numerically-zero leading coefficients


def _strip_leading(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, float).ravel()
    scale = np.max(np.abs(c))
    if scale == 0.0:
        return np.zeros(1)
    keep = np.abs(c) > _COEF_TOL * scale
    first = int(np.argmax(keep))
    return c[first:]


@dataclass(frozen=True)
class PdcController:
    """Single injection path num(s)/den(s) with a state-space realization."""

    num: tuple[float, ...]
    den: tuple[float, ...]
    a: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    c: tuple[float, ...]
    d: float

    @classmethod
    def from_tf(cls, num: np.ndarray, den: np.ndarray, omega_roll: float) -> "PdcController":
        from scipy import signal

        num = _strip_leading(num)
        den = _strip_leading(den)
        if np.max(np.abs(den)) == 0.0:
            raise NumericFailureError("decoupler denominator vanished")
        deficit = len(num) - len(den)
        if deficit > 0:
            warnings.warn(
                f"decoupler path is improper by degree {deficit}; "
                f"adding roll-off poles at {omega_roll:.1f} rad/s",
                NonProperWarning, stacklevel=2)
            for _ in range(deficit):
                den = np.polymul(den, np.array([1.0 / omega_roll, 1.0]))
        den = np.asarray(den, float)
        num = np.asarray(num, float) / den[0]
        den = den / den[0]
        # realize in the scaled variable s' = s/w0 so canonical-form
        # coefficients stay O(1); raw plant-numerator quotients span many
        # decades and wreck finite-difference jacobians otherwise
        deg = len(den) - 1
        roots = np.abs(np.roots(den)) if deg > 0 else np.array([])
        roots = roots[roots > 0.0]
        w0 = float(np.exp(np.mean(np.log(roots)))) if roots.size else 1.0
        num_s = num * w0 ** np.arange(len(num) - 1, -1, -1) / w0 ** deg
        den_s = den * w0 ** np.arange(deg, -1, -1) / w0 ** deg
        a, b, c, d = signal.tf2ss(num_s, den_s)
        return cls(
            num=tuple(num.tolist()), den=tuple(den.tolist()),
            a=tuple(tuple(row) for row in (w0 * np.atleast_2d(a)).tolist()),
            b=tuple((w0 * np.asarray(b, float)).ravel().tolist()),
            c=tuple(np.asarray(c, float).ravel().tolist()),
            d=float(np.atleast_2d(d)[0, 0]),
        )

    @property
    def n_states(self) -> int:
        return len(self.b)

    def freq_response(self, omega: np.ndarray) -> np.ndarray:
        s = 1j * np.asarray(omega, float)
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def step(self, st: Sequence[float], u: float):
        """Returns (output, derivs); scalar python math, states are few."""
        y = self.d * u
        derivs = []
        for i, row in enumerate(self.a):
            acc = self.b[i] * u
            for j, aij in enumerate(row):
                if aij != 0.0:
                    acc += aij * st[j]
            derivs.append(acc)
            y += self.c[i] * st[i]
        return y, derivs


@dataclass(frozen=True)
class RationalTf:
    """Plain rational function num(s)/den(s) used for design diagnostics."""

    num: tuple[float, ...]
    den: tuple[float, ...]

    def freq_response(self, omega) -> np.ndarray:
        s = 1j * np.asarray(omega, float)
        return np.polyval(self.num, s) / np.polyval(self.den, s)


@dataclass(frozen=True)
class PdcDesign:
    """Realized decoupler: magnitude deviation -> angle injection and
    angle deviation -> magnitude injection.

    ``f_theta_p``/``f_v_q`` are the diagonal channels the decoupled plant
    presents (determinant over the opposite diagonal entry); flat
    magnitude there is the design goal.
    """

    c_vtheta: PdcController  # rad per p.u. voltage deviation
    c_thetav: PdcController  # p.u. voltage per rad deviation
    r_g_hat: float
    x_g_hat: float
    f_theta_p: RationalTf | None = None
    f_v_q: RationalTf | None = None

    @property
    def state_labels(self) -> tuple[str, ...]:
        return tuple(f"pdc_vt{i}" for i in range(self.c_vtheta.n_states)) + \
            tuple(f"pdc_tv{i}" for i in range(self.c_thetav.n_states))

    @property
    def n_states(self) -> int:
        return self.c_vtheta.n_states + self.c_thetav.n_states

    def step(self, st: Sequence[float], d_theta: float, d_v: float):
        """Injections from command deviations.

        Returns ``(theta_inj, v_inj, derivs)`` with ``derivs`` ordered as
        :attr:`state_labels`.
        """
        n1 = self.c_vtheta.n_states
        if len(st) != self.n_states:
            raise VariantMismatchError("decoupler state length does not match design")
        theta_inj, d1 = self.c_vtheta.step(st[:n1], d_v)
        v_inj, d2 = self.c_thetav.step(st[n1:], d_theta)
        return theta_inj, v_inj, tuple(d1) + tuple(d2)


def design_pdc(params: SystemParams, scheme, p_ref: float, q_ref: float = 0.0,
               v_ref: float | None = None) -> PdcDesign:
    """Design the decoupler carried by ``scheme.inner.pdc``.

    The two injection paths cancel the off-diagonal coupling of the
    estimated plant at the operating point reached with the given
    references.  When the estimates match the actual grid, the shaped
    angle-to-P channel of the real plant is flat near the design point.
    """
    from .blocks import OpenLoopVvc
    from .system import FreezeMode, GfmSystem, solve_operating_point

    if not isinstance(scheme.inner, OpenLoopVvc) or scheme.inner.pdc is None:
        raise ParameterError("decoupler design requires an open-loop scheme with a pdc config")
    cfg = scheme.inner.pdc
    grid_hat = GridParams(r_g=cfg.r_g_hat, x_g=cfg.x_g_hat,
                          v_g=params.grid.v_g, omega_1=params.grid.omega_1)
    if cfg.include_filter_and_vr:
        inner_hat = replace(scheme.inner, pdc=None)
        conv_hat = params.converter
    else:
        inner_hat = OpenLoopVvc()
        conv_hat = replace(params.converter, c_f=0.0)
    params_hat = replace(params, grid=grid_hat, converter=conv_hat)
    scheme_hat = replace(scheme, inner=inner_hat)

    op_hat = solve_operating_point(params_hat, scheme_hat, p_ref, q_ref=q_ref, v_ref=v_ref)
    frozen = GfmSystem(params_hat, scheme_hat, freeze=FreezeMode.FROZEN_OUTER,
                       refs=op_hat.refs)
    model = frozen.linear_model_at(op_hat)

    # transfer matrix entries share the characteristic polynomial, so the
    # injection ratios reduce to ratios of numerator polynomials
    num_t, num_v, den = model.tf_numerators(
        inputs=("u_theta", "u_v"), outputs=("P", "Q"))
    g_tp, g_tq = (np.asarray(p, float) for p in num_t)
    g_vp, g_vq = (np.asarray(p, float) for p in num_v)
    omega_roll = 10.0 * params.omega_1
    c_vtheta = PdcController.from_tf(-g_vp, g_tp, omega_roll)
    c_thetav = PdcController.from_tf(-g_tq, g_vq, omega_roll)

    # decoupled diagonals: det(G)/G_VQ and det(G)/G_thetaP, sharing den
    det_num = np.polysub(np.polymul(g_tp, g_vq), np.polymul(g_vp, g_tq))
    det_num = _strip_leading(det_num)
    f_theta_p = RationalTf(num=tuple(det_num),
                           den=tuple(_strip_leading(np.polymul(den, g_vq))))
    f_v_q = RationalTf(num=tuple(det_num),
                       den=tuple(_strip_leading(np.polymul(den, g_tp))))
    return PdcDesign(c_vtheta=c_vtheta, c_thetav=c_thetav,
                     r_g_hat=cfg.r_g_hat, x_g_hat=cfg.x_g_hat,
                     f_theta_p=f_theta_p, f_v_q=f_v_q)
