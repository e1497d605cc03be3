"""Small-signal tools: numeric linearization, modal analysis, frequency
responses, and the closed-form design rules for the angle loop and the
virtual resistance.

Gains follow the package convention: droop gains in rad/s per p.u.,
reactances in p.u. at the nominal frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotAnEquilibriumError, ParameterError
from .plant import OMEGA_1, SystemParams

_EQ_TOL = 1e-8  # max-norm residual accepted as an equilibrium


@dataclass(frozen=True)
class Mode:
    """One eigenvalue with its oscillation data and top participants."""

    eig: complex
    freq_hz: float
    zeta: float
    participants: tuple[tuple[str, float], ...] = ()

    def __str__(self) -> str:
        who = ", ".join(f"{n}:{v:.2f}" for n, v in self.participants[:3])
        return (f"{self.eig.real:+.3f}{self.eig.imag:+.3f}j  "
                f"f={self.freq_hz:6.2f} Hz  zeta={self.zeta:6.3f}  [{who}]")


def _mode_from_eig(lam: complex, participants=()) -> Mode:
    mag = abs(lam)
    if mag < 1e-12:
        return Mode(eig=lam, freq_hz=0.0, zeta=1.0, participants=participants)
    return Mode(eig=lam, freq_hz=abs(lam.imag) / (2.0 * math.pi),
                zeta=-lam.real / mag, participants=participants)


@dataclass
class LinearModel:
    """State-space model dx = A dx + B du, dy = C dx + D du around (x0, u0)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    state_labels: tuple[str, ...]
    input_labels: tuple[str, ...]
    output_labels: tuple[str, ...]
    x0: np.ndarray
    u0: np.ndarray
    y0: np.ndarray
    _eigs: np.ndarray | None = field(default=None, repr=False)
    _vecs: np.ndarray | None = field(default=None, repr=False)

    def _eigdecomp(self):
        if self._eigs is None:
            self._eigs, self._vecs = np.linalg.eig(self.a)
        return self._eigs, self._vecs

    def eigenvalues(self) -> np.ndarray:
        return self._eigdecomp()[0]

    def is_stable(self, margin: float = 0.0) -> bool:
        return bool(np.all(self.eigenvalues().real < -margin))

    def modes(self, n_participants: int = 4) -> list[Mode]:
        """All modes, sorted by damping ratio (least damped first).

        Participation of state k in mode i is |V[k,i] W[i,k]| normalized
        to sum to one over the states.
        """
        eigs, vecs = self._eigdecomp()
        try:
            w = np.linalg.inv(vecs)
        except np.linalg.LinAlgError:
            w = np.linalg.pinv(vecs)
        part = np.abs(vecs * w.T)  # rows: states, cols: modes
        col_sum = part.sum(axis=0)
        col_sum[col_sum == 0.0] = 1.0
        part = part / col_sum
        out = []
        for i, lam in enumerate(eigs):
            order = np.argsort(part[:, i])[::-1][:n_participants]
            who = tuple((self.state_labels[k], float(part[k, i])) for k in order)
            out.append(_mode_from_eig(complex(lam), who))
        out.sort(key=lambda m: m.zeta)
        return out

    def oscillatory_modes(self, f_min: float = 0.0, f_max: float = math.inf,
                          n_participants: int = 4) -> list[Mode]:
        """Positive-frequency half of each conjugate pair within a band."""
        seen = [m for m in self.modes(n_participants)
                if m.eig.imag > 1e-9 and f_min <= m.freq_hz <= f_max]
        return seen

    def nearest_mode(self, freq_hz: float) -> Mode:
        cands = [m for m in self.modes() if m.eig.imag > 1e-9]
        if not cands:
            raise ParameterError("model has no oscillatory modes")
        return min(cands, key=lambda m: abs(m.freq_hz - freq_hz))

    def _io(self, input: str, output: str) -> tuple[int, int]:
        try:
            j = self.input_labels.index(input)
        except ValueError:
            raise ParameterError(f"unknown input {input!r}; have {self.input_labels}")
        try:
            i = self.output_labels.index(output)
        except ValueError:
            raise ParameterError(f"unknown output {output!r}; have {self.output_labels}")
        return j, i

    def freq_response(self, omega: np.ndarray, input: str, output: str) -> np.ndarray:
        """H(j omega) for one input/output pair; omega in rad/s."""
        j, i = self._io(input, output)
        bj = self.b[:, j]
        ci = self.c[i, :]
        dij = self.d[i, j]
        eye = np.eye(self.a.shape[0])
        out = np.empty(len(omega), complex)
        for k, w in enumerate(np.asarray(omega, float)):
            try:
                out[k] = ci @ np.linalg.solve(1j * w * eye - self.a, bj) + dij
            except np.linalg.LinAlgError:
                # sample sits exactly on an undamped eigenvalue
                out[k] = complex(math.inf, 0.0)
        return out

    def tf_numerators(self, inputs: tuple[str, ...], outputs: tuple[str, ...]):
        """Numerator polynomials (and the shared denominator) of selected
        transfer entries, one row of numerators per requested input."""
        from scipy import signal

        rows = []
        den = None
        out_idx = [self._io(inputs[0], o)[1] for o in outputs]
        for name in inputs:
            j = self._io(name, outputs[0])[0]
            num, den = signal.ss2tf(self.a, self.b[:, [j]], self.c, self.d[:, [j]])
            rows.append([np.asarray(num[i], float) for i in out_idx])
        return (*rows, np.asarray(den, float))


def eigenmodes(model: LinearModel, n_participants: int = 4) -> list[Mode]:
    """All modes of a linear model, sorted by ascending frequency.

    Conjugate pairs both appear; real eigenvalues come first (0 Hz).
    """
    out = model.modes(n_participants)
    out.sort(key=lambda m: (m.freq_hz, m.eig.imag))
    return out


def linearize(sysm, x0, u0, inputs: tuple[str, ...] | None = None,
              outputs: tuple[str, ...] | None = None,
              rel_step: float = 1e-6) -> LinearModel:
    """Central-difference linearization of a joint system at an equilibrium.

    Perturbations are ``rel_step`` relative with an absolute floor of 1e-9.
    ``inputs``/``outputs`` select and order a subset of the system's
    channels.  Raises :class:`NotAnEquilibriumError` when the point does
    not satisfy the dynamics to within the internal tolerance.
    """
    x0 = np.asarray(x0, float)
    u0 = np.asarray(u0, float)
    f0 = np.asarray(sysm.rhs(0.0, x0, u0), float)
    resid = float(np.max(np.abs(f0))) if f0.size else 0.0
    if resid > _EQ_TOL:
        raise NotAnEquilibriumError(
            f"point is not an equilibrium: max |dx/dt| = {resid:.3e}")
    y0 = np.asarray(sysm.outputs(0.0, x0, u0), float)

    n, m, q = x0.size, u0.size, y0.size
    a = np.empty((n, n))
    c = np.empty((q, n))
    for j in range(n):
        h = max(rel_step * abs(x0[j]), 1e-9)
        xp = x0.copy(); xp[j] += h
        xm = x0.copy(); xm[j] -= h
        a[:, j] = (sysm.rhs(0.0, xp, u0) - sysm.rhs(0.0, xm, u0)) / (2.0 * h)
        c[:, j] = (sysm.outputs(0.0, xp, u0) - sysm.outputs(0.0, xm, u0)) / (2.0 * h)
    b = np.empty((n, m))
    d = np.empty((q, m))
    for j in range(m):
        h = max(rel_step * abs(u0[j]), 1e-9)
        up = np.array(u0); up[j] += h
        um = np.array(u0); um[j] -= h
        b[:, j] = (sysm.rhs(0.0, x0, up) - sysm.rhs(0.0, x0, um)) / (2.0 * h)
        d[:, j] = (sysm.outputs(0.0, x0, up) - sysm.outputs(0.0, x0, um)) / (2.0 * h)

    in_labels = tuple(sysm.input_labels)
    out_labels = tuple(sysm.output_labels)
    if inputs is not None:
        cols = [in_labels.index(name) for name in inputs]
        b, d, u0 = b[:, cols], d[:, cols], u0[cols]
        in_labels = tuple(inputs)
    if outputs is not None:
        rows = [out_labels.index(name) for name in outputs]
        c, d, y0 = c[rows, :], d[rows, :], y0[rows]
        out_labels = tuple(outputs)

    return LinearModel(a=a, b=b, c=c, d=d,
                       state_labels=tuple(sysm.state_labels),
                       input_labels=in_labels,
                       output_labels=out_labels,
                       x0=x0, u0=u0, y0=y0)


def plant_linear_model(params: SystemParams) -> LinearModel:
    """Exact linear model of the bare circuit driven by the converter voltage.

    Built at the zero-current point (e chosen so no current flows), which
    is an exact equilibrium; the circuit is linear so the matrices hold
    everywhere.
    """
    from .blocks import ControlScheme, OpenLoopVvc, OuterVoltageConfig, PureDroop
    from .system import FreezeMode, GfmSystem

    # the scheme is never evaluated with the plant frozen; any valid one works
    scheme = ControlScheme(psc=PureDroop(k_p=1.0), outer=OuterVoltageConfig(),
                           inner=OpenLoopVvc())
    sysm = GfmSystem(params, scheme, freeze=FreezeMode.PLANT)
    vg = complex(params.grid.v_g, 0.0)
    conv = params.converter
    x0 = np.zeros(sysm.n_states)
    if conv.c_f > 0.0:
        i_f = 1j * conv.c_f * vg
        e = vg + complex(conv.r_f, conv.l_f) * i_f
        x0[sysm.x_index["i_fd"]] = i_f.real
        x0[sysm.x_index["i_fq"]] = i_f.imag
        x0[sysm.x_index["v_d"]] = vg.real
        x0[sysm.x_index["v_q"]] = vg.imag
    else:
        e = vg
    u0 = np.array([e.real, e.imag])
    return linearize(sysm, x0, u0)


# ---------------------------------------------------------------------------
# closed-form design rules (aggregate series-impedance view)


def aggregate_series_rl(params: SystemParams) -> tuple[float, float]:
    """Total series resistance (p.u.) and inductance (reactance/omega_1)
    between the converter internal voltage and the infinite bus."""
    r = params.converter.r_f + params.grid.r_g
    l = (params.converter.l_f + params.grid.x_g) / params.omega_1
    return r, l


def plant_poles(r: float, l: float, omega_1: float = OMEGA_1) -> tuple[complex, complex]:
    """Series-circuit pole pair -R/L +- j omega_1.

    ``r`` and ``l`` in any consistent unit pair (p.u. with l = x/omega_1,
    or ohms with henries).
    """
    if l <= 0.0:
        raise ParameterError("inductance must be strictly positive")
    if r < 0.0:
        raise ParameterError("resistance must be non-negative")
    re = -r / l
    return complex(re, omega_1), complex(re, -omega_1)


def series_plant_poles(params: SystemParams) -> tuple[complex, complex]:
    """Pole pair of the aggregate converter+grid series circuit."""
    r, l = aggregate_series_rl(params)
    return plant_poles(r, l, params.omega_1)


def psc_second_order(k_p: float, omega_c: float, x: float, v_g: float = 1.0,
                     e0: float = 1.0) -> tuple[float, float]:
    """Damping ratio and natural frequency of the filtered-droop angle loop.

    ``k_p`` in rad/s per p.u.; ``x`` is the aggregate series reactance
    carrying the static power link slope V E / X.  Returns (zeta, omega_n).
    """
    if min(k_p, omega_c, x, v_g, e0) <= 0.0:
        raise ParameterError("all angle-loop design inputs must be strictly positive")
    slope = v_g * e0 / x
    omega_n = math.sqrt(k_p * omega_c * slope)
    zeta = 0.5 * math.sqrt(omega_c / (k_p * slope))
    return zeta, omega_n


def damped_frequency_hz(zeta: float, omega_n: float) -> float:
    """Oscillation frequency of an underdamped second-order pair, in Hz."""
    return omega_n * math.sqrt(max(1.0 - zeta ** 2, 0.0)) / (2.0 * math.pi)


def droop_pole_estimate(r: float, l: float, k_p: float, e0: float = 1.0,
                        v_d0: float = 1.0, kappa: float = 1.0,
                        omega_1: float = OMEGA_1) -> tuple[complex, complex]:
    """Near-nominal-frequency pole pair of the unfiltered droop loop.

    The droop feedback cancels part of the series resistance; the pair is
    approximately -(2R - kappa k_p E v_d0 / omega_1) / (2L) +- j omega_1
    with ``k_p`` in rad/s per p.u.
    """
    if l <= 0.0:
        raise ParameterError("inductance must be strictly positive")
    re = -(2.0 * r - kappa * k_p * e0 * v_d0 / omega_1) / (2.0 * l)
    return complex(re, omega_1), complex(re, -omega_1)


def droop_gain_limit(r: float, e0: float = 1.0, v_d0: float = 1.0,
                     kappa: float = 1.0) -> float:
    """Per-unit droop gain at which the near-nominal pair turns unstable,
    approximately twice the series resistance."""
    return 2.0 * r / (kappa * e0 * v_d0)


def vr_design_kp(r_a: float, v: float = 1.0, kappa: float = 1.0,
                 omega_1: float = OMEGA_1) -> float:
    """Droop gain (rad/s per p.u.) matched to a virtual resistance,
    k_p = omega_1 r_a / (kappa V^2); divide by omega_1 for the p.u. value."""
    if r_a <= 0.0 or v <= 0.0:
        raise ParameterError("virtual resistance and voltage must be strictly positive")
    return omega_1 * r_a / (kappa * v * v)


def vr_mode_poles(r: float, l: float, r_a: float, omega_v: float,
                  omega_1: float = OMEGA_1) -> tuple[complex, ...]:
    """Four poles of the series circuit shaped by the high-passed virtual
    resistance, roots of [sL + R + R_a s/(s+omega_v)]^2 + (omega_1 L)^2.

    Multiplying by (s+omega_v)^2 gives a real quartic solved by
    companion-matrix root finding.
    """
    if l <= 0.0:
        raise ParameterError("inductance must be strictly positive")
    a = np.array([l, l * omega_v + r + r_a, r * omega_v])  # (s+omega_v)-scaled branch
    hp = np.array([1.0, omega_v])
    quartic = np.polyadd(np.polymul(a, a), (omega_1 * l) ** 2 * np.polymul(hp, hp))
    roots = np.roots(quartic)
    return tuple(sorted((complex(z) for z in roots),
                        key=lambda z: (round(z.imag, 6), z.real)))


def partition_vr_poles(poles, omega_1: float = OMEGA_1) -> dict[str, tuple[complex, ...]]:
    """Group poles into the pair near nominal frequency and the
    low-frequency pair: SR-like when |Im|/omega_1 in [0.8, 1.2], SSR-like
    below 0.5."""
    out: dict[str, list[complex]] = {"sr": [], "ssr": [], "other": []}
    for z in poles:
        ratio = abs(z.imag) / omega_1
        if 0.8 <= ratio <= 1.2:
            out["sr"].append(z)
        elif ratio < 0.5:
            out["ssr"].append(z)
        else:
            out["other"].append(z)
    return {k: tuple(v) for k, v in out.items()}


def write_modes_csv(modes: list[Mode], path) -> None:
    """Modes as CSV: re, im, freq_hz, zeta, participants (label:val; ...)."""
    lines = ["re,im,freq_hz,zeta,participants"]
    for m in modes:
        who = ";".join(f"{n}:{v:.6g}" for n, v in m.participants)
        lines.append(f"{m.eig.real:.12g},{m.eig.imag:.12g},"
                     f"{m.freq_hz:.12g},{m.zeta:.12g},{who}")
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
