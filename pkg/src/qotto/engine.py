"""Two-stroke four-level engine: recharge by optical pumping, discharge by an
e <-> i swap, operational steady states and the short-cycle closed forms."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .lindblad import Generator, IntegrationError, StepControl, evolve, propagate
from .models import EngineParams, build_engine4, initial_gibbs, thermal_occupation
from .qcore import dagger, expectation
from .thermo import ergotropy, injected_energy

DISCHARGE_MODES = ("ideal_swap", "finite_pulse")
PULSE_RATIO_WARN = 0.1
SHORT_CYCLE_WARN = 0.1
LEAKAGE_REPORT = 1e-6


class OSSConvergenceError(IntegrationError):
    """The cycle map did not reach its fixed point within ``max_cycles``."""


class ShortCycleWarning(UserWarning):
    """``kappa * tau`` is not small, so first-order short-cycle forms are unreliable."""


class PulseDurationWarning(UserWarning):
    """The discharge pulse is not short compared with the recharge stroke."""


@dataclass(frozen=True)
class CycleConfig:
    tau_r: float
    discharge_mode: str = "ideal_swap"
    max_cycles: int = 2 ** 50
    fp_tol: float = 1e-10
    method: str = "expm"  # "expm" (exact propagators) or "rk45" (adaptive integrator)
    ctrl: StepControl | None = None

    def __post_init__(self):
        if not self.tau_r > 0:
            raise ValueError("tau_r must be > 0")
        if self.discharge_mode not in DISCHARGE_MODES:
            raise ValueError(f"discharge_mode must be one of {DISCHARGE_MODES}")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")
        if self.method not in ("expm", "rk45"):
            raise ValueError(f"unknown method {self.method!r}")

    def tau_d(self, params: EngineParams) -> float:
        if self.discharge_mode == "ideal_swap":
            return 0.0
        td = params.pulse_duration
        if td > PULSE_RATIO_WARN * self.tau_r:
            warnings.warn(f"pulse duration {td:.3g} is not << tau_r = {self.tau_r:.3g}",
                          PulseDurationWarning, stacklevel=3)
        return td


@dataclass
class CycleReport:
    W_in: float
    W_ext: float
    Q_m: float
    Q_i: float
    Q_e: float
    E_in: float
    eta: float  # nan when the machine is off (W_ext >= 0) or E_in <= 0
    P: float
    dU_cycle: float
    ergotropy_at_swap: float
    tau_r: float = 0.0
    tau_d: float = 0.0
    E_in_branch: str = ""
    first_law_residual: float = 0.0
    r_g: float = 0.0
    r_e: float = 0.0
    r_i: float = 0.0
    r_m: float = 0.0
    cycles: int = 1
    leakage: float = 0.0
    gm_coherence: float = 0.0
    W_ext_direct: float = 0.0

    @property
    def machine_on(self) -> bool:
        return self.W_ext < 0

    @property
    def Q_total(self) -> float:
        return self.Q_m + self.Q_i + self.Q_e

    @property
    def leakage_flag(self) -> bool:
        """Off-diagonal weight outside the driven g-m pair exceeds ``LEAKAGE_REPORT``."""
        return self.leakage > LEAKAGE_REPORT


@dataclass
class ShortCycleReport:
    r_g: float
    r_e: float
    r_i: float
    r_m: float
    kappa: float
    W_in: float
    Q_e: float
    Q_i: float
    Q_m: float
    E: float
    E_in: float
    eta: float
    P: float
    tau: float
    E_in_branch: str = ""
    branches: dict = field(default_factory=dict)

    @property
    def Q_total(self) -> float:
        return self.Q_e + self.Q_i + self.Q_m


def _swap_unitary(dim: int = 4, e: int = 1, i: int = 2) -> np.ndarray:
    u = np.eye(dim, dtype=complex)
    u[e, e] = u[i, i] = 0.0
    u[i, e] = u[e, i] = -1j
    return u


def discharge_ideal(rho, e: int = 1, i: int = 2) -> np.ndarray:
    """Exchange the ``e`` and ``i`` populations with ``U = -i(s_ie + s_ei) + (rest)``.

    Level indices default to the engine layout (g, e, i, m); pass ``e``/``i``
    for the effective three-level model.
    """
    rho = np.asarray(rho, dtype=complex)
    u = _swap_unitary(rho.shape[0], e, i)
    return u @ rho @ dagger(u)


def _swap_superop(dim: int) -> np.ndarray:
    u = _swap_unitary(dim)
    # vec(U X U^dag) = (U kron conj(U)) vec(X) in row-major order
    return np.kron(u, u.conj())


def _run_stage(model, rho, t, method, ctrl, gen=None):
    if method == "expm":
        traj = propagate(model, rho, [0.0, t], generator=gen)
    else:
        traj = evolve(model, rho, t, ctrl=ctrl, t_eval=[0.0, t], generator=gen)
    return traj.final, traj.totals()


def discharge_pulse(params: EngineParams, rho, method: str = "expm", ctrl: StepControl | None = None):
    """Resonant pulse on e <-> i for ``pi / (2 epsilon)``, with dissipation and the pump on.

    Returns ``(rho', W_ext, totals)``. ``W_ext`` includes the switching work
    ``+Tr(rho V_ext)`` at turn-on and ``-Tr(rho' V_ext)`` at turn-off;
    ``totals`` holds the other accumulators gathered during the pulse.
    """
    if params.epsilon <= 0:
        raise ValueError("finite pulse needs epsilon > 0")
    model = build_engine4(params, "discharge")
    v_ext = model.coupling(model.drive("ext"))
    rho = np.asarray(rho, dtype=complex)
    rho_out, acc = _run_stage(model, rho, params.pulse_duration, method, ctrl)
    w = acc.pop("W_ext") + expectation(rho, v_ext).real - expectation(rho_out, v_ext).real
    return rho_out, w, acc


def _cycle_report(params: EngineParams, cfg: CycleConfig, rho_start, rho_pre, rho_end,
                  acc: dict, w_ext: float, tau_d: float) -> CycleReport:
    recharge = build_engine4(params, "recharge")
    E = recharge.energy_operator()
    W_in, Qm, Qi, Qe = acc["W_in"], acc["Q_m"], acc["Q_i"], acc["Q_e"]
    inj = injected_energy(W_in, Qm, Qi, Qe)
    dU = expectation(rho_end, E).real - expectation(rho_start, E).real
    pop = np.real(np.diag(rho_start))
    off = np.abs(rho_start - np.diag(np.diag(rho_start)))
    gm = float(off[0, 3])
    off[0, 3] = off[3, 0] = 0.0
    rep = CycleReport(
        W_in=W_in, W_ext=w_ext, Q_m=Qm, Q_i=Qi, Q_e=Qe, E_in=inj.value, eta=math.nan,
        P=math.nan, dU_cycle=dU,
        ergotropy_at_swap=ergotropy(rho_pre, recharge.H0),
        tau_r=cfg.tau_r, tau_d=tau_d, E_in_branch=inj.branch,
        first_law_residual=dU - (W_in + w_ext + Qm + Qi + Qe),
        r_g=pop[0], r_e=pop[1], r_i=pop[2], r_m=pop[3],
        leakage=float(off.max()), gm_coherence=gm, W_ext_direct=w_ext,
    )
    _set_figures(rep)
    return rep


def _set_figures(rep: CycleReport) -> None:
    on = rep.W_ext < 0 and rep.E_in > 0
    rep.eta = -rep.W_ext / rep.E_in if on else math.nan
    rep.P = -rep.W_ext / (rep.tau_r + rep.tau_d)


def run_cycle(cfg: CycleConfig, params: EngineParams, rho):
    """One recharge stroke of ``tau_r`` followed by the discharge stroke.

    Returns ``(rho', report)``. ``rho`` is the state at the start of the
    recharge stroke (i.e. just after the previous discharge).
    """
    rho = np.asarray(rho, dtype=complex)
    recharge = build_engine4(params, "recharge")
    rho_pre, acc = _run_stage(recharge, rho, cfg.tau_r, cfg.method, cfg.ctrl)
    tau_d = cfg.tau_d(params)
    if cfg.discharge_mode == "ideal_swap":
        rho_end = discharge_ideal(rho_pre)
        E = recharge.energy_operator()
        w_ext = expectation(rho_end, E).real - expectation(rho_pre, E).real
    else:
        rho_end, w_ext, acc_d = discharge_pulse(params, rho_pre, cfg.method, cfg.ctrl)
        for k, v in acc_d.items():
            acc[k] = acc.get(k, 0.0) + v
    return rho_end, _cycle_report(params, cfg, rho, rho_pre, rho_end, acc, w_ext, tau_d)


def cycle_superoperator(cfg: CycleConfig, params: EngineParams) -> np.ndarray:
    """Linear map on row-major ``vec(rho)`` for one full cycle (expm route)."""
    L_r = Generator(build_engine4(params, "recharge")).liouvillian
    P = scipy.linalg.expm(L_r * cfg.tau_r)
    if cfg.discharge_mode == "ideal_swap":
        D = _swap_superop(4)
    else:
        L_d = Generator(build_engine4(params, "discharge")).liouvillian
        D = scipy.linalg.expm(L_d * params.pulse_duration)
    return D @ P


def _hermitian_unit_trace(v, d):
    rho = v.reshape(d, d)
    rho = 0.5 * (rho + dagger(rho))
    return rho / np.trace(rho).real


def _fixed_point(M: np.ndarray, d: int) -> np.ndarray:
    """Eigenvector of the cycle map for eigenvalue 1 (smallest singular vector of ``M - I``)."""
    _, _, vh = np.linalg.svd(M - np.eye(M.shape[0]))
    return _hermitian_unit_trace(vh[-1].conj(), d)


def find_oss(cfg: CycleConfig, params: EngineParams, rho0=None):
    """Operational steady state: the fixed point of the cycle map.

    ``method="expm"`` builds the cycle map ``M`` as a matrix and takes its
    eigenvalue-1 vector directly, which is what iterating ``rho -> M rho``
    converges to but without the ``1/(kappa tau)`` cycles that slow
    contraction would need. ``method="rk45"`` iterates cycles through the
    integrator from ``rho0`` (Gibbs by default) until
    ``max|rho_{n+1} - rho_n| <= fp_tol``.

    The report comes from one extra cycle run from the fixed point. Because
    the net energy change over a cycle vanishes there, ``W_ext`` is reported
    as ``-(W_in + sum Q)``: the directly measured extraction work is a
    difference of O(1) populations and loses precision at short ``tau_r``.
    The direct value is kept as ``W_ext_direct``.
    """
    d = 4
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PulseDurationWarning)
        if cfg.method == "expm":
            M = cycle_superoperator(cfg, params)
            rho = _fixed_point(M, d)
            step = float(np.max(np.abs(M @ rho.reshape(-1) - rho.reshape(-1))))
            if step > cfg.fp_tol:
                raise OSSConvergenceError(f"cycle-map fixed point has residual {step:.3e} > {cfg.fp_tol:g}")
            n = 0
        else:
            if rho0 is None:
                rho0 = initial_gibbs(build_engine4(params, "recharge"))
            rho = np.asarray(rho0, dtype=complex)
            n = 0
            while True:
                nxt, _ = run_cycle(cfg, params, rho)
                n += 1
                step = float(np.max(np.abs(nxt - rho)))
                rho = nxt
                if step <= cfg.fp_tol:
                    break
                if n >= cfg.max_cycles:
                    raise OSSConvergenceError(
                        f"no operational steady state after {n} cycles (last change {step:.3e})")
        _, report = run_cycle(cfg, params, rho)
    cfg.tau_d(params)
    report.cycles = n
    report.W_ext_direct = report.W_ext
    report.W_ext = -(report.W_in + report.Q_total)
    _set_figures(report)
    return rho, report


# --- short-cycle closed forms -------------------------------------------------


def _sc_rates(params: EngineParams):
    gi_p, gi_m = params.rates_i
    ge_p, ge_m = params.rates_e
    gm_p, gm_m = params.rates_m
    Gi = params.Gamma_i_plus
    kappa = 2 * (Gi + ge_p) + gi_m + ge_m
    return gi_p, gi_m, ge_p, ge_m, gm_p, gm_m, Gi, kappa


def short_cycle_populations(params: EngineParams, tau: float):
    """OSS populations ``(r_g, r_m, r_e, r_i)`` to first order in the cycle time.

    Note: ``r_g + r_e + r_i`` is 1 up to O(tau); ``r_m`` is carried on top of
    that sum (it is O(p) and neglected in the elimination).
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    gi_p, gi_m, ge_p, ge_m, gm_p, gm_m, Gi, kappa = _sc_rates(params)
    if kappa * tau > SHORT_CYCLE_WARN:
        warnings.warn(f"kappa*tau = {kappa * tau:.3g} is not small", ShortCycleWarning, stacklevel=2)
    num = Gi + ge_p - ge_p * gi_m * tau
    den = kappa - (ge_m * (Gi + gi_m) + ge_p * gi_m) * tau
    r_i = num / den
    r_e = (r_i * (1 - (ge_p + ge_m) * tau) + ge_p * tau) / (1 + ge_p * tau)
    r_g = (ge_m * r_i + gi_m * r_e) / (Gi + ge_p) if Gi + ge_p > 0 else 1.0
    r_m = (gm_p * r_e + params.p * gm_m * r_g) / gm_m
    return r_g, r_m, r_e, r_i


def ergotropy_sign_condition(params: EngineParams) -> float:
    """``Gamma_i^+ gamma_e^- - gamma_i^- gamma_e^+``; the short-cycle ergotropy has its sign."""
    gi_p, gi_m, ge_p, ge_m, gm_p, gm_m, Gi, kappa = _sc_rates(params)
    return Gi * ge_m - gi_m * ge_p


def short_cycle_report(params: EngineParams, tau: float) -> ShortCycleReport:
    """First-order short-cycle work, heats, ergotropy, efficiency and power."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    r_g, r_m, r_e, r_i = short_cycle_populations(params, tau)
    gi_p, gi_m, ge_p, ge_m, gm_p, gm_m, Gi, kappa = _sc_rates(params)
    p = params.p
    dw = params.detuning
    wf = params.pump_frequency
    wi, we = params.omega_i, params.omega_e
    s = (gi_m + ge_m) / kappa
    W = p * wf * gm_m * s * tau
    Qe = we * (ge_p * gi_m - Gi * ge_m) / kappa * tau - p * ge_p * dw * s * tau
    Qi = wi * (gi_p * ge_m - gi_m * (ge_p + p * gm_m)) / kappa * tau - p * gi_p * dw * s * tau
    Qm = (wi - wf) * p * gm_m * s * tau
    E = (wi - we) / kappa * (Gi * ge_m - gi_m * ge_p) * tau
    inj = injected_energy(W, Qm, Qi, Qe)
    # no ergotropy -> machine off: flagged rather than a negative efficiency
    eta = E / inj.value if (inj.value > 0 and E > 0) else math.nan
    return ShortCycleReport(r_g=r_g, r_e=r_e, r_i=r_i, r_m=r_m, kappa=kappa, W_in=W, Q_e=Qe,
                            Q_i=Qi, Q_m=Qm, E=E, E_in=inj.value, eta=eta, P=E / tau, tau=tau,
                            E_in_branch=inj.branch, branches=inj.branches)


def otto_limit_efficiency(params: EngineParams, branch: str | None = None) -> float:
    """Low-temperature short-cycle efficiency.

    ``branch="above"`` (pump at or above ``omega_i``) divides the extraction gap
    by ``omega_f``; ``"below"`` divides by ``omega_i``. Default picks by ``omega_f``.
    """
    wf = params.pump_frequency
    if branch is None:
        branch = "above" if wf >= params.omega_i else "below"
    if branch not in ("above", "below"):
        raise ValueError("branch must be 'above' or 'below'")
    denom = wf if branch == "above" else params.omega_i
    ratio = params.gamma0_e / (params.gamma0_e + params.gamma0_i)
    return (params.omega_i - params.omega_e) / denom * ratio


# --- shutdown temperature -------------------------------------------------------


def analytic_threshold_temperature(params: EngineParams, T_lo: float = 1e-6, T_hi: float = 10.0,
                                   xtol: float = 1e-14) -> float:
    """Root of ``gamma0_i (n_e - n_i) = p gamma_m^- (n_e + 1)`` in ``T``.

    This is the ergotropy sign condition written in occupation numbers; it is
    solved with Brent's method and serves as an oracle for the bisection.
    """

    def f(T):
        q = params.replace(T=T)
        n_e = thermal_occupation(q.omega_e, T)
        n_i = thermal_occupation(q.omega_i, T)
        return q.gamma0_i * (n_e - n_i) - q.p * q.rates_m[1] * (n_e + 1)

    return brentq(f, T_lo, T_hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def machine_on(params: EngineParams, mode: str = "short", cfg: CycleConfig | None = None) -> bool:
    """Does the engine deliver work at these parameters?"""
    if mode == "short":
        return ergotropy_sign_condition(params) > 0
    if mode == "asymptotic":
        cfg = cfg or asymptotic_config(params)
        _, rep = find_oss(cfg, params)
        return rep.W_ext < 0
    raise ValueError("mode must be 'short' or 'asymptotic'")


def asymptotic_config(params: EngineParams, n_relax: float = 10.0,
                      discharge_mode: str = "finite_pulse") -> CycleConfig:
    """Recharge long enough (``n_relax / gamma0_i``) to approach the NESS."""
    return CycleConfig(tau_r=n_relax / params.gamma0_i, discharge_mode=discharge_mode)


def shutdown_temperature(params: EngineParams, mode: str = "short", cfg: CycleConfig | None = None,
                         T_lo: float = 1e-5, T_hi: float = 1.0, xtol: float = 1e-3) -> float:
    """Bisect in ``T`` for the temperature above which the engine stops working."""
    on_lo = machine_on(params.replace(T=T_lo), mode, cfg)
    on_hi = machine_on(params.replace(T=T_hi), mode, cfg)
    if on_lo == on_hi:
        raise ValueError(f"no shutdown between T={T_lo:g} and T={T_hi:g} (machine on: {on_lo})")
    lo, hi = T_lo, T_hi
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if machine_on(params.replace(T=mid), mode, cfg) == on_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
