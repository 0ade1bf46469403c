"""Thermodynamic bookkeeping: Alicki work and heat, free energy, ergotropy and
the charging figures of merit of the pumped battery."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lindblad import (
    NESS_DISTANCE_THRESHOLD,
    Generator,
    ModelSpec,
    StepControl,
    Trajectory,
    evolve,
    find_ness,
    propagate,
)
from .models import BatteryParams, build_battery3, initial_gibbs
from .qcore import expectation, state_eigenvalues, von_neumann_entropy


class BookkeepingError(RuntimeError):
    """Inconsistent energy accounting (e.g. stored free energy with no injected energy)."""


def internal_energy(rho, model: ModelSpec) -> float:
    """``Tr(rho H(t))`` evaluated on the rotating-frame state."""
    return expectation(rho, model.energy_operator()).real


def work_rate(rho, model: ModelSpec, drive: str = "in") -> float:
    """Instantaneous Alicki power ``Tr(rho dV/dt)`` of one drive.

    For the pump this is ``i Omega w_f (varrho_mg - varrho_gm)``.
    """
    d = model.drive(drive)
    lo, up = d.transition
    val = 1j * d.amplitude * d.frequency * (rho[up, lo] - rho[lo, up])
    return float(val.real)


def channel_heat_rate(rho, group: str, model: ModelSpec) -> float:
    """Heat current ``Tr(L_group[rho] H(t))`` from one reservoir transition."""
    chans = [ch for ch in model.channels if ch.group == group]
    if not chans:
        raise KeyError(f"unknown channel group {group!r}; model has {model.groups}")
    from .lindblad import dissipator_apply

    dl = sum(dissipator_apply(ch, np.asarray(rho)) for ch in chans)
    return expectation(dl, model.energy_operator()).real


@dataclass(frozen=True)
class InjectedEnergy:
    value: float
    branch: str
    branches: dict


def injected_energy(W_in: float, Q_m: float, Q_i: float, Q_e: float | None = None) -> InjectedEnergy:
    """Largest energy the drive and the reservoirs can be said to have put in.

    Battery: ``max{W, W + Q_m, W + Q_i, W + Q}``; the engine (``Q_e`` given)
    adds the ``W + Q_e`` branch. ``Q`` is the total heat.
    """
    q_tot = Q_m + Q_i + (Q_e or 0.0)
    branches = {"W": W_in, "W+Q": W_in + q_tot, "W+Q_m": W_in + Q_m, "W+Q_i": W_in + Q_i}
    if Q_e is not None:
        branches["W+Q_e"] = W_in + Q_e
    name = max(branches, key=branches.get)
    return InjectedEnergy(branches[name], name, branches)


def free_energy(rho, H0, T: float) -> float:
    """Non-equilibrium free energy ``Tr(rho H0) - T S(rho)``."""
    u = expectation(rho, H0).real
    if T == 0:
        return u
    return u - T * von_neumann_entropy(rho)


def passive_energy(rho, H0) -> float:
    """Energy of the passive state unitarily reachable from ``rho``."""
    lam = np.sort(state_eigenvalues(rho))[::-1]
    energies = np.sort(np.linalg.eigvalsh(np.asarray(H0)))
    return float(np.dot(lam, energies))


def ergotropy(rho, H0) -> float:
    """Maximal unitary work extraction: ``Tr(rho H0)`` minus the passive-state energy."""
    e = expectation(rho, H0).real - passive_energy(rho, H0)
    return max(e, 0.0)


def ergotropy_bruteforce(populations, energies) -> float:
    """Best energy drop over all permutations of the populations (diagonal states only)."""
    p = np.asarray(populations, float)
    e = np.asarray(energies, float)
    u = float(p @ e)
    return max(u - float(p[list(perm)] @ e) for perm in itertools.permutations(range(len(p))))


@dataclass
class EnergyTotals:
    """Additive work/heat totals; ``+`` is associative and commutative."""

    work: dict = field(default_factory=dict)
    heat: dict = field(default_factory=dict)

    def __add__(self, other: "EnergyTotals") -> "EnergyTotals":
        w = dict(self.work)
        for k, v in other.work.items():
            w[k] = w.get(k, 0.0) + v
        q = dict(self.heat)
        for k, v in other.heat.items():
            q[k] = q.get(k, 0.0) + v
        return EnergyTotals(w, q)

    @property
    def total_work(self) -> float:
        return sum(self.work.values())

    @property
    def total_heat(self) -> float:
        return sum(self.heat.values())

    @classmethod
    def from_acc(cls, acc: dict, acc0: dict | None = None) -> "EnergyTotals":
        acc0 = acc0 or {}
        w = {k[2:]: v - acc0.get(k, 0.0) for k, v in acc.items() if k.startswith("W_")}
        q = {k[2:]: v - acc0.get(k, 0.0) for k, v in acc.items() if k.startswith("Q_")}
        return cls(w, q)


class ThermoLedger:
    """Time-resolved thermodynamic record of one trajectory.

    Can be passed to :func:`qotto.lindblad.evolve` as an observer (``stride``
    thins the samples) or filled from a finished trajectory with
    :meth:`from_trajectory`.
    """

    def __init__(self, model: ModelSpec, stride: int = 1, with_ergotropy: bool = True):
        self.model = model
        self.T = model.temperature
        self.stride = stride
        self.with_ergotropy = with_ergotropy
        self._H0 = model.H0
        self._E = model.energy_operator()
        self._calls = 0
        self.times: list[float] = []
        self.U: list[float] = []
        self.U0: list[float] = []
        self.S: list[float] = []
        self.F: list[float] = []
        self.ergotropy: list[float] = []
        self.work: dict[str, list[float]] = {}
        self.heat: dict[str, list[float]] = {}

    def record(self, t, rho, acc):
        self.times.append(float(t))
        self.U.append(expectation(rho, self._E).real)
        u0 = expectation(rho, self._H0).real
        s = von_neumann_entropy(rho)
        self.U0.append(u0)
        self.S.append(s)
        self.F.append(u0 - self.T * s)
        if self.with_ergotropy:
            self.ergotropy.append(ergotropy(rho, self._H0))
        for k, v in acc.items():
            if k.startswith("W_"):
                self.work.setdefault(k[2:], []).append(v)
            elif k.startswith("Q_"):
                self.heat.setdefault(k[2:], []).append(v)

    def __call__(self, t, rho, acc):
        if self._calls % self.stride == 0:
            self.record(t, rho, acc)
        self._calls += 1

    @classmethod
    def from_trajectory(cls, traj: Trajectory, with_ergotropy: bool = True) -> "ThermoLedger":
        led = cls(traj.model, with_ergotropy=with_ergotropy)
        names = list(traj.acc)
        for n, t in enumerate(traj.times):
            led.record(t, traj.states[n], {k: traj.acc[k][n] for k in names})
        return led

    @property
    def W_in(self) -> float:
        return self.work.get("in", [0.0])[-1]

    @property
    def W_ext(self) -> float:
        return self.work.get("ext", [0.0])[-1]

    @property
    def Q_by_channel(self) -> dict[str, float]:
        return {k: v[-1] for k, v in self.heat.items()}

    def first_law_residuals(self) -> np.ndarray:
        """``dU - W - Q`` at every sample, relative to the first sample."""
        U = np.asarray(self.U)
        W = sum((np.asarray(v) for v in self.work.values()), np.zeros_like(U))
        Q = sum((np.asarray(v) for v in self.heat.values()), np.zeros_like(U))
        return (U - U[0]) - (W - W[0]) - (Q - Q[0])

    def first_law_scale(self, atol: float = 1e-12) -> float:
        U = np.asarray(self.U)
        vals = [np.max(np.abs(U - U[0])), atol]
        vals += [np.max(np.abs(np.asarray(v) - v[0])) for v in self.work.values()]
        vals += [np.max(np.abs(np.asarray(v) - v[0])) for v in self.heat.values()]
        return float(max(vals))


@dataclass
class ChargingReport:
    dF: float
    E_in: float
    W_in: float
    Q_m: float
    Q_i: float
    eta: float  # nan when E_in == 0 (undefined)
    P: float
    tau: float
    E_in_branch: str = ""
    F0: float = 0.0
    F_tau: float = 0.0
    rho_ii: float = 0.0
    rho_mm: float = 0.0
    int_gg: float = 0.0
    int_ii: float = 0.0
    first_law_residual: float = 0.0

    @property
    def eta_defined(self) -> bool:
        return not math.isnan(self.eta)


def _report_from(model: ModelSpec, rho0, rho_tau, tau: float, acc: dict) -> ChargingReport:
    T = model.temperature
    H0 = model.H0
    F0 = free_energy(rho0, H0, T)
    Ft = free_energy(rho_tau, H0, T)
    dF = Ft - F0
    W, Qm, Qi = acc["W_in"], acc["Q_m"], acc["Q_i"]
    inj = injected_energy(W, Qm, Qi)
    E_in = inj.value
    if E_in <= 0:
        if dF > 1e-12 * max(1.0, abs(F0)):
            raise BookkeepingError(f"free energy increased by {dF:.3e} with no injected energy")
        eta = math.nan
    else:
        eta = dF / E_in
    P = dF / tau if tau > 0 else math.nan
    dU = internal_energy(rho_tau, model) - internal_energy(rho0, model)
    res = dU - W - Qm - Qi
    i, m = model.index("i"), model.index("m")
    g = model.index("g")
    return ChargingReport(dF=dF, E_in=E_in, W_in=W, Q_m=Qm, Q_i=Qi, eta=eta, P=P, tau=tau,
                          E_in_branch=inj.branch, F0=F0, F_tau=Ft,
                          rho_ii=float(rho_tau[i, i].real), rho_mm=float(rho_tau[m, m].real),
                          int_gg=acc.get(f"N_{model.levels[g]}", 0.0), int_ii=acc.get("N_i", 0.0),
                          first_law_residual=res)


def charging_report(traj: Trajectory, ledger: ThermoLedger | None = None, T: float | None = None) -> ChargingReport:
    """Figures of merit of a charging run, taking ``tau`` as the last sample time."""
    model = traj.model
    if T is not None and T != model.temperature:
        raise ValueError("temperature does not match the trajectory's model")
    acc = traj.totals()
    if ledger is not None:
        acc.update({f"W_{k}": v for k, v in {"in": ledger.W_in}.items()})
    return _report_from(model, traj.states[0], traj.final, float(traj.times[-1] - traj.times[0]), acc)


def efficiency_series(traj: Trajectory) -> dict[str, np.ndarray]:
    """Running ``eta_pump(t) = dF(t) / E_in(t)`` and ``dF(t)`` along a trajectory."""
    model = traj.model
    T = model.temperature
    H0 = model.H0
    F = np.array([free_energy(r, H0, T) for r in traj.states])
    dF = F - F[0]
    E = np.array([injected_energy(traj.acc["W_in"][n], traj.acc["Q_m"][n], traj.acc["Q_i"][n]).value
                  for n in range(len(traj))])
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = np.where(E > 0, dF / np.where(E > 0, E, 1.0), np.nan)
    return {"t": traj.times, "dF": dF, "E_in": E, "eta": eta}


def charge_battery(params: BatteryParams, tau: float | None = None, method: str = "expm",
                   threshold: float = NESS_DISTANCE_THRESHOLD, ctrl: StepControl | None = None):
    """Charge from the Gibbs state for ``tau`` (default: NESS convergence time).

    Returns ``(report, ness)``; ``ness`` is ``None`` when ``tau`` is supplied.
    """
    model = build_battery3(params)
    rho0 = initial_gibbs(model)
    ness = None
    if tau is None:
        ness = find_ness(model, rho0, threshold=threshold)
        tau = ness.tau
    if tau <= 0:
        acc = {k: 0.0 for k in Generator(model).acc_names}
        return _report_from(model, rho0, rho0, 0.0, acc), ness
    if method == "expm":
        traj = propagate(model, rho0, [0.0, tau])
    elif method == "rk45":
        traj = evolve(model, rho0, tau, ctrl=ctrl, t_eval=[0.0, tau])
    else:
        raise ValueError(f"unknown method {method!r}")
    return charging_report(traj), ness


def adiabatic_closed_forms(params: BatteryParams, gg_integral: float, ii_integral: float,
                           tau: float | None = None, mm_integral: float = 0.0):
    """Work and heat predicted after eliminating ``m``, from the population integrals.

    Returns ``(W_in, Q_m, Q_i)``. ``tau`` is accepted for symmetry with the
    numeric report but not needed: every term is proportional to an integral.
    ``mm_integral`` restores the ``-integral(rho_mm)`` correction to the work,
    which matters once ``m`` is thermally populated.
    """
    p = params.p
    gm_minus = params.rates_m[1]
    gi_plus, gi_minus = params.rates_i
    wf = params.pump_frequency
    W = p * wf * gm_minus * (gg_integral - mm_integral)
    Qm = p * gm_minus * (params.omega_i - wf) * gg_integral
    Qi = -p * gi_plus * params.detuning * gg_integral + params.omega_i * (
        gi_plus * gg_integral - gi_minus * ii_integral)
    return W, Qm, Qi
