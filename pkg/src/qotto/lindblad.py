"""Master-equation construction and time integration in the rotating frame.

The lab-frame equation ``drho/dt = -i[H0 + V(t), rho] + L(rho)`` is moved to the
frame ``varrho = exp(i H0' t) rho exp(-i H0' t)`` in which every drive is
stationary.  All jump operators are single ladder operators ``|k><l|``, which
commute with the diagonal frame transformation, so the dissipator keeps its
form and the rotating-frame generator is time independent.

Work and heat rates are linear functionals of ``varrho``.  They are appended to
the state vector as extra components so the integrator carries the
thermodynamic integrals with exactly the same quadrature as the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

from .qcore import POSITIVITY_TOL, PositivityError, dagger, sigma, state_eigenvalues

__all__ = [
    "JumpChannel",
    "DriveSpec",
    "ModelSpec",
    "StepControl",
    "Trajectory",
    "NessResult",
    "Generator",
    "IntegrationError",
    "StepUnderflowError",
    "TraceDriftError",
    "UnsupportedDriveLayout",
    "dissipator_apply",
    "rotating_generator",
    "evolve",
    "propagate",
    "find_ness",
    "NESS_DISTANCE_THRESHOLD",
]

NESS_DISTANCE_THRESHOLD = 1e-4


class IntegrationError(RuntimeError):
    """Numerical failure while integrating the master equation."""


class StepUnderflowError(IntegrationError):
    pass


class TraceDriftError(IntegrationError):
    pass


class UnsupportedDriveLayout(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class JumpChannel:
    """One dissipative term ``rate * D[jump]``.

    ``group`` names the reservoir transition the channel belongs to (``"m"``,
    ``"i"`` or ``"e"``); heat is accumulated per group.
    """

    name: str
    group: str
    jump: np.ndarray
    rate: float
    bohr_energy: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"channel {self.name}: rate must be >= 0, got {self.rate}")
        if np.count_nonzero(self.jump) != 1:
            raise ValueError(f"channel {self.name}: jump must be a single ladder operator |k><l|")

    @classmethod
    def ladder(cls, name, group, to, frm, dim, rate, bohr_energy):
        """Channel with jump ``|to><frm|``."""
        return cls(name, group, sigma(to, frm, dim), float(rate), float(bohr_energy))

    @property
    def transition(self) -> tuple[int, int]:
        k, l = np.argwhere(self.jump != 0)[0]
        return int(k), int(l)


@dataclass(frozen=True)
class DriveSpec:
    """Coherent drive ``amp * (|lo><up| e^{i w t} + h.c.)`` on ``transition = (lo, up)``."""

    name: str
    amplitude: float
    frequency: float
    transition: tuple[int, int]

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError(f"drive {self.name}: amplitude must be >= 0")
        lo, up = self.transition
        if lo == up:
            raise ValueError(f"drive {self.name}: transition levels must differ")

    def detuning(self, energies: Sequence[float]) -> float:
        lo, up = self.transition
        return self.frequency - (energies[up] - energies[lo])


@dataclass(frozen=True, eq=False)
class ModelSpec:
    levels: tuple[str, ...]
    energies: tuple[float, ...]
    drives: tuple[DriveSpec, ...]
    channels: tuple[JumpChannel, ...]
    temperature: float
    frame: str = "rotating"
    # static diagonal term added to the rotating-frame Hamiltonian (effective models)
    static_shift: tuple[float, ...] | None = None

    def __post_init__(self):
        e = self.energies
        if len(e) != len(self.levels):
            raise ValueError("one energy per level required")
        if e[0] != 0.0:
            raise ValueError("ground energy must be 0")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError(f"level energies must be strictly ascending, got {e}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.frame not in ("rotating", "lab"):
            raise ValueError(f"unknown frame {self.frame!r}")
        for ch in self.channels:
            if ch.jump.shape != (self.dim, self.dim):
                raise ValueError(f"channel {ch.name} has wrong dimension")

    @property
    def dim(self) -> int:
        return len(self.levels)

    def index(self, label: str) -> int:
        return self.levels.index(label)

    @property
    def H0(self) -> np.ndarray:
        return np.diag(np.asarray(self.energies, dtype=complex))

    @property
    def groups(self) -> tuple[str, ...]:
        seen = []
        for ch in self.channels:
            if ch.group not in seen:
                seen.append(ch.group)
        return tuple(seen)

    def drive(self, name: str) -> DriveSpec:
        for d in self.drives:
            if d.name == name:
                return d
        raise KeyError(name)

    def coupling(self, drive: DriveSpec) -> np.ndarray:
        lo, up = drive.transition
        return drive.amplitude * (sigma(lo, up, self.dim) + sigma(up, lo, self.dim))

    def frame_shifts(self) -> np.ndarray:
        """Diagonal ``s`` with ``H0' = H0 + diag(s)`` making every drive resonant."""
        shifts = np.zeros(self.dim)
        fixed = np.zeros(self.dim, dtype=bool)
        fixed[0] = True
        pending = list(self.drives)
        while pending:
            progress = False
            for d in list(pending):
                lo, up = d.transition
                det = d.detuning(self.energies)
                if fixed[lo] and not fixed[up]:
                    shifts[up] = shifts[lo] + det
                    fixed[up] = True
                elif fixed[up] and not fixed[lo]:
                    shifts[lo] = shifts[up] - det
                    fixed[lo] = True
                elif fixed[lo] and fixed[up]:
                    if abs(shifts[up] - shifts[lo] - det) > 1e-15:
                        raise UnsupportedDriveLayout(
                            f"drive {d.name} cannot be made stationary in a single rotating frame")
                else:
                    continue
                pending.remove(d)
                progress = True
            if not progress:
                # drive on levels disconnected from g: anchor its lower level
                d = pending[0]
                fixed[d.transition[0]] = True
        return shifts

    def vbar(self) -> np.ndarray:
        """Time-independent rotating-frame Hamiltonian."""
        v = np.zeros((self.dim, self.dim), dtype=complex)
        for d in self.drives:
            v += self.coupling(d)
        v -= np.diag(self.frame_shifts()).astype(complex)
        if self.static_shift is not None:
            v += np.diag(np.asarray(self.static_shift, dtype=complex))
        return v

    def energy_operator(self) -> np.ndarray:
        """``H(t)`` expressed in the rotating frame: ``H0`` plus the drive couplings.

        ``Tr(varrho E) = Tr(rho H(t))`` for the lab-frame state, so this is the
        operator that enters the internal energy and the heat rates.
        """
        h = self.H0.copy()
        for d in self.drives:
            h += self.coupling(d)
        return h

    def rate_scale(self) -> float:
        vals = [ch.rate for ch in self.channels] + [d.amplitude for d in self.drives]
        vals += list(np.abs(self.frame_shifts()))
        if self.static_shift is not None:
            vals += [abs(s) for s in self.static_shift]
        scale = max(vals) if vals else 0.0
        return scale if scale > 0 else 1.0

    def to_lab(self, varrho: np.ndarray, t: float) -> np.ndarray:
        """Undo the rotating frame: ``rho = exp(-i H0' t) varrho exp(i H0' t)``."""
        e = np.asarray(self.energies) + self.frame_shifts()
        ph = np.exp(-1j * e * t)
        return ph[:, None] * varrho * ph.conj()[None, :]

    def with_(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)


def dissipator_apply(ch: JumpChannel, rho: np.ndarray) -> np.ndarray:
    """``rate * (J rho J^dag - 1/2 {J^dag J, rho})``."""
    rho = np.asarray(rho)
    if rho.shape != ch.jump.shape:
        raise ValueError(f"dimension mismatch: state {rho.shape} vs jump {ch.jump.shape}")
    j = ch.jump
    jd = dagger(j)
    jdj = jd @ j
    return ch.rate * (j @ rho @ jd - 0.5 * (jdj @ rho + rho @ jdj))


def rotating_generator(model: ModelSpec):
    """Return ``(vbar, channels)`` of the rotating-frame master equation."""
    return model.vbar(), model.channels


def _superop_left(a):
    # vec(A X) for row-major vec
    return np.kron(a, np.eye(a.shape[0]))


def _superop_right(b):
    # vec(X B) for row-major vec
    return np.kron(np.eye(b.shape[0]), b.T)


class Generator:
    """Superoperator form of the rotating-frame generator plus accumulator rows.

    The augmented state is ``[vec(varrho), acc...]`` with accumulators

    * ``W_<drive>``: Alicki work done by each drive,
    * ``Q_<group>``: Alicki heat from each reservoir transition,
    * ``N_<level>``: time integral of each population.
    """

    def __init__(self, model: ModelSpec):
        self.model = model
        d = model.dim
        self.dim = d
        vbar = model.vbar()
        lv = -1j * (_superop_left(vbar) - _superop_right(vbar))
        self.dissipators = {}
        for ch in model.channels:
            j = ch.jump
            jdj = dagger(j) @ j
            sup = ch.rate * (np.kron(j, j.conj()) - 0.5 * _superop_left(jdj) - 0.5 * _superop_right(jdj))
            self.dissipators[ch.group] = self.dissipators.get(ch.group, 0) + sup
        self.liouvillian = lv + sum(self.dissipators.values(), np.zeros((d * d, d * d), complex))

        e_op = model.energy_operator()
        # Tr(X E) = sum_kl X_kl E_lk  ->  row vector acting on vec(X)
        self.energy_row = e_op.T.reshape(-1)
        rows, names = [], []
        for dr in model.drives:
            lo, up = dr.transition
            r = np.zeros(d * d, complex)
            # dW/dt = i amp w (rho_{up,lo} - rho_{lo,up})
            r[up * d + lo] = 1j * dr.amplitude * dr.frequency
            r[lo * d + up] = -1j * dr.amplitude * dr.frequency
            rows.append(r)
            names.append(f"W_{dr.name}")
        for g in model.groups:
            rows.append(self.energy_row @ self.dissipators[g])
            names.append(f"Q_{g}")
        for k, lab in enumerate(model.levels):
            r = np.zeros(d * d, complex)
            r[k * d + k] = 1.0
            rows.append(r)
            names.append(f"N_{lab}")
        self.acc_names = tuple(names)
        self.acc_rows = np.array(rows)
        n = d * d + len(names)
        aug = np.zeros((n, n), complex)
        aug[: d * d, : d * d] = self.liouvillian
        aug[d * d :, : d * d] = self.acc_rows
        self.augmented = aug

    @property
    def size(self) -> int:
        return self.augmented.shape[0]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """``d varrho/dt`` for a matrix ``rho``."""
        return (self.liouvillian @ np.asarray(rho).reshape(-1)).reshape(self.dim, self.dim)

    def pack(self, rho, acc=None) -> np.ndarray:
        y = np.zeros(self.size, complex)
        y[: self.dim ** 2] = np.asarray(rho).reshape(-1)
        if acc is not None:
            for k, name in enumerate(self.acc_names):
                y[self.dim ** 2 + k] = acc.get(name, 0.0)
        return y

    def unpack(self, y):
        d2 = self.dim ** 2
        rho = y[:d2].reshape(self.dim, self.dim)
        acc = {name: float(y[d2 + k].real) for k, name in enumerate(self.acc_names)}
        return rho, acc


@dataclass
class StepControl:
    """Adaptive step-size settings for :func:`evolve`.

    ``max_step`` defaults to ``max_step_factor / rate_scale`` where the rate
    scale is the fastest rate, drive amplitude or frame detuning of the model.
    """

    rtol: float = 1e-8
    atol: float = 1e-12
    max_step: float | None = None
    max_step_factor: float = 0.05
    first_step: float | None = None
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 5.0
    max_steps: int = 5_000_000
    pos_tol: float = POSITIVITY_TOL

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class Trajectory:
    """Sampled rotating-frame trajectory with accumulated work/heat integrals."""

    times: np.ndarray
    states: np.ndarray
    acc: dict[str, np.ndarray]
    model: ModelSpec
    step_stats: dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def population(self, label: str) -> np.ndarray:
        k = self.model.index(label)
        return self.states[:, k, k].real

    def totals(self) -> dict[str, float]:
        return {k: float(v[-1]) for k, v in self.acc.items()}


Observer = Callable[[float, np.ndarray, dict], None]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# PI controller exponents (Hairer & Wanner, DOPRI5)
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


def _check_initial(rho0, dim):
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise ValueError(f"initial state has shape {rho0.shape}, model dimension is {dim}")
    if abs(np.trace(rho0) - 1) > 1e-9:
        raise ValueError("initial state must have unit trace")
    return rho0


def _renormalize(y, d, tol=1e-9):
    tr = sum(y[k * d + k] for k in range(d))
    drift = abs(tr - 1.0)
    if drift > tol:
        raise TraceDriftError(f"trace drifted by {drift:.3e}")
    if drift > 0:
        y[: d * d] /= tr.real


def evolve(model: ModelSpec, rho0, t_end: float, ctrl: StepControl | None = None,
           observers: Iterable[Observer] = (), t_eval=None, acc0: dict | None = None,
           generator: Generator | None = None) -> Trajectory:
    """Integrate the rotating-frame master equation with an adaptive DOPRI5 pair.

    ``t_eval`` selects the sample times recorded in the returned trajectory
    (steps are shortened to land on them); by default every accepted step is
    recorded. Observers are called as ``obs(t, varrho, acc)`` after every
    accepted step.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    ctrl = ctrl or StepControl()
    gen = generator or Generator(model)
    d = model.dim
    rho0 = _check_initial(rho0, d)
    A = gen.augmented
    y = gen.pack(rho0, acc0)
    scale = model.rate_scale()
    hmax = ctrl.max_step if ctrl.max_step is not None else ctrl.max_step_factor / scale
    hmax = min(hmax, t_end)
    h = ctrl.first_step if ctrl.first_step is not None else min(hmax, 0.01 / scale)
    observers = list(observers)

    if t_eval is None:
        targets = None
    else:
        targets = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(targets) <= 0) or targets[0] < 0 or targets[-1] > t_end * (1 + 1e-12):
            raise ValueError("t_eval must be strictly increasing within [0, t_end]")
    rec_t, rec_y = [], []
    if targets is None or targets[0] == 0.0:
        rec_t.append(0.0)
        rec_y.append(y.copy())
    next_target = 0
    if targets is not None:
        while next_target < len(targets) and targets[next_target] <= 0.0:
            next_target += 1

    t = 0.0
    k = np.empty((7, y.size), complex)
    k[0] = A @ y
    err_prev = 1e-4
    accepted = rejected = 0
    while t < t_end:
        if accepted + rejected > ctrl.max_steps:
            raise IntegrationError(f"exceeded {ctrl.max_steps} steps at t={t:.6g}")
        stop = t_end
        if targets is not None and next_target < len(targets):
            stop = min(stop, targets[next_target])
        h_try = min(h, hmax)
        landing = False
        if t + h_try >= stop * (1 - 1e-14):
            h_try = stop - t
            landing = True
        if h_try <= 1e-14 * max(1.0, abs(t)) or h_try < 1e-300:
            raise StepUnderflowError(f"step size underflow at t={t:.6g} (h={h_try:.3e})")
        for s in range(1, 7):
            k[s] = A @ (y + h_try * (_A[s] @ k[:s]))
        y_new = y + h_try * (_B5[:6] @ k[:6])
        k7 = k[6]  # FSAL: last stage evaluated at y_new
        err_vec = h_try * (_E @ k)
        sc = ctrl.atol + ctrl.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / sc))
        if err <= 1.0:
            t = stop if landing else t + h_try
            _renormalize(y_new, d)
            pops = np.array([y_new[j * d + j].real for j in range(d)])
            if pops.min() < -ctrl.pos_tol:
                raise PositivityError(f"population {pops.min():.3e} < 0 at t={t:.6g}")
            y = y_new
            k[0] = k7
            accepted += 1
            if err == 0.0:
                fac = ctrl.max_factor
            else:
                fac = ctrl.safety * err ** (-_ALPHA) * err_prev ** _BETA
                fac = min(ctrl.max_factor, max(ctrl.min_factor, fac))
            err_prev = max(err, 1e-4)
            if not landing or h_try >= h:
                h = h_try * fac
            if observers:
                rho, acc = gen.unpack(y)
                for obs in observers:
                    obs(t, rho, acc)
            if targets is None:
                rec_t.append(t)
                rec_y.append(y.copy())
            elif landing and next_target < len(targets) and t == targets[next_target]:
                rec_t.append(t)
                rec_y.append(y.copy())
                next_target += 1
        else:
            rejected += 1
            fac = max(ctrl.min_factor, ctrl.safety * err ** (-_ALPHA))
            h = h_try * fac
    traj = _make_trajectory(gen, np.array(rec_t), np.array(rec_y), model)
    traj.step_stats = {"accepted": accepted, "rejected": rejected}
    for st in traj.states:
        state_eigenvalues(st, tol=ctrl.pos_tol)
    return traj


def _make_trajectory(gen: Generator, times, ys, model) -> Trajectory:
    d = gen.dim
    states = ys[:, : d * d].reshape(-1, d, d)
    acc = {name: ys[:, d * d + k].real.copy() for k, name in enumerate(gen.acc_names)}
    return Trajectory(times=times, states=states, acc=acc, model=model)


def propagate(model: ModelSpec, rho0, times, acc0: dict | None = None,
              generator: Generator | None = None) -> Trajectory:
    """Exact propagation ``y(t) = exp(A t) y(0)`` of the augmented linear system.

    The rotating-frame generator is constant, so the matrix exponential gives
    states and thermodynamic integrals at arbitrary sample times without any
    step-size restriction. Used for long horizons and dense parameter sweeps.
    """
    gen = generator or Generator(model)
    rho0 = _check_initial(rho0, model.dim)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a non-empty strictly increasing sequence >= 0")
    y = gen.pack(rho0, acc0)
    out = np.empty((len(times), y.size), complex)
    t_prev = 0.0
    cache: dict[float, np.ndarray] = {}
    for n, t in enumerate(times):
        dt = t - t_prev
        if dt > 0:
            key = round(dt, 12) if dt < 1e6 else dt
            prop = cache.get(key)
            if prop is None:
                prop = scipy.linalg.expm(gen.augmented * dt)
                if len(cache) < 8:
                    cache[key] = prop
            y = prop @ y
        out[n] = y
        t_prev = t
    traj = _make_trajectory(gen, times, out, model)
    traj.step_stats = {"accepted": 0, "rejected": 0}
    return traj


def propagator(model: ModelSpec, t: float, generator: Generator | None = None) -> np.ndarray:
    """Augmented propagator ``exp(A t)``."""
    gen = generator or Generator(model)
    return scipy.linalg.expm(gen.augmented * t)


@dataclass
class NessResult:
    rho: np.ndarray
    tau: float
    residual: float
    threshold: float
    horizon: float


def _max_dist(a, b) -> float:
    return float(np.max(np.abs(a - b)))


def find_ness(model: ModelSpec, rho0=None, tol: float = 1e-11,
              threshold: float = NESS_DISTANCE_THRESHOLD, max_doublings: int = 200) -> NessResult:
    """Locate the steady state by marching forward in time.

    The exact propagator over ``h`` is squared repeatedly, so the state is
    sampled at ``h, 2h, 4h, ...`` until two consecutive samples agree to
    ``tol``.  ``tau`` is the earliest time after which the trajectory from
    ``rho0`` stays within ``threshold`` (max-norm) of the steady state.
    ``residual`` is ``max|L(rho_ness)|`` divided by the fastest model rate.
    """
    gen = Generator(model)
    d = model.dim
    if rho0 is None:
        rho0 = np.zeros((d, d), complex)
        rho0[0, 0] = 1.0
    rho0 = _check_initial(rho0, d)
    L = gen.liouvillian
    scale = model.rate_scale()
    h = 0.1 / scale
    P = scipy.linalg.expm(L * h)
    v0 = rho0.reshape(-1)
    diag = [k * d + k for k in range(d)]
    v = P @ v0
    t = h
    for _ in range(max_doublings):
        P = P @ P
        v_next = P @ v0
        # squaring loses trace at the eps * 2^k level; the shape is unaffected
        v_next = v_next / v_next[diag].sum()
        t *= 2
        if _max_dist(v_next, v) <= tol:
            v = v_next
            break
        v = v_next
    else:
        raise IntegrationError(f"no steady state reached within t={t:.3e}")
    rho_ness = v.reshape(d, d)
    rho_ness = 0.5 * (rho_ness + dagger(rho_ness))
    rho_ness = rho_ness / np.trace(rho_ness).real
    residual = float(np.max(np.abs(gen.apply(rho_ness)))) / scale
    tau = convergence_time(gen, rho0, rho_ness, threshold, horizon=t)
    return NessResult(rho=rho_ness, tau=tau, residual=residual, threshold=threshold, horizon=t)


def convergence_time(gen: Generator, rho0, rho_target, threshold: float, horizon: float,
                     points_per_octave: int = 8) -> float:
    """Earliest ``t`` after which ``max|varrho(t) - rho_target| <= threshold``."""
    v0 = np.asarray(rho0).reshape(-1)
    target = np.asarray(rho_target).reshape(-1)
    L = gen.liouvillian

    d = gen.dim
    diag = [k * d + k for k in range(d)]

    def dist(t):
        v = scipy.linalg.expm(L * t) @ v0
        return _max_dist(v / v[diag].sum(), target)

    t_min = 0.01 / gen.model.rate_scale()
    n = max(2, int(math.ceil(points_per_octave * math.log2(max(horizon / t_min, 2.0)))))
    grid = np.concatenate([[0.0], np.geomspace(t_min, horizon, n)])
    dists = np.array([_max_dist(v0, target)] + [dist(tt) for tt in grid[1:]])
    outside = np.nonzero(dists > threshold)[0]
    if len(outside) == 0:
        return 0.0
    j = outside[-1]
    if j == len(grid) - 1:
        raise IntegrationError("trajectory has not converged within the horizon")
    lo, hi = grid[j], grid[j + 1]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if dist(mid) > threshold:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * hi:
            break
    return hi
