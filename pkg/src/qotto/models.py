"""Concrete systems: the pumped qutrit battery, the four-level engine and their
effective models after eliminating the fast upper level ``m``.

Units: hbar = k_B = 1 and omega_i = 1; every parameter is a multiple of omega_i.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .lindblad import DriveSpec, JumpChannel, ModelSpec

VALIDITY_WARN = 0.1

BATTERY_LEVELS = ("g", "i", "m")
ENGINE_LEVELS = ("g", "e", "i", "m")


class AdiabaticValidityWarning(UserWarning):
    pass


def thermal_occupation(gap: float, T: float) -> float:
    """Bose-Einstein occupation ``1 / (exp(gap/T) - 1)``; exactly 0 at ``T = 0``."""
    if gap <= 0:
        raise ValueError(f"gap must be positive, got {gap}")
    if T < 0:
        raise ValueError(f"temperature must be >= 0, got {T}")
    if T == 0 or gap / T > 700:
        return 0.0
    return 1.0 / math.expm1(gap / T)


def thermal_rates(gamma0: float, gap: float, T: float) -> tuple[float, float]:
    """``(gamma+, gamma-) = (gamma0 n, gamma0 (n + 1))``."""
    n = thermal_occupation(gap, T)
    return gamma0 * n, gamma0 * (n + 1.0)


def gibbs_state(energies, T: float) -> np.ndarray:
    e = np.asarray(energies, dtype=float)
    if T < 0:
        raise ValueError("temperature must be >= 0")
    if T == 0:
        w = (e == e.min()).astype(float)
    else:
        w = np.exp(-(e - e.min()) / T)
    return np.diag(w / w.sum()).astype(complex)


def pumping_rate(Omega: float, gamma_m_minus: float, detuning: float) -> float:
    """Effective incoherent g -> i pumping rate ``4 Omega^2 / (gamma_m^-^2 + 4 dw^2)``."""
    if gamma_m_minus <= 0:
        raise ValueError("gamma_m^- must be positive")
    return 4.0 * Omega ** 2 / (gamma_m_minus ** 2 + 4.0 * detuning ** 2)


@dataclass(frozen=True)
class BatteryParams:
    omega_i: float = 1.0
    omega_m: float = 1.02
    gamma0_i: float = 1e-9
    gamma0_m: float = 1e-4
    Omega: float = 1e-6
    omega_f: float | None = None  # None -> resonant pump, omega_f = omega_m
    T: float = 0.0

    def __post_init__(self):
        if not 0 < self.omega_i < self.omega_m:
            raise ValueError("need 0 < omega_i < omega_m")
        for name in ("gamma0_i", "gamma0_m", "Omega", "T"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.omega_f is not None and self.omega_f <= 0:
            raise ValueError("omega_f must be positive")

    @property
    def pump_frequency(self) -> float:
        return self.omega_m if self.omega_f is None else self.omega_f

    @property
    def detuning(self) -> float:
        return self.pump_frequency - self.omega_m

    def with_detuning(self, dw: float):
        return replace(self, omega_f=self.omega_m + dw)

    def replace(self, **kw):
        return replace(self, **kw)

    @property
    def rates_m(self):
        return thermal_rates(self.gamma0_m, self.omega_m - self.omega_i, self.T)

    @property
    def rates_i(self):
        return thermal_rates(self.gamma0_i, self.omega_i, self.T)

    @property
    def p(self) -> float:
        return pumping_rate(self.Omega, self.rates_m[1], self.detuning)

    @property
    def Gamma_i_plus(self) -> float:
        return self.rates_i[0] + self.p * self.rates_m[1]

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class EngineParams(BatteryParams):
    omega_e: float = 0.01
    gamma0_e: float = 1e-9
    epsilon: float = 2e-4

    def __post_init__(self):
        super().__post_init__()
        if not 0 < self.omega_e < self.omega_i:
            raise ValueError("need 0 < omega_e < omega_i")
        if self.gamma0_e < 0 or self.epsilon < 0:
            raise ValueError("gamma0_e and epsilon must be >= 0")

    @property
    def rates_e(self):
        return thermal_rates(self.gamma0_e, self.omega_e, self.T)

    @property
    def pulse_duration(self) -> float:
        """Duration ``pi / (2 epsilon)`` of the swapping pulse."""
        if self.epsilon <= 0:
            raise ValueError("finite pulse needs epsilon > 0")
        return math.pi / (2.0 * self.epsilon)


def validity_metric(params: BatteryParams) -> float:
    """``max(Omega, gamma_m^+, gamma_i^+-, gamma_e^+-) / gamma_m^-``: small means m is eliminable."""
    gm_plus, gm_minus = params.rates_m
    others = [params.Omega, gm_plus, *params.rates_i]
    if isinstance(params, EngineParams):
        others += list(params.rates_e)
    if gm_minus == 0:
        return math.inf
    return max(others) / gm_minus


def _battery_channels(p: BatteryParams, idx: dict, dim: int) -> list[JumpChannel]:
    g, i, m = idx["g"], idx["i"], idx["m"]
    gm_plus, gm_minus = p.rates_m
    gi_plus, gi_minus = p.rates_i
    dmi = p.omega_m - p.omega_i
    return [
        JumpChannel.ladder("gamma_m+", "m", m, i, dim, gm_plus, dmi),
        JumpChannel.ladder("gamma_m-", "m", i, m, dim, gm_minus, dmi),
        JumpChannel.ladder("gamma_i+", "i", i, g, dim, gi_plus, p.omega_i),
        JumpChannel.ladder("gamma_i-", "i", g, i, dim, gi_minus, p.omega_i),
    ]


def build_battery3(p: BatteryParams) -> ModelSpec:
    """Three-level cascade g < i < m with the pump on g <-> m."""
    idx = {lab: k for k, lab in enumerate(BATTERY_LEVELS)}
    dim = 3
    pump = DriveSpec("in", p.Omega, p.pump_frequency, (idx["g"], idx["m"]))
    return ModelSpec(
        levels=BATTERY_LEVELS,
        energies=(0.0, p.omega_i, p.omega_m),
        drives=(pump,),
        channels=tuple(_battery_channels(p, idx, dim)),
        temperature=p.T,
    )


def build_engine4(p: EngineParams, stage: str = "recharge") -> ModelSpec:
    """Four-level engine g < e < i < m.

    ``stage="recharge"`` has only the pump; ``stage="discharge"`` adds the
    resonant extraction drive on e <-> i.
    """
    if stage not in ("recharge", "discharge"):
        raise ValueError(f"unknown stage {stage!r}")
    idx = {lab: k for k, lab in enumerate(ENGINE_LEVELS)}
    dim = 4
    ge_plus, ge_minus = p.rates_e
    channels = _battery_channels(p, idx, dim) + [
        JumpChannel.ladder("gamma_e+", "e", idx["e"], idx["g"], dim, ge_plus, p.omega_e),
        JumpChannel.ladder("gamma_e-", "e", idx["g"], idx["e"], dim, ge_minus, p.omega_e),
    ]
    drives = [DriveSpec("in", p.Omega, p.pump_frequency, (idx["g"], idx["m"]))]
    if stage == "discharge":
        drives.append(DriveSpec("ext", p.epsilon, p.omega_i - p.omega_e, (idx["e"], idx["i"])))
    return ModelSpec(
        levels=ENGINE_LEVELS,
        energies=(0.0, p.omega_e, p.omega_i, p.omega_m),
        drives=tuple(drives),
        channels=tuple(channels),
        temperature=p.T,
    )


def initial_gibbs(model: ModelSpec) -> np.ndarray:
    return gibbs_state(model.energies, model.temperature)


@dataclass(frozen=True)
class EffectiveQubitModel:
    """g <-> i dynamics after eliminating m: pumped up-rate, natural down-rate."""

    Gamma_i_plus: float
    gamma_i_minus: float
    level_shift: float
    p: float
    T_H: float
    validity: float
    omega_i: float = 1.0
    temperature: float = 0.0
    # engine variant keeps the natural g <-> e channel
    omega_e: float | None = None
    gamma_e: tuple[float, float] | None = None

    @property
    def excited_fraction(self) -> float:
        """Steady-state population of ``i`` (qubit case)."""
        tot = self.Gamma_i_plus + self.gamma_i_minus
        return self.Gamma_i_plus / tot if tot > 0 else 0.0

    @property
    def model(self) -> ModelSpec:
        if self.gamma_e is None:
            levels, energies = ("g", "i"), (0.0, self.omega_i)
        else:
            levels, energies = ("g", "e", "i"), (0.0, self.omega_e, self.omega_i)
        dim = len(levels)
        g, i = levels.index("g"), levels.index("i")
        chans = [
            JumpChannel.ladder("Gamma_i+", "i", i, g, dim, self.Gamma_i_plus, self.omega_i),
            JumpChannel.ladder("gamma_i-", "i", g, i, dim, self.gamma_i_minus, self.omega_i),
        ]
        if self.gamma_e is not None:
            e = levels.index("e")
            chans += [
                JumpChannel.ladder("gamma_e+", "e", e, g, dim, self.gamma_e[0], self.omega_e),
                JumpChannel.ladder("gamma_e-", "e", g, e, dim, self.gamma_e[1], self.omega_e),
            ]
        shift = [0.0] * dim
        shift[g] = self.level_shift
        return ModelSpec(levels=levels, energies=energies, drives=(), channels=tuple(chans),
                         temperature=self.temperature, static_shift=tuple(shift))


def _effective(p: BatteryParams, engine: bool) -> EffectiveQubitModel:
    validity = validity_metric(p)
    if validity > VALIDITY_WARN:
        warnings.warn(f"adiabatic elimination of m is questionable: validity metric {validity:.3g} > "
                      f"{VALIDITY_WARN}", AdiabaticValidityWarning, stacklevel=3)
    gm_minus = p.rates_m[1]
    gi_plus, gi_minus = p.rates_i
    pr = p.p
    Gp = gi_plus + pr * gm_minus
    th = effective_hot_temperature_from_rates(Gp, gi_minus, p.omega_i)
    kw = {}
    if engine:
        kw = dict(omega_e=p.omega_e, gamma_e=p.rates_e)
    return EffectiveQubitModel(Gamma_i_plus=Gp, gamma_i_minus=gi_minus, level_shift=pr * p.detuning,
                               p=pr, T_H=th, validity=validity, omega_i=p.omega_i, temperature=p.T, **kw)


def build_effective2(p: BatteryParams) -> EffectiveQubitModel:
    """Effective g <-> i qubit of the pumped battery."""
    return _effective(p, engine=False)


def build_effective3(p: EngineParams) -> EffectiveQubitModel:
    """Effective g, e, i qutrit of the engine (m eliminated)."""
    return _effective(p, engine=True)


def effective_hot_temperature_from_rates(Gamma_up: float, gamma_down: float, omega_i: float = 1.0) -> float:
    if gamma_down <= 0:
        raise ValueError("gamma_i^- must be positive")
    if Gamma_up == 0:
        return 0.0
    ratio = gamma_down / Gamma_up
    if ratio == 1.0:
        return math.inf
    return omega_i / math.log(ratio)


def effective_hot_temperature(m: EffectiveQubitModel, omega_i: float | None = None) -> float:
    """Temperature whose detailed-balance ratio matches the pumped g <-> i rates.

    Negative under population inversion, ``math.inf`` when the rates balance.
    """
    return effective_hot_temperature_from_rates(m.Gamma_i_plus, m.gamma_i_minus,
                                                m.omega_i if omega_i is None else omega_i)


# Parameter presets.  "paper" holds the published rate sets; "desk" scales every
# rate and drive amplitude by 100, which keeps all dimensionless ratios
# (hierarchy, p*gamma_m^-/gamma_i^- = 40) while shortening physical times.
DESK_SCALE = 100.0

_PAPER = {
    "fig3": BatteryParams(omega_m=1.02, gamma0_m=1e-4, gamma0_i=1e-9, Omega=1e-6, T=0.0),
    "fig4": BatteryParams(omega_m=1.02, gamma0_m=1e-4, gamma0_i=1e-9, Omega=1e-6, T=0.01),
    "fig7": BatteryParams(omega_m=5.0, gamma0_m=1e-4, gamma0_i=1e-9, Omega=1e-6, T=0.5),
    "fig5": EngineParams(omega_m=1.02, gamma0_m=1e-4, gamma0_i=1e-9, gamma0_e=1e-9, Omega=1e-6,
                         omega_e=0.01, T=0.01),
    "fig6": EngineParams(omega_m=1.02, gamma0_m=1e-4, gamma0_i=1e-7, gamma0_e=1e-7, Omega=1e-8,
                         omega_e=0.01, epsilon=2e-4, T=0.0),
}

RATE_FIELDS = ("gamma0_i", "gamma0_m", "gamma0_e", "Omega", "epsilon")


def preset(name: str, kind: str = "paper") -> BatteryParams:
    """Named parameter set (``fig3`` ... ``fig7``) under the ``paper`` or ``desk`` preset."""
    try:
        base = _PAPER[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(_PAPER)}") from None
    if kind == "paper":
        return base
    if kind != "desk":
        raise ValueError(f"preset kind must be 'paper' or 'desk', got {kind!r}")
    names = {f.name for f in fields(base)}
    return replace(base, **{k: getattr(base, k) * DESK_SCALE for k in RATE_FIELDS if k in names})


def preset_names() -> list[str]:
    return sorted(_PAPER)
