"""Row producers for each scenario. Every grid point is computed independently
so sweeps can run in a process pool; ``battery-charge`` is a single run."""

from __future__ import annotations

import math
import warnings

import numpy as np

from .config import ScenarioConfig, point_params
from .engine import (
    CycleConfig,
    PulseDurationWarning,
    ShortCycleWarning,
    analytic_threshold_temperature,
    asymptotic_config,
    find_oss,
    short_cycle_report,
)
from .lindblad import find_ness, propagate
from .models import (
    AdiabaticValidityWarning,
    build_battery3,
    build_effective2,
    gibbs_state,
    initial_gibbs,
    validity_metric,
)
from .thermo import charge_battery, efficiency_series

CHARGE_COLS = ["dF", "E_in", "E_in_branch", "W_in", "Q_m", "Q_i", "eta", "P", "tau", "rho_ii",
               "rho_mm", "p", "validity"]
SC_COLS = ["r_g", "r_e", "r_i", "r_m", "kappa", "W_in_sc", "Q_e_sc", "Q_i_sc", "Q_m_sc", "E_sc",
           "E_in_sc", "E_in_branch_sc", "eta_sc", "P_sc"]
CYCLE_COLS = ["W_in", "W_ext", "W_ext_direct", "Q_m", "Q_i", "Q_e", "E_in", "E_in_branch", "eta", "P",
              "dU_cycle", "ergotropy_at_swap", "tau_d", "r_g", "r_e", "r_i", "r_m", "leakage",
              "machine_on", "cycles"]

COLUMNS = {
    "battery-charge": ["t", "rho_gg", "rho_ii", "rho_mm", "rho_ii_eff", "W_in", "Q_m", "Q_i", "dF",
                       "E_in", "eta"],
    "battery-detuning-sweep": CHARGE_COLS,
    "battery-pump-sweep": ["Omega", "p_i_ness", "p_i_rabi"] + CHARGE_COLS,
    "battery-stored-vs-eff": CHARGE_COLS,
    "engine-short-cycle-sweep": SC_COLS + ["eta_num", "P_num", "W_ext_num"],
    "engine-threshold": ["E_sc", "eta_sc", "P_sc", "on_sc", "W_ext_asym", "eta_asym", "P_asym", "on_asym"],
    "engine-asymptotic": CYCLE_COLS,
}


def header(cfg: ScenarioConfig) -> list[str]:
    if cfg.scenario == "battery-charge":
        return COLUMNS["battery-charge"]
    axes = cfg.axis_names()
    return axes + [c for c in COLUMNS[cfg.scenario] if c not in axes]


def _charge_cols(params, tau=None, threshold=1e-4) -> dict:
    rep, _ = charge_battery(params, tau=tau, threshold=threshold)
    return {
        "dF": rep.dF, "E_in": rep.E_in, "E_in_branch": rep.E_in_branch, "W_in": rep.W_in,
        "Q_m": rep.Q_m, "Q_i": rep.Q_i, "eta": rep.eta, "P": rep.P, "tau": rep.tau,
        "rho_ii": rep.rho_ii, "rho_mm": rep.rho_mm, "p": params.p, "validity": validity_metric(params),
    }


def _sc_cols(params, tau) -> dict:
    sc = short_cycle_report(params, tau)
    return {"r_g": sc.r_g, "r_e": sc.r_e, "r_i": sc.r_i, "r_m": sc.r_m, "kappa": sc.kappa,
            "W_in_sc": sc.W_in, "Q_e_sc": sc.Q_e, "Q_i_sc": sc.Q_i, "Q_m_sc": sc.Q_m, "E_sc": sc.E,
            "E_in_sc": sc.E_in, "E_in_branch_sc": sc.E_in_branch, "eta_sc": sc.eta, "P_sc": sc.P}


def _cycle_cols(rep) -> dict:
    return {k: getattr(rep, k) for k in CYCLE_COLS}


def compute_point(cfg: ScenarioConfig, point: tuple) -> dict:
    """All output columns for one grid point (axis values first)."""
    names = cfg.axis_names()
    pt = dict(zip(names, point))
    params = point_params(cfg, pt)
    opts = cfg.options
    row = dict(pt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdiabaticValidityWarning)
        warnings.simplefilter("ignore", ShortCycleWarning)
        warnings.simplefilter("ignore", PulseDurationWarning)
        s = cfg.scenario
        if s == "battery-detuning-sweep":
            row.update(_charge_cols(params, threshold=opts["threshold"]))
        elif s == "battery-pump-sweep":
            model = build_battery3(params)
            ness = find_ness(model, initial_gibbs(model), threshold=opts["threshold"])
            gibbs = gibbs_state(model.energies, params.T)
            row.update({"Omega": params.Omega, "p_i_ness": float(ness.rho[1, 1].real),
                        "p_i_rabi": float(gibbs[0, 0].real)})
            row.update(_charge_cols(params, threshold=opts["threshold"]))
        elif s == "battery-stored-vs-eff":
            row.update(_charge_cols(params, tau=cfg.scale_axis_value("tau", pt["tau"])))
        elif s == "engine-short-cycle-sweep":
            tau = cfg.scale_axis_value("tau", opts["tau"])
            row.update(_sc_cols(params, tau))
            num = {"eta_num": math.nan, "P_num": math.nan, "W_ext_num": math.nan}
            if opts["numeric"]:
                tau_r = cfg.scale_axis_value("tau_r", opts["tau_r"]) or tau
                _, rep = find_oss(CycleConfig(tau_r=tau_r), params)
                num = {"eta_num": rep.eta, "P_num": rep.P, "W_ext_num": rep.W_ext}
            row.update(num)
        elif s == "engine-threshold":
            sc = short_cycle_report(params, cfg.scale_axis_value("tau", opts["tau"]))
            row.update({"E_sc": sc.E, "eta_sc": sc.eta if sc.E > 0 else math.nan, "P_sc": sc.P,
                        "on_sc": sc.E > 0})
            asym = {"W_ext_asym": math.nan, "eta_asym": math.nan, "P_asym": math.nan, "on_asym": None}
            if opts["asymptotic"]:
                _, rep = find_oss(asymptotic_config(params, opts["n_relax"], opts["discharge_mode"]), params)
                asym = {"W_ext_asym": rep.W_ext, "eta_asym": rep.eta, "P_asym": rep.P,
                        "on_asym": rep.machine_on}
            row.update(asym)
        elif s == "engine-asymptotic":
            tau_r = cfg.scale_axis_value("tau_r", pt["tau_r"])
            cc = CycleConfig(tau_r=tau_r, discharge_mode=opts["discharge_mode"], method=opts["method"])
            _, rep = find_oss(cc, params)
            row.update(_cycle_cols(rep))
        else:
            raise ValueError(f"scenario {s} has no per-point producer")
    row.update(pt)  # axis columns keep the configured (paper-scale) values
    return row


def battery_charge_rows(cfg: ScenarioConfig) -> list[dict]:
    """Trajectory samples from the Gibbs state, with the effective-qubit population alongside.

    The effective qubit starts from the Gibbs populations with ``m`` folded
    into ``i`` (where it decays within ``1/gamma_m^-``).
    """
    params = cfg.params
    model = build_battery3(params)
    rho0 = initial_gibbs(model)
    if cfg.sweep:
        times = np.array([cfg.scale_axis_value("t", t) for t in cfg.sweep[0].values])
    else:
        ness = find_ness(model, rho0, threshold=cfg.options["threshold"])
        times = np.linspace(0.0, ness.tau, int(cfg.options["points"]))
    traj = propagate(model, rho0, times)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AdiabaticValidityWarning)
        eff = build_effective2(params).model
    r2 = np.diag([rho0[0, 0].real, rho0[1, 1].real + rho0[2, 2].real]).astype(complex)
    traj_eff = propagate(eff, r2, times)
    ser = efficiency_series(traj)
    rows = []
    for n, t in enumerate(times):
        st = traj.states[n]
        rows.append({
            "t": float(t) if not cfg.sweep else cfg.sweep[0].values[n],
            "rho_gg": float(st[0, 0].real), "rho_ii": float(st[1, 1].real), "rho_mm": float(st[2, 2].real),
            "rho_ii_eff": float(traj_eff.states[n][1, 1].real),
            "W_in": float(traj.acc["W_in"][n]), "Q_m": float(traj.acc["Q_m"][n]),
            "Q_i": float(traj.acc["Q_i"][n]), "dF": float(ser["dF"][n]), "E_in": float(ser["E_in"][n]),
            "eta": float(ser["eta"][n]),
        })
    return rows


def scenario_metadata(cfg: ScenarioConfig) -> dict:
    """Scenario-level numbers for the sidecar (validity, thresholds)."""
    meta = {"validity_metric": validity_metric(cfg.params)}
    if cfg.scenario == "engine-threshold":
        try:
            meta["analytic_threshold_T"] = analytic_threshold_temperature(cfg.params)
        except ValueError:
            meta["analytic_threshold_T"] = math.nan
    return meta
