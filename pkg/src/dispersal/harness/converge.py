"""The cross-module convergence pipeline.

For each scale in a decreasing list the full phase-space model is run and
reduced to the quantities the limit theory predicts: the dominant trait
against the canonical trajectory, the integrated density against the
resident equilibrium along the limit path, the WKB value against the
constrained HJ solution, the trait-marginal concentration width, and the
effective Hamiltonian against the invasion exponent.  The report records
each metric per scale and verdicts of weak decrease (10% slack).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..bundle import effective_hamiltonian
from ..ecology import DispersalProfile, construct_alpha
from ..errors import AcceptanceFailure, ValidationError
from ..grids import ScalarField, SpatialGrid, TraitField, TraitGrid
from ..hj import SelfConsistentSource, canonical_ode, solve_constrained_hj
from ..kinetic import RunResult, SimConfig, run
from .io import write_csv, write_json, write_plot_script

TREND_SLACK = 1.1        # weak decrease tolerance along the scale list
EARLY_RECORD_MULTIPLES = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0)


def make_m(grid: SpatialGrid, amp: float) -> ScalarField:
    return ScalarField(grid, 1.0 + amp * np.cos(np.pi * grid.nodes))


def standard_setting(params: dict):
    """Grids, habitat profile, and dispersal profile shared by commands."""
    sg = SpatialGrid(params["n_x"])
    m = make_m(sg, params["m_amp"])
    profile = construct_alpha(params["alpha0"], params["L0"], m)
    tg = TraitGrid(params["n_z"]) if "n_z" in params else None
    return sg, tg, profile, m


def weakly_decreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return False
    return bool(np.all(v[1:] <= TREND_SLACK * v[:-1]))


def write_run_artifacts(out: Path, res: RunResult, echo: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "run.csv",
              ["t", "zbar_eps", "mass", "rho_min", "rho_max"],
              [res.times, res.zbar, res.mass, res.rho_min, res.rho_max])
    hist = res.rho_history
    n_t, n_x = hist.values.shape
    xs = res.config.spatial.nodes
    write_csv(out / "rho.csv", ["t", "x", "rho"],
              [np.repeat(hist.times, n_x), np.tile(xs, n_t),
               hist.values.ravel()])
    zs = res.config.trait.nodes
    for pt, u in sorted(res.u_snaps.items()):
        n_xs, n_z = u.shape
        write_csv(out / f"u_snap_{pt:g}.csv", ["z", "x", "u"],
                  [np.repeat(zs, n_xs), np.tile(xs, n_z), u.T.ravel()])
    write_json(out / "meta.json", {
        "config": echo,
        "envelope": list(res.envelope),
        "violations": list(res.violations),
        "steps": res.meta.get("steps"),
        "dt": res.meta.get("dt"),
    })
    write_plot_script(out / "run.gp", "dominant trait", "t", "trait",
                      ["'run.csv' using 't':'zbar_eps' with lines"])


@dataclass(frozen=True)
class ConvergenceReport:
    eps_list: tuple
    metrics: dict          # name -> tuple of per-scale values
    verdicts: dict         # name -> bool
    passed: bool
    extras: dict

    def to_dict(self) -> dict:
        return {
            "eps_list": list(self.eps_list),
            "metrics": {k: list(v) for k, v in self.metrics.items()},
            "verdicts": dict(self.verdicts),
            "passed": self.passed,
            "extras": self.extras,
        }


def _h_record_times(eps: float, t_lo_unif: float, t_hi: float) -> np.ndarray:
    early = eps * np.asarray(EARLY_RECORD_MULTIPLES)
    unif = np.arange(t_lo_unif, t_hi + 1e-12, 0.05)
    ts = np.unique(np.concatenate([early[early < t_lo_unif], unif]))
    return ts[ts <= t_hi + 1e-12]


def run_convergence(params: dict, out_dir: Path) -> ConvergenceReport:
    eps_list = tuple(params["eps_list"])
    if len(eps_list) < 3 or not np.all(np.diff(eps_list) < 0.0):
        raise ValidationError("scale list must be strictly decreasing with "
                              "at least three entries", eps_list=eps_list)
    T = params["T"]
    sg, tg, profile, m = standard_setting(params)
    probes = tuple(sorted({p for p in params["u_probes"]
                           if p <= T + 1e-12} | {T}))
    h_t_hi = min(params["h_t_hi"], T)

    src = SelfConsistentSource(profile, m, tg)
    v0 = TraitField(tg, params["K0"] * (tg.nodes - params["zbar0"]) ** 2)
    sol = solve_constrained_hj(src, v0, T, params["hj_dt"], record_every=10)
    can = canonical_ode(src, sol, params["zbar0"], T)

    def worker(eps: float):
        cfg = SimConfig(eps, T, sg, tg, profile, m, K0=params["K0"],
                        zbar0=params["zbar0"], c_t=params["c_t"])
        res = run(cfg, probe_times=probes)
        echo = dict(params)
        echo["eps"] = eps
        write_run_artifacts(out_dir / f"eps_{eps:g}", res, echo)
        eff = None
        if params["with_h"]:
            z_samp = np.linspace(tg.a + tg.h_z / 2, tg.b - tg.h_z / 2,
                                 params["z_samples"])
            t_rec = _h_record_times(eps, 0.05, h_t_hi)
            eff = effective_hamiltonian(res.rho_history, profile, eps,
                                        z_samp, m, t_rec)
        return res, eff

    threads = max(int(os.environ.get("DISPERSAL_THREADS", "1")), 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(worker, eps_list))
    else:
        results = [worker(e) for e in eps_list]

    cols = {k: [] for k in ("zbar_gap", "rho_gap", "u_gap", "x_osc", "width",
                            "h_gap", "h_int", "env_lo", "env_hi")}
    for eps, (res, eff) in zip(eps_list, results):
        zb_lim = np.interp(res.times, can.times, can.zbar)
        cols["zbar_gap"].append(float(np.abs(res.zbar - zb_lim).max()))

        hist = res.rho_history
        gap = 0.0
        for i, tv in enumerate(hist.times):
            if tv < params["t_lo"] - 1e-12:
                continue
            theta = src.cache.theta(float(np.interp(tv, can.times, can.zbar)))
            gap = max(gap, float(np.abs(hist.values[i] - theta.values).max()))
        cols["rho_gap"].append(gap)

        offset = 0.5 * eps * np.log(eps)
        u_gap = x_osc = 0.0
        for pt in probes:
            u = res.u_snaps[pt]
            v_t = sol.V[int(np.argmin(np.abs(sol.times - pt)))]
            u_gap = max(u_gap,
                        float(np.abs(u.mean(axis=0) - offset - v_t).max()))
            x_osc = max(x_osc, float((u.max(axis=0) - u.min(axis=0)).max()))
        cols["u_gap"].append(u_gap)
        cols["x_osc"].append(x_osc)

        marginal = np.exp(-res.u_snaps[T] / eps).mean(axis=0)
        w = marginal / marginal.sum()
        second = float((w * (tg.nodes - res.zbar[-1]) ** 2).sum())
        cols["width"].append(float(np.sqrt(second)))

        if eff is not None:
            t_rec = eff.t
            lam = np.stack([src.rate(eff.z, 0.0, zbar=res.zbar_at(t))
                            for t in t_rec], axis=1)
            mask = (t_rec >= params["h_t_lo"] - 1e-12)
            cols["h_gap"].append(float(np.abs(eff.H[:, mask]
                                              - lam[:, mask]).max()))
            h_bar = np.array([float(np.interp(res.zbar_at(t), eff.z,
                                              eff.H[:, k]))
                              for k, t in enumerate(t_rec)])
            head = h_bar[0] * t_rec[0]
            cums = np.concatenate(
                [[head],
                 head + np.cumsum(0.5 * (h_bar[1:] + h_bar[:-1])
                                  * np.diff(t_rec))])
            cols["h_int"].append(float(np.abs(cums).max()))
        else:
            cols["h_gap"].append(float("nan"))
            cols["h_int"].append(float("nan"))

        lo, hi = res.envelope
        cols["env_lo"].append(float(lo))
        cols["env_hi"].append(float(hi))

    trend_names = ["zbar_gap", "rho_gap", "u_gap", "width"]
    if params["with_h"]:
        trend_names += ["h_gap", "h_int"]
    verdicts = {name: weakly_decreasing(cols[name]) for name in trend_names}
    passed = all(verdicts.values())

    ratios = np.asarray(cols["x_osc"]) / np.asarray(eps_list)
    extras = {
        "x_osc_over_eps": [float(r) for r in ratios],
        "x_osc_fitted_C": float(ratios.max()),
        "x_osc_stable": bool(ratios.max() <= 1.25 * ratios.min()),
        "violations": [len(res.violations) for res, _ in results],
        "envelope_stable_2x": bool(
            max(cols["env_hi"]) <= 2.0 * min(cols["env_hi"])
            and max(cols["env_lo"]) <= 2.0 * min(cols["env_lo"])
            and min(cols["env_lo"]) > 0.0),
        "limit_zbar_end": float(can.zbar[-1]),
    }

    report = ConvergenceReport(eps_list, {k: tuple(v) for k, v in cols.items()},
                               verdicts, passed, extras)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = ["eps"] + list(cols)
    write_csv(out_dir / "report.csv", names,
              [np.asarray(eps_list)] + [np.asarray(cols[k]) for k in cols])
    write_json(out_dir / "report.json", report.to_dict())
    write_plot_script(
        out_dir / "report.gp", "convergence trends", "eps", "sup gap",
        [f"'report.csv' using 'eps':'{name}' with linespoints"
         for name in ("zbar_gap", "rho_gap", "u_gap", "width")],
        preamble=["set logscale xy"])
    return report


def raise_if_failed(report: ConvergenceReport) -> None:
    if not report.passed:
        failing = sorted(k for k, ok in report.verdicts.items() if not ok)
        raise AcceptanceFailure("convergence trends failed",
                                failing=failing,
                                metrics={k: list(report.metrics[k])
                                         for k in failing})
