"""Batch front end: seeded runs in, plot-ready tables and JSON summaries out.

Every command resolves its configuration from (in increasing precedence)
built-in defaults, the scale preset, a ``--config`` file, and ``--set``
overrides, then writes the resolved knobs to ``manifest.txt`` next to its
outputs.  Feeding a manifest back through ``--config`` replays the run and
reproduces every tabular output byte for byte.

Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
failures.
"""

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    apply_overrides,
    default_output_root,
    get_float,
    get_int,
    get_str,
    load_config,
    read_xy_table,
    strip_meta,
    write_manifest,
)
from .constants import KB, TWOPI, joule_to_uk, uk_to_joule
from .core import default_energy_budget, default_model
from .errors import ConfigError, IonbathError, NumericsError
from .mdsim import (
    PRESETS,
    BathParams,
    density_from_cooling_time,
    fit_cooling,
    fit_energy_histogram,
    langevin_count,
    run_cooling,
    steady_state_temperature,
)
from .thermometry import (
    TABLE_BUDGETS,
    RabiConfig,
    doppler_fit,
    fit_nbar,
    rabi_signal,
)
from .trapdyn import default_trap

DEFAULT_SEED = 12345

# measured trap imperfections driving micromotion heating in full-RF runs:
# stray field (V/m, x=horizontal, y=vertical), quadrature RF amplitude (V/m)
# along x, axial RF gradient (V/m^2) with its null 100 um from the ion
IMPERFECTIONS = {
    "trap.e_dc_x_vpm": 0.0525,
    "trap.e_dc_y_vpm": 0.0668,
    "trap.a_quad_vpm": 1.884,
    "trap.g_axial_vpm2": 16500.0,
    "trap.z_null_um": 100.0,
}


def _resolve(args, defaults, preset_keys=None):
    """Defaults <- preset <- config file <- --set overrides, then seed."""
    cfg = dict(defaults)
    file_cfg = strip_meta(load_config(args.config)) if args.config else {}
    preset = args.preset or file_cfg.get("preset", "")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose desk or paper")
        for key, value in (preset_keys or {}).get(preset, {}).items():
            cfg[key] = value
        cfg["preset"] = preset
    cfg.update(file_cfg)
    cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["seed"] = get_int(cfg, "seed", DEFAULT_SEED)
    if args.workers is not None:
        cfg["workers"] = args.workers
    cfg["workers"] = get_int(cfg, "workers", 1)
    return cfg


def _outdir(args):
    out = Path(args.out) if args.out else default_output_root()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path, text):
    Path(path).write_text(text)


def _manifest(out, command, cfg):
    record = dict(cfg)
    record["command"] = command
    record["version"] = __version__
    write_manifest(out / "manifest.txt", record)


def _table(header, rows):
    lines = ["# " + " ".join(header)]
    for row in rows:
        lines.append(" ".join(f"{v:.10e}" for v in row))
    return "\n".join(lines) + "\n"


# --- cool ---------------------------------------------------------------------------

COOL_DEFAULTS = {
    "runs": 50,
    "atoms": 6000,
    "mode": "full_rf",
    "t_atom_uk": 10.0,
    "t_ion0_uk": 609.0,
    "r_inject_um": 0.6,
    "bin_width": 50,
    "heating_rate_uk_s": 0.0,
    "tau_exp_ms": 244.0,
    "hist_bins": 60,
    **IMPERFECTIONS,
}

COOL_PRESET_KEYS = {
    "desk": {"runs": PRESETS["desk"]["n_runs"], "atoms": PRESETS["desk"]["n_atoms"]},
    "paper": {"runs": PRESETS["paper"]["n_runs"], "atoms": PRESETS["paper"]["n_atoms"]},
}


def cmd_cool(args):
    cfg = _resolve(args, COOL_DEFAULTS, COOL_PRESET_KEYS)
    out = _outdir(args)
    mode = get_str(cfg, "mode", "full_rf")
    if mode not in ("secular", "full_rf"):
        raise ConfigError(f"mode must be 'secular' or 'full_rf', got {mode!r}")

    trap = default_trap().replace(
        e_dc=(
            get_float(cfg, "trap.e_dc_x_vpm", 0.0),
            get_float(cfg, "trap.e_dc_y_vpm", 0.0),
            0.0,
        ),
        a_quad=get_float(cfg, "trap.a_quad_vpm", 0.0),
        g_axial=get_float(cfg, "trap.g_axial_vpm2", 0.0),
        z_null=1e-6 * get_float(cfg, "trap.z_null_um", 0.0),
    )
    r_inject = 1e-6 * get_float(cfg, "r_inject_um", 0.6)
    # bookkeeping density: one atom inside the injection sphere
    rho_sim = 1.0 / (4.0 / 3.0 * math.pi * r_inject**3)
    bath = BathParams(
        temperature=1e-6 * get_float(cfg, "t_atom_uk", 10.0),
        density=rho_sim,
        r_inject=r_inject,
    )
    result = run_cooling(
        trap=trap,
        bath=bath,
        n_runs=get_int(cfg, "runs", 50),
        n_atoms=get_int(cfg, "atoms", 6000),
        mode=mode,
        seed=cfg["seed"],
        t_ion0=1e-6 * get_float(cfg, "t_ion0_uk", 609.0),
    )

    bin_width = get_int(cfg, "bin_width", 50)
    n, t, sig = result.temperature_curve(bin_width=bin_width)
    _write(
        out / "cooling_curve.txt",
        _table(("n_col", "t_uK", "sigma_uK"), zip(n, t * 1e6, sig * 1e6)),
    )

    fit = fit_cooling(result, bin_width=bin_width)
    hist_fit = fit_energy_histogram(result)
    start = result.n_atoms // 2
    e_uk = joule_to_uk(result.energies[:, start:, :].sum(axis=2).ravel())
    counts, edges = np.histogram(e_uk, bins=get_int(cfg, "hist_bins", 60), density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    scale = joule_to_uk(KB * hist_fit.temperature)  # kB T in uK
    gamma_pdf = centers**2 * np.exp(-centers / scale) / (2.0 * scale**3)
    _write(
        out / "histogram.txt",
        _table(("e_uK", "density_per_uK", "gamma3_pdf"), zip(centers, counts, gamma_pdf)),
    )

    tau_exp = 1e-3 * get_float(cfg, "tau_exp_ms", 244.0)
    heating = 1e-6 * get_float(cfg, "heating_rate_uk_s", 0.0)
    summary = fit.as_dict()
    summary.update(
        {
            "mode": mode,
            "capped_fraction": result.capped_fraction(),
            "mean_langevin_per_run": float(np.mean(langevin_count(result))),
            "t_steady_uK": steady_state_temperature(fit.t_inf, heating, tau_exp) * 1e6,
            "plateau_shift_uK": heating * tau_exp * 1e6,
            "rho_at_m3": density_from_cooling_time(fit.n_langevin_eq, tau_exp),
            "gamma_fit_t_uK": hist_fit.temperature * 1e6,
            "gamma_fit_ks_pvalue": hist_fit.ks_pvalue,
        }
    )
    _write(out / "fit.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _manifest(out, "cool", cfg)
    print(
        f"cool: T_inf = {fit.t_inf * 1e6:.2f} uK, N_eq = {fit.n_eq:.0f} passages, "
        f"N_L_eq = {fit.n_langevin_eq:.1f}"
    )


# --- thermo -------------------------------------------------------------------------

THERMO_DEFAULTS = {
    "kind": "rabi",
    "data": "",
    "demo": "false",
    "omega_rad_khz": 330.0,
    "omega_ax_khz": 130.0,
    "omega0_khz": 30.0,
    "ceiling": 0.83,
    "demo.nbar": 5.8,
    "demo.noise": 0.015,
    "demo.n_points": 60,
    "demo.t_max_us": 120.0,
    "demo.sigma_khz": 193.0,
    "demo.span_khz": 600.0,
    "demo.amplitude": 0.55,
}


def _demo_rabi(cfg, rng, rabi_cfg):
    n = get_int(cfg, "demo.n_points", 60)
    t = np.linspace(0.0, 1e-6 * get_float(cfg, "demo.t_max_us", 120.0), n + 1)[1:]
    p = rabi_signal(t, get_float(cfg, "demo.nbar", 5.8), rabi_cfg)
    p = np.clip(p + rng.normal(0.0, get_float(cfg, "demo.noise", 0.015), n), 0.0, 1.0)
    return _table(("t_us", "excitation"), zip(t * 1e6, p))


def _demo_doppler(cfg, rng):
    n = get_int(cfg, "demo.n_points", 60)
    span = 1e3 * get_float(cfg, "demo.span_khz", 600.0)
    sigma = 1e3 * get_float(cfg, "demo.sigma_khz", 193.0)
    amp = get_float(cfg, "demo.amplitude", 0.55)
    d = np.linspace(-span, span, n)
    p = amp * np.exp(-0.5 * (d / sigma) ** 2)
    p = np.clip(p + rng.normal(0.0, get_float(cfg, "demo.noise", 0.015), n), 0.0, 1.0)
    return _table(("detuning_khz", "excitation"), zip(d / 1e3, p))


def cmd_thermo(args):
    cfg = _resolve(args, THERMO_DEFAULTS)
    if args.kind:
        cfg["kind"] = args.kind
    if args.data:
        cfg["data"] = args.data
    if args.demo:
        cfg["demo"] = "true"
    out = _outdir(args)
    kind = get_str(cfg, "kind", "rabi")
    if kind not in ("rabi", "doppler"):
        raise ConfigError(f"kind must be 'rabi' or 'doppler', got {kind!r}")

    omega_rad = TWOPI * 1e3 * get_float(cfg, "omega_rad_khz", 330.0)
    rabi_cfg = RabiConfig.radial_beam(
        omega0=TWOPI * 1e3 * get_float(cfg, "omega0_khz", 30.0),
        omega_rad=omega_rad,
        ceiling=get_float(cfg, "ceiling", 0.83),
    )

    demo = get_str(cfg, "demo", "false").lower() == "true"
    if demo:
        rng = np.random.default_rng(cfg["seed"])
        text = _demo_rabi(cfg, rng, rabi_cfg) if kind == "rabi" else _demo_doppler(cfg, rng)
        data_path = out / f"demo_{kind}.txt"
        _write(data_path, text)
        cfg["data"] = str(data_path.name)
    elif not cfg.get("data"):
        raise ConfigError("thermo needs --data FILE (or --demo)")
    else:
        data_path = Path(cfg["data"])
        if not data_path.is_absolute():
            candidate = out / data_path
            data_path = candidate if candidate.is_file() else data_path

    table = read_xy_table(data_path, min_cols=2, max_cols=2)
    if kind == "rabi":
        fit = fit_nbar(1e-6 * table[:, 0], table[:, 1], rabi_cfg)
    else:
        fit = doppler_fit(
            1e3 * table[:, 0],
            table[:, 1],
            omega_axis=TWOPI * 1e3 * get_float(cfg, "omega_ax_khz", 130.0),
        )
    _write(
        out / f"{kind}_fit.json",
        json.dumps(fit.as_dict(), indent=2, sort_keys=True) + "\n",
    )
    _manifest(out, "thermo", cfg)
    if kind == "rabi":
        print(f"thermo: nbar = {fit.nbar:.2f}, T_sec = {fit.t_sec * 1e6:.1f} uK")
    else:
        print(
            f"thermo: sigma = {fit.sigma / 1e3:.1f} kHz, "
            f"T_ax = {fit.temperature * 1e6:.1f} uK"
        )


# --- budget -------------------------------------------------------------------------

BUDGET_DEFAULTS = {"unit": "uK", "scale": 1.0}


def _unit_factor(unit):
    if unit == "uK":
        return 1e6 / KB, "uK"
    if unit == "J":
        return 1.0, "J"
    raise ConfigError(f"unit must be 'uK' or 'J', got {unit!r}")


def cmd_budget(args):
    cfg = _resolve(args, BUDGET_DEFAULTS)
    out = _outdir(args)
    factor, unit = _unit_factor(get_str(cfg, "unit", "uK"))
    scale = get_float(cfg, "scale", 1.0)
    if scale < 0:
        raise ConfigError("scale must be non-negative")

    budget = default_energy_budget()
    if scale != 1.0:
        budget.rows = [
            dataclasses.replace(row, value=row.value * scale, err=row.err * scale)
            for row in budget.rows
        ]
    totals = budget.totals()

    lines = [f"# label kinetic_{unit} err_{unit} collision_{unit} err_{unit}"]
    for row, (_, col, col_err) in zip(budget.rows, budget.collision_rows()):
        lines.append(
            f"{row.label!r} {row.value * factor:.6g} {row.err * factor:.6g} "
            f"{col * factor:.6g} {col_err * factor:.6g}"
        )
    lines.append(
        f"'total ion kinetic' {totals.ion_kinetic * factor:.6g} "
        f"{totals.ion_kinetic_err * factor:.6g} - -"
    )
    lines.append(
        f"'total collision' - - {totals.collision * factor:.6g} "
        f"{totals.collision_err * factor:.6g}"
    )
    _write(out / "table1.txt", "\n".join(lines) + "\n")

    lines = [f"# setting label energy_{unit} err_{unit} count bound"]
    for setting, mm in sorted(TABLE_BUDGETS.items()):
        for row in mm.as_rows():
            e_j = uk_to_joule(row["energy_uK"]) * scale
            s_j = uk_to_joule(row["error_uK"]) * scale
            lines.append(
                f"{setting} {row['label']!r} {e_j * factor:.6g} {s_j * factor:.6g} "
                f"{row['count']} {int(row['bound'])}"
            )
    _write(out / "table2.txt", "\n".join(lines) + "\n")

    model = default_model()
    payload = {
        "unit": unit,
        "ion_kinetic": totals.ion_kinetic * factor,
        "ion_kinetic_err": totals.ion_kinetic_err * factor,
        "collision": totals.collision * factor,
        "collision_err": totals.collision_err * factor,
        "ratio_to_es": totals.ratio_to_es,
        "ratio_err": totals.ratio_err,
        "e_s": model.e_s * factor,
        "mm_budget_totals": {
            setting: {
                "total": mm.total * scale * factor,
                "err": mm.total_err * scale * factor,
            }
            for setting, mm in sorted(TABLE_BUDGETS.items())
        },
    }
    _write(out / "budget.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _manifest(out, "budget", cfg)
    print(
        f"budget: ion {totals.ion_kinetic * 1e6 / KB:.0f} uK, collision "
        f"{totals.collision * 1e6 / KB:.1f} uK, ratio {totals.ratio_to_es:.2f} E_s"
    )


# --- rates --------------------------------------------------------------------------

RATES_DEFAULTS = {
    "lam_s": 0.95,
    "lam_t": 1.08,
    "l_max": 6,
    "e_lo_uk": 0.2,
    "e_hi_uk": 200.0,
    "n_energies": 7,
    "splitting_mhz": 11.2,
}


def cmd_rates(args):
    from .constants import H_PLANCK
    from .scatter import exchange_model, extract_smatrix, numerov_propagate, rate_constant

    cfg = _resolve(args, RATES_DEFAULTS)
    out = _outdir(args)
    model = default_model()
    energies = uk_to_joule(
        np.geomspace(
            get_float(cfg, "e_lo_uk", 0.2),
            get_float(cfg, "e_hi_uk", 200.0),
            get_int(cfg, "n_energies", 7),
        )
    )
    lam_s = get_float(cfg, "lam_s", 0.95)
    lam_t = get_float(cfg, "lam_t", 1.08)
    splitting = H_PLANCK * 1e6 * get_float(cfg, "splitting_mhz", 11.2)
    curve = rate_constant(
        lam_s,
        lam_t,
        energies,
        l_max=get_int(cfg, "l_max", 6),
        splitting=splitting,
        workers=cfg["workers"],
    )
    _write(out / "rates.txt", curve.table_text())

    # quality probe at the highest energy, s-wave
    chan = exchange_model(model, lam_s, lam_t, l=0, splitting=splitting)
    e_tot = float(energies[-1]) + chan.thresholds[0]
    sm = extract_smatrix(numerov_propagate(chan, e_tot, double_tol=1e-11), chan, e_tot)
    s = sm.s
    quality = float(np.abs(s @ s.conj().T - np.eye(len(s))).max())
    payload = {
        "k_langevin_m3s": model.k_langevin,
        "smatrix_unitarity_deviation": quality,
        "warning": curve.warning,
    }
    _write(out / "rates.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _manifest(out, "rates", cfg)
    print(
        f"rates: K({joule_to_uk(energies[0]):.3g}..{joule_to_uk(energies[-1]):.3g} uK) "
        f"in [{curve.total.min():.3e}, {curve.total.max():.3e}] m^3/s"
    )


# --- spinfit ------------------------------------------------------------------------

SPINFIT_DEFAULTS = {
    "data": "",
    "synth": "true",
    "synth.a_s_r4": 1.2,
    "synth.a_t_r4": -1.5,
    "synth.n_l": 1.2,
    "synth.n_points": 12,
    "synth.e_mm_lo_uk": 50.0,
    "synth.e_mm_hi_uk": 6000.0,
    "synth.n_shots": 200,
    "synth.sigma_floor": 0.01,
    "e0_uk": 20.0,
    "null_model": "false",
    "null.k_over_kl": 0.5,
    "grid.a_lo_r4": -3.0,
    "grid.a_hi_r4": 3.0,
    "grid.pitch_r4": 0.1,
}


def cmd_spinfit(args):
    from .spinx import SpinDataset, _NullFactory, fit_spin, synth_dataset

    cfg = _resolve(args, SPINFIT_DEFAULTS)
    if args.data:
        cfg["data"] = args.data
        cfg["synth"] = "false"
    if args.null_model:
        cfg["null_model"] = "true"
    out = _outdir(args)
    model = default_model()
    e0 = uk_to_joule(get_float(cfg, "e0_uk", 20.0))

    null = get_str(cfg, "null_model", "false").lower() == "true"
    factory = (
        _NullFactory(get_float(cfg, "null.k_over_kl", 0.5) * model.k_langevin)
        if null
        else None
    )

    if get_str(cfg, "synth", "true").lower() == "true" and not cfg.get("data"):
        e_mm_uk = np.geomspace(
            get_float(cfg, "synth.e_mm_lo_uk", 50.0),
            get_float(cfg, "synth.e_mm_hi_uk", 6000.0),
            get_int(cfg, "synth.n_points", 12),
        )
        dataset = synth_dataset(
            get_float(cfg, "synth.a_s_r4", 1.2),
            get_float(cfg, "synth.a_t_r4", -1.5),
            get_float(cfg, "synth.n_l", 1.2),
            e_mm_uk,
            seed=cfg["seed"],
            n_shots=get_int(cfg, "synth.n_shots", 200),
            sigma_floor=get_float(cfg, "synth.sigma_floor", 0.01),
            e0=e0,
            rate_factory=factory,
        )
        _write(out / "dataset.txt", dataset.to_text())
    else:
        if not cfg.get("data"):
            raise ConfigError("spinfit needs --data FILE or synth = true")
        dataset = SpinDataset.from_text(Path(cfg["data"]).read_text(), e0=e0)

    fit = fit_spin(
        dataset,
        rate_factory=factory,
        a_lo=get_float(cfg, "grid.a_lo_r4", -3.0),
        a_hi=get_float(cfg, "grid.a_hi_r4", 3.0),
        pitch=get_float(cfg, "grid.pitch_r4", 0.1),
        workers=cfg["workers"],
    )
    _write(out / "spinfit.json", fit.to_json())
    _write(out / "chi2_surface.txt", fit.surface_text())
    _manifest(out, "spinfit", cfg)
    flag = " (energy-independent rate)" if fit.energy_independent else ""
    print(
        f"spinfit: a_S = {fit.a_s:+.2f} R4, a_T = {fit.a_t:+.2f} R4, "
        f"n_L = {fit.n_l:.2f}, chi2 = {fit.chi2:.2f}{flag}"
    )


# --- entry point --------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="key=value config file (a manifest replays)")
    sub.add_argument("--seed", type=int, default=None, help="master RNG seed")
    sub.add_argument("--preset", choices=("desk", "paper"), default=None)
    sub.add_argument("--out", default=None, help="output directory (default $IONBATH_OUT or .)")
    sub.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker processes for parallel scans (results do not depend on it)",
    )
    sub.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ionbath",
        description="Buffer-gas cooling, thermometry and spin-exchange toolkit",
    )
    parser.add_argument("--version", action="version", version=f"ionbath {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("cool", help="run a cooling ensemble and fit the curve")
    _add_common(p)
    p.set_defaults(func=cmd_cool)

    p = subs.add_parser("thermo", help="fit a Rabi or Doppler thermometry record")
    _add_common(p)
    p.add_argument("--kind", choices=("rabi", "doppler"), default=None)
    p.add_argument("--data", default=None, help="two-column data file")
    p.add_argument("--demo", action="store_true", help="generate a bundled synthetic record")
    p.set_defaults(func=cmd_thermo)

    p = subs.add_parser("budget", help="emit the kinetic-energy ledgers")
    _add_common(p)
    p.set_defaults(func=cmd_budget)

    p = subs.add_parser("rates", help="two-channel exchange rate curve")
    _add_common(p)
    p.set_defaults(func=cmd_rates)

    p = subs.add_parser("spinfit", help="chi^2 fit of spin-flip data")
    _add_common(p)
    p.add_argument("--data", default=None, help="dataset file (E_eMM_uK S sigma)")
    p.add_argument("--null-model", action="store_true", help="constant-rate null model")
    p.set_defaults(func=cmd_spinfit)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericsError, IonbathError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
