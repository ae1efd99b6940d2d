"""Command-line front end.

Settings resolve in three layers: built-in defaults (a 4-bit, 16-element RIS
with the 100-symbol pilot, 15 groups and learning rate 5e-3), then a
``key = value`` config file given with ``--config``, then command-line flags.
Every run writes ``run_manifest.txt`` into its output directory; passing that
file back with ``--config`` repeats the run exactly.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, CONFIG_SCHEMA_VERSION
from . import io
from .channel import ChannelModelSpec, measure_set
from .crb import SingularFisherError, fisher
from .estimator import DivergenceError, calibrate
from .harness import (
    ExperimentConfig, align_and_rmse, make_trial, nominal_baseline_rmse, noise_floor, trial_seeds,
    run_convergence, run_rmse_vs_snr, run_runtime_scaling,
)
from .model import RisConfig
from .schedule import min_measurements

log = logging.getLogger("riscal")

SUBCOMMANDS = ("simulate", "calibrate", "crb", "sweep-rmse", "sweep-convergence", "bench", "bound")

# key -> (parser, default); keys double as config-file keys and --flag names
SETTINGS = {
    "seed": (int, 0),
    "snr_db": (float, 20.0),
    "mris": (int, 16),
    "mr": (int, 4),
    "bits": (int, 4),
    "groups": (int, 15),
    "pilot_len": (int, 100),
    "lr": (float, 5e-3),
    "eps_stop": (float, 1e-5),
    "stop_rule": (str, "relative"),
    "max_epochs": (int, 10_000),
    "eps_max_deg": (float, 20.0),
    "trials": (int, 20),
    "channel": (str, "saleh_valenzuela"),
    "sv_clusters": (int, 3),
    "sv_rays": (int, 8),
    "sv_spread_deg": (float, 10.0),
    "snr_list": (str, "0,10,20,30"),
    "sizes": (str, ""),
    "bench_epochs": (int, 20),
    "workers": (int, 1),
    "out": (str, "results"),
    "input": (str, ""),
    "fim_dump": (str, ""),
}

# settings that do not affect any output file
_VOLATILE = {"workers", "out"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riscal", description="RIS phase calibration by backpropagation, with CRB benchmarks.")
    p.add_argument("--version", action="version",
                   version=f"riscal {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="key = value settings file (flags override it)")
    for key in SETTINGS:
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    return p


def resolve_settings(args) -> dict:
    raw = {k: str(v) for k, (_, v) in SETTINGS.items()}
    if args.config:
        try:
            file_values = io.read_keyvalue(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        for k, v in file_values.items():
            if k in ("subcommand", "version", "config_schema"):
                continue
            if k not in SETTINGS:
                raise UsageError(f"{args.config}: unknown key {k!r}")
            raw[k] = v
    for k in SETTINGS:
        v = getattr(args, k)
        if v is not None:
            raw[k] = v
    out = {}
    for k, v in raw.items():
        kind = SETTINGS[k][0]
        try:
            out[k] = kind(v)
        except ValueError as exc:
            raise UsageError(f"invalid value for {k}: {v!r}") from exc
    return out


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise UsageError(f"invalid number list: {text!r}") from exc


def _int_list(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"invalid integer list: {text!r}") from exc


def experiment_from(s: dict) -> ExperimentConfig:
    ris = RisConfig(m_ris=s["mris"], bits=s["bits"], m_r=s["mr"], n_pilot=s["pilot_len"],
                    o_groups=s["groups"], snr_db=s["snr_db"])
    channel = ChannelModelSpec(kind=s["channel"], sv_clusters=s["sv_clusters"],
                               sv_rays_per_cluster=s["sv_rays"], sv_angle_spread_deg=s["sv_spread_deg"])
    if not 0.0 <= s["eps_max_deg"] < 180.0:
        raise ValueError("eps-max-deg must lie in [0, 180)")
    if s["lr"] <= 0 or s["max_epochs"] < 1:
        raise ValueError("lr must be positive and max-epochs at least 1")
    return ExperimentConfig(
        ris=ris, channel=channel, eps_max=float(np.deg2rad(s["eps_max_deg"])),
        snr_list=_float_list(s["snr_list"]), trials=s["trials"], master_seed=s["seed"],
        lr=s["lr"], eps_stop=s["eps_stop"], max_epochs=s["max_epochs"],
        stop_rule=s["stop_rule"], out_dir=s["out"], workers=s["workers"],
    )


def write_manifest(out: Path, subcommand: str, s: dict):
    items = {"subcommand": subcommand, "version": __version__, "config_schema": CONFIG_SCHEMA_VERSION}
    items.update({k: v for k, v in s.items() if k not in _VOLATILE})
    io.write_keyvalue(out / "run_manifest.txt", items,
                      header=f"riscal run manifest; rerun with: riscal {subcommand} --config <this file>")


def _truth(exp: ExperimentConfig):
    return make_trial(exp, 0)


def cmd_simulate(exp, s, out):
    setup = _truth(exp)
    meas = measure_set(setup.channels, setup.table, setup.schedule, setup.pilot, setup.cfg, setup.noise_seed)
    io.write_phase_table(out / "phase_table_true.csv", setup.table)
    io.write_channels(out / "channels.csv", setup.channels)
    io.write_schedule(out / "schedule.csv", setup.schedule)
    io.write_measurements(out / "measurements.csv", meas)
    q_min, o_min = min_measurements(setup.cfg)
    print(f"simulated Q={setup.cfg.q_total} measurements (Q_min={q_min}) into {out}")


def _load_or_simulate(exp, s):
    if not s["input"]:
        setup = _truth(exp)
        meas = measure_set(setup.channels, setup.table, setup.schedule, setup.pilot, setup.cfg, setup.noise_seed)
        return setup.cfg, setup.schedule, meas, setup.table, setup.init_seed
    src = Path(s["input"])
    sched = io.read_schedule(src / "schedule.csv", exp.ris.l_gears)
    meas = io.read_measurements(src / "measurements.csv", sched,
                                2 * exp.ris.noise_var / exp.ris.n_pilot)
    truth = io.read_phase_table(src / "phase_table_true.csv") if (src / "phase_table_true.csv").exists() else None
    cfg = exp.ris.with_(m_ris=sched.m_ris, o_groups=sched.o_groups)
    if meas.m_r != cfg.m_r:
        cfg = cfg.with_(m_r=meas.m_r)
    return cfg, sched, meas, truth, trial_seeds(exp.master_seed, 0)["init"]


def cmd_calibrate(exp, s, out):
    cfg, sched, meas, truth, init_seed = _load_or_simulate(exp, s)
    rep = calibrate(meas, sched, cfg, lr=exp.lr, eps_stop=exp.eps_stop, max_epochs=exp.max_epochs,
                    rng_seed=init_seed, stop_rule=exp.stop_rule)
    io.write_phase_table(out / "phase_table_est.csv", rep.table_est)
    io.write_history(out / "history.csv", rep.c_ave_history)
    summary = {"epochs_run": rep.epochs_run, "final_c_ave": rep.final_c_ave, "converged": rep.converged,
               "noise_floor": noise_floor(cfg)}
    if truth is not None:
        summary["rmse_deg"] = align_and_rmse(rep.table_est, truth)
    io.write_keyvalue(out / "summary.txt", summary)
    msg = f"calibrated in {rep.epochs_run} epochs, C_ave={rep.final_c_ave:.4g}"
    if "rmse_deg" in summary:
        msg += f", RMSE={summary['rmse_deg']:.4f} deg"
    print(msg)


def cmd_crb(exp, s, out):
    setup = _truth(exp)
    res = fisher(setup.channels.h_cas, setup.table, setup.schedule, setup.cfg)
    io.write_crb(out / "crb.csv", res.omega_table_deg())
    if s["fim_dump"]:
        io.write_fim(s["fim_dump"], res.fim)
    print(f"CRB (root mean over phases) = {res.crb_rmse_deg:.4f} deg, FIM condition {res.condition:.3g}")


def cmd_sweep_rmse(exp, s, out):
    rows, _ = run_rmse_vs_snr(exp)
    io.write_rows(out / "rmse_vs_snr.csv", ["snr_db", "rmse_deg", "crb_deg", "ratio", "trials"], rows)
    print(f"no-calibration baseline RMSE = {nominal_baseline_rmse(exp):.4f} deg (gear-1 referenced)")
    for r in rows:
        print(f"SNR {r['snr_db']:5.1f} dB  RMSE {r['rmse_deg']:.4f}  CRB {r['crb_deg']:.4f}  ratio {r['ratio']:.3f}")


def cmd_sweep_convergence(exp, s, out):
    sizes = _int_list(s["sizes"]) or [exp.ris.m_ris]
    rows, finals = run_convergence(exp, sizes)
    io.write_rows(out / "convergence.csv", ["epoch", "c_ave", "snr_db", "m_ris"], rows)
    for (snr, m), vals in sorted(finals.items()):
        print(f"M_ris={m:4d} SNR {snr:5.1f} dB  final C_ave {np.mean(vals):.4g}")


def cmd_bench(exp, s, out):
    sizes = _int_list(s["sizes"]) or [32, 64, 128, 256]
    rows, slope = run_runtime_scaling(sizes, exp, epochs=s["bench_epochs"])
    io.write_rows(out / "runtime.csv", ["m_ris", "sec_per_epoch"], rows)
    print(f"log-log slope of seconds per epoch vs M_ris: {slope:.3f}")


def cmd_bound(exp, s, out):
    q_min, o_min = min_measurements(exp.ris)
    print(f"Q_min={q_min}")
    print(f"O_min={o_min}")


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "crb": cmd_crb,
    "sweep-rmse": cmd_sweep_rmse,
    "sweep-convergence": cmd_sweep_convergence,
    "bench": cmd_bench,
    "bound": cmd_bound,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        s = resolve_settings(args)
        exp = experiment_from(s)
        out = Path(s["out"])
        if args.subcommand != "bound":
            out.mkdir(parents=True, exist_ok=True)
            write_manifest(out, args.subcommand, s)
        COMMANDS[args.subcommand](exp, s, out)
    except DivergenceError as exc:
        print(f"riscal: training diverged: {exc}", file=sys.stderr)
        return 2
    except SingularFisherError as exc:
        # checked before ValueError, which LinAlgError subclasses
        print(f"riscal: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, OSError) as exc:
        print(f"riscal: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
