"""Command-line front end: ``tofusim {shape,dephase,chart,fit,check,fig1b}``.

Every output file starts with ``#`` lines carrying the run manifest.  Exit
codes: 0 success, 2 configuration or I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import eta, fit_distance, fresnel_chart, truncation_check
from .powder import OrientationSet, parse_powder_spec, single_crystal
from .propagator import PropagationError
from .rfgen import TofuParams, export_waveform, tofu_waveform
from .sequence import (
    LAYOUTS,
    MAIN,
    ExperimentParams,
    SelectivePulseParams,
    postc7_timeline,
    run_dephasing_series,
    run_timelines,
)
from .spinsys import ConfigError, DipolarCoupling, EulerAngles, Spin, SpinSystem, build_spin_system, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DEFAULT_POWDER = "golden-spiral:144:5"
DEFAULT_N_MAX = 15


# --- manifest and tables ---------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_sha256: str = "none"
    version: str = __version__
    parameters: dict = field(default_factory=dict)
    wall_time_s: float | None = None

    def lines(self) -> list[str]:
        out = [f"tool = tofusim {self.version}", f"command = {self.command}", f"config_sha256 = {self.config_sha256}"]
        out += [f"{k} = {v}" for k, v in self.parameters.items()]
        if self.wall_time_s is not None:
            out.append(f"wall_time_s = {self.wall_time_s:.3f}")
        return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_table(path: Path, manifest: RunManifest, columns: dict) -> Path:
    """CSV with ``#`` manifest lines; values written with full precision."""
    names = list(columns)
    n = len(next(iter(columns.values())))
    buf = io.StringIO()
    for line in manifest.lines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for i in range(n):
        w.writerow([_fmt(columns[c][i]) for c in names])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def read_table(path) -> tuple[dict, dict]:
    """Inverse of :func:`write_table`: ``(manifest dict, {column: array})``."""
    header, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise ConfigError(f"{path}: no table")
    names = rows[0]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(names))
    except ValueError:
        raise ConfigError(f"{path}: non-numeric table entry") from None
    return header, {name: data[:, i] for i, name in enumerate(names)}


def _config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest() if path else "none"


# --- configuration -----------------------------------------------------------------------


def _condition_c(condition: str) -> float:
    try:
        return {"quarter": 0.25, "half": 0.5}[condition]
    except KeyError:
        raise ConfigError(f"condition must be 'quarter' or 'half', got {condition!r}") from None


@dataclass
class RunSetup:
    system: SpinSystem
    params: ExperimentParams
    powder: OrientationSet
    n_list: list
    layouts: tuple
    detection: str
    relaxation_rate: float
    config_sha256: str

    def manifest_parameters(self) -> dict:
        p = self.params.tofu
        sel = self.params.selective
        wr_hz = p.omega_r / (2 * math.pi)
        spins = "; ".join(
            f"{s.label}:{s.iso_shift / (2 * math.pi):.6g}Hz" for s in self.system.spins
        )
        return {
            "spin_rate_hz": f"{wr_hz:.10g}",
            "B_rad_s": f"{p.b_field:.10g}",
            "B_over_wr": f"{p.b_field / p.omega_r:.10g}",
            "C_rad_s": f"{p.c_field:.10g}",
            "C_over_wr": f"{p.c_field / p.omega_r:.10g}",
            "steps_per_element": p.steps_per_element,
            "selective": f"{sel.shape} {sel.duration * 1e6:.6g}us trunc={sel.truncation:g}",
            "hard_pulse": self.params.hard_pulse,
            "playback": self.params.playback,
            "powder": f"{self.powder.scheme}:{self.powder.n_ab}:{self.powder.n_gamma}",
            "crystallites": len(self.powder),
            "n_list": " ".join(str(n) for n in self.n_list),
            "detection": self.detection,
            "relaxation_rate_per_s": f"{self.relaxation_rate:.10g}",
            "s_spin": self.system.spins[self.system.s_spin].label,
            "iso_shifts": spins,
        }


def load_run(config_path, powder: str | None = None, condition: str | None = None,
             detection: str | None = None) -> RunSetup:
    """Read spins and the ``[experiment]`` table; flags override config values."""
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = load_config(path)
    system = build_spin_system(cfg)
    exp = dict(cfg.get("experiment", {}))
    known = {"spin_rate_hz", "b_over_wr", "c_over_wr", "condition", "steps_per_element", "n_list",
             "n_max", "layouts", "hard_pulse", "playback", "detection", "relaxation_rate", "powder",
             "selective"}
    unknown = set(exp) - known
    if unknown:
        raise ConfigError(f"unknown [experiment] keys: {sorted(unknown)}")
    spin_rate = float(exp.get("spin_rate_hz", 20e3))
    if condition is not None:
        c = _condition_c(condition)
    elif "c_over_wr" in exp:
        c = float(exp["c_over_wr"])
    else:
        c = _condition_c(exp.get("condition", "quarter"))
    tofu = TofuParams.from_multiples(float(exp.get("b_over_wr", 3.0)), c, spin_rate,
                                     int(exp.get("steps_per_element", 200)))
    sel_cfg = dict(exp.get("selective", {}))
    sel = SelectivePulseParams(
        duration=float(sel_cfg.get("duration_us", 250.0)) * 1e-6,
        truncation=float(sel_cfg.get("truncation", 0.01)),
        rotor_sync_p=sel_cfg.get("rotor_sync_p"),
        shape=str(sel_cfg.get("shape", "gaussian")),
        dwell=float(sel_cfg.get("dwell_us", 0.5)) * 1e-6,
    )
    params = ExperimentParams(tofu, 1, sel, MAIN, str(exp.get("hard_pulse", "ideal")),
                              str(exp.get("playback", "explicit")))
    if "n_list" in exp:
        n_list = [int(n) for n in exp["n_list"]]
    else:
        n_list = list(range(0, int(exp.get("n_max", DEFAULT_N_MAX)) + 1))
    if not n_list or min(n_list) < 0:
        raise ConfigError("n_list must contain non-negative integers")
    layouts = tuple(exp.get("layouts", LAYOUTS))
    for lay in layouts:
        if lay not in LAYOUTS:
            raise ConfigError(f"unknown layout {lay!r}")
    det = detection or str(exp.get("detection", "real"))
    if det not in ("real", "abs"):
        raise ConfigError("detection must be 'real' or 'abs'")
    pw = parse_powder_spec(powder or str(exp.get("powder", DEFAULT_POWDER)))
    return RunSetup(system, params, pw, n_list, layouts, det, float(exp.get("relaxation_rate", 0.0)),
                    _config_hash(path))


# --- three-spin truncation demo ---------------------------------------------------------------------


def fig1b_system() -> SpinSystem:
    """Three 13C spins: I1 strongly coupled to I2, weakly to I3; I1 is the S spin."""
    two_pi = 2 * math.pi
    spins = (
        Spin("I1", iso_shift=two_pi * -12e3),
        Spin("I2", iso_shift=0.0),
        Spin("I3", iso_shift=two_pi * -15.5e3),
    )
    dip = (
        DipolarCoupling(0, 1, two_pi * -2100.0, EulerAngles.from_degrees(0, 0, 0)),
        DipolarCoupling(0, 2, two_pi * -300.0, EulerAngles.from_degrees(0, 90, 0)),
    )
    return SpinSystem(spins, dip, (), 0)


def fig1b_curves(n_list: Sequence[int] = tuple(range(DEFAULT_N_MAX + 1)), spin_rate_hz: float = 20e3,
                 b_over_wr: float = 3.0, max_substep: float | None = None) -> dict:
    """I3 signals for TOFU main (3 spins), its 2-spin control and POST-C7.

    Single crystal (0, 45, 0); ideal selective pi on I1 so that the nearby
    I3 resonance is not touched.
    """
    system = fig1b_system()
    control = system.without(["I2"])
    crystal = single_crystal(0.0, math.radians(45.0), 0.0)
    tofu = TofuParams.from_multiples(b_over_wr, 0.25, spin_rate_hz)
    params = ExperimentParams(tofu, 1, SelectivePulseParams(shape="ideal"))
    n_list = list(n_list)
    out = {"n": np.array(n_list), "T_seconds": 16 * np.array(n_list) * tofu.rotor_period}
    for name, sysm in (("tofu_main", system), ("tofu_control", control)):
        cur = run_dephasing_series(sysm, params, crystal, n_list, layouts=(MAIN,),
                                   observed=[sysm.index("I3")], max_substep=max_substep)
        out[name] = cur.signal(MAIN, "I3")
    timelines = {n: postc7_timeline(n, tofu.omega_r) for n in n_list}
    avg, _ = run_timelines(system, timelines, crystal, tofu.omega_r, [system.index("I3")],
                           max_substep=max_substep)
    out["postc7"] = np.array([avg[n][0] for n in n_list])
    return out


# --- subcommands ------------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _finish(manifest: RunManifest, args, t0: float) -> None:
    wall = time.perf_counter() - t0
    if getattr(args, "record_time", False):
        manifest.wall_time_s = wall
    print(f"wall time {wall:.2f} s", file=sys.stderr)


def cmd_shape(args) -> int:
    t0 = time.perf_counter()
    setup = load_run(args.config, args.powder, args.condition, args.detect)
    out = _out_dir(args)
    manifest = RunManifest("shape", setup.config_sha256, parameters=setup.manifest_parameters())
    _finish(manifest, args, t0)
    header = {f"manifest {line.split(' = ')[0]}": line.partition(" = ")[2] for line in manifest.lines()}
    path = export_waveform(tofu_waveform(setup.params.tofu), out / f"tofu_{args.format}.shape",
                           args.format, header)
    print(path)
    return EXIT_OK


def cmd_dephase(args) -> int:
    t0 = time.perf_counter()
    setup = load_run(args.config, args.powder, args.condition, args.detect)
    out = _out_dir(args)
    cur = run_dephasing_series(setup.system, setup.params, setup.powder, setup.n_list, setup.layouts,
                               setup.detection, setup.relaxation_rate, args.threads)
    cols = {"T_seconds": cur.t_values, "T_rotor_periods": cur.t_rotor_periods}
    for label in (setup.system.spins[k].label for k in setup.system.observed()):
        for layout in setup.layouts:
            cols[f"{label}_{layout}"] = cur.signal(layout, label)
    params = setup.manifest_parameters()
    params["rotor_sync_p"] = cur.metadata["rotor_sync_p"]
    manifest = RunManifest("dephase", setup.config_sha256, parameters=params)
    _finish(manifest, args, t0)
    print(write_table(out / "dephase.csv", manifest, cols))
    return EXIT_OK


def cmd_chart(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    dist = [float(x) for x in args.distances.split(",")] if args.distances else list(np.arange(1.0, 6.01, 0.5))
    tau_r = 1.0 / args.spin_rate
    n = np.arange(0, args.n_max + 1)
    T = 16 * n * tau_r
    chart = fresnel_chart(dist, T)
    cols = {"T_seconds": T, "T_rotor_periods": 16.0 * n}
    for r, curve in zip(chart.distances, chart.curves):
        cols[f"eta_{r:.2f}A"] = curve
    params = {"spin_rate_hz": f"{args.spin_rate:.10g}", "distances_a": " ".join(f"{r:.4g}" for r in dist),
              "gamma_a_rad_s_T": f"{chart.gammas[0]:.10g}", "gamma_b_rad_s_T": f"{chart.gammas[1]:.10g}",
              "quadrature": "256 Gauss-Legendre cos(beta) x 128 uniform gamma"}
    manifest = RunManifest("chart", parameters=params)
    _finish(manifest, args, t0)
    print(write_table(out / "chart.csv", manifest, cols))
    return EXIT_OK


def _eta_series(cols: dict) -> dict:
    series = {k: v for k, v in cols.items() if k.startswith("eta_")}
    for key in cols:
        if key.endswith("_main"):
            label = key[: -len("_main")]
            ref = cols.get(f"{label}_reference")
            if ref is not None:
                series[f"eta_{label}"] = eta(ref, cols[key])
    if not series:
        raise ConfigError("input table has no eta_* columns and no <spin>_main/<spin>_reference pairs")
    return series


def cmd_fit(args) -> int:
    _, cols = read_table(args.input)
    if "T_seconds" not in cols:
        raise ConfigError("input table lacks a T_seconds column")
    series = _eta_series(cols)
    if args.column:
        if args.column not in series:
            raise ConfigError(f"no series named {args.column!r}; have {sorted(series)}")
        series = {args.column: series[args.column]}
    lines = []
    for name, y in series.items():
        fit = fit_distance(y, cols["T_seconds"])
        lines += [f"series = {name}", f"r_angstrom = {fit.r:.4f}", f"uncertainty_angstrom = {fit.uncertainty:.4f}",
                  f"residual = {fit.residual:.6g}", f"flag = {fit.flag}", ""]
    text = "\n".join(lines)
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args)
        (out / "fit.txt").write_text(f"# tool = tofusim {__version__}\n# command = fit\n" + text)
    return EXIT_OK


def cmd_check(args) -> int:
    setup = load_run(args.config, args.powder, args.condition, args.detect)
    diag = truncation_check(setup.system, setup.params.tofu)
    for label, per in diag.margins.items():
        cells = "  ".join(f"{k}={v:.3g}" for k, v in per.items())
        print(f"{label}: {diag.flags[label]}  {cells}")
    for r in diag.resonances:
        print(f"dipolar resonance: {r} (transverse dipolar terms recoupled at first order)")
    print(f"status = {diag.status}")
    return EXIT_OK


def cmd_fig1b(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    n_list = range(0, args.n_max + 1)
    cur = fig1b_curves(n_list)
    cols = {"T_seconds": cur["T_seconds"], "T_rotor_periods": 16.0 * cur["n"],
            "I3_tofu_main": cur["tofu_main"], "I3_tofu_control": cur["tofu_control"], "I3_postc7": cur["postc7"]}
    params = {"spin_rate_hz": "20000", "B_over_wr": "3", "C_over_wr": "0.25", "crystallite_deg": "0 45 0",
              "shifts_hz": "I1:-12000 I2:0 I3:-15500", "couplings_hz": "I1-I2:-2100@(0,0,0) I1-I3:-300@(0,90,0)",
              "s_spin": "I1", "control": "I2 removed"}
    manifest = RunManifest("fig1b", parameters=params)
    _finish(manifest, args, t0)
    print(write_table(out / "fig1b.csv", manifest, cols))
    return EXIT_OK


# --- entry point ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tofusim", description="TOFU-RADAR MAS spin-dynamics simulator")
    p.add_argument("--version", action="version", version=f"tofusim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="TOML run configuration")
            sp.add_argument("--powder", help="scheme:n_ab:n_gamma or file:PATH[:n_gamma]")
            sp.add_argument("--condition", choices=("quarter", "half"))
            sp.add_argument("--detect", choices=("real", "abs"))
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--record-time", action="store_true", help="write wall time into the manifest")

    sp = sub.add_parser("shape", help="export one TOFU element as a shape file")
    common(sp)
    sp.add_argument("--format", choices=("two-column", "three-column"), default="two-column")
    sp.set_defaults(func=cmd_shape)

    sp = sub.add_parser("dephase", help="simulate main/reference dephasing series")
    common(sp)
    sp.set_defaults(func=cmd_dephase)

    sp = sub.add_parser("chart", help="analytic Fresnel curves")
    common(sp, config=False)
    sp.add_argument("--distances", help="comma-separated distances in angstrom (default 1.0..6.0 step 0.5)")
    sp.add_argument("--spin-rate", type=float, default=20e3, help="Hz")
    sp.add_argument("--n-max", type=int, default=DEFAULT_N_MAX)
    sp.set_defaults(func=cmd_chart)

    sp = sub.add_parser("fit", help="fit distances to eta series in a CSV")
    sp.add_argument("--input", required=True)
    sp.add_argument("--column")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("check", help="truncation diagnostics for a config")
    common(sp)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("fig1b", help="truncation demonstration curves")
    common(sp, config=False)
    sp.add_argument("--n-max", type=int, default=DEFAULT_N_MAX)
    sp.set_defaults(func=cmd_fig1b)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PropagationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
