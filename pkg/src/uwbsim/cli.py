"""Command-line entry point: ``uwbsim {sweep,analytic,dump} --config PATH``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .analytic import (
    TERMS,
    SinrBreakdown,
    desired_energy_and_noise,
    estimate_variance_decomposition,
    omega_sigma,
    sigma_iasi,
    sigma_isi,
    sigma_mui,
    sinr_and_ber,
)
from .channel import realize_channel
from .config import ConfigError, Experiment, load_experiment
from .montecarlo import Receiver, run_sweep
from .pulse import make_pulse
from .quadrature import ConvergenceError
from .txrx import keep_mask

log = logging.getLogger("uwbsim")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def header_lines(exp: Experiment, command: str) -> list:
    return [
        f"uwbsim {__version__} {command}",
        f"master_seed={exp.seed}",
        f"config_sha256={exp.sha256()}",
    ]


def write_atomic(path: str, text: str):
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".uwbsim-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _comment_block(lines) -> str:
    return "".join(f"# {line}\n" for line in lines)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    if x is None:
        return ""
    return f"{x:.10g}"


# --- subcommands ---------------------------------------------------------------------


def cmd_sweep(exp: Experiment, threads: int = 1) -> str:
    curve = run_sweep(exp.sim_config(), threads=threads)
    return curve.to_csv(header_lines(exp, "sweep"))


def _breakdown_per_term(cfg):
    """Analytic terms, with ``None`` (and a logged diagnostic) for any that fail to converge."""
    vals, failed = {}, False
    Eb, sn = desired_energy_and_noise(cfg.channel, cfg.frame, cfg.N0, cfg.pulse, cfg.receiver)
    vals["Eb"], vals["sigma_n2"] = Eb, sn
    try:
        om = omega_sigma(cfg)
    except ConvergenceError as exc:
        log.error("omega_sigma: %s", exc)
        om, failed = None, True
    steps = {
        "sigma_iasi2": lambda: sigma_iasi(cfg),
        "sigma_isi2": lambda: sigma_isi(cfg, om),
        "sigma_mui2": lambda: sigma_mui(cfg, om),
    }
    for term, fn in steps.items():
        if om is None and term != "sigma_iasi2":
            vals[term] = None
            continue
        try:
            vals[term] = fn()
        except ConvergenceError as exc:
            log.error("%s: %s", term, exc)
            vals[term], failed = None, True
    return vals, failed


def _sinr_row(values):
    if any(values.get(t) is None for t in TERMS):
        return None, None
    try:
        return sinr_and_ber(SinrBreakdown(**{t: values[t] for t in TERMS}))
    except ZeroDivisionError:
        return None, None


def cmd_analytic(exp: Experiment):
    """Breakdown CSV text and whether every term converged."""
    rows, ok = [], True
    for label in exp.receivers:
        rx = Receiver.parse(label)
        cfg = exp.analytic_config(rx)
        ana, failed = _breakdown_per_term(cfg)
        ok &= not failed
        emp = {}
        if exp.analytic_empirical_trials:
            b = estimate_variance_decomposition(
                cfg, exp.seed, exp.analytic_empirical_trials, bits_per_trial=exp.analytic_bits_per_trial
            )
            emp = b.as_dict()
        ana["SINR"], ana["BER"] = _sinr_row(ana)
        if emp:
            emp["SINR"], emp["BER"] = _sinr_row(emp)
        for term in (*TERMS, "SINR", "BER"):
            a, e = ana.get(term), emp.get(term)
            ratio = a / e if a is not None and e not in (None, 0.0) else None
            rows.append([rx.label, term, _num(a), _num(e), _num(ratio)])
    text = _csv_text(["receiver", "term", "analytic_value", "empirical_value", "ratio"], rows)
    return _comment_block(header_lines(exp, "analytic")) + text, ok


def cmd_dump(exp: Experiment, what: str, receiver: str | None = None) -> str:
    """Two-column CSV of the pulse, one channel realisation, or a template replica.

    Waveforms use time in seconds and amplitude in s^-1/2, so the squared
    amplitude integrates to the unit pulse energy. One zero sample pads each
    end (the truncated pulse vanishes there), which makes the trapezoid rule
    exact for the energy.
    """
    head = _comment_block(header_lines(exp, f"dump {what}"))
    if what == "channel":
        params = exp.channel_params()
        if params is None:
            raise ConfigError("[channel] preset: awgn has no multipath realisation to dump")
        ch = realize_channel(params, np.random.default_rng(np.random.SeedSequence(exp.seed)))
        return head + ch.to_csv()
    if what not in ("pulse", "template"):
        raise ValueError(f"unknown dump object {what!r}; choose pulse, channel or template")
    pulse = make_pulse(exp.pulse_spec())
    x = pulse.samples
    if what == "template":
        rx = Receiver.parse(receiver) if receiver else Receiver.parse(exp.receivers[-1])
        x = x * keep_mask(len(x), rx.keep_fraction)
    dt = pulse.sample_interval
    t = pulse.start_time + dt * np.arange(-1, len(x) + 1)
    amp = np.concatenate(([0.0], x, [0.0]))
    rows = [[repr(float(a)), repr(float(b))] for a, b in zip(t, amp)]
    return head + _csv_text(["time_s", "amplitude"], rows)


# --- argument handling ---------------------------------------------------------------


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="experiment INI file")
    common.add_argument("--seed", type=_u64, metavar="U64", help="master seed (overrides the file)")
    common.add_argument("--out", metavar="PATH", help="output CSV (overrides [experiment] output)")
    common.add_argument("--threads", type=_positive_int, default=1, metavar="N", help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="uwbsim", description="TH-BPSK impulse-radio UWB link simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="Monte Carlo BER sweep")
    sub.add_parser("analytic", parents=[common], help="analytic SINR breakdown (optionally vs simulation)")
    d = sub.add_parser("dump", parents=[common], help="dump pulse, channel or template as CSV")
    d.add_argument("what", choices=("pulse", "channel", "template"))
    d.add_argument("--receiver", help="template receiver, e.g. partial or partial_0.3")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        exp = load_experiment(args.config)
        if args.seed is not None:
            exp = exp.with_seed(args.seed)
        out = args.out or exp.output
        if not out:
            raise ConfigError("[experiment] output: no output path (set it or pass --out)")
        status = 0
        if args.command == "sweep":
            text = cmd_sweep(exp, args.threads)
        elif args.command == "analytic":
            text, ok = cmd_analytic(exp)
            status = 0 if ok else EXIT_NUMERIC
        else:
            text = cmd_dump(exp, args.what, args.receiver)
        write_atomic(out, text)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    log.info("wrote %s", out)
    return status


if __name__ == "__main__":
    sys.exit(main())
