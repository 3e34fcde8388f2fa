"""Command-line interface: one subcommand per analysis."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import ConfigError, RunConfig, parse_config
from .experiments import (
    Problem, coherence_trials, configured_pulse, entropy_report, evolve_report,
    level_diagram_report, load_best_pulse, noise_seed, optimize_ghz, quench_scan, spectrum_report,
    write_noise, write_pulse,
)
from .noise import NoiseSpec, ensemble_fidelity
from .observables import fidelity, make_target

log = logging.getLogger("rydberg_ghz")

COMMANDS = ("optimize", "evolve", "spectrum", "entropy", "level-diagram", "quench-scan",
            "coherence-bound", "noise-eval")


class UsageError(ValueError):
    pass


def parse_range(text: str) -> np.ndarray:
    """``START:STOP:STEP`` with STOP included when it lies on the grid."""
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"expected START:STOP:STEP, got {text!r}") from None
    if step <= 0 or stop < start:
        raise UsageError(f"empty range {text!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(count), 12)


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="seed for every random choice (default: bo.seed)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")


def _pulse_source(p):
    p.add_argument("--pulse-from", type=Path, default=None,
                   help="run directory whose summary.json supplies the pulse (default: config 'pulse')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rydberg-ghz", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("optimize", help="Bayesian optimization of the control pulse")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from an existing trace.csv")

    for name, text in (("evolve", "simulate a pulse and record the GHZ observables"),
                       ("spectrum", "instantaneous spectra along a pulse"),
                       ("entropy", "entanglement entropy along a pulse")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _pulse_source(p)

    p = sub.add_parser("level-diagram", help="zero-drive level lines and crossings")
    _common(p)
    p.add_argument("--delta", default=None, help="detuning range START:STOP in rad/us")

    p = sub.add_parser("quench-scan", help="fidelity versus g = Omega_avg / V0")
    _common(p)
    p.add_argument("--g", default="0.2:2.0:0.1", help="START:STOP:STEP")

    p = sub.add_parser("coherence-bound", help="Ramsey coherence bound on random pulses")
    _common(p)
    p.add_argument("--trials", type=int, default=100)

    p = sub.add_parser("noise-eval", help="ensemble fidelity of a pulse under control noise")
    _common(p)
    _pulse_source(p)
    return parser


def _pulse(args, config: RunConfig):
    if getattr(args, "pulse_from", None) is not None:
        return load_best_pulse(args.pulse_from, config.duration_us)
    return configured_pulse(config)


def dispatch(args) -> dict:
    config = parse_config(args.config)
    seed = config.bo.seed if args.seed is None else args.seed
    if seed < 0:
        raise UsageError("--seed must be non-negative")
    threads = max(1, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = io.now_iso()
    digest = io.config_hash(config.identity())
    cmd = args.command
    if cmd == "optimize":
        res = optimize_ghz(config, out, seed=seed, threads=threads, resume=args.resume)
        return {"best_fidelity": res.best_fidelity, "out": str(out)}
    io.write_json(out / "config.json", config.echo())
    summary: dict = {"out": str(out)}
    if cmd == "evolve":
        pulse = _pulse(args, config)
        traj = evolve_report(config, pulse, out)
        summary["final_fidelity"] = fidelity(traj.final, make_target(config.target, config.lattice_spec()))
        summary["n_records"] = len(traj.times)
    elif cmd == "spectrum":
        pulse = _pulse(args, config)
        write_pulse(out / "pulse.csv", pulse)
        summary["n_snapshots"] = len(spectrum_report(config, pulse, out))
    elif cmd == "entropy":
        pulse = _pulse(args, config)
        rep = entropy_report(config, pulse, out_dir=out)
        summary["final_bits"] = rep.entropies[:, -1].tolist()
        summary["slopes_bits_per_us"] = rep.slopes.tolist()
    elif cmd == "level-diagram":
        rng = None
        if args.delta:
            parts = [float(v) for v in args.delta.split(":")]
            if len(parts) != 2 or parts[1] <= parts[0]:
                raise UsageError("--delta expects START:STOP with START < STOP")
            rng = tuple(parts)
        rep = level_diagram_report(config, rng, out)
        summary["crossings"] = {c.name: c.delta for c in rep.crossings}
    elif cmd == "quench-scan":
        scan = quench_scan(config, parse_range(args.g), out, threads)
        summary["best_g"] = scan.best_g
        summary["n_points"] = len(scan.g)
    elif cmd == "coherence-bound":
        if args.trials < 1:
            raise UsageError("--trials must be positive")
        results = coherence_trials(config, args.trials, seed, out, threads)
        summary["violations"] = int(sum(r.bound.bound > 2 * r.true_coherence**2 + 1e-10 for r in results))
    elif cmd == "noise-eval":
        problem = Problem.from_config(config)
        spec = problem.noise_spec() or NoiseSpec()
        pulse = _pulse(args, config)
        ens = ensemble_fidelity(problem.terms, pulse, problem.target, spec, problem.settings(),
                                noise_seed(seed), threads)
        write_noise(out, ens)
        summary["ensemble_fidelity"] = ens.mean
    io.write_manifest(out, config_digest=digest, seed=seed, command=cmd, started=started, threads=threads)
    return summary


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = dispatch(args)
    except ConfigError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 1
    except (UsageError, ValueError, RuntimeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
