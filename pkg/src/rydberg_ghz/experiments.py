"""End-to-end scenarios: optimization, scans and diagnostics with file output."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .bayesopt import OptimizationTrace, SearchSpace, TraceRecord, run_bo
from .config import RunConfig
from .dynamics import EvolveSettings, HamiltonianTerms, Trajectory, build_hamiltonian, evolve, final_state
from .lattice import InteractionTable, LatticeSpec, lattice_interactions
from .noise import EnsembleResult, NoiseSpec, ensemble_fidelity
from .observables import (
    GhzTarget, ParallelLinesError, SpectrumSnapshot, entanglement_entropy, fidelity,
    find_crossing, ghz_elements, half_partition, instantaneous_spectrum, level_diagram,
    make_target, phi_target, psi_target,
)
from .pulses import (
    HZ_TO_RAD_PER_US, PulseParams, PulseShape, QuenchProfile, QuenchPulse, SplinePulse,
)

log = logging.getLogger(__name__)

PARAM_NAMES = ("omega_1", "omega_2", "omega_3", "delta_1", "delta_2", "delta_3")
TRACE_HEADER = ("iteration", *PARAM_NAMES, "fidelity", "best_so_far", "phase")
PULSE_GRID_POINTS = 201


@dataclass(eq=False)
class Problem:
    """Everything derived from a config that the scenarios share."""

    config: RunConfig
    spec: LatticeSpec
    interactions: InteractionTable
    terms: HamiltonianTerms
    target: GhzTarget

    @classmethod
    def from_config(cls, config: RunConfig) -> "Problem":
        spec = config.lattice_spec()
        table = lattice_interactions(spec)
        terms = build_hamiltonian(table, max_qubits=config.max_qubits)
        return cls(config, spec, table, terms, make_target(config.target, spec))

    @property
    def n(self) -> int:
        return self.spec.n_sites

    @property
    def v0(self) -> float:
        """Largest coupling in rad/us."""
        return self.interactions.v0 * HZ_TO_RAD_PER_US

    @property
    def phi_crossing(self) -> float:
        """Detuning where all-down and all-up are degenerate, rad/us."""
        if self.n < 2:
            return 0.0
        phi = phi_target(self.n)
        return find_crossing(self.terms, phi.alpha_index, phi.beta_index)

    def search_space(self) -> SearchSpace:
        s = self.config.search
        if s.omega_bounds is not None:
            om = s.omega_bounds
        else:
            om = (0.0, s.omega_max_factor * self.v0)
        if s.delta_bounds is not None:
            de = s.delta_bounds
        else:
            width = s.delta_factor * abs(self.phi_crossing)
            de = (-width, width)
        if not om[1] > om[0] or not de[1] > de[0]:
            raise ValueError("degenerate search bounds; set search.omega_bounds/delta_bounds explicitly")
        lower = [om[0]] * 3 + [de[0]] * 3
        upper = [om[1]] * 3 + [de[1]] * 3
        return SearchSpace(np.array(lower), np.array(upper), PARAM_NAMES)

    def settings(self, record: bool = False) -> EvolveSettings:
        return self.config.evolve.settings(record)

    def pulse(self, x) -> SplinePulse:
        return SplinePulse(PulseParams.from_vector(x, self.config.duration_us))

    def noise_spec(self) -> NoiseSpec | None:
        n = self.config.noise
        return None if n is None else NoiseSpec(n.level, n.n_members)


def _map(threads: int):
    def mapper(fn, items):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]
    return mapper


def noise_seed(seed: int) -> int:
    """Ensemble seed shared by every objective evaluation of one run."""
    return int(np.random.SeedSequence([seed, 0x7E5]).generate_state(1)[0])


def make_objective(problem: Problem, seed: int, threads: int = 1, noisy: bool | None = None):
    """Final-time fidelity, or the ensemble fidelity when noise is configured."""
    spec = problem.noise_spec()
    if noisy is None:
        noisy = spec is not None
    settings = problem.settings()
    if noisy:
        if spec is None:
            spec = NoiseSpec()
        nseed = noise_seed(seed)

        def objective(x):
            return ensemble_fidelity(problem.terms, problem.pulse(x), problem.target, spec,
                                     settings, nseed, threads).mean
    else:
        def objective(x):
            return fidelity(final_state(problem.terms, problem.pulse(x), settings), problem.target)
    return objective


# --- trace persistence -----------------------------------------------------


def trace_rows(trace: OptimizationTrace):
    for r in trace.records:
        yield (r.iteration, *r.params, r.value, r.best_so_far, r.phase)


def write_trace(path, trace: OptimizationTrace):
    return io.write_csv(path, TRACE_HEADER, trace_rows(trace))


def load_trace(path) -> OptimizationTrace:
    trace = OptimizationTrace()
    for row in io.read_csv(path):
        params = tuple(float(row[name]) for name in PARAM_NAMES)
        trace.records.append(TraceRecord(
            int(row["iteration"]), params, float(row["fidelity"]), float(row["best_so_far"]),
            0.0, row["phase"],
        ))
    return trace


# --- trajectories ----------------------------------------------------------


def trajectory_rows(traj: Trajectory, target: GhzTarget):
    for t, psi in zip(traj.times, traj.states):
        raa, rbb, rab = ghz_elements(psi, target)
        yield t, fidelity(psi, target), raa, rbb, abs(rab)


TRAJECTORY_HEADER = ("t_us", "fidelity", "rho_aa", "rho_bb", "abs_rho_ab")
PULSE_HEADER = ("t_us", "omega_rad_per_us", "delta_rad_per_us")


def pulse_rows(pulse: PulseShape, n_points: int = PULSE_GRID_POINTS):
    t, om, de = pulse.sample(n_points)
    return zip(t, om, de)


def write_pulse(path, pulse: PulseShape):
    return io.write_csv(path, PULSE_HEADER, pulse_rows(pulse))


def write_trajectory(path, traj: Trajectory, target: GhzTarget):
    return io.write_csv(path, TRAJECTORY_HEADER, trajectory_rows(traj, target))


# --- scenarios -------------------------------------------------------------


@dataclass(eq=False)
class OptimizeResult:
    trace: OptimizationTrace
    best_params: np.ndarray
    best_fidelity: float
    pulse: SplinePulse
    trajectory: Trajectory
    final_fidelity: float
    ensemble: EnsembleResult | None = None
    files: dict = field(default_factory=dict)


def optimize_ghz(config: RunConfig, out_dir=None, seed: int | None = None, threads: int = 1,
                 resume: bool = False, initial_points=None) -> OptimizeResult:
    """Bayesian optimization of the spline pulse followed by a recorded re-simulation.

    With ``resume`` an existing ``trace.csv`` in ``out_dir`` is continued.
    ``initial_points`` replace the first entries of the initial design.
    """
    problem = Problem.from_config(config)
    seed = config.bo.seed if seed is None else seed
    space = problem.search_space()
    objective = make_objective(problem, seed, threads)
    out = Path(out_dir) if out_dir is not None else None
    started = io.now_iso()
    trace = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "config.json", config.echo())
        if resume and (out / "trace.csv").exists():
            trace = load_trace(out / "trace.csv")
            log.info("resuming from %d recorded evaluations", len(trace.records))

    def checkpoint(tr):
        if out is not None:
            write_trace(out / "trace.csv", tr)

    bo = config.bo
    trace = run_bo(
        objective, space, budget=bo.budget, n_init=bo.n_init, seed=seed, xi=bo.xi,
        n_restarts=bo.n_restarts, n_candidates=bo.n_candidates, trace=trace,
        callback=checkpoint, initial_points=initial_points, init_map=_map(threads),
    )
    best = trace.best_params
    pulse = problem.pulse(best)
    traj = evolve(problem.terms, pulse, problem.settings(record=True))
    result = OptimizeResult(trace, best, trace.best_value, pulse, traj,
                            fidelity(traj.final, problem.target))
    noise = problem.noise_spec()
    if noise is not None:
        result.ensemble = ensemble_fidelity(problem.terms, pulse, problem.target, noise,
                                            problem.settings(), noise_seed(seed), threads)
    if out is not None:
        write_trace(out / "trace.csv", trace)
        write_pulse(out / "pulse.csv", pulse)
        write_trajectory(out / "trajectory.csv", traj, problem.target)
        summary = {
            "best_params": dict(zip(PARAM_NAMES, map(float, best))),
            "best_fidelity": trace.best_value,
            "final_fidelity": result.final_fidelity,
            "duration_us": config.duration_us,
            "seed": seed,
            "config_hash": io.config_hash(config.identity()),
            "n_evaluations": len(trace.records),
            "n_failed": int(sum(r.failed for r in trace.records)),
        }
        if result.ensemble is not None:
            write_noise(out, result.ensemble)
            summary["ensemble_fidelity"] = result.ensemble.mean
        io.write_json(out / "summary.json", summary)
        io.write_manifest(out, config_digest=summary["config_hash"], seed=seed, command="optimize",
                          started=started, threads=threads)
    return result


def write_noise(out: Path, ens: EnsembleResult):
    rows = ((k, e[0], e[1], f, int(fl)) for k, (e, f, fl) in
            enumerate(zip(ens.epsilons, ens.member_fidelities, ens.failed)))
    io.write_csv(out / "noise.csv", ("member", "epsilon_omega", "epsilon_delta", "fidelity", "failed"), rows)
    io.write_json(out / "noise.json", {"mean": ens.mean, "variance": ens.variance,
                                       "n_members": len(ens.member_fidelities),
                                       "n_failed": int(ens.failed.sum())})


def load_best_pulse(run_dir, duration: float) -> SplinePulse:
    import json

    summary = json.loads((Path(run_dir) / "summary.json").read_text())
    x = [summary["best_params"][name] for name in PARAM_NAMES]
    return SplinePulse(PulseParams.from_vector(x, duration))


def configured_pulse(config: RunConfig) -> SplinePulse:
    if config.pulse is None:
        raise ValueError("no pulse given: add a 'pulse' section or pass a run directory")
    return SplinePulse(PulseParams(config.pulse.omega_knots, config.pulse.delta_knots, config.duration_us))


def evolve_report(config: RunConfig, pulse: PulseShape, out_dir=None) -> Trajectory:
    problem = Problem.from_config(config)
    traj = evolve(problem.terms, pulse, problem.settings(record=True))
    if out_dir is not None:
        out = Path(out_dir)
        write_pulse(out / "pulse.csv", pulse)
        write_trajectory(out / "trajectory.csv", traj, problem.target)
    return traj


@dataclass(frozen=True, eq=False)
class QuenchScan:
    g: np.ndarray
    fidelity: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray
    delta: float

    @property
    def best_g(self) -> float:
        return float(self.g[int(np.argmax(self.fidelity))])


def quench_pulse(problem: Problem, g: float) -> QuenchPulse:
    q = problem.config.quench
    om = g * problem.v0
    profile = QuenchProfile(om * (1 + q.split), om * (1 - q.split), problem.config.duration_us,
                            q.ramp_start, q.ramp_end)
    return QuenchPulse(profile, q.delta_factor * problem.phi_crossing)


def quench_scan(config: RunConfig, g_values, out_dir=None, threads: int = 1) -> QuenchScan:
    """Final fidelity of quench-hold-quench pulses with mean drive ``g * V0``."""
    g_values = np.asarray(g_values, dtype=float)
    if np.any(g_values <= 0):
        raise ValueError("g values must be positive")
    problem = Problem.from_config(config)
    settings = problem.settings()

    def run(g):
        pulse = quench_pulse(problem, g)
        return fidelity(final_state(problem.terms, pulse, settings), problem.target)

    fids = np.array(_map(threads)(run, list(g_values)))
    pulses = [quench_pulse(problem, g) for g in g_values]
    scan = QuenchScan(g_values, fids, np.array([p.profile.omega1 for p in pulses]),
                      np.array([p.profile.omega2 for p in pulses]), pulses[0].delta_value)
    if out_dir is not None:
        rows = zip(scan.g, scan.omega1, scan.omega2, [scan.delta] * len(g_values), scan.fidelity)
        io.write_csv(Path(out_dir) / "quench.csv", ("g", "omega1_rad_per_us", "omega2_rad_per_us",
                                                    "delta_rad_per_us", "fidelity"), rows)
    return scan


def snapshot_stride(n_steps: int, n_snapshots: int) -> int:
    return max(1, n_steps // max(1, n_snapshots))


def spectrum_report(config: RunConfig, pulse: PulseShape, out_dir=None,
                    n_snapshots: int | None = None) -> list[SpectrumSnapshot]:
    """Instantaneous spectra at evenly spaced times along the evolution."""
    problem = Problem.from_config(config)
    n_snap = n_snapshots or config.analysis.spectrum_snapshots
    base = problem.settings()
    settings = EvolveSettings(base.n_steps, base.krylov_dim_max, base.krylov_tol,
                              snapshot_stride(base.n_steps, n_snap))
    traj = evolve(problem.terms, pulse, settings)
    snaps = []
    for t, psi in zip(traj.times, traj.states):
        om, de = pulse(t)
        snaps.append(instantaneous_spectrum(problem.terms, float(om), float(de), psi, t))
    if out_dir is not None:
        rows = ((s.time, k, e, m, p) for s in snaps
                for k, (e, m, p) in enumerate(zip(s.energies, s.magnetizations, s.populations)))
        io.write_csv(Path(out_dir) / "spectrum.csv",
                     ("t_us", "k", "energy_rad_per_us", "magnetization", "population"), rows)
    return snaps


@dataclass(frozen=True, eq=False)
class EntropyReport:
    times: np.ndarray
    partitions: list
    entropies: np.ndarray  # (n_partitions, n_times)
    slopes: np.ndarray  # bits/us fitted over the slope window


def fit_slope(times, values, duration, window=(0.1, 0.4)) -> float:
    sel = (times >= window[0] * duration - 1e-12) & (times <= window[1] * duration + 1e-12)
    if sel.sum() < 2:
        raise ValueError("slope window holds fewer than two samples")
    return float(np.polyfit(times[sel], values[sel], 1)[0])


def entropy_report(config: RunConfig, pulse: PulseShape, partitions=None, out_dir=None) -> EntropyReport:
    problem = Problem.from_config(config)
    if partitions is None:
        partitions = config.analysis.entropy_partitions or [half_partition(problem.n)]
    settings = problem.settings(record=True)
    if settings.record_stride == 0:
        settings = EvolveSettings(settings.n_steps, settings.krylov_dim_max, settings.krylov_tol,
                                  snapshot_stride(settings.n_steps, 100))
    traj = evolve(problem.terms, pulse, settings)
    ent = np.array([[entanglement_entropy(psi, part, problem.n) for psi in traj.states]
                    for part in partitions])
    window = tuple(config.analysis.slope_window)
    slopes = np.array([fit_slope(traj.times, e, pulse.duration, window) for e in ent])
    report = EntropyReport(traj.times, [list(p) for p in partitions], ent, slopes)
    if out_dir is not None:
        rows = ((t, pid, ent[pid, k]) for pid in range(len(partitions))
                for k, t in enumerate(traj.times))
        io.write_csv(Path(out_dir) / "entropy.csv", ("t_us", "partition_id", "bits"), rows)
        io.write_json(Path(out_dir) / "entropy.json",
                      {"partitions": report.partitions, "slopes_bits_per_us": slopes})
    return report


@dataclass(frozen=True)
class Crossing:
    name: str
    b1: int
    b2: int
    delta: float | None

    @property
    def crosses(self) -> bool:
        return self.delta is not None


@dataclass(frozen=True, eq=False)
class LevelReport:
    deltas: np.ndarray
    states: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    relevant: np.ndarray
    energies: np.ndarray  # (len(deltas), len(states))
    crossings: list


def _crossing(terms, name, b1, b2) -> Crossing:
    try:
        return Crossing(name, b1, b2, find_crossing(terms, b1, b2))
    except ParallelLinesError:
        return Crossing(name, b1, b2, None)


def level_diagram_report(config: RunConfig, delta_range=None, out_dir=None,
                         all_states_limit: int = 8) -> LevelReport:
    """Zero-drive level lines with the GHZ-component crossings marked.

    Lattices above ``all_states_limit`` atoms keep only the flagged states
    (initial state and GHZ components) on the evaluation grid; slopes and
    intercepts are reported for every state.
    """
    problem = Problem.from_config(config)
    terms = problem.terms
    n = problem.n
    if delta_range is None:
        w = 1.5 * abs(problem.phi_crossing) or 1.0
        delta_range = (-w, w)
    deltas = np.linspace(delta_range[0], delta_range[1], config.analysis.level_points)
    diagram = level_diagram(terms, deltas)
    phi = phi_target(n)
    flagged = {0, phi.beta_index}
    crossings = [_crossing(terms, "phi", phi.alpha_index, phi.beta_index)]
    if n >= 2:
        psi = psi_target(problem.spec)
        flagged |= {psi.alpha_index, psi.beta_index}
        crossings += [
            _crossing(terms, "psi_alpha_initial", 0, psi.alpha_index),
            _crossing(terms, "psi_beta_initial", 0, psi.beta_index),
            _crossing(terms, "psi", psi.alpha_index, psi.beta_index),
        ]
    relevant = np.zeros(terms.dim, dtype=bool)
    relevant[sorted(flagged)] = True
    states = np.arange(terms.dim) if n <= all_states_limit else np.flatnonzero(relevant)
    report = LevelReport(deltas, states, diagram.slopes, diagram.intercepts, relevant,
                         diagram.energies[:, states], crossings)
    if out_dir is not None:
        out = Path(out_dir)
        io.write_csv(out / "levels.csv",
                     ("basis", "bits", "magnetization", "slope", "intercept_rad_per_us", "relevant"),
                     ((b, format(b, f"0{n}b")[::-1], int(terms.m[b]), diagram.slopes[b],
                       diagram.intercepts[b], bool(relevant[b])) for b in range(terms.dim)))
        io.write_csv(out / "levels_grid.csv", ("delta_rad_per_us", *[f"E_{b}" for b in states]),
                     ([d, *row] for d, row in zip(deltas, report.energies)))
        io.write_csv(out / "crossings.csv", ("name", "b1", "b2", "delta_rad_per_us", "crosses"),
                     ((c.name, c.b1, c.b2, "" if c.delta is None else c.delta, c.crosses)
                      for c in crossings))
    return report


def coherence_trials(config: RunConfig, n_trials: int, seed: int, out_dir=None, threads: int = 1):
    """Ramsey bound against the exact coherence for random pulses and rotations."""
    from .coherence import ramsey_bound_experiment

    problem = Problem.from_config(config)
    space = problem.search_space()
    settings = problem.settings()

    def trial(k):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, 0xC0]))
        x = space.from_unit(rng.random(space.dim))
        theta = float(rng.uniform(0, np.pi))
        phase = float(rng.uniform(0, 2 * np.pi))
        return ramsey_bound_experiment(problem.terms, problem.pulse(x), problem.target, theta,
                                       settings, phase)

    results = _map(threads)(trial, list(range(n_trials)))
    if out_dir is not None:
        rows = ((k, r.populations_ti[0], r.populations_ti[1], r.populations_tf[0],
                 r.populations_tf[1], r.theta, r.phase, r.bound.bound, r.bound.min_coherence,
                 r.true_coherence) for k, r in enumerate(results))
        io.write_csv(Path(out_dir) / "coherence.csv",
                     ("trial", "s_alpha_ti", "s_beta_ti", "s_alpha_tf", "s_beta_tf", "theta",
                      "phase", "bound", "min_coherence", "true_coherence"), rows)
    return results
