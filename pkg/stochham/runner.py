import json
import os
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.config import get_settings
from core.exceptions import AllPathsExplodedError, PreconditionError
from core.logger import get_simulation_logger
from schemas.report import DiagnosticsReport, RunReport
from schemas.run_config import CheckConfig, RunConfig, parse_run_config
from stochham.diagnostics import (
    bracket_increment_check,
    closed_form_error,
    dirichlet_certificate,
    fitted_order,
    involution_check,
    lyapunov_check,
    refinement_report,
    strong_conservation_check,
    symplectic_defect,
    weak_conservation_check,
)
from stochham.integrators import IntegratorConfig, Trajectory, tangent_flow
from stochham.montecarlo import (
    Ensemble,
    EnsembleSpec,
    StoppingTime,
    ball,
    expectation,
    run_ensemble,
    sup_exceedance_probability,
)
from stochham.noise import NoisePath
from stochham.structures import ScalarField
from stochham.systems import (
    SystemSpec,
    build_system,
    closed_form_reference,
    damped_oscillator_constants,
    oscillator_moment_ode,
)
from stochham.variational import VariationField, noether_check

logger = get_simulation_logger()

MOMENT_RESIDUAL_TOL = 1e-6
MAX_DEFAULT_PROBES = 4

DEFAULT_TOLERANCES = {
    "strong_conservation": 5e-3,
    "weak_conservation": 0.0,
    "involution": 1e-9,
    "bracket_increment": 1e-2,
    "symplectic": 1e-2,
    "lyapunov": 0.0,
    "moment_ode": 0.0,
    "closed_form": 1e-2,
    "noether": 1e-2,
}


class ExperimentRunner:
    """
    Executes one run configuration: the ensemble, its checks and an optional sweep.
    """

    def __init__(self, config: RunConfig, n_jobs: Optional[int] = None, progress: bool = True):
        """
        Initialize the experiment runner.

        Args:
            config: Validated run configuration
            n_jobs: Worker threads (defaults to the THREADS setting)
            progress: Whether to show progress bars
        """
        self.config = config
        self.n_jobs = n_jobs
        self.progress = progress
        self.settings = get_settings()

        self.summary: Optional[Dict[str, Any]] = None
        self.report: Optional[RunReport] = None
        self.ensemble: Optional[Ensemble] = None
        self.system: Optional[SystemSpec] = None
        self.sweep_rows: List[Dict[str, Any]] = []

        self._checks: Dict[str, Callable[..., DiagnosticsReport]] = {
            "strong_conservation": self._strong_conservation,
            "weak_conservation": self._weak_conservation,
            "involution": self._involution,
            "bracket_increment": self._bracket_increment,
            "symplectic": self._symplectic,
            "dirichlet": self._dirichlet,
            "lyapunov": self._lyapunov,
            "exceedance": self._exceedance,
            "moment_ode": self._moment_ode,
            "closed_form": self._closed_form,
            "noether": self._noether,
        }

    def ensemble_spec(self, config: RunConfig) -> EnsembleSpec:
        ens = config.ensemble
        cfg = IntegratorConfig(scheme=config.scheme, dt=ens.dt)
        return EnsembleSpec(
            n_paths=ens.n_paths,
            master_seed=ens.master_seed,
            T=ens.T,
            dt=ens.dt,
            initial=None if ens.initial is None else np.asarray(ens.initial, dtype=float),
            cfg=cfg,
            record_stride=ens.record_stride,
        )

    def run(self) -> RunReport:
        """Simulate, check and sweep; returns the run report."""
        config = self.config
        logger.info("Starting run of %s with %d check(s)", config.system.name, len(config.checks))

        system, spec, ensemble, reports = self._execute(config)
        self.system, self.ensemble = system, ensemble
        self.summary = self._summary(system, spec, ensemble)

        fitted: Dict[str, float] = {}
        if config.sweep is not None:
            fitted, refinement = self._run_sweep(config)
            reports.extend(refinement)

        self.report = RunReport(
            schema_version=self.settings.SUMMARY_SCHEMA_VERSION,
            system=system.name,
            generated_at=datetime.now(timezone.utc),
            passed=all(r.passed for r in reports),
            reports=reports,
            fitted_orders=fitted,
        )
        failed = [r.name for r in reports if not r.passed]
        if failed:
            logger.warning("Run finished with failed checks: %s", ", ".join(failed))
        else:
            logger.info("Run finished: all %d checks passed", len(reports))
        return self.report

    def _execute(self, config: RunConfig) -> Tuple[SystemSpec, EnsembleSpec, Ensemble, List[DiagnosticsReport]]:
        system = build_system(config.system.name, config.system.params)
        spec = self.ensemble_spec(config)
        ensemble = run_ensemble(system, spec, n_jobs=self.n_jobs, progress=self.progress)

        reports = [self._explosion_report(ensemble)]
        for check in config.checks:
            reports.append(self._run_check(check, system, spec, ensemble))
        return system, spec, ensemble, reports

    def _explosion_report(self, ensemble: Ensemble) -> DiagnosticsReport:
        return DiagnosticsReport.from_statistic(
            "exploded_fraction", ensemble.exploded_fraction, self.settings.EXPLODED_CAP,
            {"exploded_count": ensemble.exploded_count, "n_paths": ensemble.n_paths},
        )

    def _run_check(self, check: CheckConfig, system: SystemSpec, spec: EnsembleSpec,
                   ensemble: Ensemble) -> DiagnosticsReport:
        try:
            return self._checks[check.name](check, system, spec, ensemble)
        except (PreconditionError, AllPathsExplodedError) as e:
            logger.warning("Check %s refused: %s", check.name, e)
            return DiagnosticsReport(name=check.name, statistic=float("nan"),
                                     tolerance=check.tolerance or 0.0, passed=False,
                                     details={"refused": str(e)})

    # Helpers

    def _tolerance(self, check: CheckConfig) -> float:
        if check.tolerance is not None:
            return check.tolerance
        return DEFAULT_TOLERANCES.get(check.name, 0.0)

    @staticmethod
    def _observable(check: CheckConfig, system: SystemSpec) -> ScalarField:
        if check.observable is not None:
            return system.observable(check.observable)
        if "energy" in system.observables:
            return system.observables["energy"]
        return system.observable(next(iter(system.observables)))

    @staticmethod
    def _require_hamiltonian(system: SystemSpec) -> None:
        if not system.is_hamiltonian:
            raise PreconditionError(f"system '{system.name}' has no Hamiltonian structure")

    @staticmethod
    def _equilibrium(check: CheckConfig, system: SystemSpec) -> np.ndarray:
        if check.point is not None:
            return np.asarray(check.point, dtype=float)
        if not system.equilibria:
            raise PreconditionError(f"system '{system.name}' declares no equilibrium; set 'point'")
        return system.equilibria[0]

    @staticmethod
    def _stopping_times(check: CheckConfig, spec: EnsembleSpec, center: np.ndarray) -> List[StoppingTime]:
        times = check.times or [spec.T]
        taus = [StoppingTime.fixed(t) for t in times]
        if check.exit_radius is not None:
            taus.append(StoppingTime.first_exit(ball(center, check.exit_radius), max(times),
                                                label=f"exit(r={check.exit_radius:g})"))
        return taus

    @staticmethod
    def _probes(check: CheckConfig, ensemble: Ensemble) -> List[np.ndarray]:
        if check.probes:
            return [np.asarray(p, dtype=float) for p in check.probes]
        valid = np.flatnonzero(ensemble.valid_mask)[:MAX_DEFAULT_PROBES]
        return [ensemble.initial_states[0]] + [ensemble.states[i, -1] for i in valid]

    @staticmethod
    def _reference_path(system: SystemSpec, spec: EnsembleSpec,
                        ensemble: Ensemble) -> Tuple[NoisePath, Trajectory]:
        """Path 0 re-simulated on the full grid from its own seed."""
        X = system.sample_noise(spec.T, spec.dt, ensemble.seeds[0])
        return X, system.simulate(ensemble.initial_states[0], X, spec.cfg)

    # Checks

    def _strong_conservation(self, check, system, spec, ensemble):
        return strong_conservation_check(self._observable(check, system), ensemble, self._tolerance(check))

    def _weak_conservation(self, check, system, spec, ensemble):
        taus = self._stopping_times(check, spec, ensemble.initial_states[0])
        return weak_conservation_check(self._observable(check, system), ensemble, taus,
                                       self._tolerance(check))

    def _involution(self, check, system, spec, ensemble):
        self._require_hamiltonian(system)
        return involution_check(system.structure, self._observable(check, system), system.hamiltonian,
                                self._probes(check, ensemble), self._tolerance(check))

    def _bracket_increment(self, check, system, spec, ensemble):
        self._require_hamiltonian(system)
        X, traj = self._reference_path(system, spec, ensemble)
        return bracket_increment_check(system.structure, system.hamiltonian, traj, X,
                                       self._observable(check, system), self._tolerance(check))

    def _symplectic(self, check, system, spec, ensemble):
        if not system.symplectic:
            raise PreconditionError(f"system '{system.name}' is not canonical symplectic")
        X, traj = self._reference_path(system, spec, ensemble)
        J = tangent_flow(system.structure, system.hamiltonian, traj, X, spec.cfg)
        return symplectic_defect(J, system.structure.symplectic_matrix(), self._tolerance(check))

    def _dirichlet(self, check, system, spec, ensemble):
        return dirichlet_certificate(self._observable(check, system), self._equilibrium(check, system),
                                     grad_tol=check.tolerance)

    def _lyapunov(self, check, system, spec, ensemble):
        equilibrium = self._equilibrium(check, system)
        taus = self._stopping_times(check, spec, equilibrium)
        return lyapunov_check(self._observable(check, system), ensemble, taus, equilibrium,
                              self._tolerance(check))

    def _exceedance(self, check, system, spec, ensemble):
        f = self._observable(check, system)
        f0 = float(np.mean(f(ensemble.initial_states[ensemble.valid_mask])))
        if check.level is None and not f0 > 0:
            raise PreconditionError("exceedance bound needs f(z0) > 0 or an explicit level")
        level = check.level or 2.0 * f0
        horizon = check.horizon or spec.T
        estimate = sup_exceedance_probability(ensemble, f, level, horizon)
        bound = f0 / level
        tolerance = check.tolerance if check.tolerance is not None else 3.0 * estimate.stderr
        details = {"p_hat": estimate.mean, "stderr": estimate.stderr, "bound": bound,
                   "level": level, "horizon": horizon, "observable": f.label}
        return DiagnosticsReport.from_statistic("exceedance", estimate.mean - bound, tolerance, details)

    def _moment_ode(self, check, system, spec, ensemble):
        if system.name != "damped_oscillator":
            raise PreconditionError("the moment equations are known for damped_oscillator only")
        initial = ensemble.initial_states
        if not np.all(initial == initial[0]):
            raise PreconditionError("the moment equations need a fixed initial state")
        step = spec.dt * spec.record_stride
        solution = oscillator_moment_ode(system.params, spec.T, step, initial[0])
        q = system.observable("q")
        rows = []
        for index in ensemble.checkpoint_indices(self.config.checkpoints):
            t = float(ensemble.times[index])
            estimate = expectation(q, ensemble, t)
            diff = abs(estimate.mean - float(solution.q[index]))
            rows.append({"t": t, "mc_mean": estimate.mean, "ode_mean": float(solution.q[index]),
                         "excess": diff - 3.0 * estimate.stderr})
        lam, stiffness = damped_oscillator_constants(system.params)
        statistic = max(row["excess"] for row in rows)
        tolerance = self._tolerance(check)
        details = {"friction": lam, "stiffness": stiffness, "ode_residual": solution.residual,
                   "checkpoints": rows}
        passed = statistic <= tolerance and solution.residual <= MOMENT_RESIDUAL_TOL
        return DiagnosticsReport.from_statistic("moment_ode", statistic, tolerance, details, passed)

    def _closed_form(self, check, system, spec, ensemble):
        X, traj = self._reference_path(system, spec, ensemble)
        reference = closed_form_reference(system, X, ensemble.initial_states[0])
        return closed_form_error(traj, reference, self._tolerance(check))

    def _noether(self, check, system, spec, ensemble):
        if not system.symplectic or system.dim != 4:
            raise PreconditionError("the rotation symmetry needs a 4-dimensional canonical chart")
        return noether_check(system.structure, system.hamiltonian, VariationField.rotation_generator(),
                             ensemble, self._probes(check, ensemble), self._tolerance(check))

    # Artifacts

    def _summary(self, system: SystemSpec, spec: EnsembleSpec, ensemble: Ensemble) -> Dict[str, Any]:
        names = self.config.observables or list(system.observables)
        observables = {name: system.observable(name) for name in names}
        summary = {
            "schema_version": self.settings.SUMMARY_SCHEMA_VERSION,
            "system": system.name,
            "params": dict(system.params),
            "scheme": spec.cfg.scheme.value,
            "T": spec.T,
            "master_seed": spec.master_seed,
            "record_stride": spec.record_stride,
        }
        summary.update(ensemble.summary(observables, self.config.checkpoints))
        return summary

    def _run_sweep(self, config: RunConfig) -> Tuple[Dict[str, float], List[DiagnosticsReport]]:
        sweep = config.sweep
        logger.info("Sweeping %s over %d value(s)", sweep.parameter, len(sweep.values))
        statistics: Dict[str, List[float]] = {}
        labels = self._labels([None] + list(config.checks))
        for value in sweep.values:
            variant = self._variant(config, sweep.parameter, value)
            _, _, ensemble, reports = self._execute(variant)
            row: Dict[str, Any] = {"parameter": sweep.parameter, "value": value,
                                   "exploded_count": ensemble.exploded_count}
            for label, report in zip(labels, reports):
                row[f"{label}_statistic"] = report.statistic
                row[f"{label}_passed"] = report.passed
                statistics.setdefault(label, []).append(report.statistic)
            self.sweep_rows.append(row)

        fitted: Dict[str, float] = {}
        refinement: List[DiagnosticsReport] = []
        if sweep.parameter != "dt" or len(sweep.values) < 2:
            return fitted, refinement
        for label, check in zip(labels[1:], config.checks):
            series = statistics.get(label, [])
            if len(series) != len(sweep.values) or not all(np.isfinite(series)) or min(series) <= 0:
                continue
            fitted[label] = fitted_order(sweep.values, series)
            if check.min_order is not None:
                refinement.append(refinement_report(label, sweep.values, series, check.min_order))
        return fitted, refinement

    @staticmethod
    def _variant(config: RunConfig, parameter: str, value: float) -> RunConfig:
        data = config.model_dump()
        data["sweep"] = None
        if parameter in ("dt", "n_paths"):
            data["ensemble"][parameter] = int(value) if parameter == "n_paths" else value
        else:
            data["system"]["params"][parameter] = value
        return parse_run_config(data)

    @staticmethod
    def _labels(items: Sequence[Any]) -> List[str]:
        """Report names, suffixed with their position when a name repeats."""
        names = ["exploded_fraction" if item is None else item.name for item in items]
        return [name if names.count(name) == 1 else f"{name}_{i}" for i, name in enumerate(names)]

    def trajectories_frame(self, cap: Optional[int] = None) -> pd.DataFrame:
        """Long-format states of the first ``cap`` paths."""
        if cap is None:
            cap = self.config.output.trajectory_cap
        if cap is None:
            cap = self.settings.TRAJECTORY_CAP
        frames = []
        labels = self.system.state_labels
        for i in range(min(cap, self.ensemble.n_paths)):
            frame = self.ensemble.trajectory(i).to_frame()
            if labels:
                frame = frame.rename(columns={f"z{k + 1}": name for k, name in enumerate(labels)})
            frame.insert(0, "path", i)
            frames.append(frame)
        if not frames:
            return pd.DataFrame(columns=["path", "t"])
        return pd.concat(frames, ignore_index=True)

    def save_results(self, path: str) -> List[str]:
        """
        Write summary.json, report.json, trajectories.csv and sweep.csv.

        Args:
            path: Output directory

        Returns:
            Paths of the written files
        """
        if self.report is None:
            raise RuntimeError("run() must be called before save_results()")
        os.makedirs(path, exist_ok=True)
        written = []

        summary_path = os.path.join(path, "summary.json")
        with open(summary_path, "w", encoding="utf-8") as f:
            json.dump(self.summary, f, indent=2, sort_keys=True)
            f.write("\n")
        written.append(summary_path)

        report_path = os.path.join(path, "report.json")
        with open(report_path, "w", encoding="utf-8") as f:
            f.write(self.report.model_dump_json(indent=2))
            f.write("\n")
        written.append(report_path)

        if self.config.output.trajectories:
            trajectories_path = os.path.join(path, "trajectories.csv")
            self.trajectories_frame().to_csv(trajectories_path, index=False, float_format="%.17g")
            written.append(trajectories_path)

        if self.sweep_rows:
            sweep_path = os.path.join(path, "sweep.csv")
            pd.DataFrame(self.sweep_rows).to_csv(sweep_path, index=False, float_format="%.17g")
            written.append(sweep_path)

        logger.info("Results saved to %s", path)
        return written
