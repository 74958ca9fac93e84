"""
Experiment Runner
Dispatches a resolved ExperimentConfig to its subcommand, writes every table
through the ArtifactWriter and maps failures to exit statuses.
"""

from typing import Any, Callable, Dict
import logging
import math

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from workbench import __version__, bohmian, correlations, ensembles, lhv, random_streams
from workbench.artifact_writer import ArtifactWriter, line_figure
from workbench.errors import ConfigError, ConstraintViolation, NumericGuardError, WorkbenchError
from workbench.experiment_config import ExperimentConfig
from workbench.spin_algebra import Direction
from workbench.wave_presets import Scenario, build_preset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

TRAJECTORY_PLOT_LIMIT = 100


def exit_status_for(exc: Exception) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (NumericGuardError, ConstraintViolation)):
        return EXIT_NUMERIC
    return EXIT_ERROR


def _field_frame(axes, values: np.ndarray) -> pd.DataFrame:
    """Node-ordered table x[,y],value."""
    mesh = np.meshgrid(*axes, indexing="ij")
    names = ["x", "y"][: len(axes)]
    data = {name: coord.ravel() for name, coord in zip(names, mesh)}
    data["value"] = np.asarray(values, dtype=float).ravel()
    return pd.DataFrame(data)


class ExperimentRunner:
    """Runs one configured experiment and records its artifacts"""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.writer = ArtifactWriter(cfg.out_dir, write_dat=cfg["dat"], write_plots=cfg["plots"])
        self._handlers: Dict[str, Callable[[], Dict[str, Any]]] = {
            "chsh-scan": self.chsh_scan,
            "trials": self.trials,
            "lhv-sim": self.lhv_sim,
            "dispersion-check": self.dispersion_check,
            "bohm-evolve": self.bohm_evolve,
        }

    def resolved(self) -> Dict[str, Any]:
        return {**self.cfg.to_manifest(), "units": {"hbar": self.cfg["hbar"], "mass": self.cfg["mass"]}}

    def run(self) -> int:
        status = EXIT_OK
        try:
            logger.info(f"Running {self.cfg.subcommand} with {self.cfg.params}")
            summary = self._handlers[self.cfg.subcommand]()
            self.writer.write_json("summary", summary)
        except WorkbenchError as e:
            status = exit_status_for(e)
            key = getattr(e, "key", None)
            logger.error(f"{self.cfg.subcommand} failed ({type(e).__name__}{', key ' + key if key else ''}): {e}")
        except Exception as e:
            status = EXIT_ERROR
            logger.error(f"{self.cfg.subcommand} failed unexpectedly: {e}", exc_info=True)
        finally:
            self.writer.write_manifest(self.resolved(), __version__, status)
        return status

    # --- subcommands -----------------------------------------------------------

    def chsh_scan(self) -> Dict[str, Any]:
        frame = correlations.chsh_scan(self.cfg["theta_steps"])
        self.writer.write_table("chsh_scan", frame)
        self.writer.write_figure(
            "chsh_scan",
            line_figure(frame, "theta", ["singlet", "mixture", "mixture_lhs"], "CHSH value vs theta", y_title="CHSH"),
        )
        best = frame.loc[frame["singlet"].idxmax()]
        return {
            "max_singlet": float(best["singlet"]),
            "theta_at_max_singlet": float(best["theta"]),
            "max_mixture": float(frame["mixture"].max()),
            "max_mixture_lhs": float(frame["mixture_lhs"].max()),
        }

    def trials(self) -> Dict[str, Any]:
        p = self.cfg
        model = correlations.CorrelationModel(p["model"])
        a = Direction.from_angles(p["theta_a"], p["phi_a"])
        b = Direction.from_angles(p["theta_b"], p["phi_b"])
        sample = correlations.sample_trials(model, a, b, p["n"], p["seed"], threads=p["threads"],
                                            block_size=p["block_size"])
        self.writer.write_table("trials", sample.to_frame())
        exact = model.correlation(a, b)
        z = (sample.correlation - exact) / sample.stderr if sample.stderr and sample.stderr > 0 else None
        return {
            "model": model.value,
            "n": sample.n,
            "correlation": sample.correlation,
            "stderr": sample.stderr,
            "exact": exact,
            "z_score": z,
        }

    def lhv_sim(self) -> Dict[str, Any]:
        p = self.cfg
        model = lhv.get_model(p["model"])
        thetas = np.linspace(0.0, math.pi, p["theta_steps"])
        curve = lhv.correlation_curve(model, thetas, p["n"], p["seed"], threads=p["threads"],
                                      block_size=p["block_size"])
        bound = lhv.bound_check(model, p["settings"], p["n"], p["seed"], threads=p["threads"],
                                sigmas=p["sigmas"], block_size=p["block_size"])
        bell = lhv.chsh_of_model(model, correlations.bell_config(math.pi / 4.0), p["n"], p["seed"],
                                 threads=p["threads"], block_size=p["block_size"])
        self.writer.write_table("lhv_correlation", curve)
        self.writer.write_table("lhv_bound_check", bound)
        columns = ["mean"] + (["closed_form"] if "closed_form" in curve else [])
        self.writer.write_figure(
            "lhv_correlation",
            line_figure(curve, "theta", columns, f"{model.name} model correlation", error_column="stderr",
                        y_title="P(a, b)"),
        )
        violations = int((~bound["within_bound"]).sum())
        return {
            "model": model.name,
            "max_chsh": float(bound["value"].max()),
            "violations": violations,
            "chsh_at_pi_over_4": bell.mean,
            "chsh_at_pi_over_4_stderr": bell.stderr,
        }

    def _ensemble(self) -> ensembles.TrajectoryEnsemble:
        p = self.cfg
        rng = random_streams.block_generator(p["seed"], random_streams.STREAM_SETTINGS, 1)
        x0 = rng.uniform(-1.0, 1.0, p["particles"])
        p0 = rng.uniform(-1.0, 1.0, p["particles"])
        if p["ensemble"] == "free":
            return ensembles.TrajectoryEnsemble.free(x0, p0, mass=self.cfg["mass"], hbar=self.cfg["hbar"])
        return ensembles.TrajectoryEnsemble.harmonic(x0, p0, mass=self.cfg["mass"], hbar=self.cfg["hbar"])

    def dispersion_check(self) -> Dict[str, Any]:
        p = self.cfg
        gaps = ensembles.gap_table(p["d"])
        self.writer.write_table("gap_table", gaps)

        e = self._ensemble()
        t = p["t"]
        mass = self.cfg["mass"]
        observables = {
            "x": lambda x, q: x,
            "p": lambda x, q: q,
            "x2": lambda x, q: x**2,
            "kinetic": lambda x, q: q**2 / (2.0 * mass),
        }
        frames, extrapolants = [], {}
        for name, f in observables.items():
            result = ensembles.classical_dispersion(e, t, f, eps_sequence=p["eps"])
            frames.append(result.to_frame(name))
            extrapolants[name] = result.extrapolant
        dispersion = pd.concat(frames, ignore_index=True)
        self.writer.write_table("dispersion", dispersion)

        x_now, p_now = e.state_at(t)
        readout = ensembles.momentum_readout(e, t, x_now, eps=p["eps"][-1])
        momenta = pd.DataFrame({
            "particle": np.arange(e.n_particles),
            "p_path": p_now[:, 0],
            "p_readout": readout[:, 0],
        })
        self.writer.write_table("momentum_readout", momenta)

        eps = p["eps"][0]
        limit_first = ensembles.ensemble_trace(e, t, eps)
        integrate_first = ensembles.displacement_trace(e, t, eps)
        traces = pd.DataFrame([{
            "eps": eps,
            "ensemble_trace": limit_first,
            "displacement_trace_real": integrate_first.real,
            "displacement_trace_imag": integrate_first.imag,
        }])
        self.writer.write_table("trace_check", traces)

        fig = go.Figure()
        for name, group in dispersion.groupby("observable", sort=False):
            fig.add_trace(go.Scatter(x=group["eps"], y=group["dispersion"], mode="lines+markers", name=name))
        fig.update_layout(title="Dispersion vs eps", xaxis_title="eps", yaxis_title="dispersion", height=450,
                          margin=dict(l=40, r=20, t=50, b=40))
        self.writer.write_figure("dispersion", fig)

        return {
            "gaps": dict(zip(gaps["d"].tolist(), gaps["gap"].tolist())),
            "extrapolated_dispersion": extrapolants,
            "max_momentum_readout_error": float(np.max(np.abs(momenta["p_path"] - momenta["p_readout"]))),
            "trace_difference": abs(limit_first - integrate_first),
        }

    def _scenario(self) -> Scenario:
        p = self.cfg
        params = {"mass": self.cfg["mass"], "hbar": self.cfg["hbar"]}
        if p["points"] is not None:
            params["points"] = p["points"]
        return build_preset(p["preset"], **params)

    def bohm_evolve(self) -> Dict[str, Any]:
        scenario = self._scenario()
        if scenario.is_two_particle:
            return self._two_particle(scenario)
        return self._single_wave(scenario)

    def _two_particle(self, scenario: Scenario) -> Dict[str, Any]:
        tp = scenario.two_particle
        report = bohmian.factorization_test(tp, self.cfg["probes"], self.cfg["seed"])
        v1, v2 = bohmian.velocity_fields(tp)
        stride = max(1, tp.x1.size // 64)
        axes = [tp.x1[::stride], tp.x2[::stride]]
        self.writer.write_table("density", _field_frame(axes, tp.density()[::stride, ::stride]))
        self.writer.write_table("velocity_1", _field_frame(axes, v1[::stride, ::stride]))
        self.writer.write_table("velocity_2", _field_frame(axes, v2[::stride, ::stride]))
        if self.writer.write_plots:
            fig = go.Figure(go.Heatmap(x=axes[1], y=axes[0], z=v1[::stride, ::stride], colorscale="RdBu"))
            fig.update_layout(title="v1(X1, X2)", xaxis_title="X2", yaxis_title="X1", height=500)
            self.writer.write_figure("velocity_1", fig)
        return {"preset": scenario.name, "factorization": report.as_dict()}

    def _single_wave(self, scenario: Scenario) -> Dict[str, Any]:
        p = self.cfg
        w = scenario.wave
        V = scenario.potential
        dt = p["dt"] or scenario.dt
        t_end = p["t_end"] or scenario.t_end
        steps = max(1, int(round(t_end / dt)))

        positions = bohmian.sample_initial_positions(w, p["particles"], p["seed"])
        run = bohmian.integrate_trajectories(w, V, dt, steps, positions, save_every=p["save_every"],
                                             initial_law="born")
        self.writer.write_table("trajectories", run.to_frame())

        final = run.frames[-1]
        fields = bohmian.polar_decompose(final)
        self.writer.write_table("density", _field_frame(fields.axes, fields.density))
        self.writer.write_table("phase", _field_frame(fields.axes, np.where(fields.mask, np.nan, fields.S)))
        self.writer.write_table("quantum_potential", _field_frame(fields.axes, bohmian.quantum_potential(fields)))

        propagator = bohmian.SplitStepPropagator.for_grid(w, V, dt)
        rows = []
        for frame in run.frames:
            following = bohmian.polar_decompose(frame.with_psi(propagator.step(frame.psi), frame.t + dt))
            current = bohmian.polar_decompose(frame)
            hj = bohmian.hj_residual(current, following, V)
            continuity = bohmian.continuity_residual(current, following)
            rows.append({
                "t": frame.t,
                "hj_rms": hj.rms,
                "hj_weighted_rms": hj.weighted_rms,
                "continuity_rms": continuity.rms,
                "continuity_weighted_rms": continuity.weighted_rms,
                "norm": frame.norm(),
            })
        residuals = pd.DataFrame(rows)
        self.writer.write_table("residuals", residuals)

        summary: Dict[str, Any] = {
            "preset": scenario.name,
            "dt": dt,
            "steps": steps,
            "t_end": final.t,
            "norm": final.norm(),
            "centroid": bohmian.centroid(final).tolist(),
            "exited": int(np.sum(run.exit_flags == bohmian.EXIT_GRID)),
            "masked": int(np.sum(run.exit_flags == bohmian.EXIT_MASK)),
            "max_hj_rms": float(residuals["hj_rms"].max()),
            "max_continuity_rms": float(residuals["continuity_rms"].max()),
            "max_hj_weighted_rms": float(residuals["hj_weighted_rms"].max()),
            "max_continuity_weighted_rms": float(residuals["continuity_weighted_rms"].max()),
        }
        if run.times.size >= 3:
            summary["newton_rms"] = bohmian.newton_residual(run, V)
        if w.dimension == 1:
            statistic, pvalue = bohmian.equivariance_ks(run)
            summary.update({
                "width": bohmian.packet_width(final),
                "ks_statistic": statistic,
                "ks_pvalue": pvalue,
                "ks_critical_1pct": bohmian.ks_critical_value(int(np.sum(run.active))),
                "crossings": run.crossings(),
            })

        if self.writer.write_plots and w.dimension == 1:
            fig = go.Figure()
            shown = min(run.n_particles, TRAJECTORY_PLOT_LIMIT)
            for k in range(shown):
                fig.add_trace(go.Scatter(x=run.times, y=run.positions[:, k, 0], mode="lines",
                                         line=dict(width=1), showlegend=False))
            fig.update_layout(title=f"{scenario.name} trajectories", xaxis_title="t", yaxis_title="x",
                              height=500, margin=dict(l=40, r=20, t=50, b=40))
            self.writer.write_figure("trajectories", fig)
        return summary


def run(cfg: ExperimentConfig) -> int:
    """Execute the configured subcommand; returns the process exit status."""
    return ExperimentRunner(cfg).run()
