//! Scenario-driven entry point used by the `backlash` binary: load a JSON
//! config, run the requested analyses, and emit CSV/JSON artifacts plus a
//! short human-readable summary.
//!
//! Exit codes: 0 success, 2 config/schema problems, 3 violated analytic
//! hypotheses (non-Hurwitz F, λ out of range, singular Φ), 4 numerical
//! failures.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};


use crate::error::{Error, Result};
use crate::linear_subsystem::{linearized_response, periodic_orbit, PeriodicOrbit};
use crate::localization::{
    build_tube, deviation_decay, stationary_emptiness, tube_check, StationaryProblem,
    TubeCrossSection,
};
use crate::matrix_core::lyapunov_certificate;
use crate::rate_analysis::{
    build_certificate, lambda_line_search, measure_exponent, RateCertificate,
};
use crate::report::{
    self, EmptinessSection, ExponentSection, LambdaTracePoint, LocalizationSection, Provenance,
    RateSection, Report, StationaritySection,
};
use crate::scenario::{LambdaChoice, Scenario};
use crate::sweeping_sim::{pair_simulate, simulate, PairRun, Trajectory};

#[derive(Parser)]
#[command(
    name = "backlash",
    about = "Simulate a linear plant with backlash feedback and compute its convergence certificates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Scenario config (JSON)
    #[arg(long, global = true, default_value = "scenario.json")]
    pub config: PathBuf,

    /// Output directory for CSV/JSON artifacts
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Override the scenario RNG seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Override the simulation resolution
    #[arg(long, global = true)]
    pub steps_per_period: Option<usize>,

    /// Override the certificate rate λ (absolute value)
    #[arg(long, global = true)]
    pub lambda: Option<f64>,

    /// Print the report JSON instead of the human-readable summary
    #[arg(long, global = true)]
    pub json_only: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Run the closed-loop simulation and export the trajectory CSV
    Simulate,
    /// Run two initial conditions in lockstep and export the V/γ ledger
    Pair,
    /// Tube localization: membership sweep and deviation decay
    Tube,
    /// Stationary initial-condition verdicts for the backlash output
    Stationary,
    /// Assemble the convergence certificate (θ and the verdict θ < 0)
    Certify,
    /// Everything the scenario's analysis toggles enable
    All,
}

pub fn run_main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Pipeline<'a> {
    scenario: &'a Scenario,
    out_dir: PathBuf,
    json_only: bool,
    trajectory: Option<Trajectory>,
    pair: Option<PairRun>,
    orbit: Option<PeriodicOrbit>,
    tube: Option<TubeCrossSection>,
    certificate: Option<RateCertificate>,
    localization: Option<LocalizationSection>,
    stationarity: Option<StationaritySection>,
    exponent: Option<ExponentSection>,
    lambda_trace: Vec<LambdaTracePoint>,
    summary: Vec<String>,
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut scenario = Scenario::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    if let Some(spp) = cli.steps_per_period {
        if spp == 0 {
            return Err(Error::config("--steps-per-period", "must be positive"));
        }
        scenario.sim.steps_per_period = spp;
        if let Some(pair) = &mut scenario.pair {
            pair.steps_per_period = spp;
        }
    }
    if let Some(lambda) = cli.lambda {
        if !(lambda > 0.0) {
            return Err(Error::config("--lambda", "must be positive"));
        }
        scenario.analysis.lambda = LambdaChoice::Absolute(lambda);
    }

    let out_dir = cli
        .out
        .clone()
        .or_else(|| scenario.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("backlash-out"));
    std::fs::create_dir_all(&out_dir)?;

    let mut pipeline = Pipeline {
        scenario: &scenario,
        out_dir,
        json_only: cli.json_only,
        trajectory: None,
        pair: None,
        orbit: None,
        tube: None,
        certificate: None,
        localization: None,
        stationarity: None,
        exponent: None,
        lambda_trace: Vec::new(),
        summary: Vec::new(),
    };

    match cli.command {
        Command::Simulate => pipeline.run_simulate()?,
        Command::Pair => pipeline.run_pair()?,
        Command::Tube => pipeline.run_tube()?,
        Command::Stationary => pipeline.run_stationary()?,
        Command::Certify => pipeline.run_certify()?,
        Command::All => {
            pipeline.run_simulate()?;
            if pipeline.scenario.pair.is_some() {
                pipeline.run_pair()?;
            }
            if pipeline.scenario.analysis.tube {
                pipeline.run_tube()?;
            }
            if pipeline.scenario.analysis.stationarity {
                pipeline.run_stationary()?;
            }
            if pipeline.scenario.analysis.certificate {
                pipeline.run_certify()?;
            }
            if pipeline.scenario.analysis.exponent
                && pipeline.pair.is_some()
                && pipeline.certificate.is_some()
            {
                pipeline.run_exponent()?;
            }
        }
    }

    pipeline.finish()
}

impl Pipeline<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.out_dir.join(name), contents)?;
        Ok(())
    }

    fn note(&mut self, line: String) {
        self.summary.push(line);
    }

    fn ensure_trajectory(&mut self) -> Result<&Trajectory> {
        if self.trajectory.is_none() {
            let s = self.scenario;
            self.trajectory = Some(simulate(&s.model, &s.theta, &s.input, &s.sim)?);
        }
        Ok(self.trajectory.as_ref().unwrap())
    }

    fn ensure_orbit(&mut self) -> Result<&PeriodicOrbit> {
        if self.orbit.is_none() {
            let s = self.scenario;
            self.orbit = Some(periodic_orbit(
                &s.model,
                &s.input,
                s.sim.steps_per_period.min(4096),
            )?);
        }
        Ok(self.orbit.as_ref().unwrap())
    }

    fn run_simulate(&mut self) -> Result<()> {
        self.ensure_trajectory()?;
        let traj = self.trajectory.as_ref().unwrap();
        self.write("trajectory.csv", &report::trajectory_csv(traj))?;
        let path = traj.path_length_per_period();
        let last = path.last().copied().unwrap_or(0.0);
        self.note(format!(
            "simulate: {} steps, max membership gap {:.3e}, last-period path length {:.6}",
            traj.times().len() - 1,
            traj.max_membership_distance(),
            last
        ));
        Ok(())
    }

    fn run_pair(&mut self) -> Result<()> {
        let s = self.scenario;
        let pair_cfg = s.pair.as_ref().ok_or_else(|| {
            Error::config("sim.pair", "the pair subcommand needs a second initial condition")
        })?;
        let lambda = self.resolve_lambda()?;
        let pi = lyapunov_certificate(s.model.f(), lambda)?;
        let pair = pair_simulate(&s.model, &s.theta, &s.input, &s.sim, pair_cfg, &pi)?;
        self.write("pair_first.csv", &report::trajectory_csv(&pair.first))?;
        self.write("pair_second.csv", &report::trajectory_csv(&pair.second))?;
        self.write("pair_ledger.csv", &report::pair_ledger_csv(&pair))?;
        self.write("pair_deviation.csv", &report::pair_deviation_csv(&pair))?;
        self.note(format!(
            "pair: V(0) = {:.6e}, V(end) = {:.6e}, dissipation residual {:.3e}",
            pair.v[0],
            pair.v.last().unwrap(),
            pair.qz_violation_max
        ));
        self.pair = Some(pair);
        Ok(())
    }

    fn ensure_tube(&mut self) -> Result<()> {
        if self.tube.is_some() {
            return Ok(());
        }
        let s = self.scenario;
        let total_time = s.input.period() * s.sim.periods as f64;
        let count = s.analysis.tube_check_times.max(1);
        let times: Vec<f64> = (1..=count)
            .map(|k| total_time * k as f64 / count as f64)
            .collect();
        self.tube = Some(build_tube(&s.model, &s.theta, &times)?);
        Ok(())
    }

    fn run_tube(&mut self) -> Result<()> {
        let s = self.scenario;
        s.model.require_hurwitz()?;
        self.ensure_trajectory()?;
        self.ensure_tube()?;
        let tube = self.tube.as_ref().unwrap();
        let traj = self.trajectory.as_ref().unwrap();

        // subsample the trajectory exactly at the tube times
        let total_steps = s.sim.total_steps();
        let count = tube.times().len();
        let mut xs = Vec::with_capacity(count);
        for k in 1..=count {
            let idx = k * total_steps / count;
            xs.push(traj.x()[idx].clone());
        }
        let xis = linearized_response(&s.model, &s.input, &s.sim.x0, tube.times())?;
        let dirs = crate::convex_sets::unit_directions(
            s.model.state_dim(),
            s.analysis.tube_check_directions,
        );
        let check = tube_check(tube, &xs, &xis, &dirs, 1e-6)?;

        // decay of D(Ξ∞, Ξ(t)) over roughly one period
        let t_fit: Vec<f64> = (1..=24)
            .map(|k| 0.05 * s.input.period() * k as f64)
            .collect();
        let decay = deviation_decay(&s.model, &s.theta, &t_fit)?;

        let section = LocalizationSection::new(
            tube.output_tube_diameter(),
            tube.theta_deviation(),
            tube.velocity_deviation(),
            &check,
            Some(&decay),
            s.model.mu(),
        );
        let line = format!(
            "tube: d = {:.6}, max violation {:.3e} over {} samples, decay slope {:.4} (limit {:.4})",
            tube.output_tube_diameter(),
            check.max_violation,
            check.checked,
            decay.fitted_slope,
            s.model.mu() + 0.1 * s.model.mu().abs()
        );
        self.note(line);
        self.localization = Some(section);
        Ok(())
    }

    fn run_stationary(&mut self) -> Result<()> {
        let s = self.scenario;
        let horizon = s.analysis.stationary_horizon_periods * s.input.period();
        let problem = StationaryProblem::new(
            &s.model,
            &s.theta,
            &s.input,
            &s.sim.x0,
            horizon,
            s.analysis.stationary_grid,
        )?;
        let membership = problem.membership(&s.sim.z0)?;
        let emptiness =
            stationary_emptiness(&problem, s.analysis.emptiness_starts, s.seed, 1e-6)?;
        self.note(format!(
            "stationary: z0 {} (margin {:.4e}); region {}",
            if membership.stationary {
                "is T-stationary"
            } else {
                "is not T-stationary"
            },
            membership.margin,
            match &emptiness {
                crate::localization::EmptinessVerdict::NonEmpty { .. } => "nonempty".to_string(),
                crate::localization::EmptinessVerdict::NumericallyEmpty {
                    best_value, ..
                } => format!("numerically empty (best {:.3e})", best_value),
            }
        ));
        self.stationarity = Some(StationaritySection {
            horizon,
            grid_steps: s.analysis.stationary_grid,
            min_phi_margin: problem.min_phi_margin,
            z0_membership: (&membership).into(),
            emptiness: Some(EmptinessSection::from(&emptiness)),
        });
        Ok(())
    }

    fn resolve_lambda(&self) -> Result<f64> {
        let s = self.scenario;
        s.model.require_hurwitz()?;
        let lambda = s.analysis.lambda.resolve(s.model.mu());
        if !(lambda > 0.0 && lambda < s.model.mu().abs()) {
            return Err(Error::Hypothesis(format!(
                "λ = {lambda:.6e} is outside (0, |μ|) with |μ| = {:.6e}",
                s.model.mu().abs()
            )));
        }
        Ok(lambda)
    }

    fn run_certify(&mut self) -> Result<()> {
        let s = self.scenario;
        self.ensure_tube()?;
        self.ensure_orbit()?;
        let tube = self.tube.as_ref().unwrap();
        let orbit = self.orbit.as_ref().unwrap();

        let cert = if s.analysis.lambda_search {
            let fractions: Vec<f64> = (1..=9).map(|k| 0.1 * k as f64).collect();
            let (best, trace) =
                lambda_line_search(&s.model, &s.theta, &s.input, &fractions, tube, orbit)?;
            self.lambda_trace = trace
                .into_iter()
                .map(|(lambda, theta)| LambdaTracePoint { lambda, theta })
                .collect();
            best
        } else {
            let lambda = self.resolve_lambda()?;
            build_certificate(&s.model, &s.theta, &s.input, lambda, tube, orbit)?
        };
        self.write("orbit.csv", &report::orbit_csv(orbit))?;
        self.note(format!(
            "certify: θ = {:+.6} at λ = {:.4} ⇒ {}{}",
            cert.theta,
            cert.lambda,
            if cert.contracting {
                "contracting (θ < 0): unique periodic regime, exponential convergence"
            } else {
                "inconclusive (θ ≥ 0)"
            },
            if cert.no_strong_convexity_needed {
                " [linear dissipation alone suffices]"
            } else {
                ""
            }
        ));
        self.certificate = Some(cert);
        Ok(())
    }

    fn run_exponent(&mut self) -> Result<()> {
        let pair = self.pair.as_ref().expect("pair run available");
        let cert = self.certificate.as_ref().expect("certificate available");
        let exponent = measure_exponent(pair, cert)?;
        self.note(format!(
            "exponent: fitted slope {:.6} vs allowance {:.6} ({}), Gronwall {}",
            exponent.fitted_slope,
            exponent.allowance,
            if exponent.within_bound { "ok" } else { "VIOLATED" },
            if exponent.gronwall_ok { "ok" } else { "VIOLATED" }
        ));
        self.exponent = Some((&exponent).into());
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        // fold the certificate into the report sections
        let rate = self.certificate.as_ref().map(RateSection::from);
        if self.localization.is_none() {
            if let (Some(tube), Some(_)) = (&self.tube, &self.certificate) {
                // certificate-only runs still publish the tube quantities
                self.localization = Some(LocalizationSection {
                    tube_diameter: tube.output_tube_diameter(),
                    theta_deviation: tube.theta_deviation(),
                    velocity_deviation: tube.velocity_deviation(),
                    tube_check_max_violation: f64::NEG_INFINITY,
                    tube_check_violations: 0,
                    tube_check_samples: 0,
                    tube_check_min_margin: f64::INFINITY,
                    deviation_decay_slope: None,
                    deviation_decay_limit: None,
                });
            }
        }

        let s = self.scenario;
        let stationary_grid = self.stationarity.as_ref().map(|st| st.grid_steps);
        let report = Report {
            scenario: report::scenario_summary(s),
            localization: self.localization,
            stationarity: self.stationarity,
            rate,
            measured_exponent: self.exponent,
            provenance: Provenance {
                seed: s.seed,
                steps_per_period: s.sim.steps_per_period,
                periods: s.sim.periods,
                tube_horizon: self.tube.as_ref().map(|t| t.t_inf()),
                tube_tail_bound: self.tube.as_ref().map(|t| t.tail_bound()),
                tube_check_times: self.tube.as_ref().map(|_| s.analysis.tube_check_times),
                tube_check_directions: self
                    .tube
                    .as_ref()
                    .map(|_| s.analysis.tube_check_directions),
                stationary_grid,
                lambda_trace: self.lambda_trace,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        };

        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
        let mut contents = json;
        contents.push('\n');
        write_report(&self.out_dir, &contents)?;

        if self.json_only {
            print!("{contents}");
        } else {
            println!("scenario `{}` → {}", s.name, self.out_dir.display());
            for line in &self.summary {
                println!("  {line}");
            }
        }
        Ok(())
    }
}

fn write_report(dir: &Path, contents: &str) -> Result<()> {
    std::fs::write(dir.join("report.json"), contents)?;
    Ok(())
}
