//! Executes a scenario and writes its data files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::config::{issues_to_error, validate_config, AnalyticKind, RecordSource, ScenarioConfig};
use crate::backward::{integrate_backward, to_covariance_form, BackwardTrajectory};
use crate::ensemble::{ensemble_mean, EnsembleMean};
use crate::error::{Error, Result};
use crate::forward::{filter_record, simulate_record, ForwardTrajectory};
use crate::model::ModelSpec;
use crate::parallel::Execution;
use crate::phase::{quadrature_spread, EffectMoments};
use crate::record::{fmt_f64, MeasurementRecord};
use crate::retrodiction::{effect_marginal, retrodict_path, sweep_csv, theta_grid, uncertainty_sweep, PastDistribution, SweepPoint};

/// Slack on the variance-reduction check, for rounding in the ratio.
const INVARIANT_SLACK: f64 = 1e-12;

/// One row of the closed-form comparison for the post-selected decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticRow {
    pub t: f64,
    pub qp_numeric: f64,
    pub qp_analytic: f64,
    pub delta_numeric: f64,
    pub delta_analytic: f64,
}

impl AnalyticRow {
    pub fn max_rel_error(&self) -> f64 {
        let q = ((self.qp_numeric - self.qp_analytic) / self.qp_analytic).abs();
        let d = ((self.delta_numeric - self.delta_analytic) / self.delta_analytic).abs();
        q.max(d)
    }
}

/// Everything a scenario computes, before any file is written.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub spec: ModelSpec,
    pub record: MeasurementRecord,
    pub forward: ForwardTrajectory,
    pub backward: BackwardTrajectory,
    pub past: Vec<PastDistribution>,
    pub sweep: Option<Vec<SweepPoint>>,
    pub analytic: Option<Vec<AnalyticRow>>,
    pub ensemble: Option<EnsembleMean>,
}

/// `q_p(t)` and `Δ(q_p, t)` for a coherent state `α` (real) decaying at rate
/// `gamma` and projected on the vacuum at `t_final`.
pub fn postselect_closed_form(alpha: f64, gamma: f64, t_final: f64, t: f64) -> (f64, f64) {
    let qp = 2f64.sqrt() * alpha * ((-gamma * t / 2.0).exp() - 0.5 * (-gamma * (t_final - t / 2.0)).exp());
    let delta = 1.0 - 0.5 * (-gamma * (t_final - t)).exp();
    (qp, delta)
}

fn load_record(cfg: &ScenarioConfig, spec: &ModelSpec, base_dir: &Path) -> Result<Option<MeasurementRecord>> {
    let grid = cfg.time_grid()?;
    match cfg.record.source {
        RecordSource::Simulate => Ok(None),
        RecordSource::Silent => Ok(Some(MeasurementRecord::silent(grid, spec.n_channels()))),
        RecordSource::File => {
            let rel = cfg.record.path.as_deref().ok_or_else(|| Error::Config("record.path is missing".into()))?;
            let rec = MeasurementRecord::read_csv(base_dir.join(rel))?;
            if rec.channels() != spec.n_channels() {
                return Err(Error::Record(format!(
                    "record has {} channels, model has {}",
                    rec.channels(),
                    spec.n_channels()
                )));
            }
            let g = rec.grid();
            let tol = 1e-9 * grid.dt();
            if g.steps() != grid.steps() || (g.t0() - grid.t0()).abs() > tol || (g.dt() - grid.dt()).abs() > tol {
                return Err(Error::Record("record time grid does not match grid section".into()));
            }
            Ok(Some(rec))
        }
    }
}

/// Runs the forward and backward passes and the retrodiction. No IO except
/// reading a record file (relative to `base_dir`).
pub fn execute(cfg: &ScenarioConfig, base_dir: &Path, exec: Execution) -> Result<ScenarioResult> {
    validate_config(cfg).map_err(|issues| issues_to_error(&issues))?;
    let spec = cfg.model_spec()?;
    let grid = cfg.time_grid()?;
    let initial = cfg.initial_state()?;
    let (record, forward) = match load_record(cfg, &spec, base_dir)? {
        Some(rec) => {
            let fwd = filter_record(&spec, &initial, &rec)?;
            (rec, fwd)
        }
        None => simulate_record(&spec, &initial, &grid, cfg.seed)?,
    };
    let final_effect = cfg.final_condition()?.effect(spec.layout())?;
    let backward = integrate_backward(&spec, &record, &final_effect)?;
    let past = retrodict_path(&forward, &backward, cfg.output.mode, cfg.output.theta)?;

    let sweep = match &cfg.output.sweep {
        None => None,
        Some(s) => {
            let k = (((s.time - grid.t0()) / grid.dt()).round() as usize).min(grid.steps());
            let rho = forward.state(k).select_mode(cfg.output.mode)?;
            let eff = backward.effect(k).select_mode(cfg.output.mode)?;
            Some(uncertainty_sweep(&rho, &eff, &theta_grid(s.angles))?)
        }
    };

    let analytic = match cfg.output.analytic {
        None => None,
        Some(AnalyticKind::Postselect) => {
            let alpha = cfg.initial.alpha.map(|a| a[0]).unwrap_or(0.0);
            let gamma = cfg.model.channels[0].rate;
            let t_final = grid.t_final();
            let rows = grid
                .times()
                .into_iter()
                .zip(&past)
                .map(|(t, p)| {
                    let (qp, delta) = postselect_closed_form(alpha, gamma, t_final, t - grid.t0());
                    AnalyticRow { t, qp_numeric: p.mean, qp_analytic: qp, delta_numeric: p.delta(), delta_analytic: delta }
                })
                .collect();
            Some(rows)
        }
    };

    let ensemble = match cfg.ensemble_seed() {
        None => None,
        Some((seed, count)) => Some(ensemble_mean(&spec, &initial, &grid, seed, count, exec)?),
    };

    Ok(ScenarioResult { config: cfg.clone(), spec, record, forward, backward, past, sweep, analytic, ensemble })
}

fn push_upper(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            out.push(',');
            out.push_str(&fmt_f64(m[(i, j)]));
        }
    }
}

fn push_vec(out: &mut String, v: &DVector<f64>) {
    for x in v.iter() {
        out.push(',');
        out.push_str(&fmt_f64(*x));
    }
}

fn effect_columns(e: &EffectMoments) -> (DVector<f64>, DMatrix<f64>) {
    match to_covariance_form(e) {
        Ok(EffectMoments::Covariance(m)) => m.into_parts(),
        _ => {
            let d = e.dim();
            (DVector::from_element(d, f64::NAN), DMatrix::from_element(d, d, f64::INFINITY))
        }
    }
}

impl ScenarioResult {
    pub fn trajectory_csv(&self) -> String {
        let d = self.spec.dim();
        let mut out = String::from("t");
        for prefix in ["f", "b"] {
            for i in 1..=d {
                let _ = write!(out, ",mean_{prefix}_{i}");
            }
            for i in 1..=d {
                for j in i..=d {
                    let _ = write!(out, ",cov_{prefix}_{i}{j}");
                }
            }
        }
        out.push_str(",qp,var_p\n");
        for (k, t) in self.forward.times().into_iter().enumerate() {
            out.push_str(&fmt_f64(t));
            let rho = self.forward.state(k);
            push_vec(&mut out, rho.mean());
            push_upper(&mut out, rho.cov());
            let (mb, cb) = effect_columns(self.backward.effect(k));
            push_vec(&mut out, &mb);
            push_upper(&mut out, &cb);
            let _ = writeln!(out, ",{},{}", fmt_f64(self.past[k].mean), fmt_f64(self.past[k].variance));
        }
        out
    }

    pub fn analytic_csv(&self) -> Option<String> {
        let rows = self.analytic.as_ref()?;
        let mut out = String::from("t,qp_numeric,qp_analytic,delta_numeric,delta_analytic\n");
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(r.t),
                fmt_f64(r.qp_numeric),
                fmt_f64(r.qp_analytic),
                fmt_f64(r.delta_numeric),
                fmt_f64(r.delta_analytic)
            );
        }
        Some(out)
    }

    pub fn ensemble_csv(&self) -> Option<String> {
        let ens = self.ensemble.as_ref()?;
        let mut out = String::from("t");
        for i in 1..=self.spec.dim() {
            let _ = write!(out, ",mean_{i}");
        }
        out.push('\n');
        for (t, m) in ens.grid.times().into_iter().zip(&ens.mean) {
            out.push_str(&fmt_f64(t));
            push_vec(&mut out, m);
            out.push('\n');
        }
        Some(out)
    }

    pub fn analytic_max_rel_error(&self) -> Option<f64> {
        self.analytic.as_ref().map(|rows| rows.iter().map(AnalyticRow::max_rel_error).fold(0.0, f64::max))
    }

    /// Whether the past variance is at most both the forward and the
    /// backward variance along the output angle at every grid point.
    pub fn variance_reduction_holds(&self) -> Result<bool> {
        let (mode, theta) = (self.config.output.mode, self.config.output.theta);
        for (k, p) in self.past.iter().enumerate() {
            let rho = self.forward.state(k).select_mode(mode)?;
            let var_f = quadrature_spread(rho.cov(), theta) / 2.0;
            let std_b = effect_marginal(&self.backward.effect(k).select_mode(mode)?, theta)?.std();
            let var_b = std_b * std_b;
            if p.variance > var_f * (1.0 + INVARIANT_SLACK) || p.variance > var_b * (1.0 + INVARIANT_SLACK) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn summary(&self, files: Vec<String>) -> Result<Summary> {
        let grid = self.forward.grid();
        let last = self.forward.state(grid.steps());
        let past0 = self.past[0];
        Ok(Summary {
            name: self.config.name.clone(),
            seed: self.config.seed,
            steps: grid.steps(),
            t0: grid.t0(),
            t_final: grid.t_final(),
            final_mean: last.mean().iter().copied().collect(),
            final_cov_upper: upper(last.cov()),
            past_initial: PastSummary { theta: past0.theta, mean: past0.mean, variance: past0.variance },
            past_final: {
                let p = self.past[grid.steps()];
                PastSummary { theta: p.theta, mean: p.mean, variance: p.variance }
            },
            variance_reduction_holds: self.variance_reduction_holds()?,
            analytic_max_rel_error: self.analytic_max_rel_error(),
            ensemble_trajectories: self.ensemble.as_ref().map(|e| e.trajectories),
            files,
        })
    }

    /// Writes all data files into `out_dir` and returns their names.
    pub fn write_outputs(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)?;
        let mut files: Vec<(&str, String)> = vec![
            ("record.csv", self.record.to_csv_string()),
            ("trajectory.csv", self.trajectory_csv()),
        ];
        if let Some(sweep) = &self.sweep {
            files.push(("sweep.csv", sweep_csv(sweep)));
        }
        if let Some(text) = self.analytic_csv() {
            files.push(("analytic.csv", text));
        }
        if let Some(text) = self.ensemble_csv() {
            files.push(("ensemble.csv", text));
        }
        let mut names: Vec<String> = files.iter().map(|(n, _)| n.to_string()).collect();
        names.push("summary.json".into());
        let summary = self.summary(names.clone())?;
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
        files.push(("summary.json", json + "\n"));

        let mut written = Vec::with_capacity(files.len());
        for (name, text) in files {
            let path = out_dir.join(name);
            std::fs::write(&path, text)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn upper(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct PastSummary {
    pub theta: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Final-time scalars written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    pub t0: f64,
    pub t_final: f64,
    pub final_mean: Vec<f64>,
    pub final_cov_upper: Vec<f64>,
    pub past_initial: PastSummary,
    pub past_final: PastSummary,
    pub variance_reduction_holds: bool,
    pub analytic_max_rel_error: Option<f64>,
    pub ensemble_trajectories: Option<usize>,
    pub files: Vec<String>,
}

/// Validates, executes and writes a scenario. Relative record paths are
/// resolved against `base_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path, base_dir: &Path) -> Result<ScenarioResult> {
    let result = execute(cfg, base_dir, Execution::default())?;
    result.write_outputs(out_dir)?;
    Ok(result)
}
