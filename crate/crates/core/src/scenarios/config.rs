//! Scenario files: a TOML description of the model, the initial state, the
//! grid, the record source, the final condition and the requested outputs.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Deserialize;

use crate::backward::FinalCondition;
use crate::error::{Error, Result};
use crate::model::{damping_channel, dispersive_channel, heterodyne_split, ChannelRow, ModelSpec};
use crate::phase::{GaussianMoments, QuadratureLayout};
use crate::record::{TimeGrid, GRID_DIVISIBILITY_TOL};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub initial: StateConfig,
    #[serde(rename = "final", default)]
    pub final_condition: FinalConfig,
    #[serde(default)]
    pub record: RecordConfig,
    #[serde(default)]
    pub output: OutputConfig,
    pub ensemble: Option<EnsembleConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    pub t_final: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "one")]
    pub modes: usize,
    #[serde(default)]
    pub oscillators: Vec<OscillatorConfig>,
    /// Extra quadratic Hamiltonian matrix, added to the oscillator terms.
    pub hamiltonian: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub channels: Vec<ChannelConfig>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorConfig {
    #[serde(default)]
    pub mode: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Damping,
    Dispersive,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub name: Option<String>,
    pub kind: ChannelKind,
    #[serde(default)]
    pub mode: usize,
    #[serde(default)]
    pub rate: f64,
    pub efficiency: f64,
    /// Local-oscillator phase applied to the channel row.
    #[serde(default)]
    pub phase: f64,
    /// Split into two quadrature channels of half the rate each.
    #[serde(default)]
    pub heterodyne: bool,
    /// `[re, im]` per quadrature, for `custom` channels.
    pub coefficients: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Vacuum,
    Coherent,
    Thermal,
    Squeezed,
    Moments,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub kind: StateKind,
    pub mean: Option<Vec<f64>>,
    pub alpha: Option<[f64; 2]>,
    pub nbar: Option<f64>,
    pub r: Option<f64>,
    pub angle: Option<f64>,
    pub cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalKind {
    #[default]
    Identity,
    Projection,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalConfig {
    #[serde(default)]
    pub kind: FinalKind,
    pub target: Option<StateConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    /// Draw a record from the conditioned dynamics of the initial state.
    #[default]
    Simulate,
    /// All increments zero.
    Silent,
    File,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordConfig {
    #[serde(default)]
    pub source: RecordSource,
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyticKind {
    Postselect,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub mode: usize,
    /// Quadrature angle of the past distribution written per time step.
    #[serde(default)]
    pub theta: f64,
    pub sweep: Option<SweepConfig>,
    pub analytic: Option<AnalyticKind>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub angles: usize,
    #[serde(default)]
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub count: usize,
    pub base_seed: Option<u64>,
}

/// One problem found by [`validate_config`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Joins issues into a single `Error::Config`.
pub fn issues_to_error(issues: &[ConfigIssue]) -> Error {
    let lines: Vec<String> = issues.iter().map(ToString::to_string).collect();
    Error::Config(lines.join("; "))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn layout(&self) -> Result<QuadratureLayout> {
        QuadratureLayout::new(self.model.modes)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_interval(self.grid.t0, self.grid.t_final, self.grid.dt)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let layout = self.layout()?;
        let d = layout.dim();
        let mut builder = ModelSpec::builder(layout);
        for osc in &self.model.oscillators {
            layout.check_mode(osc.mode)?;
            builder = builder.oscillator(osc.mode, osc.frequency);
        }
        if let Some(h) = &self.model.hamiltonian {
            let m = matrix_from_rows(h, d).ok_or_else(|| Error::Config(format!("model.hamiltonian must be {d}x{d}")))?;
            let mut base = builder.build()?.hamiltonian().clone();
            base += m;
            builder = ModelSpec::builder(layout).hamiltonian(base);
        }
        for ch in &self.model.channels {
            let row = match ch.kind {
                ChannelKind::Damping => damping_channel(layout, ch.mode, ch.rate)?,
                ChannelKind::Dispersive => dispersive_channel(layout, ch.mode, ch.rate)?,
                ChannelKind::Custom => {
                    let coeff = ch
                        .coefficients
                        .as_ref()
                        .ok_or_else(|| Error::Config("custom channel needs coefficients".into()))?;
                    ChannelRow::new(coeff.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
                }
            };
            let row = row.rotated(ch.phase);
            if ch.heterodyne {
                for part in heterodyne_split(&row) {
                    builder = builder.channel(part, ch.efficiency);
                }
            } else {
                builder = builder.channel(row, ch.efficiency);
            }
        }
        builder.build()
    }

    pub fn initial_state(&self) -> Result<GaussianMoments> {
        self.initial.to_moments(self.layout()?)
    }

    pub fn final_condition(&self) -> Result<FinalCondition> {
        match self.final_condition.kind {
            FinalKind::Identity => Ok(FinalCondition::Identity),
            FinalKind::Projection => {
                let target = self
                    .final_condition
                    .target
                    .as_ref()
                    .ok_or_else(|| Error::Config("final.target is required for a projection".into()))?;
                Ok(FinalCondition::Projection(target.to_moments(self.layout()?)?))
            }
        }
    }

    /// Ensemble base seed: explicit, or the scenario seed.
    pub fn ensemble_seed(&self) -> Option<(u64, usize)> {
        self.ensemble.as_ref().map(|e| (e.base_seed.unwrap_or(self.seed), e.count))
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize) -> Option<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return None;
    }
    Some(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn pair(v: &Option<Vec<f64>>) -> Result<[f64; 2]> {
    match v {
        None => Ok([0.0, 0.0]),
        Some(m) if m.len() == 2 => Ok([m[0], m[1]]),
        Some(m) => Err(Error::Config(format!("mean has {} entries, expected 2", m.len()))),
    }
}

impl StateConfig {
    pub fn to_moments(&self, layout: QuadratureLayout) -> Result<GaussianMoments> {
        let single = || {
            if layout.n_modes() != 1 {
                Err(Error::Config(format!(
                    "state kind {:?} is single-mode; use `moments` for {} modes",
                    self.kind,
                    layout.n_modes()
                )))
            } else {
                Ok(())
            }
        };
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("`{name}` is required")));
        match self.kind {
            StateKind::Vacuum => {
                let vac = GaussianMoments::vacuum(layout);
                match &self.mean {
                    None => Ok(vac),
                    Some(m) if m.len() == layout.dim() => GaussianMoments::new(DVector::from_vec(m.clone()), vac.cov().clone()),
                    Some(m) => Err(Error::Config(format!("mean has {} entries, expected {}", m.len(), layout.dim()))),
                }
            }
            StateKind::Coherent => {
                single()?;
                let [re, im] = self.alpha.ok_or_else(|| Error::Config("`alpha` is required".into()))?;
                Ok(GaussianMoments::coherent(Complex64::new(re, im)))
            }
            StateKind::Thermal => {
                single()?;
                GaussianMoments::thermal(need(self.nbar, "nbar")?, pair(&self.mean)?)
            }
            StateKind::Squeezed => {
                single()?;
                GaussianMoments::squeezed(need(self.r, "r")?, self.angle.unwrap_or(0.0), pair(&self.mean)?)
            }
            StateKind::Moments => {
                let d = layout.dim();
                let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; d]);
                if mean.len() != d {
                    return Err(Error::Config(format!("mean has {} entries, expected {d}", mean.len())));
                }
                let cov = self
                    .cov
                    .as_ref()
                    .and_then(|c| matrix_from_rows(c, d))
                    .ok_or_else(|| Error::Config(format!("`cov` must be a {d}x{d} matrix")))?;
                GaussianMoments::new(DVector::from_vec(mean), cov)
            }
        }
    }
}

fn check_state(state: &StateConfig, layout: Option<QuadratureLayout>, field: &str, issues: &mut Vec<ConfigIssue>) {
    let Some(layout) = layout else { return };
    match state.to_moments(layout) {
        Err(e) => issues.push(ConfigIssue { field: field.into(), message: e.to_string() }),
        Ok(m) => {
            let p = m.check_physical();
            if !p.physical {
                issues.push(ConfigIssue {
                    field: field.into(),
                    message: format!("state violates the uncertainty relation (min eigenvalue {:.3e})", p.min_eigenvalue),
                });
            }
        }
    }
}

/// Checks every field and returns all problems found.
pub fn validate_config(cfg: &ScenarioConfig) -> std::result::Result<(), Vec<ConfigIssue>> {
    let mut issues = Vec::new();
    let mut issue = |field: &str, message: String| issues.push(ConfigIssue { field: field.into(), message });

    if cfg.name.trim().is_empty() {
        issue("name", "must not be empty".into());
    }
    let g = &cfg.grid;
    if !g.t0.is_finite() || !g.t_final.is_finite() {
        issue("grid", "t0 and t_final must be finite".into());
    } else if !(g.t_final > g.t0) {
        issue("grid.t_final", format!("must exceed t0 ({} <= {})", g.t_final, g.t0));
    }
    if !(g.dt > 0.0) || !g.dt.is_finite() {
        issue("grid.dt", format!("must be positive, got {}", g.dt));
    } else if g.t_final > g.t0 {
        let n = (g.t_final - g.t0) / g.dt;
        if (n - n.round()).abs() > GRID_DIVISIBILITY_TOL * n.max(1.0) {
            issue("grid.dt", format!("{} does not divide [{}, {}]", g.dt, g.t0, g.t_final));
        }
    }

    let layout = if cfg.model.modes == 0 {
        issue("model.modes", "must be at least 1".into());
        None
    } else {
        QuadratureLayout::new(cfg.model.modes).ok()
    };
    let modes = cfg.model.modes;
    for (i, osc) in cfg.model.oscillators.iter().enumerate() {
        if osc.mode >= modes {
            issue(&format!("model.oscillators[{i}].mode"), format!("mode {} does not exist ({modes} modes)", osc.mode));
        }
        if !osc.frequency.is_finite() {
            issue(&format!("model.oscillators[{i}].frequency"), "must be finite".into());
        }
    }
    if let Some(h) = &cfg.model.hamiltonian {
        match matrix_from_rows(h, 2 * modes) {
            None => issue("model.hamiltonian", format!("must be a {0}x{0} matrix", 2 * modes)),
            Some(m) => {
                if (&m - m.transpose()).abs().max() > crate::model::HAMILTONIAN_SYMMETRY_TOL {
                    issue("model.hamiltonian", "must be symmetric".into());
                }
            }
        }
    }
    for (i, ch) in cfg.model.channels.iter().enumerate() {
        let f = |name: &str| format!("model.channels[{i}].{name}");
        if ch.mode >= modes {
            issue(&f("mode"), format!("mode {} does not exist ({modes} modes)", ch.mode));
        }
        if !(0.0..=1.0).contains(&ch.efficiency) {
            issue(&f("efficiency"), format!("must lie in [0, 1], got {}", ch.efficiency));
        }
        match ch.kind {
            ChannelKind::Damping | ChannelKind::Dispersive => {
                if !(ch.rate >= 0.0) || !ch.rate.is_finite() {
                    issue(&f("rate"), format!("must be non-negative, got {}", ch.rate));
                }
                if ch.coefficients.is_some() {
                    issue(&f("coefficients"), "only allowed for custom channels".into());
                }
            }
            ChannelKind::Custom => match &ch.coefficients {
                None => issue(&f("coefficients"), "required for custom channels".into()),
                Some(c) if c.len() != 2 * modes => {
                    issue(&f("coefficients"), format!("has {} entries, expected {}", c.len(), 2 * modes))
                }
                Some(_) => {}
            },
        }
        if !ch.phase.is_finite() {
            issue(&f("phase"), "must be finite".into());
        }
    }
    drop(issue);

    check_state(&cfg.initial, layout, "initial", &mut issues);
    let mut issue = |field: &str, message: String| issues.push(ConfigIssue { field: field.into(), message });
    match (cfg.final_condition.kind, &cfg.final_condition.target) {
        (FinalKind::Projection, None) => issue("final.target", "required for a projection".into()),
        (FinalKind::Identity, Some(_)) => issue("final.target", "only allowed for a projection".into()),
        _ => {}
    }
    match (cfg.record.source, &cfg.record.path) {
        (RecordSource::File, None) => issue("record.path", "required when source = \"file\"".into()),
        (RecordSource::Simulate | RecordSource::Silent, Some(_)) => {
            issue("record.path", "only used when source = \"file\"".into())
        }
        _ => {}
    }
    let out = &cfg.output;
    if out.mode >= modes.max(1) {
        issue("output.mode", format!("mode {} does not exist ({modes} modes)", out.mode));
    }
    if !out.theta.is_finite() {
        issue("output.theta", "must be finite".into());
    }
    if let Some(s) = &out.sweep {
        if s.angles == 0 {
            issue("output.sweep.angles", "must be at least 1".into());
        }
        if !(s.time >= g.t0 && s.time <= g.t_final) {
            issue("output.sweep.time", format!("{} lies outside [{}, {}]", s.time, g.t0, g.t_final));
        }
    }
    if out.analytic == Some(AnalyticKind::Postselect) {
        let ok = modes == 1
            && cfg.model.oscillators.iter().all(|o| o.frequency == 0.0)
            && cfg.model.hamiltonian.is_none()
            && cfg.model.channels.len() == 1
            && cfg.model.channels[0].kind == ChannelKind::Damping
            && cfg.model.channels[0].efficiency == 0.0
            && !cfg.model.channels[0].heterodyne
            && cfg.initial.kind == StateKind::Coherent
            && cfg.final_condition.kind == FinalKind::Projection
            && cfg.final_condition.target.as_ref().is_some_and(|t| t.kind == StateKind::Vacuum && t.mean.is_none());
        if !ok {
            issue(
                "output.analytic",
                "postselect needs one mode, no Hamiltonian, one unmonitored damping channel, a coherent initial state and a vacuum projection".into(),
            );
        }
    }
    if let Some(e) = &cfg.ensemble {
        if e.count == 0 {
            issue("ensemble.count", "must be at least 1".into());
        }
    }
    drop(issue);
    if let Some(t) = &cfg.final_condition.target {
        check_state(t, layout, "final.target", &mut issues);
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
[grid]
t_final = 1.0
dt = 0.01
[model]
[[model.channels]]
kind = "damping"
rate = 1.0
efficiency = 0.5
[initial]
kind = "vacuum"
"#;

    #[test]
    fn minimal_config_builds() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        validate_config(&cfg).unwrap();
        let spec = cfg.model_spec().unwrap();
        assert_eq!(spec.n_channels(), 1);
        assert_eq!(cfg.time_grid().unwrap().steps(), 100);
        assert_eq!(cfg.final_condition().unwrap(), FinalCondition::Identity);
        assert_eq!(cfg.record.source, RecordSource::Simulate);
    }

    #[test]
    fn errors_are_aggregated_with_field_names() {
        let text = MINIMAL.replace("dt = 0.01", "dt = 0.3").replace("efficiency = 0.5", "efficiency = 1.2");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let issues = validate_config(&cfg).unwrap_err();
        let fields: Vec<&str> = issues.iter().map(|i| i.field.as_str()).collect();
        assert!(fields.contains(&"grid.dt"), "{issues:?}");
        assert!(fields.contains(&"model.channels[0].efficiency"), "{issues:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[initial]", "[initial]\nnbar_typo = 1.0");
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn unphysical_states_and_missing_targets() {
        let text = MINIMAL.replace(
            "kind = \"vacuum\"",
            "kind = \"moments\"\ncov = [[0.5, 0.0], [0.0, 0.5]]\n[final]\nkind = \"projection\"",
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let issues = validate_config(&cfg).unwrap_err();
        let fields: Vec<&str> = issues.iter().map(|i| i.field.as_str()).collect();
        assert_eq!(fields, ["initial", "final.target"]);
    }

    #[test]
    fn heterodyne_and_phase() {
        let text = MINIMAL.replace("efficiency = 0.5", "efficiency = 0.5\nheterodyne = true\nphase = 1.5707963267948966");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let spec = cfg.model_spec().unwrap();
        assert_eq!(spec.n_channels(), 2);
    }

    #[test]
    fn multimode_requires_moments_or_vacuum() {
        let text = MINIMAL.replace("[model]", "[model]\nmodes = 2").replace("kind = \"vacuum\"", "kind = \"thermal\"\nnbar = 1.0");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let issues = validate_config(&cfg).unwrap_err();
        assert_eq!(issues[0].field, "initial");
    }
}
