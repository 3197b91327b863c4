//! Config-driven scenarios and the builtin examples.

mod config;
mod run;

pub use config::{
    issues_to_error, validate_config, AnalyticKind, ChannelConfig, ChannelKind, ConfigIssue, EnsembleConfig,
    FinalConfig, FinalKind, GridConfig, ModelConfig, OscillatorConfig, OutputConfig, RecordConfig, RecordSource,
    ScenarioConfig, StateConfig, StateKind, SweepConfig,
};
pub use run::{execute, postselect_closed_form, run_scenario, AnalyticRow, PastSummary, ScenarioResult, Summary};

use crate::error::{Error, Result};

const BUILTINS: [(&str, &str); 3] = [
    ("fig4", include_str!("../../scenarios/fig4.toml")),
    ("fig5", include_str!("../../scenarios/fig5.toml")),
    ("postselect", include_str!("../../scenarios/postselect.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

/// TOML source of a builtin scenario.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    let src = builtin_source(name).ok_or_else(|| {
        Error::Config(format!("unknown builtin `{name}` (available: {})", builtin_names().join(", ")))
    })?;
    ScenarioConfig::from_toml_str(src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn builtins_are_valid() {
        for name in builtin_names() {
            let cfg = builtin(name).unwrap();
            assert_eq!(cfg.name, name);
            validate_config(&cfg).unwrap_or_else(|e| panic!("{name}: {e:?}"));
        }
        assert!(builtin("nope").is_err());
    }

    #[test]
    fn fig5_sweep_stays_below_shot_noise() {
        let cfg = builtin("fig5").unwrap();
        let res = execute(&cfg, Path::new("."), crate::parallel::Execution::Sequential).unwrap();
        let sweep = res.sweep.unwrap();
        assert_eq!(sweep.len(), 360);
        assert!(sweep.iter().all(|p| p.std_past < std::f64::consts::FRAC_1_SQRT_2));
    }

    #[test]
    fn fig4_output_respects_variance_reduction() {
        let mut cfg = builtin("fig4").unwrap();
        cfg.grid.t_final = 0.5;
        let res = execute(&cfg, Path::new("."), crate::parallel::Execution::Sequential).unwrap();
        assert!(res.variance_reduction_holds().unwrap());
        let csv = res.trajectory_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "t,mean_f_1,mean_f_2,cov_f_11,cov_f_12,cov_f_22,mean_b_1,mean_b_2,cov_b_11,cov_b_12,cov_b_22,qp,var_p"
        );
        assert_eq!(csv.lines().count(), res.forward.grid().len() + 1);
    }
}
