use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mtekit::data::FoodGroup;
use mtekit::inference::DEFAULT_REPLICATES;
use mtekit::pipeline::DEFAULT_POLICY_SHIFT;
use mtekit::{ColumnRole, InstrumentMode, SeType};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ols,
    Iv,
    Mte,
    Normal,
    All,
}

impl Estimator {
    pub fn includes(self, other: Estimator) -> bool {
        self == Estimator::All || self == other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    /// 0 disables the bootstrap.
    pub replicates: usize,
    pub seed: u64,
    pub cluster: Option<String>,
    /// Re-select bandwidths in every replicate instead of pinning them.
    pub reselect_bandwidth: bool,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            seed: 1,
            cluster: None,
            reselect_bandwidth: false,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub roles: Vec<ColumnRole>,
    /// Food category → group; triggers construction of the food outcomes.
    pub food_groups: Option<BTreeMap<String, FoodGroup>>,
    /// Periods per year by category; unlisted categories use 52.
    pub annualization: BTreeMap<String, f64>,
    /// Outcome column to analyse, e.g. `log_unhealthy`.
    pub outcome: Option<String>,
    pub estimator: Estimator,
    pub instrument_mode: InstrumentMode,
    /// Covariates interacted with the instrument; all covariates when absent.
    pub interact_with: Option<Vec<String>>,
    pub policy_shift: f64,
    pub policy_instrument: Option<String>,
    pub v_grid: Option<Vec<f64>>,
    pub bandwidth: Option<f64>,
    pub trim: f64,
    pub se: SeType,
    pub bootstrap: BootstrapConfig,
    pub output_dir: PathBuf,
    pub weak_instrument_threshold: f64,
    pub weak_instrument_fatal: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            roles: Vec::new(),
            food_groups: None,
            annualization: BTreeMap::new(),
            outcome: None,
            estimator: Estimator::All,
            instrument_mode: InstrumentMode::Distance,
            interact_with: None,
            policy_shift: DEFAULT_POLICY_SHIFT,
            policy_instrument: None,
            v_grid: None,
            bandwidth: None,
            trim: 0.01,
            se: SeType::RobustHc1,
            bootstrap: BootstrapConfig::default(),
            output_dir: PathBuf::from("mtekit-out"),
            weak_instrument_threshold: 10.0,
            weak_instrument_fatal: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if !(self.policy_shift > 0.0 && self.policy_shift < 1.0) {
            return bad(format!(
                "policy_shift must lie in (0, 1), got {}",
                self.policy_shift
            ));
        }
        if !(0.0..0.5).contains(&self.trim) {
            return bad(format!("trim must lie in [0, 0.5), got {}", self.trim));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0) {
                return bad(format!("bandwidth must be positive, got {h}"));
            }
        }
        if let Some(g) = &self.v_grid {
            if g.is_empty()
                || g.iter().any(|v| !(*v > 0.0 && *v < 1.0))
                || g.windows(2).any(|w| w[1] <= w[0])
            {
                return bad(
                    "v_grid must be non-empty, strictly ascending and inside (0, 1)".into(),
                );
            }
        }
        let b = &self.bootstrap;
        if b.replicates > 0 && b.replicates < mtekit::inference::MIN_REPLICATES {
            return bad(format!(
                "bootstrap needs 0 (off) or at least {} replicates, got {}",
                mtekit::inference::MIN_REPLICATES,
                b.replicates
            ));
        }
        if !(b.level > 0.0 && b.level < 1.0) {
            return bad(format!(
                "bootstrap level must lie in (0, 1), got {}",
                b.level
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Built-in model name; ignored when `spec` is given.
    pub preset: Option<String>,
    /// Path to a JSON model description.
    pub spec: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            preset: None,
            spec: None,
            n: 1000,
            seed: 1,
            out: PathBuf::from("simulated.csv"),
        }
    }
}

/// Machine-readable record of a run. Passing it back through `--config`
/// repeats the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest<C> {
    pub schema: u32,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: C,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

/// Reads a config file, accepting either a bare config or a manifest.
pub fn load_config<C: DeserializeOwned>(path: &Path, command: &str) -> Result<C, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let is_manifest = value.get("schema").is_some() && value.get("config").is_some();
    let parsed = if is_manifest {
        let m: Manifest<C> = serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if m.command != command {
            return Err(CliError::Input(format!(
                "{} is a manifest for `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        m.config
    } else {
        serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
    };
    Ok(parsed)
}

pub fn write_manifest<C: Serialize>(
    path: &Path,
    command: &str,
    seed: Option<u64>,
    config: &C,
    outputs: Vec<String>,
    details: Option<serde_json::Value>,
) -> Result<(), CliError> {
    let m = Manifest {
        schema: SCHEMA,
        version: VERSION.to_string(),
        command: command.to_string(),
        seed,
        config,
        outputs,
        details,
    };
    write_json(path, &m)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err("expected start:stop:step".into());
    };
    if !(step > 0.0) || stop < start {
        return Err("need step > 0 and stop >= start".into());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

/// `column=role` or `column=item_expenditure:category`.
pub fn parse_role(s: &str) -> Result<ColumnRole, String> {
    let (name, rest) = s.split_once('=').ok_or("expected column=role")?;
    let (role, category) = match rest.split_once(':') {
        Some((r, c)) => (r, Some(c.to_string())),
        None => (rest, None),
    };
    let role = serde_json::from_value(serde_json::Value::String(role.to_string()))
        .map_err(|_| format!("unknown role `{role}`"))?;
    Ok(ColumnRole {
        name: name.to_string(),
        role,
        category,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_includes_endpoint() {
        let g = parse_grid("0.01:0.99:0.01").unwrap();
        assert_eq!(g.len(), 99);
        assert!((g[98] - 0.99).abs() < 1e-12);
        assert!(parse_grid("0.5:0.1:0.1").is_err());
    }

    #[test]
    fn role_syntax() {
        let r = parse_role("rice=item_expenditure:staples").unwrap();
        assert_eq!(r.category.as_deref(), Some("staples"));
        assert!(parse_role("y=nonsense").is_err());
        assert!(parse_role("y").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"polcy_shift": 0.2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bootstrap": {"reps": 10}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"policy_shift": 0.2}"#).unwrap();
        assert_eq!(c.trim, 0.01);
    }

    #[test]
    fn shift_must_be_a_fraction() {
        let c = RunConfig {
            policy_shift: 1.5,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
