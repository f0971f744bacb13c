//! Experiment configuration for the token-bucket instantiation, read from TOML.
//!
//! Matrices are row-major arrays; their shape follows from `plant.n` and `plant.m`.
//! Errors in shapes or horizon settings name the offending line.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::horizon::CyclicHorizon;
use crate::model::{BoxSet, State};
use crate::ncs::{min_cycle_length, NcsOptions, NcsPlant, NcsState, NcsSystem, TokenBucketParams};
use crate::solver_lq::{EllipsoidMethod, QpOptions, ScheduleOptions};
use crate::verify::{ClosedLoopCheckOptions, OracleOptions, SuiteOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub n: usize,
    pub m: usize,
    pub a: Spanned<Vec<f64>>,
    pub b: Spanned<Vec<f64>>,
    pub q: Spanned<Vec<f64>>,
    pub r: Spanned<Vec<f64>>,
    pub state_lower: Spanned<Vec<f64>>,
    pub state_upper: Spanned<Vec<f64>>,
    pub input_lower: Spanned<Vec<f64>>,
    pub input_upper: Spanned<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketConfig {
    pub generation: i64,
    pub cost: i64,
    pub size: i64,
    pub initial: Spanned<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub xp: Spanned<Vec<f64>>,
    pub us: Spanned<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub max: Spanned<usize>,
    pub steps: u64,
    /// Cycles compared by the equivalence run.
    #[serde(default = "default_cycles")]
    pub cycles: u64,
}

fn default_cycles() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub qp: f64,
    pub certificate: f64,
    pub identity: f64,
    pub closed_loop: f64,
    pub epsilon: f64,
    pub burn_in: usize,
    pub equivalence: f64,
    pub ellipsoid_method: EllipsoidMethod,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            qp: 1e-9,
            certificate: 1e-8,
            identity: 1e-10,
            closed_loop: 1e-6,
            epsilon: 1e-3,
            burn_in: 10,
            equivalence: 1e-8,
            ellipsoid_method: EllipsoidMethod::Multiplier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminalConfig {
    pub storage_scale: f64,
    pub level_scale: f64,
    pub cost_scale: f64,
    pub riccati_tolerance: f64,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        let d = NcsOptions::default();
        Self {
            storage_scale: d.storage_scale,
            level_scale: d.level_scale,
            cost_scale: d.cost_scale,
            riccati_tolerance: d.riccati_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub samples: usize,
    pub ocp_samples: usize,
    pub radii: Vec<f64>,
    pub samples_per_radius: usize,
    /// Requires the horizon to be a multiple of the cycle length.
    pub stability_check: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let d = SuiteOptions::default();
        Self {
            samples: d.samples,
            ocp_samples: d.ocp_samples,
            radii: d.radii,
            samples_per_radius: d.samples_per_radius,
            stability_check: true,
        }
    }
}

/// Scalar token-bucket instance compared against the input-grid oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    pub state_bound: f64,
    pub input_bound: f64,
    pub grid_points: usize,
    pub instances: usize,
    /// Allowed `|V_grid − V*|` on grids that contain the optimal inputs.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            a: 1.1,
            b: 1.0,
            q: 1.0,
            r: 1.0,
            state_bound: 2.0,
            input_bound: 1.0,
            grid_points: 21,
            instances: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub trace: String,
    pub plot: String,
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            trace: "trace.csv".into(),
            plot: "plot.csv".into(),
            report: "report.toml".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantConfig,
    pub bucket: BucketConfig,
    pub initial: InitialConfig,
    pub horizon: HorizonConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub terminal: TerminalConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn located<T>(source: Option<&str>, field: &Spanned<T>, msg: String) -> Error {
    match source {
        Some(s) => Error::Config(format!("line {}: {msg}", line_of(s, field.span().start))),
        None => Error::Config(msg),
    }
}

impl ExperimentConfig {
    /// Parses and validates. Syntax errors carry toml's own line/column report.
    pub fn parse(source: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check(Some(source))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.check(None)
    }

    fn check(&self, source: Option<&str>) -> Result<()> {
        let (n, m) = (self.plant.n, self.plant.m);
        if n == 0 || m == 0 {
            return Err(Error::Config("plant.n and plant.m must be positive".into()));
        }
        let p = &self.plant;
        for (name, field, len) in [
            ("plant.a", &p.a, n * n),
            ("plant.b", &p.b, n * m),
            ("plant.q", &p.q, n * n),
            ("plant.r", &p.r, m * m),
            ("plant.state_lower", &p.state_lower, n),
            ("plant.state_upper", &p.state_upper, n),
            ("plant.input_lower", &p.input_lower, m),
            ("plant.input_upper", &p.input_upper, m),
            ("initial.xp", &self.initial.xp, n),
            ("initial.us", &self.initial.us, m),
        ] {
            if field.get_ref().len() != len {
                return Err(located(
                    source,
                    field,
                    format!(
                        "{name} has {} entries, expected {len}",
                        field.get_ref().len()
                    ),
                ));
            }
        }
        let bucket = self.bucket_params()?;
        let beta0 = *self.bucket.initial.get_ref();
        if !(0..=bucket.size()).contains(&beta0) {
            return Err(located(
                source,
                &self.bucket.initial,
                format!("initial bucket level {beta0} outside 0..={}", bucket.size()),
            ));
        }
        let cycle = min_cycle_length(&bucket);
        let max = *self.horizon.max.get_ref();
        if max < cycle {
            return Err(located(
                source,
                &self.horizon.max,
                format!("horizon {max} is shorter than the cycle length {cycle} = ceil(c/g)"),
            ));
        }
        if self.verify.stability_check && !max.is_multiple_of(cycle) {
            return Err(located(
                source,
                &self.horizon.max,
                format!("horizon {max} must be a multiple of the cycle length {cycle} when the stability check is on"),
            ));
        }
        if self.verify.radii.is_empty()
            || self.verify.radii.windows(2).any(|w| !(w[0] < w[1]))
            || !(self.verify.radii[0] > 0.0)
        {
            return Err(Error::Config(
                "verify.radii must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn bucket_params(&self) -> Result<TokenBucketParams> {
        TokenBucketParams::new(self.bucket.generation, self.bucket.cost, self.bucket.size)
            .map_err(|e| Error::Config(format!("bucket: {e}")))
    }

    pub fn plant(&self) -> Result<NcsPlant> {
        let (n, m) = (self.plant.n, self.plant.m);
        let p = &self.plant;
        let mat = |v: &Spanned<Vec<f64>>, r, c| DMatrix::from_row_slice(r, c, v.get_ref());
        let vec = |v: &Spanned<Vec<f64>>| DVector::from_vec(v.get_ref().clone());
        NcsPlant::new(
            mat(&p.a, n, n),
            mat(&p.b, n, m),
            BoxSet::new(vec(&p.state_lower), vec(&p.state_upper))?,
            BoxSet::new(vec(&p.input_lower), vec(&p.input_upper))?,
            mat(&p.q, n, n),
            mat(&p.r, m, m),
        )
    }

    pub fn ncs_options(&self) -> NcsOptions {
        let t = &self.terminal;
        NcsOptions {
            storage_scale: t.storage_scale,
            level_scale: t.level_scale,
            cost_scale: t.cost_scale,
            riccati_tolerance: t.riccati_tolerance,
        }
    }

    pub fn system(&self) -> Result<NcsSystem> {
        NcsSystem::new(self.plant()?, self.bucket_params()?, self.ncs_options())
    }

    pub fn initial_state(&self) -> State {
        NcsState::new(
            DVector::from_vec(self.initial.xp.get_ref().clone()),
            DVector::from_vec(self.initial.us.get_ref().clone()),
            *self.bucket.initial.get_ref(),
        )
        .to_vector()
    }

    pub fn horizon(&self) -> Result<CyclicHorizon> {
        CyclicHorizon::new(
            *self.horizon.max.get_ref(),
            min_cycle_length(&self.bucket_params()?),
        )
    }

    /// Scalar system of the `[oracle]` table on the configured bucket.
    pub fn oracle_system(&self) -> Result<NcsSystem> {
        let o = &self.oracle;
        let v = |x: f64| DVector::from_element(1, x);
        let s = |x: f64| DMatrix::from_element(1, 1, x);
        let plant = NcsPlant::new(
            s(o.a),
            s(o.b),
            BoxSet::new(v(-o.state_bound), v(o.state_bound))?,
            BoxSet::new(v(-o.input_bound), v(o.input_bound))?,
            s(o.q),
            s(o.r),
        )?;
        NcsSystem::new(plant, self.bucket_params()?, NcsOptions::default())
    }

    pub fn oracle_options(&self) -> OracleOptions {
        OracleOptions {
            horizon: *self.horizon.max.get_ref(),
            grid_points: self.oracle.grid_points,
            instances: self.oracle.instances,
            seed: self.seed,
            schedule: self.schedule_options(),
        }
    }

    pub fn schedule_options(&self) -> ScheduleOptions {
        ScheduleOptions {
            qp: QpOptions {
                tolerance: self.tolerances.qp,
                ..QpOptions::default()
            },
            ellipsoid_method: self.tolerances.ellipsoid_method,
            ..ScheduleOptions::default()
        }
    }

    pub fn suite_options(&self) -> SuiteOptions {
        SuiteOptions {
            samples: self.verify.samples,
            ocp_samples: self.verify.ocp_samples,
            seed: self.seed,
            tolerance: self.tolerances.certificate,
            identity_tolerance: self.tolerances.identity,
            max_horizon: *self.horizon.max.get_ref(),
            radii: self.verify.radii.clone(),
            samples_per_radius: self.verify.samples_per_radius,
        }
    }

    pub fn closed_loop_options(&self) -> ClosedLoopCheckOptions {
        ClosedLoopCheckOptions {
            tolerance: self.tolerances.closed_loop,
            epsilon: self.tolerances.epsilon,
            burn_in: self.tolerances.burn_in,
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Re-reads a configuration embedded as a table, e.g. from a trace header.
    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let text = toml::to_string(table).map_err(|e| Error::Config(e.to_string()))?;
        Self::parse(&text)
    }

    /// SHA-256 of the canonical serialization, in hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
seed = 7

[plant]
n = 1
m = 1
a = [1.1]
b = [1.0]
q = [1.0]
r = [1.0]
state_lower = [-2.0]
state_upper = [2.0]
input_lower = [-1.0]
input_upper = [1.0]

[bucket]
generation = 1
cost = 3
size = 10
initial = 2

[initial]
xp = [0.5]
us = [0.0]

[horizon]
max = 3
steps = 6
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.horizon().unwrap().cycle_length(), 3);
        assert_eq!(cfg.initial_state().as_slice(), &[0.5, 0.0, 2.0]);
        assert!(cfg.system().is_ok());
        assert_eq!(cfg.tolerances, Tolerances::default());
    }

    #[test]
    fn round_trip_and_hash() {
        let cfg = ExperimentConfig::parse(SCALAR).unwrap();
        let again = ExperimentConfig::from_table(&cfg.to_table().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
        let other = ExperimentConfig::parse(&SCALAR.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn dimension_error_names_the_line() {
        let bad = SCALAR.replace("b = [1.0]", "b = [1.0, 2.0]");
        let err = ExperimentConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("line 8") && err.contains("plant.b"), "{err}");
    }

    #[test]
    fn short_horizon_is_rejected() {
        let err = ExperimentConfig::parse(&SCALAR.replace("max = 3", "max = 2"))
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("line 27") && err.contains("cycle length 3"),
            "{err}"
        );
        let err = ExperimentConfig::parse(&SCALAR.replace("max = 3", "max = 4"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("multiple"), "{err}");
        let relaxed =
            SCALAR.replace("max = 3", "max = 4") + "\n[verify]\nstability_check = false\n";
        assert!(ExperimentConfig::parse(&relaxed).is_ok());
    }

    #[test]
    fn syntax_and_unknown_keys() {
        assert!(ExperimentConfig::parse("seed = ").is_err());
        let err = ExperimentConfig::parse(&SCALAR.replace("seed = 7", "seed = 7\nbogus = 1"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }
}
