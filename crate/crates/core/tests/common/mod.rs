#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use cyclic_empc::config::ExperimentConfig;
use cyclic_empc::solver_lq::NcsBackend;
use cyclic_empc::{BoxSet, NcsOptions, NcsPlant, NcsSystem, TokenBucketParams};
use nalgebra::{DMatrix, DVector};

pub fn bundled_config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/token_bucket.toml");
    ExperimentConfig::load(&path).expect("bundled configuration loads")
}

pub fn bundled_system() -> (ExperimentConfig, Arc<NcsSystem>, NcsBackend) {
    let cfg = bundled_config();
    let sys = Arc::new(cfg.system().unwrap());
    let backend = NcsBackend::new(sys.clone()).with_options(cfg.schedule_options());
    (cfg, sys, backend)
}

/// Scalar plant `x⁺ = a x + u` on the reference bucket (g = 1, c = 3, b = 10) with symmetric boxes.
pub fn scalar_system(a: f64, state_bound: f64, input_bound: f64) -> NcsSystem {
    let v = |x: f64| DVector::from_element(1, x);
    let plant = NcsPlant::new(
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, 1.0),
        BoxSet::new(v(-state_bound), v(state_bound)).unwrap(),
        BoxSet::new(v(-input_bound), v(input_bound)).unwrap(),
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
    )
    .unwrap();
    NcsSystem::new(
        plant,
        TokenBucketParams::new(1, 3, 10).unwrap(),
        NcsOptions::default(),
    )
    .unwrap()
}
