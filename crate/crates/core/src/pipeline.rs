//! End-to-end experiment on the synthetic dataset: data, conventional CNN,
//! evidence pool, Evidence CNN and refinement, all seeded from one root.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate, SyntheticData, SyntheticSpec};
use crate::error::Result;
use crate::grounding::{Grounder, GroundingConfig, Method, ModelGrounder};
use crate::model::{accuracy, train_with_trace, Model, ModelSpec, TrainConfig};
use crate::pool::{build_ensemble_pool, build_pool, train_evidence_cnn, EvidencePool, PoolConfig};
use crate::refine::{evaluate, MetricsReport, RefinementConfig};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: SyntheticSpec,
    pub conventional: ModelSpec,
    pub conventional_train: TrainConfig,
    pub evidence: ModelSpec,
    pub evidence_train: TrainConfig,
    pub grounding: GroundingConfig,
    pub pool_levels: usize,
    pub refine: RefinementConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults sized for a single CPU core.
    pub fn desk(seed: u64) -> Self {
        let data = SyntheticSpec::default();
        let classes = data.classes;
        let mut grounding = GroundingConfig::default();
        grounding.rise.masks = 64;
        grounding.rise.seed = seed::derive(seed, "rise");
        let refine = RefinementConfig { grounding: grounding.clone(), ..RefinementConfig::default() };
        ExperimentConfig {
            seed,
            data: SyntheticSpec { seed: seed::derive(seed, "data"), ..data },
            conventional: ModelSpec::conventional(classes),
            conventional_train: TrainConfig {
                learning_rate: 0.03,
                iterations: 2000,
                decay_every: 1600,
                seed: seed::derive(seed, "train"),
                ..TrainConfig::default()
            },
            evidence: ModelSpec::evidence(classes),
            evidence_train: TrainConfig {
                learning_rate: 0.03,
                iterations: 1000,
                decay_every: 800,
                seed: seed::derive(seed, "evidence"),
                ..TrainConfig::default()
            },
            grounding,
            pool_levels: 2,
            refine,
        }
    }
}

/// Dataset plus trained conventional CNN, shared by the pool variants.
pub struct Prepared {
    pub data: SyntheticData,
    pub conventional: Model,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seconds: f64,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let t = Instant::now();
    let data = generate(&cfg.data)?;
    let (conventional, _) = train_with_trace(&data.train.images, &cfg.conventional, &cfg.conventional_train)?;
    let train_accuracy = accuracy(&conventional, &data.train.images)?;
    let test_accuracy = accuracy(&conventional, &data.test.images)?;
    Ok(Prepared { data, conventional, train_accuracy, test_accuracy, seconds: t.elapsed().as_secs_f64() })
}

pub struct Run {
    pub pool: EvidencePool,
    pub evidence: Model,
    pub report: MetricsReport,
    pub pool_seconds: f64,
    pub evidence_seconds: f64,
    pub refine_seconds: f64,
}

fn finish(p: &Prepared, cfg: &ExperimentConfig, pool: EvidencePool, pool_seconds: f64) -> Result<Run> {
    let t = Instant::now();
    let (evidence, _) = train_evidence_cnn(&pool, &cfg.evidence, &cfg.evidence_train)?;
    let evidence_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut rc = cfg.refine.clone();
    rc.evidence_side = Some(cfg.evidence.input_size);
    let report = evaluate(&p.data.test.images, &p.conventional, &evidence, &rc)?;
    Ok(Run { pool, evidence, report, pool_seconds, evidence_seconds, refine_seconds: t.elapsed().as_secs_f64() })
}

/// Guided Zoom with a single-method pool built with `cfg.pool_levels`
/// rounds of erasing.
pub fn run_guided_zoom(p: &Prepared, cfg: &ExperimentConfig) -> Result<Run> {
    let t = Instant::now();
    let grounder = ModelGrounder::new(&p.conventional, cfg.grounding.clone());
    let train = &p.data.train;
    let mut pool = build_pool(
        &train.images,
        train.classes,
        &p.conventional,
        &grounder,
        &PoolConfig::new(cfg.pool_levels, &cfg.grounding),
    )?;
    pool.manifest.grounding = vec![cfg.grounding.clone()];
    finish(p, cfg, pool, t.elapsed().as_secs_f64())
}

/// Ensemble Guided Zoom: the union of level-0 cEB, Grad-CAM and RISE pools.
/// Test-time refinement is unchanged.
pub fn run_ensemble(p: &Prepared, cfg: &ExperimentConfig) -> Result<Run> {
    let t = Instant::now();
    let cfgs: Vec<GroundingConfig> =
        [Method::Ceb, Method::GradCam, Method::Rise].iter().map(|&m| cfg.grounding.clone().with_method(m)).collect();
    let grounders: Vec<ModelGrounder> = cfgs.iter().map(|c| ModelGrounder::new(&p.conventional, c.clone())).collect();
    let refs: Vec<&dyn Grounder> = grounders.iter().map(|g| g as &dyn Grounder).collect();
    let train = &p.data.train;
    let mut pool = build_ensemble_pool(
        &train.images,
        train.classes,
        &p.conventional,
        &refs,
        cfg.grounding.patch_size,
        cfg.grounding.erase_size,
    )?;
    pool.manifest.grounding = cfgs;
    finish(p, cfg, pool, t.elapsed().as_secs_f64())
}
