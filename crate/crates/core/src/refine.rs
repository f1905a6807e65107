//! Decision refinement: re-rank the conventional classifier's top-k
//! candidates by how well each candidate's own evidence, at several erasing
//! levels, is recognized by the Evidence CNN.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::grounding::{erase, extract_patch, peak, Grounder, GroundingConfig, ModelGrounder};
use crate::image::Image;
use crate::model::{topk, Classifier, Model};
use crate::pool::evidence_input;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub k: usize,
    /// Deepest erasing level `L`.
    pub levels: usize,
    /// Weight of the conventional prediction.
    pub base_weight: f64,
    /// `w_0 ..= w_L`.
    pub level_weights: Vec<f64>,
    pub grounding: GroundingConfig,
    /// Patches are resized to this side before scoring; `None` scores them
    /// at their native size.
    pub evidence_side: Option<usize>,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            k: 3,
            levels: 2,
            base_weight: 0.4,
            level_weights: vec![0.3, 0.2, 0.1],
            grounding: GroundingConfig::default(),
            evidence_side: Some(32),
        }
    }
}

impl RefinementConfig {
    /// Builds a config from a user-supplied `w, w_0, .., w_L` list,
    /// normalized to unit sum. The list must have `levels + 2` entries.
    pub fn with_weights(k: usize, levels: usize, weights: &[f64]) -> Result<Self> {
        if weights.len() != levels + 2 {
            return Err(Error::config(format!(
                "{} weights given, L = {levels} needs {} (w, w0..w{levels})",
                weights.len(),
                levels + 2
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config(format!("weights must be finite and non-negative: {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::config("weights sum to zero"));
        }
        let norm: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let cfg =
            RefinementConfig { k, levels, base_weight: norm[0], level_weights: norm[1..].to_vec(), ..Self::default() };
        Ok(cfg)
    }

    /// `w, w_0, .., w_L`.
    pub fn weights(&self) -> Vec<f64> {
        std::iter::once(self.base_weight).chain(self.level_weights.iter().copied()).collect()
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.k == 0 || self.k > classes {
            return Err(Error::config(format!("k = {} outside 1..={classes}", self.k)));
        }
        if self.level_weights.len() != self.levels + 1 {
            return Err(Error::config(format!("{} level weights for L = {}", self.level_weights.len(), self.levels)));
        }
        let w = self.weights();
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config(format!("weights must be non-negative: {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("weights sum to {total}, not 1")));
        }
        if self.level_weights.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::config(format!("level weights must not increase: {:?}", self.level_weights)));
        }
        if self.evidence_side == Some(0) {
            return Err(Error::config("evidence side must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    /// Saliency peak the evidence patch is centered on.
    pub center: (usize, usize),
    /// Evidence CNN prediction for the patch.
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub class_id: usize,
    pub levels: Vec<LevelTrace>,
    /// First level whose map was degenerate; it and deeper levels add nothing.
    pub skipped_from: Option<usize>,
    pub tot: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    /// Conventional prediction for the whole image.
    pub base: Vec<f64>,
    /// Candidates in conventional rank order.
    pub candidates: Vec<CandidateTrace>,
    pub chosen: usize,
}

/// Refines one image. `grounder` explains the conventional classifier;
/// `evidence` scores the patches.
pub fn refine_with(
    image: &Image,
    conventional: &dyn Classifier,
    grounder: &dyn Grounder,
    evidence: &dyn Classifier,
    cfg: &RefinementConfig,
) -> Result<(usize, RefinementTrace)> {
    let v0 = conventional.classify(image)?;
    cfg.validate(v0.classes())?;
    let mut candidates = Vec::with_capacity(cfg.k);
    for t in topk(&v0, cfg.k)? {
        let mut tot = cfg.base_weight * v0.probs()[t];
        let mut cur = image.clone();
        let mut levels: Vec<LevelTrace> = Vec::new();
        let mut skipped_from = None;
        for l in 0..=cfg.levels {
            if let Some(prev) = levels.last() {
                cur = erase(&cur, prev.center, cfg.grounding.erase_size)?;
            }
            let map = grounder.ground(&cur, t)?;
            if map.is_degenerate() {
                skipped_from = Some(l);
                break;
            }
            let center = peak(&map)?;
            let patch = extract_patch(&cur, center, cfg.grounding.patch_size)?;
            let patch = match cfg.evidence_side {
                Some(s) => evidence_input(&patch, s),
                None => patch,
            };
            let v = evidence.classify(&patch)?;
            if v.classes() != v0.classes() {
                return Err(Error::config(format!(
                    "evidence model has {} classes, conventional model {}",
                    v.classes(),
                    v0.classes()
                )));
            }
            tot += cfg.level_weights[l] * v.probs()[t];
            levels.push(LevelTrace { level: l, center, probs: v.probs().to_vec() });
        }
        candidates.push(CandidateTrace { class_id: t, levels, skipped_from, tot });
    }
    // strict comparison keeps ties with the higher-ranked candidate
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.tot > candidates[best].tot {
            best = i;
        }
    }
    let chosen = candidates[best].class_id;
    Ok((chosen, RefinementTrace { base: v0.probs().to_vec(), candidates, chosen }))
}

/// Refines one image with the trained pair of models, grounding the
/// conventional model as configured in `cfg.grounding`.
pub fn refine(
    image: &Image,
    conventional: &Model,
    evidence: &Model,
    cfg: &RefinementConfig,
) -> Result<(usize, RefinementTrace)> {
    let grounder = ModelGrounder::new(conventional, cfg.grounding.clone());
    refine_with(image, conventional, &grounder, evidence, cfg)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    /// Wrong before, right after.
    pub improved: usize,
    /// Right before, wrong after.
    pub harmed: usize,
    /// Changed between two wrong classes.
    pub neutral: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub count: usize,
    pub baseline_top1: f64,
    pub refined_top1: f64,
}

/// Outcome for one test image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: usize,
    pub baseline_topk: Vec<usize>,
    pub refined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub baseline_top1: f64,
    pub baseline_topk: f64,
    pub refined_top1: f64,
    pub k: usize,
    #[serde(rename = "L")]
    pub levels: usize,
    pub weights: Vec<f64>,
    pub changed: ChangeCounts,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
    #[serde(skip)]
    pub decisions: Vec<Decision>,
}

/// Refines every test image (in parallel, collected in input order) and
/// summarizes baseline and refined accuracy.
pub fn evaluate_with(
    test: &[LabeledImage],
    classes: usize,
    conventional: &dyn Classifier,
    grounder: &dyn Grounder,
    evidence: &dyn Classifier,
    cfg: &RefinementConfig,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    cfg.validate(classes)?;
    let decisions: Vec<Decision> = test
        .par_iter()
        .map(|s| {
            let (refined, trace) = refine_with(&s.image, conventional, grounder, evidence, cfg)?;
            let baseline_topk = trace.candidates.iter().map(|c| c.class_id).collect();
            Ok(Decision { label: s.label, baseline_topk, refined })
        })
        .collect::<Result<_>>()?;
    Ok(summarize(decisions, classes, cfg))
}

pub fn evaluate(
    test: &[LabeledImage],
    conventional: &Model,
    evidence: &Model,
    cfg: &RefinementConfig,
) -> Result<MetricsReport> {
    let grounder = ModelGrounder::new(conventional, cfg.grounding.clone());
    evaluate_with(test, conventional.spec().classes, conventional, &grounder, evidence, cfg)
}

fn summarize(decisions: Vec<Decision>, classes: usize, cfg: &RefinementConfig) -> MetricsReport {
    let n = decisions.len() as f64;
    let mut changed = ChangeCounts::default();
    let mut per = vec![(0usize, 0usize, 0usize); classes];
    let (mut b1, mut bk, mut r1) = (0usize, 0usize, 0usize);
    for d in &decisions {
        let base_ok = d.baseline_topk[0] == d.label;
        let ref_ok = d.refined == d.label;
        b1 += base_ok as usize;
        bk += d.baseline_topk.contains(&d.label) as usize;
        r1 += ref_ok as usize;
        if d.refined != d.baseline_topk[0] {
            match (base_ok, ref_ok) {
                (false, true) => changed.improved += 1,
                (true, false) => changed.harmed += 1,
                _ => changed.neutral += 1,
            }
        }
        if let Some(p) = per.get_mut(d.label) {
            p.0 += 1;
            p.1 += base_ok as usize;
            p.2 += ref_ok as usize;
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    MetricsReport {
        images: decisions.len(),
        baseline_top1: b1 as f64 / n,
        baseline_topk: bk as f64 / n,
        refined_top1: r1 as f64 / n,
        k: cfg.k,
        levels: cfg.levels,
        weights: cfg.weights(),
        changed,
        per_class: per
            .iter()
            .enumerate()
            .map(|(c, &(count, b, r))| ClassMetrics {
                class_id: c,
                count,
                baseline_top1: frac(b, count),
                refined_top1: frac(r, count),
            })
            .collect(),
        provenance: None,
        decisions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{FnGrounder, Method, SaliencyMap};
    use crate::nn::Prediction;

    fn hot_grounder() -> FnGrounder<impl Fn(&Image, usize) -> Result<SaliencyMap> + Sync> {
        FnGrounder(Method::Ceb, |img: &Image, c: usize| {
            let mut g = vec![0.0; img.height() * img.width()];
            let n = g.len();
            g[c % n] = 1.0;
            SaliencyMap::new(g, img.height(), img.width(), c, Method::Ceb)
        })
    }

    fn fixed(p: Vec<f64>) -> impl Fn(&Image) -> Result<Prediction> + Sync {
        move |_: &Image| Prediction::new(p.clone())
    }

    fn small_cfg(k: usize, weights: &[f64]) -> RefinementConfig {
        let mut cfg = RefinementConfig::with_weights(k, weights.len() - 2, weights).unwrap();
        cfg.grounding.patch_size = 4;
        cfg.grounding.erase_size = 2;
        cfg.evidence_side = None;
        cfg
    }

    fn img() -> Image {
        Image::filled(3, 8, 8, 0.5)
    }

    #[test]
    fn hand_evaluated_two_candidates() {
        // v0 = [0.5, 0.3, 0.2]; evidence scores A at 0.1 and B at 0.9
        let evidence = |patch: &Image| {
            let _ = patch;
            Prediction::new(vec![0.1, 0.9, 0.0])
        };
        let cfg = small_cfg(2, &[0.4, 0.6]);
        let (c, trace) = refine_with(&img(), &fixed(vec![0.5, 0.3, 0.2]), &hot_grounder(), &evidence, &cfg).unwrap();
        assert!((trace.candidates[0].tot - 0.26).abs() < 1e-12);
        assert!((trace.candidates[1].tot - 0.66).abs() < 1e-12);
        assert_eq!(c, 1);
    }

    #[test]
    fn uniform_evidence_keeps_top1() {
        let cfg = small_cfg(3, &[0.4, 0.3, 0.2, 0.1]);
        let (c, _) =
            refine_with(&img(), &fixed(vec![0.1, 0.5, 0.4]), &hot_grounder(), &fixed(vec![1.0 / 3.0; 3]), &cfg)
                .unwrap();
        assert_eq!(c, 1);
    }

    #[test]
    fn k_one_is_top1() {
        let cfg = small_cfg(1, &[0.4, 0.3, 0.2, 0.1]);
        let (c, t) =
            refine_with(&img(), &fixed(vec![0.2, 0.7, 0.1]), &hot_grounder(), &fixed(vec![1.0, 0.0, 0.0]), &cfg)
                .unwrap();
        assert_eq!((c, t.candidates.len()), (1, 1));
    }

    #[test]
    fn second_candidate_with_full_evidence_always_wins() {
        // 0.4·v[c2] + 0.6 beats 0.4·v[c1] whenever v[c1] − v[c2] < 1.5
        let cfg = small_cfg(3, &[0.4, 0.3, 0.2, 0.1]);
        let ev = |_: &Image| Prediction::new(vec![0.0, 0.0, 1.0]);
        for v0 in [vec![0.98, 0.0, 0.02], vec![0.5, 0.2, 0.3]] {
            let (c, _) = refine_with(&img(), &fixed(v0), &hot_grounder(), &ev, &cfg).unwrap();
            assert_eq!(c, 2);
        }
    }

    #[test]
    fn ties_go_to_higher_rank() {
        let cfg = small_cfg(2, &[0.0, 1.0]);
        let (c, _) =
            refine_with(&img(), &fixed(vec![0.3, 0.6, 0.1]), &hot_grounder(), &fixed(vec![0.5, 0.5, 0.0]), &cfg)
                .unwrap();
        assert_eq!(c, 1);
    }

    #[test]
    fn degenerate_level_is_skipped() {
        let cfg = small_cfg(2, &[0.4, 0.3, 0.2, 0.1]);
        // class 0 has no evidence at all; class 1 loses it after one erase
        let g = FnGrounder(Method::Ceb, |img: &Image, c: usize| {
            let mut grid = vec![0.0; img.height() * img.width()];
            if c == 1 && img.get(0, 0, 0) > 0.0 {
                grid[0] = 1.0;
            }
            SaliencyMap::new(grid, img.height(), img.width(), c, Method::Ceb)
        });
        let (_, t) = refine_with(&img(), &fixed(vec![0.6, 0.4]), &g, &fixed(vec![0.5, 0.5]), &cfg).unwrap();
        assert_eq!(t.candidates[0].skipped_from, Some(0));
        assert_eq!(t.candidates[1].skipped_from, Some(1));
        assert_eq!(t.candidates[1].levels.len(), 1);
        assert!((t.candidates[0].tot - 0.24).abs() < 1e-12);
    }

    #[test]
    fn weight_validation() {
        assert!(RefinementConfig::with_weights(3, 2, &[0.4, 0.3, 0.2]).is_err());
        assert!(RefinementConfig::with_weights(3, 1, &[0.0, 0.0, 0.0]).is_err());
        let c = RefinementConfig::with_weights(3, 1, &[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(c.weights(), vec![0.5, 0.25, 0.25]);
        assert!(RefinementConfig::with_weights(3, 1, &[0.4, 0.2, 0.4]).unwrap().validate(10).is_err());
        assert!(RefinementConfig::default().validate(10).is_ok());
        assert!(RefinementConfig::default().validate(2).is_err());
    }

    #[test]
    fn empty_test_set_is_an_argument_error() {
        let cfg = small_cfg(1, &[0.5, 0.5]);
        let r = evaluate_with(&[], 2, &fixed(vec![0.5, 0.5]), &hot_grounder(), &fixed(vec![0.5, 0.5]), &cfg);
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
