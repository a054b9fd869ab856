//! Pair-level multimodal re-ranking.
//!
//! Retrieval runs on visual embeddings alone, which false-positives on
//! streams that merely share backgrounds or UI furniture. The re-ranker
//! rescores each (query, candidate) pair across every modality present on
//! both sides and squashes the fused similarity through a calibrated
//! logistic, producing the match probability that feeds clip-match
//! aggregation. Scorers are pluggable; the baseline weighted fusion can be
//! swapped for a distilled student model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::distill::MlpClassifier;
use crate::embedding::{cosine, EmbeddingVector};
use crate::error::{Error, Result};
use crate::stream::ClipRef;

/// One side of a clip pair: whatever modalities are available plus ASR text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSide {
    pub clip_ref: ClipRef,
    pub visual: Option<EmbeddingVector>,
    pub audio: Option<EmbeddingVector>,
    pub asr_text: Option<String>,
}

/// Re-rank score with its per-modality components. `value` is reproducible
/// from the components given the scorer's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankScore {
    pub value: f64,
    pub visual_sim: Option<f64>,
    pub text_sim: Option<f64>,
    pub audio_sim: Option<f64>,
}

/// Non-negative fusion weights, not all zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub visual: f64,
    pub text: f64,
    pub audio: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights { visual: 0.6, text: 0.3, audio: 0.1 }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.visual, self.text, self.audio];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("fusion weights must be >= 0"));
        }
        if ws.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("fusion weights must not all be zero"));
        }
        Ok(())
    }
}

/// Logistic calibration `value = 1 / (1 + exp(-(a * fusion + b)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { a: 8.0, b: -4.0 }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Jaccard overlap of lowercase whitespace-token sets; 0 when both empty.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<String> = a.split_whitespace().map(str::to_lowercase).collect();
    let tb: BTreeSet<String> = b.split_whitespace().map(str::to_lowercase).collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

fn component_sims(query: &ClipSide, candidate: &ClipSide) -> Result<RerankScore> {
    let visual_sim = match (&query.visual, &candidate.visual) {
        (Some(q), Some(c)) => Some(cosine(q, c)?),
        _ => None,
    };
    let audio_sim = match (&query.audio, &candidate.audio) {
        (Some(q), Some(c)) => Some(cosine(q, c)?),
        _ => None,
    };
    let text_sim = match (&query.asr_text, &candidate.asr_text) {
        (Some(q), Some(c)) => Some(text_similarity(q, c)),
        _ => None,
    };
    if visual_sim.is_none() && audio_sim.is_none() && text_sim.is_none() {
        return Err(Error::invalid(format!(
            "no shared modality between {} and {}",
            query.clip_ref, candidate.clip_ref
        )));
    }
    Ok(RerankScore { value: 0.0, visual_sim, text_sim, audio_sim })
}

/// Weighted fusion over shared modalities followed by logistic calibration.
pub fn score_pair(
    query: &ClipSide,
    candidate: &ClipSide,
    weights: &FusionWeights,
    calibration: &Calibration,
) -> Result<RerankScore> {
    weights.validate()?;
    let mut score = component_sims(query, candidate)?;
    let mut acc = 0.0;
    let mut wsum = 0.0;
    if let Some(s) = score.visual_sim {
        acc += weights.visual * s;
        wsum += weights.visual;
    }
    if let Some(s) = score.text_sim {
        acc += weights.text * s;
        wsum += weights.text;
    }
    if let Some(s) = score.audio_sim {
        acc += weights.audio * s;
        wsum += weights.audio;
    }
    if wsum <= 0.0 {
        return Err(Error::invalid(
            "all weights on modalities absent from the pair",
        ));
    }
    let fusion = acc / wsum;
    score.value = sigmoid(calibration.a * fusion + calibration.b);
    Ok(score)
}

/// Pair scorer contract; immutable after construction and safe to share
/// across scoring workers.
pub trait PairScorer: Send + Sync {
    fn score(&self, query: &ClipSide, candidate: &ClipSide) -> Result<RerankScore>;
}

/// Baseline calibrated weighted-fusion scorer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionScorer {
    pub weights: FusionWeights,
    pub calibration: Calibration,
}

impl Default for FusionScorer {
    fn default() -> Self {
        FusionScorer {
            weights: FusionWeights::default(),
            calibration: Calibration::default(),
        }
    }
}

impl PairScorer for FusionScorer {
    fn score(&self, query: &ClipSide, candidate: &ClipSide) -> Result<RerankScore> {
        score_pair(query, candidate, &self.weights, &self.calibration)
    }
}

/// Distilled-student drop-in: featurizes the pair's component similarities
/// (absent modalities encoded as 0 with a presence flag) and reads the
/// model's positive-class probability as the match score.
pub struct MlpPairScorer {
    pub model: MlpClassifier,
    pub positive_class: usize,
}

impl MlpPairScorer {
    pub fn featurize(score: &RerankScore) -> Vec<f64> {
        let enc = |s: Option<f64>| match s {
            Some(v) => (v, 1.0),
            None => (0.0, 0.0),
        };
        let (v, vp) = enc(score.visual_sim);
        let (t, tp) = enc(score.text_sim);
        let (a, ap) = enc(score.audio_sim);
        vec![v, vp, t, tp, a, ap]
    }
}

impl PairScorer for MlpPairScorer {
    fn score(&self, query: &ClipSide, candidate: &ClipSide) -> Result<RerankScore> {
        let mut score = component_sims(query, candidate)?;
        let features = Self::featurize(&score);
        let probs = self.model.predict_proba(&features)?;
        let p = *probs.get(self.positive_class).ok_or_else(|| {
            Error::invalid(format!(
                "positive class {} out of range",
                self.positive_class
            ))
        })?;
        score.value = p;
        Ok(score)
    }
}

/// Rescore retrieved candidates, drop pairs below `tau`, and order the rest
/// by descending score with ties broken by `ClipRef`.
pub fn rerank(
    query: &ClipSide,
    candidates: &[ClipSide],
    scorer: &dyn PairScorer,
    tau: f64,
) -> Result<Vec<(ClipRef, RerankScore)>> {
    let mut out: Vec<(ClipRef, RerankScore)> = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let score = scorer.score(query, cand)?;
        if score.value >= tau {
            out.push((cand.clip_ref.clone(), score));
        }
    }
    out.sort_by(|a, b| {
        b.1.value
            .total_cmp(&a.1.value)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::synthetic_embed;
    use crate::stream::StreamId;

    fn clip_ref(s: &str, i: u32) -> ClipRef {
        ClipRef { stream_id: StreamId::new(s).unwrap(), clip_index: i }
    }

    fn side(s: &str, i: u32, latent: u64, text: &str) -> ClipSide {
        ClipSide {
            clip_ref: clip_ref(s, i),
            visual: Some(synthetic_embed(latent, 0.0, 0, 128).unwrap()),
            audio: Some(synthetic_embed(latent + 5000, 0.0, 0, 128).unwrap()),
            asr_text: Some(text.to_string()),
        }
    }

    #[test]
    fn identical_clips_score_high() {
        let q = side("q", 0, 1, "live match stream");
        let mut c = side("r", 0, 1, "live match stream");
        c.clip_ref = clip_ref("r", 0);
        let w = FusionWeights { visual: 1.0, text: 1.0, audio: 1.0 };
        let cal = Calibration { a: 10.0, b: -5.0 };
        let s = score_pair(&q, &c, &w, &cal).unwrap();
        assert!((s.value - 0.993307).abs() < 1e-6, "{}", s.value);
        assert!((s.visual_sim.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.text_sim.unwrap(), 1.0);
    }

    #[test]
    fn disjoint_pair_scores_low() {
        // Orthogonal axis embeddings and disjoint token sets: fusion 0.
        let axis = |a: usize| {
            let mut v = vec![0.0; 32];
            v[a] = 1.0;
            EmbeddingVector::new(v).unwrap()
        };
        let q = ClipSide {
            clip_ref: clip_ref("q", 0),
            visual: Some(axis(0)),
            audio: Some(axis(2)),
            asr_text: Some("abc def".into()),
        };
        let c = ClipSide {
            clip_ref: clip_ref("r", 0),
            visual: Some(axis(1)),
            audio: Some(axis(3)),
            asr_text: Some("xyz".into()),
        };
        let w = FusionWeights { visual: 1.0, text: 1.0, audio: 1.0 };
        let cal = Calibration { a: 10.0, b: -5.0 };
        let s = score_pair(&q, &c, &w, &cal).unwrap();
        assert!((s.value - 0.006693).abs() < 1e-6, "{}", s.value);
    }

    #[test]
    fn missing_modalities_renormalize_weights() {
        let q = side("q", 0, 3, "some words");
        let mut c = side("r", 0, 3, "ignored");
        c.asr_text = None;
        c.audio = None;
        let w = FusionWeights { visual: 0.6, text: 0.3, audio: 0.1 };
        let cal = Calibration::default();
        let s = score_pair(&q, &c, &w, &cal).unwrap();
        // Only visual is shared, so the fused value equals the pure visual path.
        let pure = score_pair(
            &q,
            &c,
            &FusionWeights { visual: 1.0, text: 0.0, audio: 0.0 },
            &cal,
        )
        .unwrap();
        assert_eq!(s.value, pure.value);
        assert!(s.text_sim.is_none() && s.audio_sim.is_none());
    }

    #[test]
    fn no_shared_modality_is_invalid() {
        let mut q = side("q", 0, 1, "t");
        q.audio = None;
        q.asr_text = None;
        let mut c = side("r", 0, 1, "t");
        c.visual = None;
        let err = score_pair(&q, &c, &FusionWeights::default(), &Calibration::default())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn text_similarity_hand_cases() {
        assert_eq!(text_similarity("live match stream", "live match stream"), 1.0);
        assert_eq!(text_similarity("abc def", "xyz"), 0.0);
        assert_eq!(text_similarity("a b c", "b c d"), 0.5);
        assert_eq!(text_similarity("", ""), 0.0);
        assert_eq!(text_similarity("A b", "a B"), 1.0);
    }

    #[test]
    fn rerank_filters_sorts_and_is_idempotent() {
        let scorer = FusionScorer::default();
        let q = side("q", 0, 10, "w1 w2 w3");
        let near = side("r", 1, 10, "w1 w2 w3");
        let mid = side("r", 0, 10, "w1 zz yy");
        let far = side("x", 4, 77, "aa bb cc");
        let candidates = vec![far.clone(), near.clone(), mid.clone()];
        let ranked = rerank(&q, &candidates, &scorer, 0.6).unwrap();
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0].0, near.clip_ref);
        assert_eq!(ranked[1].0, mid.clip_ref);
        assert!(ranked[0].1.value >= ranked[1].1.value);
        // Identity: output refs are a subset of input refs.
        for (r, _) in &ranked {
            assert!(candidates.iter().any(|c| &c.clip_ref == r));
        }
        // Idempotence on its own output.
        let again = rerank(&q, &[near, mid], &scorer, 0.6).unwrap();
        assert_eq!(again, ranked);
    }

    #[test]
    fn rerank_empty_and_all_below_tau() {
        let scorer = FusionScorer::default();
        let q = side("q", 0, 10, "w1 w2");
        assert!(rerank(&q, &[], &scorer, 0.5).unwrap().is_empty());
        let far = side("x", 0, 99, "zz");
        assert!(rerank(&q, &[far], &scorer, 0.99).unwrap().is_empty());
    }

    #[test]
    fn oracle_recomputation_of_scores_and_order() {
        let w = FusionWeights { visual: 0.5, text: 0.4, audio: 0.1 };
        let cal = Calibration { a: 6.0, b: -3.0 };
        let scorer = FusionScorer { weights: w, calibration: cal };
        let q = side("q", 0, 20, "a b c d");
        let cands = vec![
            side("r", 0, 20, "a b c d"),
            side("r", 1, 21, "a b x y"),
            side("r", 2, 22, "p q"),
        ];
        let ranked = rerank(&q, &cands, &scorer, 0.0).unwrap();
        // Straight-line recomputation from the recorded components.
        for (clip, s) in &ranked {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (sim, weight) in [
                (s.visual_sim, w.visual),
                (s.text_sim, w.text),
                (s.audio_sim, w.audio),
            ] {
                if let Some(sim) = sim {
                    acc += weight * sim;
                    wsum += weight;
                }
            }
            let expect = 1.0 / (1.0 + (-(cal.a * acc / wsum + cal.b)).exp());
            assert!((expect - s.value).abs() < 1e-12, "{clip}");
        }
        for pair in ranked.windows(2) {
            assert!(pair[0].1.value >= pair[1].1.value);
        }
    }

    #[test]
    fn score_is_monotone_in_each_component() {
        // With non-negative weights and a > 0, raising any component
        // similarity cannot lower the calibrated value.
        let w = FusionWeights::default();
        let cal = Calibration::default();
        let base = RerankScore {
            value: 0.0,
            visual_sim: Some(0.2),
            text_sim: Some(0.4),
            audio_sim: Some(0.1),
        };
        let fuse = |s: &RerankScore| {
            let acc = w.visual * s.visual_sim.unwrap()
                + w.text * s.text_sim.unwrap()
                + w.audio * s.audio_sim.unwrap();
            sigmoid(cal.a * acc / (w.visual + w.text + w.audio) + cal.b)
        };
        let v0 = fuse(&base);
        for bump in [
            RerankScore { visual_sim: Some(0.5), ..base },
            RerankScore { text_sim: Some(0.9), ..base },
            RerankScore { audio_sim: Some(0.6), ..base },
        ] {
            assert!(fuse(&bump) >= v0);
        }
    }
}
