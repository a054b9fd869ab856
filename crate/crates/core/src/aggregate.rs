//! Temporal clip-match aggregation.
//!
//! Isolated clip matches between a query stream and a reference stream are
//! noisy; a rebroadcast shows up as a *chain* of matches whose query-side and
//! reference-side time offsets agree within a tolerance `epsilon`. This
//! module accumulates accepted match pairs per (query stream, reference
//! stream) and tracks the longest aligned chain (`l_max`) and its mean score
//! (`agg_score`), which the session verdict thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One accepted query/reference clip match. Only pairs with score >= tau are
/// ever stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub q_time: f64,
    pub c_time: f64,
    pub score: f64,
}

/// Aggregation thresholds.
///
/// `tau` gates which candidate scores enter the pair list, `epsilon` is the
/// temporal tolerance in seconds, and (`l_min`, `s_min`) gate the session
/// verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggParams {
    pub tau: f64,
    pub epsilon: f64,
    pub l_min: u32,
    pub s_min: f64,
}

impl AggParams {
    pub fn new(tau: f64, epsilon: f64, l_min: u32, s_min: f64) -> Result<Self> {
        let p = AggParams { tau, epsilon, l_min, s_min };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau must lie in [0, 1]"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if self.l_min < 1 {
            return Err(Error::invalid("l_min must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.s_min) {
            return Err(Error::invalid("s_min must lie in [0, 1]"));
        }
        Ok(())
    }
}

impl Default for AggParams {
    fn default() -> Self {
        AggParams { tau: 0.6, epsilon: 2.0, l_min: 3, s_min: 0.8 }
    }
}

/// Per (query stream, reference stream) accumulator of accepted matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchState {
    pairs: Vec<MatchPair>,
    l_max: u32,
    agg_score: f64,
    last_q_time: Option<f64>,
    /// Sliding-window cap on stored pairs; `None` keeps the full history as
    /// the pseudo-code does. Livestreams are unbounded, so the pipeline runs
    /// with a cap.
    max_pairs: Option<usize>,
}

/// Default sliding-window cap used by the moderation pipeline.
pub const DEFAULT_MAX_PAIRS: usize = 512;

impl Default for MatchState {
    fn default() -> Self {
        MatchState::with_cap(Some(DEFAULT_MAX_PAIRS))
    }
}

impl MatchState {
    /// State with unbounded pair history (exact algorithm semantics).
    pub fn unbounded() -> Self {
        MatchState::with_cap(None)
    }

    pub fn with_cap(max_pairs: Option<usize>) -> Self {
        MatchState {
            pairs: Vec::new(),
            l_max: 0,
            agg_score: 0.0,
            last_q_time: None,
            max_pairs,
        }
    }

    pub fn pairs(&self) -> &[MatchPair] {
        &self.pairs
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn agg_score(&self) -> f64 {
        self.agg_score
    }
}

/// Fold one query clip's accepted candidates into the state.
///
/// Literal transcription of the aggregation pseudo-code: each candidate at or
/// above `tau` seeds a chain of length 1, every stored pair whose offset
/// `(q_time - q_x) - (c_time - c_y)` lies strictly within `epsilon` extends
/// it, and `(l_max, agg_score)` track the best (longest, then highest-mean)
/// chain seen so far. Candidates must all come from the state's single
/// reference stream, in retrieval order; query times must be non-decreasing
/// across calls.
pub fn process_query_clip(
    state: &mut MatchState,
    q_time: f64,
    candidates: &[(f64, f64)],
    params: &AggParams,
) -> Result<(f64, u32)> {
    params.validate()?;
    if !q_time.is_finite() {
        return Err(Error::invalid("q_time must be finite"));
    }
    if let Some(last) = state.last_q_time {
        if q_time < last {
            return Err(Error::invalid(format!(
                "q_time regressed: {q_time} < {last}"
            )));
        }
    }
    state.last_q_time = Some(q_time);

    for &(c_time, score) in candidates {
        if !c_time.is_finite() || !score.is_finite() {
            return Err(Error::invalid("candidate times and scores must be finite"));
        }
        if score < params.tau {
            continue;
        }
        let mut chain_len: u32 = 1;
        let mut total_score = score;
        for pair in &state.pairs {
            if ((q_time - pair.q_time) - (c_time - pair.c_time)).abs() < params.epsilon {
                chain_len += 1;
                total_score += pair.score;
            }
        }
        if chain_len > state.l_max {
            state.l_max = chain_len;
            state.agg_score = total_score / f64::from(chain_len);
        } else if chain_len == state.l_max {
            state.agg_score = state.agg_score.max(total_score / f64::from(chain_len));
        }
        state.pairs.push(MatchPair { q_time, c_time, score });
        if let Some(cap) = state.max_pairs {
            if state.pairs.len() > cap {
                let drop = state.pairs.len() - cap;
                state.pairs.drain(..drop);
            }
        }
    }
    Ok((state.agg_score, state.l_max))
}

/// Session-level reading of a match state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum MatchVerdict {
    NoMatch,
    Weak,
    Confirmed { l_max: u32, agg_score: f64 },
}

/// Pure function of the state: `Confirmed` iff `l_max >= l_min` and
/// `agg_score >= s_min`; `Weak` iff any pair was ever accepted.
pub fn verdict(state: &MatchState, params: &AggParams) -> MatchVerdict {
    if state.l_max >= params.l_min && state.agg_score >= params.s_min {
        MatchVerdict::Confirmed {
            l_max: state.l_max,
            agg_score: state.agg_score,
        }
    } else if state.l_max >= 1 {
        MatchVerdict::Weak
    } else {
        MatchVerdict::NoMatch
    }
}
