//! Frame-label smoothing and segment bookkeeping. Raw per-frame
//! detector decisions flicker near interaction boundaries; both
//! smoothers repair isolated flips before run extraction.

use serde::{Deserialize, Serialize};

use super::FrontendError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoother {
    /// Centered majority vote over an odd window, truncated at the
    /// edges; ties keep the original label.
    MovingAverage { window: usize },
    /// Two-state Viterbi decode with symmetric stay/flip transitions
    /// and symmetric emission noise.
    Hmm { p_stay: f64, p_emit: f64 },
}

impl Smoother {
    pub fn moving_average_default() -> Self {
        Smoother::MovingAverage { window: 9 }
    }

    pub fn hmm_default() -> Self {
        Smoother::Hmm {
            p_stay: 0.95,
            p_emit: 0.85,
        }
    }

    fn validate(&self) -> Result<(), FrontendError> {
        match self {
            Smoother::MovingAverage { window } => {
                if *window < 3 || window % 2 == 0 {
                    return Err(FrontendError::BadSmoother(format!(
                        "window must be odd and >= 3, got {window}"
                    )));
                }
            }
            Smoother::Hmm { p_stay, p_emit } => {
                for (name, p) in [("p_stay", p_stay), ("p_emit", p_emit)] {
                    if !(*p > 0.5 && *p < 1.0) {
                        return Err(FrontendError::BadSmoother(format!(
                            "{name} must lie in (0.5, 1), got {p}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn smooth(smoother: &Smoother, labels: &[bool]) -> Result<Vec<bool>, FrontendError> {
    smoother.validate()?;
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    Ok(match smoother {
        Smoother::MovingAverage { window } => majority(labels, *window),
        Smoother::Hmm { p_stay, p_emit } => viterbi(labels, *p_stay, *p_emit),
    })
}

fn majority(labels: &[bool], window: usize) -> Vec<bool> {
    let h = window / 2;
    let n = labels.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            let ones = labels[lo..=hi].iter().filter(|&&b| b).count();
            let len = hi - lo + 1;
            match (2 * ones).cmp(&len) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => labels[i],
            }
        })
        .collect()
}

/// Most likely hidden binary sequence under a symmetric two-state
/// chain: uniform prior, P(stay) = p_stay, P(observe what is hidden)
/// = p_emit. Log-domain; on score ties the lower state index wins.
fn viterbi(obs: &[bool], p_stay: f64, p_emit: f64) -> Vec<bool> {
    let n = obs.len();
    let lt = [
        [p_stay.ln(), (1.0 - p_stay).ln()],
        [(1.0 - p_stay).ln(), p_stay.ln()],
    ];
    let emit = |state: usize, o: bool| -> f64 {
        if (state == 1) == o {
            p_emit.ln()
        } else {
            (1.0 - p_emit).ln()
        }
    };
    let mut score = [emit(0, obs[0]), emit(1, obs[0])];
    let mut back = vec![[0usize; 2]; n];
    for i in 1..n {
        let mut next = [f64::NEG_INFINITY; 2];
        for s in 0..2 {
            let mut best = 0;
            let mut best_score = score[0] + lt[0][s];
            let alt = score[1] + lt[1][s];
            if alt > best_score {
                best = 1;
                best_score = alt;
            }
            next[s] = best_score + emit(s, obs[i]);
            back[i][s] = best;
        }
        score = next;
    }
    let mut state = if score[1] > score[0] { 1 } else { 0 };
    let mut out = vec![false; n];
    for i in (0..n).rev() {
        out[i] = state == 1;
        state = back[i][state];
    }
    out
}

/// Longest run of positive labels, as an inclusive (start, end) index
/// pair. Ties go to the earliest run; runs shorter than `min_len`
/// yield None.
pub fn longest_positive_segment(labels: &[bool], min_len: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < labels.len() {
        if labels[i] {
            let start = i;
            while i < labels.len() && labels[i] {
                i += 1;
            }
            let run = (start, i - 1);
            let longer = match best {
                None => true,
                Some((s, e)) => run.1 - run.0 > e - s,
            };
            if longer {
                best = Some(run);
            }
        } else {
            i += 1;
        }
    }
    best.filter(|(s, e)| e - s + 1 >= min_len)
}

/// Interval similarity between two equal-length label sequences:
/// |intersection| / ((|reference| + |test|) / 2), counting positive
/// positions. Both empty of positives compares as identical (1.0).
pub fn sequence_similarity(reference: &[bool], test: &[bool]) -> Result<f64, FrontendError> {
    if reference.len() != test.len() {
        return Err(FrontendError::LengthMismatch {
            left: reference.len(),
            right: test.len(),
        });
    }
    let a = reference.iter().filter(|&&b| b).count();
    let b = test.iter().filter(|&&b| b).count();
    if a + b == 0 {
        return Ok(1.0);
    }
    let inter = reference
        .iter()
        .zip(test)
        .filter(|(&r, &t)| r && t)
        .count();
    Ok(2.0 * inter as f64 / (a + b) as f64)
}
