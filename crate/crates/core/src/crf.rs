//! Linear-chain CRF over BMES tags, computed in log space.
//!
//! A path `y` scores `start[y_1] + Σ_i S[i][y_i] + Σ_{i≥2} A[y_{i-1}][y_i]`.
//! With masking on, illegal transitions and the start tags M and E score
//! `-∞`, so the distribution only covers valid BMES sequences.

use crate::error::{Error, Result};
use crate::numkit::{logsumexp_nonempty, Matrix};
use crate::tagcodec::{is_valid_transition, Tag, NUM_TAGS};

const T: usize = NUM_TAGS;

/// Borrowed view of the transition parameters.
#[derive(Clone, Copy, Debug)]
pub struct Transitions<'a> {
    /// T × T, `scores[a][b]` = score of moving from tag `a` to tag `b`.
    pub scores: &'a Matrix,
    pub start: &'a [f64],
    pub masked: bool,
}

/// Effective (possibly masked) scores as fixed-size arrays.
struct Effective {
    trans: [[f64; T]; T],
    start: [f64; T],
}

impl Transitions<'_> {
    fn effective(&self) -> Effective {
        let mut trans = [[0.0; T]; T];
        let mut start = [0.0; T];
        for a in Tag::ALL {
            start[a.index()] = if self.masked && !a.can_start() {
                f64::NEG_INFINITY
            } else {
                self.start[a.index()]
            };
            for b in Tag::ALL {
                trans[a.index()][b.index()] = if self.masked && !is_valid_transition(a, b) {
                    f64::NEG_INFINITY
                } else {
                    self.scores.get(a.index(), b.index())
                };
            }
        }
        Effective { trans, start }
    }
}

fn check_emissions(s: &Matrix) -> Result<()> {
    if s.cols() != T {
        return Err(Error::invalid(format!(
            "emission matrix has {} columns, expected {T}",
            s.cols()
        )));
    }
    Ok(())
}

fn check_path(s: &Matrix, y: &[Tag]) -> Result<()> {
    check_emissions(s)?;
    if y.len() != s.rows() {
        return Err(Error::invalid(format!(
            "{} tags for {} positions",
            y.len(),
            s.rows()
        )));
    }
    Ok(())
}

/// Unnormalized log-score of tag path `y`.
pub fn path_score(s: &Matrix, trans: &Transitions<'_>, y: &[Tag]) -> Result<f64> {
    check_path(s, y)?;
    let eff = trans.effective();
    Ok(score_with(&eff, s, y))
}

fn score_with(eff: &Effective, s: &Matrix, y: &[Tag]) -> f64 {
    let Some(first) = y.first() else { return 0.0 };
    let mut total = eff.start[first.index()];
    for (i, t) in y.iter().enumerate() {
        total += s.get(i, t.index());
    }
    for w in y.windows(2) {
        total += eff.trans[w[0].index()][w[1].index()];
    }
    total
}

/// Forward log-messages: `alpha[i][b]` = log-sum of scores of all prefixes
/// ending in tag `b` at position `i`.
fn forward(eff: &Effective, s: &Matrix) -> Vec<[f64; T]> {
    let m = s.rows();
    let mut alpha = Vec::with_capacity(m);
    if m == 0 {
        return alpha;
    }
    let mut a0 = [0.0; T];
    for (t, v) in a0.iter_mut().enumerate() {
        *v = eff.start[t] + s.get(0, t);
    }
    alpha.push(a0);
    let mut buf = [0.0; T];
    for i in 1..m {
        let prev = alpha[i - 1];
        let mut cur = [0.0; T];
        for (b, v) in cur.iter_mut().enumerate() {
            for a in 0..T {
                buf[a] = prev[a] + eff.trans[a][b];
            }
            *v = s.get(i, b) + logsumexp_nonempty(&buf);
        }
        alpha.push(cur);
    }
    alpha
}

/// Backward log-messages: `beta[i][a]` = log-sum of scores of all suffixes
/// after position `i` given tag `a` at `i`.
fn backward(eff: &Effective, s: &Matrix) -> Vec<[f64; T]> {
    let m = s.rows();
    let mut beta = vec![[0.0; T]; m];
    let mut buf = [0.0; T];
    for i in (0..m.saturating_sub(1)).rev() {
        for a in 0..T {
            for b in 0..T {
                buf[b] = eff.trans[a][b] + s.get(i + 1, b) + beta[i + 1][b];
            }
            beta[i][a] = logsumexp_nonempty(&buf);
        }
    }
    beta
}

/// `log Σ_y exp(path_score(y))` over all tag paths. Zero for an empty
/// sentence.
pub fn log_partition(s: &Matrix, trans: &Transitions<'_>) -> f64 {
    let eff = trans.effective();
    match forward(&eff, s).last() {
        Some(last) => logsumexp_nonempty(last),
        None => 0.0,
    }
}

/// Negative log-likelihood of `y`: `log Z − path_score(y)`.
pub fn nll(s: &Matrix, trans: &Transitions<'_>, y: &[Tag]) -> Result<f64> {
    check_path(s, y)?;
    let eff = trans.effective();
    Ok(log_z(&eff, s) - score_with(&eff, s, y))
}

fn log_z(eff: &Effective, s: &Matrix) -> f64 {
    forward(eff, s).last().map_or(0.0, |a| logsumexp_nonempty(a))
}

/// Gradients of [`nll`] with respect to emissions, transitions and start
/// scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfGradients {
    pub nll: f64,
    /// M × T.
    pub d_emissions: Matrix,
    /// T × T.
    pub d_transitions: Matrix,
    pub d_start: Vec<f64>,
}

/// Posterior marginals minus gold indicators, via forward–backward.
pub fn crf_gradients(s: &Matrix, trans: &Transitions<'_>, y: &[Tag]) -> Result<CrfGradients> {
    check_path(s, y)?;
    let m = s.rows();
    let eff = trans.effective();
    let alpha = forward(&eff, s);
    let beta = backward(&eff, s);
    let log_z = alpha.last().map_or(0.0, |a| logsumexp_nonempty(a));

    let mut d_emissions = Matrix::zeros(m, T);
    let mut d_transitions = Matrix::zeros(T, T);
    let mut d_start = vec![0.0; T];

    for i in 0..m {
        let row = d_emissions.row_mut(i);
        for t in 0..T {
            row[t] = (alpha[i][t] + beta[i][t] - log_z).exp();
        }
        if i == 0 {
            d_start.copy_from_slice(row);
        }
        row[y[i].index()] -= 1.0;
    }
    if let Some(first) = y.first() {
        d_start[first.index()] -= 1.0;
    }
    for i in 1..m {
        for a in 0..T {
            for b in 0..T {
                let lp = alpha[i - 1][a] + eff.trans[a][b] + s.get(i, b) + beta[i][b] - log_z;
                let cur = d_transitions.get(a, b);
                d_transitions.set(a, b, cur + lp.exp());
            }
        }
        let (a, b) = (y[i - 1].index(), y[i].index());
        let cur = d_transitions.get(a, b);
        d_transitions.set(a, b, cur - 1.0);
    }

    Ok(CrfGradients {
        nll: log_z - score_with(&eff, s, y),
        d_emissions,
        d_transitions,
        d_start,
    })
}

/// Highest-scoring tag path. Ties go to the lowest tag index, both for the
/// final tag and at every backpointer.
pub fn viterbi(s: &Matrix, trans: &Transitions<'_>) -> Vec<Tag> {
    let m = s.rows();
    if m == 0 {
        return Vec::new();
    }
    let eff = trans.effective();
    let mut delta = [0.0; T];
    for (t, v) in delta.iter_mut().enumerate() {
        *v = eff.start[t] + s.get(0, t);
    }
    let mut back: Vec<[usize; T]> = Vec::with_capacity(m - 1);
    for i in 1..m {
        let mut next = [0.0; T];
        let mut bp = [0usize; T];
        for b in 0..T {
            let mut best = 0;
            let mut best_v = delta[0] + eff.trans[0][b];
            for a in 1..T {
                let v = delta[a] + eff.trans[a][b];
                if v > best_v {
                    best = a;
                    best_v = v;
                }
            }
            bp[b] = best;
            next[b] = best_v + s.get(i, b);
        }
        back.push(bp);
        delta = next;
    }
    let mut last = 0;
    for t in 1..T {
        if delta[t] > delta[last] {
            last = t;
        }
    }
    let mut path = vec![last; m];
    for i in (1..m).rev() {
        path[i - 1] = back[i - 1][path[i]];
    }
    path.into_iter()
        .map(|t| Tag::from_index(t).expect("tag index below T"))
        .collect()
}
