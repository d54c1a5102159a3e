use super::{Emissions, TransitionMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub tokens: Vec<usize>,
    pub score: f32,
}

/// Highest scoring framewise path under `e_t(i) + A[i][j]` (`A = 0` when no
/// transitions are given). Ties go to the lower token id.
pub fn viterbi(em: &Emissions, transitions: Option<&TransitionMatrix>) -> ViterbiPath {
    let (t_len, n) = (em.frames, em.tokens);
    if t_len == 0 {
        return ViterbiPath { tokens: Vec::new(), score: 0.0 };
    }
    let a = |i: usize, j: usize| transitions.map_or(0.0, |m| m.at(i, j) as f64);

    let mut score: Vec<f64> = em.row(0).iter().map(|&v| v as f64).collect();
    let mut back = vec![0usize; t_len * n];
    let mut next = vec![0.0f64; n];
    for t in 1..t_len {
        for (i, slot) in next.iter_mut().enumerate() {
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, &s) in score.iter().enumerate() {
                let v = s + a(i, j);
                if v > best.0 {
                    best = (v, j);
                }
            }
            *slot = best.0 + em.at(t, i) as f64;
            back[t * n + i] = best.1;
        }
        std::mem::swap(&mut score, &mut next);
    }

    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, &s) in score.iter().enumerate() {
        if s > best {
            best = s;
            best_i = i;
        }
    }
    let mut tokens = vec![0; t_len];
    tokens[t_len - 1] = best_i;
    for t in (1..t_len).rev() {
        tokens[t - 1] = back[t * n + tokens[t]];
    }
    ViterbiPath { tokens, score: best as f32 }
}
