use super::{check_ids, logadd, CriterionError, Emissions, LossOutput};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// CTC negative log-likelihood and its gradient with respect to the
/// (log-normalized) emissions, by forward–backward over the blank-augmented
/// label lattice.
pub fn ctc_loss_grad(em: &Emissions, target: &[usize], blank: usize) -> Result<LossOutput, CriterionError> {
    let (t_len, n) = (em.frames, em.tokens);
    if blank >= n {
        return Err(CriterionError::Contract(format!("blank id {blank} >= {n} tokens")));
    }
    check_ids(target, n)?;
    if target.contains(&blank) {
        return Err(CriterionError::Contract("CTC target contains the blank".into()));
    }
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    if t_len < target.len() + repeats || t_len == 0 {
        return Err(CriterionError::Infeasible(format!(
            "{} frames cannot align {} labels with {repeats} repeats",
            t_len,
            target.len()
        )));
    }

    // blank, y1, blank, y2, ..., blank
    let labels: Vec<usize> = std::iter::once(blank).chain(target.iter().flat_map(|&y| [y, blank])).collect();
    let s_len = labels.len();
    let e = |t: usize, s: usize| em.at(t, labels[s]) as f64;
    let skip_ok = |s: usize| s >= 2 && labels[s] != blank && labels[s] != labels[s - 2];

    let mut alpha = vec![NEG_INF; t_len * s_len];
    alpha[0] = e(0, 0);
    if s_len > 1 {
        alpha[1] = e(0, 1);
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = logadd(acc, prev[s - 1]);
            }
            if skip_ok(s) {
                acc = logadd(acc, prev[s - 2]);
            }
            cur[s] = if acc == NEG_INF { NEG_INF } else { acc + e(t, s) };
        }
    }

    let mut beta = vec![NEG_INF; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = e(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = e(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = logadd(acc, next[s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                acc = logadd(acc, next[s + 2]);
            }
            cur[s] = if acc == NEG_INF { NEG_INF } else { acc + e(t, s) };
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = logadd(log_p, alpha[last + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(CriterionError::Infeasible(format!(
            "target has zero probability under the emissions (log p = {log_p})"
        )));
    }

    let mut grad = vec![0.0f32; t_len * n];
    for t in 0..t_len {
        let mut acc = vec![0.0f64; n];
        for s in 0..s_len {
            let a = alpha[t * s_len + s];
            let b = beta[t * s_len + s];
            if a == NEG_INF || b == NEG_INF {
                continue;
            }
            acc[labels[s]] += (a + b - e(t, s) - log_p).exp();
        }
        for (g, v) in grad[t * n..(t + 1) * n].iter_mut().zip(acc) {
            *g = -v as f32;
        }
    }

    Ok(LossOutput { loss: -log_p as f32, grad_emissions: grad, grad_transitions: None })
}
