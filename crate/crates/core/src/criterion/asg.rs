use super::{check_ids, logadd, CriterionError, Emissions, LossOutput, TransitionMatrix};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(NEG_INF, logadd)
}

/// ASG loss `FAL − FCC` and its gradients.
///
/// FCC is the log-sum of scores over monotone alignments of the target
/// (each label held one or more frames); FAL is the log-sum over every
/// token sequence of length `T`. A path scores `Σ_t e_t(π_t) +
/// Σ_{t>0} A[π_t][π_{t−1}]`. Gradients are the difference of posterior
/// node (emissions) and edge (transitions) marginals of the two graphs.
pub fn asg_loss_grad(em: &Emissions, target: &[usize], trans: &TransitionMatrix) -> Result<LossOutput, CriterionError> {
    let (t_len, n) = (em.frames, em.tokens);
    if trans.size != n {
        return Err(CriterionError::Dimension(format!(
            "transitions are {0}x{0} but emissions have {n} tokens",
            trans.size
        )));
    }
    check_ids(target, n)?;
    if target.is_empty() {
        return Err(CriterionError::Contract("ASG target is empty".into()));
    }
    if let Some(w) = target.windows(2).find(|w| w[0] == w[1]) {
        return Err(CriterionError::Contract(format!(
            "ASG target repeats token {} consecutively; canonicalize it first",
            w[0]
        )));
    }
    let l_len = target.len();
    if t_len < l_len {
        return Err(CriterionError::Infeasible(format!("{t_len} frames cannot align {l_len} labels")));
    }

    let e = |t: usize, i: usize| em.at(t, i) as f64;
    let a = |to: usize, from: usize| trans.at(to, from) as f64;

    // ---- fully connected graph ----
    let mut f_alpha = vec![NEG_INF; t_len * n];
    for i in 0..n {
        f_alpha[i] = e(0, i);
    }
    for t in 1..t_len {
        for i in 0..n {
            let prev = &f_alpha[(t - 1) * n..t * n];
            let acc = logsumexp((0..n).map(|j| prev[j] + a(i, j)));
            f_alpha[t * n + i] = acc + e(t, i);
        }
    }
    // backward scores exclude the emission of their own frame
    let mut f_beta = vec![NEG_INF; t_len * n];
    for i in 0..n {
        f_beta[(t_len - 1) * n + i] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for j in 0..n {
            let next = &f_beta[(t + 1) * n..(t + 2) * n];
            f_beta[t * n + j] = logsumexp((0..n).map(|i| next[i] + a(i, j) + e(t + 1, i)));
        }
    }
    let fal = logsumexp(f_alpha[(t_len - 1) * n..].iter().copied());

    // ---- constrained (forced alignment) graph ----
    let y = target;
    let mut c_alpha = vec![NEG_INF; t_len * l_len];
    c_alpha[0] = e(0, y[0]);
    for t in 1..t_len {
        for l in 0..l_len {
            let prev = &c_alpha[(t - 1) * l_len..t * l_len];
            let mut acc = prev[l] + a(y[l], y[l]);
            if l > 0 {
                acc = logadd(acc, prev[l - 1] + a(y[l], y[l - 1]));
            }
            c_alpha[t * l_len + l] = if acc == NEG_INF { NEG_INF } else { acc + e(t, y[l]) };
        }
    }
    let mut c_beta = vec![NEG_INF; t_len * l_len];
    c_beta[(t_len - 1) * l_len + l_len - 1] = 0.0;
    for t in (0..t_len - 1).rev() {
        for l in 0..l_len {
            let next = &c_beta[(t + 1) * l_len..(t + 2) * l_len];
            let mut acc = next[l] + a(y[l], y[l]) + e(t + 1, y[l]);
            if l + 1 < l_len {
                acc = logadd(acc, next[l + 1] + a(y[l + 1], y[l]) + e(t + 1, y[l + 1]));
            }
            c_beta[t * l_len + l] = acc;
        }
    }
    let fcc = c_alpha[(t_len - 1) * l_len + l_len - 1];
    if !fcc.is_finite() || !fal.is_finite() {
        return Err(CriterionError::Infeasible(format!("non-finite graph scores (FAL {fal}, FCC {fcc})")));
    }

    // ---- gradients ----
    let mut ge = vec![0.0f64; t_len * n];
    let mut gt = vec![0.0f64; n * n];
    for t in 0..t_len {
        for i in 0..n {
            ge[t * n + i] += (f_alpha[t * n + i] + f_beta[t * n + i] - fal).exp();
        }
        for l in 0..l_len {
            let p = c_alpha[t * l_len + l] + c_beta[t * l_len + l] - fcc;
            if p > NEG_INF {
                ge[t * n + y[l]] -= p.exp();
            }
        }
        if t == 0 {
            continue;
        }
        for i in 0..n {
            let tail = e(t, i) + f_beta[t * n + i] - fal;
            for j in 0..n {
                gt[i * n + j] += (f_alpha[(t - 1) * n + j] + a(i, j) + tail).exp();
            }
        }
        for l in 0..l_len {
            let tail = e(t, y[l]) + c_beta[t * l_len + l] - fcc;
            if tail == NEG_INF {
                continue;
            }
            let stay = c_alpha[(t - 1) * l_len + l] + a(y[l], y[l]) + tail;
            if stay > NEG_INF {
                gt[y[l] * n + y[l]] -= stay.exp();
            }
            if l > 0 {
                let adv = c_alpha[(t - 1) * l_len + l - 1] + a(y[l], y[l - 1]) + tail;
                if adv > NEG_INF {
                    gt[y[l] * n + y[l - 1]] -= adv.exp();
                }
            }
        }
    }

    Ok(LossOutput {
        loss: (fal - fcc) as f32,
        grad_emissions: ge.into_iter().map(|v| v as f32).collect(),
        grad_transitions: Some(gt.into_iter().map(|v| v as f32).collect()),
    })
}
