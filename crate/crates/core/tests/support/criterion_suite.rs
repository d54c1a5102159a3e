//! Library-vs-oracle checks for the sequence criteria. Each check returns a
//! summary or a description of the first mismatch.

#![allow(dead_code)]

use asr_core::criterion::{asg_loss_grad, ctc_loss_grad, viterbi, CriterionError};
use asr_core::{Emissions, TransitionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{all_paths, asg_enum, ctc_loss_enum, finite_diff, path_score, rel_err};

pub const LOSS_TOL: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;
pub const FD_EPS: f64 = 1e-3;
pub const DRAWS: usize = 50;

pub fn log_normalized(rng: &mut ChaCha8Rng, t: usize, n: usize, spread: f32) -> Vec<f32> {
    let mut out = Vec::with_capacity(t * n);
    for _ in 0..t {
        let row: Vec<f64> = (0..n).map(|_| rng.gen_range(-spread..spread) as f64).collect();
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| (v - lse) as f32));
    }
    out
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn random_target(rng: &mut ChaCha8Rng, len: usize, alphabet: usize, no_repeats: bool) -> Vec<usize> {
    let mut tgt: Vec<usize> = Vec::with_capacity(len);
    while tgt.len() < len {
        let k = rng.gen_range(0..alphabet);
        if no_repeats && tgt.last() == Some(&k) {
            continue;
        }
        tgt.push(k);
    }
    tgt
}

/// CTC and ASG losses against path enumeration on every (T ≤ 5, N ≤ 4,
/// L ≤ 3) grid point, `DRAWS` random draws each. Returns the number of
/// instances checked and the worst absolute loss error.
pub fn loss_grid() -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC7C);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for t in 1..=5usize {
        for n in 2..=4usize {
            for l in 0..=3usize {
                for _ in 0..DRAWS {
                    // CTC: blank is the last id
                    let blank = n - 1;
                    let em = log_normalized(&mut rng, t, n, 3.0);
                    let tgt = random_target(&mut rng, l, n - 1, false);
                    let oracle = ctc_loss_enum(&to_f64(&em), t, n, &tgt, blank);
                    let emissions = Emissions::new(t, n, em).unwrap();
                    match ctc_loss_grad(&emissions, &tgt, blank) {
                        Ok(out) => {
                            let err = (out.loss as f64 - oracle).abs();
                            if err > LOSS_TOL {
                                return Err(format!("CTC T={t} N={n} target={tgt:?}: {} vs oracle {oracle}", out.loss));
                            }
                            worst = worst.max(err);
                        }
                        Err(CriterionError::Infeasible(_)) if oracle == f64::INFINITY => {}
                        Err(e) => return Err(format!("CTC T={t} N={n} target={tgt:?}: {e} (oracle {oracle})")),
                    }
                    checked += 1;

                    if l == 0 {
                        continue;
                    }
                    let em: Vec<f32> = (0..t * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let a: Vec<f32> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let tgt = random_target(&mut rng, l, n, true);
                    let (fal, fcc) = asg_enum(&to_f64(&em), &to_f64(&a), t, n, &tgt);
                    let emissions = Emissions::new(t, n, em).unwrap();
                    let trans = TransitionMatrix::new(n, a).unwrap();
                    match asg_loss_grad(&emissions, &tgt, &trans) {
                        Ok(out) => {
                            let err = (out.loss as f64 - (fal - fcc)).abs();
                            if err > LOSS_TOL {
                                return Err(format!(
                                    "ASG T={t} N={n} target={tgt:?}: {} vs oracle {}",
                                    out.loss,
                                    fal - fcc
                                ));
                            }
                            worst = worst.max(err);
                        }
                        Err(CriterionError::Infeasible(_)) if fcc == f64::NEG_INFINITY => {}
                        Err(e) => return Err(format!("ASG T={t} N={n} target={tgt:?}: {e}")),
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok((checked, worst))
}

/// Gradients of both criteria (emissions and ASG transitions) against
/// central differences of the enumeration oracles. Returns the number of
/// instances and the worst relative error.
pub fn gradient_checks(instances: usize) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut worst: f64 = 0.0;
    let mut check = |what: &str, analytic: &[f32], numeric: &[f64]| -> Result<(), String> {
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let err = rel_err(a as f64, n);
            if err > GRAD_TOL {
                return Err(format!("{what} coord {i}: analytic {a} vs numeric {n}"));
            }
            worst = worst.max(err);
        }
        Ok(())
    };
    for k in 0..instances {
        let t = 2 + k % 4;
        let n = 3 + k % 2;
        let l = 1 + k % 2;

        // CTC, T=4 N=3 L=2 appears in this cycle
        let blank = n - 1;
        let em = log_normalized(&mut rng, t, n, 2.0);
        let tgt = loop {
            let cand = random_target(&mut rng, l, n - 1, false);
            let repeats = cand.windows(2).filter(|w| w[0] == w[1]).count();
            if t >= l + repeats {
                break cand;
            }
        };
        let out = ctc_loss_grad(&Emissions::new(t, n, em.clone()).unwrap(), &tgt, blank).map_err(|e| e.to_string())?;
        let fd = finite_diff(&to_f64(&em), FD_EPS, |x| ctc_loss_enum(x, t, n, &tgt, blank));
        check(&format!("CTC#{k} emissions"), &out.grad_emissions, &fd)?;

        let em: Vec<f32> = (0..t * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<f32> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tgt = random_target(&mut rng, l.min(t), n, true);
        let out = asg_loss_grad(
            &Emissions::new(t, n, em.clone()).unwrap(),
            &tgt,
            &TransitionMatrix::new(n, a.clone()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let (ef, af) = (to_f64(&em), to_f64(&a));
        let loss = |e: &[f64], a: &[f64]| {
            let (fal, fcc) = asg_enum(e, a, t, n, &tgt);
            fal - fcc
        };
        let fd_e = finite_diff(&ef, FD_EPS, |x| loss(x, &af));
        let fd_a = finite_diff(&af, FD_EPS, |x| loss(&ef, x));
        check(&format!("ASG#{k} emissions"), &out.grad_emissions, &fd_e)?;
        check(&format!("ASG#{k} transitions"), out.grad_transitions.as_deref().unwrap(), &fd_a)?;
    }
    Ok((instances, worst))
}

/// Viterbi against exhaustive search over `N^T` paths.
pub fn viterbi_exhaustive(instances: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x717);
    for k in 0..instances {
        let (t, n) = (5, 4);
        let em: Vec<f32> = (0..t * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a: Vec<f32> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (ef, af) = (to_f64(&em), to_f64(&a));
        let best = all_paths(n, t)
            .into_iter()
            .map(|p| (path_score(&ef, Some(&af), n, &p), p))
            .fold((f64::NEG_INFINITY, Vec::new()), |acc, x| if x.0 > acc.0 { x } else { acc });
        let got = viterbi(&Emissions::new(t, n, em).unwrap(), Some(&TransitionMatrix::new(n, a).unwrap()));
        if got.tokens != best.1 || (got.score as f64 - best.0).abs() > 1e-5 {
            return Err(format!("instance {k}: {:?} {} vs {:?} {}", got.tokens, got.score, best.1, best.0));
        }
    }
    Ok(())
}
