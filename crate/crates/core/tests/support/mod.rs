//! Brute-force oracles shared by the integration and acceptance suites.
//! The functions in this file are written directly from the definitions, in
//! f64, and never call the library code they are used to check. The suite
//! submodules run library-vs-oracle comparisons.

#![allow(dead_code)]

pub mod autodiff_suite;
pub mod criterion_suite;
pub mod decoder_suite;
pub mod lm_suite;
pub mod pipeline_suite;

pub fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Every sequence in `[0, n)^t`, in lexicographic order.
pub fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn dedup_repeats(path: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &k in path {
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    out
}

pub fn ctc_collapse(path: &[usize], blank: usize) -> Vec<usize> {
    dedup_repeats(path).into_iter().filter(|&k| k != blank).collect()
}

/// `−log Σ_{π collapsing to target} Π_t exp(e[t][π_t])`; `+∞` if no path.
pub fn ctc_loss_enum(em: &[f64], t: usize, n: usize, target: &[usize], blank: usize) -> f64 {
    let scores = all_paths(n, t)
        .into_iter()
        .filter(|p| ctc_collapse(p, blank) == target)
        .map(|p| p.iter().enumerate().map(|(i, &k)| em[i * n + k]).sum::<f64>());
    -logsumexp(scores)
}

pub fn path_score(em: &[f64], trans: Option<&[f64]>, n: usize, path: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &k) in path.iter().enumerate() {
        s += em[i * n + k];
        if let (Some(a), true) = (trans, i > 0) {
            s += a[k * n + path[i - 1]];
        }
    }
    s
}

/// (FAL, FCC) by enumeration over all `n^t` paths.
pub fn asg_enum(em: &[f64], trans: &[f64], t: usize, n: usize, target: &[usize]) -> (f64, f64) {
    let paths = all_paths(n, t);
    let fal = logsumexp(paths.iter().map(|p| path_score(em, Some(trans), n, p)));
    let fcc = logsumexp(paths.iter().filter(|p| dedup_repeats(p) == target).map(|p| path_score(em, Some(trans), n, p)));
    (fal, fcc)
}

/// Relative error with an absolute floor for near-zero quantities.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Central finite differences of `f` at `x` with step `eps`.
pub fn finite_diff(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = p[i];
            p[i] = x0 + eps;
            let fp = f(&p);
            p[i] = x0 - eps;
            let fm = f(&p);
            p[i] = x0;
            (fp - fm) / (2.0 * eps)
        })
        .collect()
}

/// Levenshtein distance by the textbook DP table.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}
