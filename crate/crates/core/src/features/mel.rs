use std::f64::consts::PI;

use super::FeatureError;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale between 0 Hz and
/// Nyquist, evaluated at the bins of an `fft_len`-point half spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    centers_hz: Vec<f64>,
    /// (first bin, weights) per filter
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, fft_len: usize, sample_rate: u32) -> Result<Self, FeatureError> {
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> =
            (0..num_filters + 2).map(|i| mel_to_hz(mel_max * i as f64 / (num_filters + 1) as f64)).collect();
        let bin_hz = sample_rate as f64 / fft_len as f64;
        let bins = fft_len / 2 + 1;

        let mut filters = Vec::with_capacity(num_filters);
        for m in 1..=num_filters {
            let (lo, center, hi) = (edges[m - 1], edges[m], edges[m + 1]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f < center {
                    (f - lo) / (center - lo)
                } else if f >= center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            let Some(first) = first else {
                return Err(FeatureError::Config(format!(
                    "mel filter {m} of {num_filters} ({lo:.1}-{hi:.1} Hz) covers no FFT bin \
                     at {bin_hz:.2} Hz resolution"
                )));
            };
            filters.push((first, weights));
        }
        Ok(Self { centers_hz: edges[1..=num_filters].to_vec(), filters })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn center_hz(&self, filter: usize) -> f64 {
        self.centers_hz[filter]
    }

    /// Filter energies of a half power spectrum.
    pub fn apply(&self, power: &[f32]) -> Vec<f64> {
        self.filters.iter().map(|(first, w)| w.iter().zip(&power[*first..]).map(|(w, &p)| w * p as f64).sum()).collect()
    }
}

/// Orthonormal DCT-II.
pub fn dct_ii(x: &[f32]) -> Vec<f32> {
    let m = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(n, &v)| v as f64 * (PI * k as f64 * (2 * n + 1) as f64 / (2.0 * m)).cos())
                .sum();
            (scale * s) as f32
        })
        .collect()
}

/// Orthonormal DCT-III, the inverse of [`dct_ii`].
pub fn dct_iii(c: &[f32]) -> Vec<f32> {
    let m = c.len() as f64;
    (0..c.len())
        .map(|n| {
            let s: f64 = c
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                    scale * v as f64 * (PI * k as f64 * (2 * n + 1) as f64 / (2.0 * m)).cos()
                })
                .sum();
            s as f32
        })
        .collect()
}
