//! In-place iterative radix-2 FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Forward DFT of `buf` in place. `buf.len()` must be a power of two.
pub fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n <= 1 {
        return;
    }

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            buf.swap(i, j);
        }
    }

    let mut len = 2;
    while len <= n {
        let step = -2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = Complex64::from_polar(1.0, step * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Zero-pads `frame` to the next power of two `n` and returns `|X[k]|²` for
/// `k = 0..=n/2`.
pub fn power_spectrum(frame: &[f32]) -> Vec<f32> {
    let n = frame.len().max(1).next_power_of_two();
    let mut buf: Vec<Complex64> = frame
        .iter()
        .map(|&x| Complex64::new(x as f64, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft_in_place(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr() as f32).collect()
}
