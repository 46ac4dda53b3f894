//! Complex discrete Fourier transforms.
//!
//! Power-of-two sizes use an iterative radix-2 Cooley-Tukey transform;
//! any other size falls back to the direct O(n²) sum. [`RealFft`] handles
//! real signals at roughly half the cost.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::f64::consts::PI;

use num_traits::Float;

use crate::tensor::Real;

#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    n: usize,
    // e^{-2πik/n} for k in 0..n, used by the direct fallback.
    cos: Vec<T>,
    sin: Vec<T>,
    // Radix-2 twiddles, stage by stage: for a stage of span `len`, the
    // `len / 2` values e^{-2πik/len} start at offset `len / 2 - 1`.
    stage_cos: Vec<T>,
    stage_sin: Vec<T>,
    bitrev: Vec<usize>,
}

impl<T: Real> FftPlan<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "fft size must be positive");
        let unit = |k: usize, m: usize| {
            let a = -2.0 * PI * k as f64 / m as f64;
            (T::of(Float::cos(a)), T::of(Float::sin(a)))
        };
        let (cos, sin) = (0..n).map(|k| unit(k, n)).unzip();
        let (mut stage_cos, mut stage_sin) = (Vec::new(), Vec::new());
        let bitrev = if n.is_power_of_two() {
            let mut len = 2;
            while len <= n {
                for k in 0..len / 2 {
                    let (c, s) = unit(k, len);
                    stage_cos.push(c);
                    stage_sin.push(s);
                }
                len <<= 1;
            }
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            n,
            cos,
            sin,
            stage_cos,
            stage_sin,
            bitrev,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform: X_k = Σ x_n e^{-2πikn/N}.
    pub fn forward(&self, re: &mut [T], im: &mut [T]) {
        assert_eq!(re.len(), self.n);
        assert_eq!(im.len(), self.n);
        if self.n.is_power_of_two() {
            self.radix2(re, im);
        } else {
            self.direct(re, im);
        }
    }

    /// In-place unnormalized inverse: x_n = Σ X_k e^{+2πikn/N}.
    pub fn inverse(&self, re: &mut [T], im: &mut [T]) {
        for v in im.iter_mut() {
            *v = -*v;
        }
        self.forward(re, im);
        for v in im.iter_mut() {
            *v = -*v;
        }
    }

    fn radix2(&self, re: &mut [T], im: &mut [T]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let wr = &self.stage_cos[half - 1..len - 1];
            let wi = &self.stage_sin[half - 1..len - 1];
            for (block_re, block_im) in re.chunks_exact_mut(len).zip(im.chunks_exact_mut(len)) {
                let (ar, br) = block_re.split_at_mut(half);
                let (ai, bi) = block_im.split_at_mut(half);
                for k in 0..half {
                    let tr = br[k] * wr[k] - bi[k] * wi[k];
                    let ti = br[k] * wi[k] + bi[k] * wr[k];
                    br[k] = ar[k] - tr;
                    bi[k] = ai[k] - ti;
                    ar[k] += tr;
                    ai[k] += ti;
                }
            }
            len <<= 1;
        }
    }

    fn direct(&self, re: &mut [T], im: &mut [T]) {
        let n = self.n;
        let mut out_re = vec![T::zero(); n];
        let mut out_im = vec![T::zero(); n];
        for k in 0..n {
            let (mut sr, mut si) = (T::zero(), T::zero());
            for t in 0..n {
                let idx = (k * t) % n;
                let (c, s) = (self.cos[idx], self.sin[idx]);
                sr += re[t] * c - im[t] * s;
                si += re[t] * s + im[t] * c;
            }
            out_re[k] = sr;
            out_im[k] = si;
        }
        re.copy_from_slice(&out_re);
        im.copy_from_slice(&out_im);
    }
}

/// Transforms of real signals, returning (or consuming) the `n / 2 + 1`
/// non-negative-frequency bins.
///
/// Even power-of-two sizes pack the signal into a half-length complex
/// transform; other sizes run the full complex transform.
#[derive(Debug, Clone)]
pub struct RealFft<T> {
    n: usize,
    inner: FftPlan<T>,
    packed: bool,
    // e^{-2πik/n} for k in 0..n/2.
    wr: Vec<T>,
    wi: Vec<T>,
    zr: RefCell<Vec<T>>,
    zi: RefCell<Vec<T>>,
}

impl<T: Real> RealFft<T> {
    pub fn new(n: usize) -> Self {
        let packed = n >= 2 && n.is_power_of_two();
        let m = if packed { n / 2 } else { n };
        let (wr, wi) = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                (T::of(Float::cos(a)), T::of(Float::sin(a)))
            })
            .unzip();
        Self {
            n,
            inner: FftPlan::new(m),
            packed,
            wr,
            wi,
            zr: RefCell::new(vec![T::zero(); m]),
            zi: RefCell::new(vec![T::zero(); m]),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Bins `0..=n/2` of the forward transform of `x` (length `n`).
    pub fn forward(&self, x: &[T], out_re: &mut [T], out_im: &mut [T]) {
        assert_eq!(x.len(), self.n);
        let bins = self.bins();
        let (mut zr, mut zi) = (self.zr.borrow_mut(), self.zi.borrow_mut());
        if !self.packed {
            zr.copy_from_slice(x);
            zi.fill(T::zero());
            self.inner.forward(&mut zr, &mut zi);
            out_re[..bins].copy_from_slice(&zr[..bins]);
            out_im[..bins].copy_from_slice(&zi[..bins]);
            return;
        }
        let m = self.n / 2;
        for (j, pair) in x.chunks_exact(2).enumerate() {
            zr[j] = pair[0];
            zi[j] = pair[1];
        }
        self.inner.forward(&mut zr, &mut zi);
        let half = T::of(0.5);
        for k in 0..=m {
            let (a, b) = (k % m, (m - k) % m);
            // Even and odd half-length spectra recovered from the packed one.
            let er = (zr[a] + zr[b]) * half;
            let ei = (zi[a] - zi[b]) * half;
            let or = (zi[a] + zi[b]) * half;
            let oi = (zr[b] - zr[a]) * half;
            let (wr, wi) = if k < m { (self.wr[k], self.wi[k]) } else { (-T::one(), T::zero()) };
            out_re[k] = er + or * wr - oi * wi;
            out_im[k] = ei + or * wi + oi * wr;
        }
    }

    /// Unnormalized inverse of a Hermitian spectrum given by its bins
    /// `0..=n/2`: `x_t = Σ_{k<n} X_k e^{+2πikt/n}`. Imaginary parts of the
    /// DC and Nyquist bins are ignored.
    pub fn inverse(&self, re: &[T], im: &[T], out: &mut [T]) {
        assert_eq!(out.len(), self.n);
        let n = self.n;
        let (mut zr, mut zi) = (self.zr.borrow_mut(), self.zi.borrow_mut());
        if !self.packed {
            for k in 0..n {
                let (r, i) = if k < self.bins() { (re[k], im[k]) } else { (re[n - k], -im[n - k]) };
                let edge = k == 0 || 2 * k == n;
                zr[k] = r;
                zi[k] = if edge { T::zero() } else { i };
            }
            self.inner.inverse(&mut zr, &mut zi);
            out.copy_from_slice(&zr);
            return;
        }
        let m = n / 2;
        let half = T::of(0.5);
        for k in 0..m {
            // X_k and conj(X_{m-k}) give the even and odd half-length spectra.
            let (xr, xi) = (re[k], if k == 0 { T::zero() } else { im[k] });
            let (yr, yi) = (re[m - k], if k == 0 { T::zero() } else { -im[m - k] });
            let er = (xr + yr) * half;
            let ei = (xi + yi) * half;
            let (dr, di) = ((xr - yr) * half, (xi - yi) * half);
            // O_k = D_k · conj(W^k).
            let (wr, wi) = (self.wr[k], self.wi[k]);
            let or = dr * wr + di * wi;
            let oi = di * wr - dr * wi;
            zr[k] = er - oi;
            zi[k] = ei + or;
        }
        self.inner.inverse(&mut zr, &mut zi);
        let two = T::of(2.0);
        for (j, pair) in out.chunks_exact_mut(2).enumerate() {
            pair[0] = two * zr[j];
            pair[1] = two * zi[j];
        }
    }
}
