//! Straight-line reference implementations on nalgebra matrices, plus random instance helpers.
#![allow(dead_code)]

use maskbeam::{CMatrix, Complex64, ComplexSpectrogram, HermitianMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = DMatrix<Complex64>;

const LOAD: f64 = 1e-6;
const FLOOR: f64 = 1e-12;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_vector(rng: &mut ChaCha8Rng, m: usize) -> Vec<Complex64> {
    (0..m).map(|_| c(gauss(rng), gauss(rng))).collect()
}

/// B Bᴴ + shift·I with Gaussian B.
pub fn random_pd(rng: &mut ChaCha8Rng, m: usize, shift: f64) -> Mat {
    let b = Mat::from_fn(m, m, |_, _| c(gauss(rng), gauss(rng)));
    &b * b.adjoint() + Mat::identity(m, m) * c(shift, 0.0)
}

pub fn random_rank_one(rng: &mut ChaCha8Rng, m: usize) -> (Vec<Complex64>, Mat) {
    let a = random_vector(rng, m);
    let col = Mat::from_column_slice(m, 1, &a);
    let r = &col * col.adjoint();
    (a, r)
}

pub fn to_herm(a: &Mat) -> HermitianMatrix {
    let m = a.nrows();
    let rows: Vec<Complex64> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();
    HermitianMatrix::hermitize(&CMatrix::from_rows(m, &rows))
}

pub fn from_cm(a: &CMatrix) -> Mat {
    Mat::from_fn(a.dim(), a.dim(), |i, j| a[(i, j)])
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn outer(x: &[Complex64]) -> Mat {
    let v = Mat::from_column_slice(x.len(), 1, x);
    &v * v.adjoint()
}

pub fn load(a: &Mat) -> Mat {
    let m = a.nrows();
    let tr: f64 = (0..m).map(|i| a[(i, i)].re).sum();
    a + Mat::identity(m, m) * c(LOAD * (tr / m as f64 + FLOOR), 0.0)
}

pub fn herm(a: &Mat) -> Mat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

pub fn inv(a: &Mat) -> Mat {
    a.clone().try_inverse().expect("invertible")
}

pub fn ln_det(a: &Mat) -> f64 {
    a.determinant().re.ln()
}

pub fn column(s: &ComplexSpectrogram, t: usize, f: usize) -> Vec<Complex64> {
    (0..s.channels()).map(|m| s.get(t, f, m)).collect()
}

/// R_{f,n} = Σ_t m x xᴴ / Σ_t m, frequency-major.
pub fn covariance(mask: &dyn Fn(usize, usize, usize) -> f64, x: &ComplexSpectrogram, n_src: usize) -> Vec<Mat> {
    let mics = x.channels();
    let mut out = Vec::new();
    for f in 0..x.bins() {
        for n in 0..n_src {
            let mut acc = Mat::zeros(mics, mics);
            let mut s = 0.0;
            for t in 0..x.frames() {
                let m = mask(t, f, n);
                acc += outer(&column(x, t, f)) * c(m, 0.0);
                s += m;
            }
            out.push(acc / c(s, 0.0));
        }
    }
    out
}

pub fn psa(mask: &dyn Fn(usize, usize, usize) -> f64, x: &ComplexSpectrogram, images: &[ComplexSpectrogram]) -> f64 {
    let mut total = 0.0;
    for t in 0..x.frames() {
        for f in 0..x.bins() {
            for (n, img) in images.iter().enumerate() {
                total += (x.get(t, f, 0) * mask(t, f, n) - img.get(t, f, 0)).norm_sqr();
            }
        }
    }
    total / (x.frames() * x.bins()) as f64
}

pub fn l1(
    mask: &dyn Fn(usize, usize, usize) -> f64,
    act: &dyn Fn(usize, usize, usize) -> f64,
    x: &ComplexSpectrogram,
    images: &[ComplexSpectrogram],
) -> f64 {
    let n_src = images.len();
    let r = covariance(mask, x, n_src);
    let mut total = 0.0;
    for t in 0..x.frames() {
        for f in 0..x.bins() {
            let spatial: Vec<Mat> = (0..n_src).map(|n| &r[f * n_src + n] * c(act(t, f, n), 0.0)).collect();
            let sum = spatial.iter().fold(Mat::zeros(x.channels(), x.channels()), |a, b| a + b);
            let p = inv(&load(&sum));
            let xv = Mat::from_column_slice(x.channels(), 1, &column(x, t, f));
            for n in 0..n_src {
                let w = &spatial[n] * &p;
                let d = Mat::from_column_slice(x.channels(), 1, &column(&images[n], t, f)) - &w * &xv;
                let psi = load(&herm(&(&spatial[n] - &spatial[n] * &p * &spatial[n])));
                let quad = (d.adjoint() * inv(&psi) * &d)[(0, 0)].re;
                total += quad + ln_det(&psi);
            }
        }
    }
    total
}

pub fn l2(
    mask: &dyn Fn(usize, usize, usize) -> f64,
    act_star: &dyn Fn(usize, usize, usize) -> f64,
    x: &ComplexSpectrogram,
    n_src: usize,
) -> f64 {
    let r = covariance(mask, x, n_src);
    let mut total = 0.0;
    for t in 0..x.frames() {
        for f in 0..x.bins() {
            let mut model = Mat::zeros(x.channels(), x.channels());
            for n in 0..n_src {
                model += &r[f * n_src + n] * c(act_star(t, f, n), 0.0);
            }
            let model = load(&model);
            let xv = column(x, t, f);
            let obs = outer(&xv);
            total += (obs * inv(&model)).trace().re + ln_det(&model);
        }
    }
    total
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
