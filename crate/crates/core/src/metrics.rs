//! Separation metrics: BSS-eval style SDR/SIR via least-squares projection
//! onto delayed copies of the references, and cepstral distortion.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::loss::Permutation;
use crate::signal_io::Waveform;
use crate::stft::{stft, StftConfig};

/// Projection filter length in taps.
pub const DEFAULT_FILTER_LEN: usize = 512;
/// |SDR| and |SIR| are clipped to this many dB.
pub const DB_CAP: f64 = 100.0;
/// Cepstral coefficients 1..=CEPSTRAL_ORDER enter the distortion.
pub const CEPSTRAL_ORDER: usize = 12;
/// Frames more than this many dB below the loudest frame are ignored.
pub const CD_GATE_DB: f64 = 40.0;

/// Per-estimate metrics; entry `n` describes estimate `n` scored against
/// reference `permutation.mapping()[n]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub sdr: Vec<f64>,
    pub sir: Vec<f64>,
    pub cd: Vec<f64>,
    #[serde(serialize_with = "ser_perm")]
    pub permutation: Permutation,
}

fn ser_perm<S: serde::Serializer>(p: &Permutation, s: S) -> std::result::Result<S::Ok, S::Error> {
    p.mapping().serialize(s)
}

impl MetricReport {
    pub fn mean_sdr(&self) -> f64 {
        mean(&self.sdr)
    }
    pub fn mean_sir(&self) -> f64 {
        mean(&self.sir)
    }
    pub fn mean_cd(&self) -> f64 {
        mean(&self.cd)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn to_db(num: f64, den: f64) -> f64 {
    let db = 10.0 * (num / den).log10();
    if db.is_nan() {
        -DB_CAP
    } else {
        db.clamp(-DB_CAP, DB_CAP)
    }
}

/// Drops `n` samples from both ends.
pub fn trim_edges(x: &[f64], n: usize) -> &[f64] {
    if x.len() <= 2 * n {
        return &x[0..0];
    }
    &x[n..x.len() - n]
}

fn cholesky_with_ridge(mut g: DMatrix<f64>) -> nalgebra::linalg::Cholesky<f64, nalgebra::Dyn> {
    let mean_diag = g.diagonal().mean().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    loop {
        if let Some(c) = g.clone().cholesky() {
            return c;
        }
        let step = if ridge == 0.0 { 1e-10 * mean_diag } else { ridge * 99.0 };
        for i in 0..g.nrows() {
            g[(i, i)] += step;
        }
        ridge += step;
    }
}

/// Precomputed projection machinery for one set of references.
pub struct BssEvaluator {
    refs: Vec<Vec<f64>>,
    filter_len: usize,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    ref_spectra: Vec<Vec<Complex64>>,
    all: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    single: Vec<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>>,
}

impl BssEvaluator {
    pub fn new(refs: &[Vec<f64>], filter_len: usize) -> Result<Self> {
        let n_src = refs.len();
        if n_src == 0 {
            return Err(Error::Empty("references"));
        }
        let len = refs[0].len();
        if len == 0 || refs.iter().any(|r| r.len() != len) {
            return Err(Error::Shape("references must be non-empty with equal length".into()));
        }
        if filter_len == 0 {
            return Err(Error::Config("filter_len must be positive".into()));
        }
        if let Some(i) = refs.iter().position(|r| r.iter().all(|v| *v == 0.0)) {
            return Err(Error::SilentReference(i));
        }
        let n_fft = (len + filter_len - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_fft);
        let ifft = planner.plan_fft_inverse(n_fft);
        let ref_spectra: Vec<Vec<Complex64>> = refs.iter().map(|r| spectrum(&*fft, r, n_fft)).collect();

        // R_ik(τ) = Σ_u s_i[u] s_k[u + τ]
        let l = filter_len;
        let mut gram = DMatrix::<f64>::zeros(n_src * l, n_src * l);
        for i in 0..n_src {
            for k in i..n_src {
                let prod: Vec<Complex64> =
                    ref_spectra[i].iter().zip(&ref_spectra[k]).map(|(a, b)| a.conj() * b).collect();
                let corr = real_inverse(&*ifft, prod, n_fft);
                for a in 0..l {
                    for b in 0..l {
                        let lag = a as isize - b as isize;
                        let v = corr[lag.rem_euclid(n_fft as isize) as usize];
                        gram[(i * l + a, k * l + b)] = v;
                        gram[(k * l + b, i * l + a)] = v;
                    }
                }
            }
        }
        let single = (0..n_src).map(|i| cholesky_with_ridge(gram.view((i * l, i * l), (l, l)).into_owned())).collect();
        let all = cholesky_with_ridge(gram);
        Ok(Self { refs: refs.to_vec(), filter_len, n_fft, fft, ifft, ref_spectra, all, single })
    }

    pub fn num_sources(&self) -> usize {
        self.refs.len()
    }

    pub fn references(&self) -> &[Vec<f64>] {
        &self.refs
    }

    /// Projection of `est` onto the delayed copies of the references in `which`.
    fn project(&self, est_spec: &[Complex64], which: &[usize], chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>) -> Vec<f64> {
        let l = self.filter_len;
        let mut rhs = DVector::<f64>::zeros(which.len() * l);
        for (slot, &i) in which.iter().enumerate() {
            let prod: Vec<Complex64> = self.ref_spectra[i].iter().zip(est_spec).map(|(a, b)| a.conj() * b).collect();
            let corr = real_inverse(&*self.ifft, prod, self.n_fft);
            rhs.rows_mut(slot * l, l).copy_from_slice(&corr[..l]);
        }
        let coef = chol.solve(&rhs);
        let mut acc = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for (slot, &i) in which.iter().enumerate() {
            let cs = spectrum(&*self.fft, coef.rows(slot * l, l).as_slice(), self.n_fft);
            acc.iter_mut().zip(cs.iter().zip(&self.ref_spectra[i])).for_each(|(a, (c, s))| *a += c * s);
        }
        let len = self.refs[0].len() + l - 1;
        let mut out = real_inverse(&*self.ifft, acc, self.n_fft);
        out.truncate(len);
        out
    }

    /// (SDR, SIR) of `est` against every reference.
    pub fn score(&self, est: &[f64]) -> Result<Vec<(f64, f64)>> {
        if est.len() != self.refs[0].len() {
            return Err(Error::Shape(format!("estimate has {} samples, references {}", est.len(), self.refs[0].len())));
        }
        let spec = spectrum(&*self.fft, est, self.n_fft);
        let all_idx: Vec<usize> = (0..self.num_sources()).collect();
        let p_all = self.project(&spec, &all_idx, &self.all);
        let padded = |t: usize| if t < est.len() { est[t] } else { 0.0 };
        (0..self.num_sources())
            .map(|j| {
                let target = self.project(&spec, &[j], &self.single[j]);
                let (mut e_t, mut e_i, mut e_d) = (0.0, 0.0, 0.0);
                for (t, (pt, pa)) in target.iter().zip(&p_all).enumerate() {
                    e_t += pt * pt;
                    e_i += (pa - pt).powi(2);
                    e_d += (padded(t) - pt).powi(2);
                }
                Ok((to_db(e_t, e_d), to_db(e_t, e_i)))
            })
            .collect()
    }

    /// Scores each estimate against each reference and picks the assignment with the best mean SIR.
    pub fn evaluate(&self, ests: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, Permutation)> {
        let n = self.num_sources();
        if ests.len() != n {
            return Err(Error::Shape(format!("{} estimates for {n} references", ests.len())));
        }
        let table: Vec<Vec<(f64, f64)>> = ests.iter().map(|e| self.score(e)).collect::<Result<_>>()?;
        let mut best: Option<(f64, Permutation)> = None;
        for perm in Permutation::all(n) {
            let sir: f64 = perm.mapping().iter().enumerate().map(|(j, &i)| table[j][i].1).sum::<f64>() / n as f64;
            if best.as_ref().is_none_or(|(b, _)| sir > *b) {
                best = Some((sir, perm));
            }
        }
        let perm = best.expect("non-empty").1;
        let sdr = perm.mapping().iter().enumerate().map(|(j, &i)| table[j][i].0).collect();
        let sir = perm.mapping().iter().enumerate().map(|(j, &i)| table[j][i].1).collect();
        Ok((sdr, sir, perm))
    }
}

fn spectrum(fft: &dyn Fft<f64>, x: &[f64], n: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    v.iter_mut().zip(x).for_each(|(a, b)| a.re = *b);
    fft.process(&mut v);
    v
}

fn real_inverse(ifft: &dyn Fft<f64>, mut v: Vec<Complex64>, n: usize) -> Vec<f64> {
    ifft.process(&mut v);
    v.iter().map(|c| c.re / n as f64).collect()
}

/// SDR and SIR of each estimate with the best-SIR assignment to references.
pub fn bss_eval(ests: &[Vec<f64>], refs: &[Vec<f64>], filter_len: usize) -> Result<(Vec<f64>, Vec<f64>, Permutation)> {
    BssEvaluator::new(refs, filter_len)?.evaluate(ests)
}

/// Log-magnitude real cepstra (coefficients 1..=order) and energy (dB) of each frame.
fn frame_cepstra(x: &[f64], sample_rate: u32, order: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let cfg = StftConfig::speech(sample_rate);
    let spec = stft(&Waveform::mono(x.to_vec(), sample_rate)?, &cfg)?;
    let n = cfg.fft_size;
    let bins = spec.bins();
    let mut cep = Vec::with_capacity(spec.frames());
    let mut energy = Vec::with_capacity(spec.frames());
    for t in 0..spec.frames() {
        let logmag: Vec<f64> = (0..bins).map(|f| 0.5 * (spec.get(t, f, 0).norm_sqr() + 1e-30).ln()).collect();
        // two-sided energy of the frame
        let e: f64 = (0..bins)
            .map(|f| spec.get(t, f, 0).norm_sqr() * if f == 0 || f == bins - 1 { 1.0 } else { 2.0 })
            .sum();
        energy.push(10.0 * (e + 1e-300).log10());
        let c: Vec<f64> = (1..=order)
            .map(|k| {
                let mut acc = logmag[0] + logmag[bins - 1] * if k % 2 == 0 { 1.0 } else { -1.0 };
                for (f, l) in logmag.iter().enumerate().take(bins - 1).skip(1) {
                    acc += 2.0 * l * (2.0 * std::f64::consts::PI * (k * f) as f64 / n as f64).cos();
                }
                acc / n as f64
            })
            .collect();
        cep.push(c);
    }
    Ok((cep, energy))
}

/// Mean over active frames of (10/ln10)·sqrt(2 Σ_{k=1..12} (c_k − ĉ_k)²).
///
/// A frame is active when the summed energy of both signals is within
/// [`CD_GATE_DB`] of the loudest frame, which keeps the measure symmetric.
pub fn cepstrum_distortion(est: &[f64], reference: &[f64], sample_rate: u32) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape("cepstral distortion needs equal lengths".into()));
    }
    if est.iter().chain(reference).all(|v| *v == 0.0) {
        return Err(Error::Empty("signal energy"));
    }
    let (ca, ea) = frame_cepstra(est, sample_rate, CEPSTRAL_ORDER)?;
    let (cb, eb) = frame_cepstra(reference, sample_rate, CEPSTRAL_ORDER)?;
    let combined: Vec<f64> = ea.iter().zip(&eb).map(|(a, b)| 10.0 * (10f64.powf(a / 10.0) + 10f64.powf(b / 10.0)).log10()).collect();
    let top = combined.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = 10.0 / std::f64::consts::LN_10;
    let (mut sum, mut count) = (0.0, 0usize);
    for (t, e) in combined.iter().enumerate() {
        if *e > top - CD_GATE_DB {
            let d2: f64 = ca[t].iter().zip(&cb[t]).map(|(a, b)| (a - b).powi(2)).sum();
            sum += scale * (2.0 * d2).sqrt();
            count += 1;
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// SDR/SIR with the best assignment plus cepstral distortion of each matched pair.
pub fn evaluate_estimates(evaluator: &BssEvaluator, ests: &[Vec<f64>], sample_rate: u32) -> Result<MetricReport> {
    let (sdr, sir, permutation) = evaluator.evaluate(ests)?;
    let cd = permutation
        .mapping()
        .iter()
        .zip(ests)
        .map(|(&i, e)| cepstrum_distortion(e, &evaluator.references()[i], sample_rate))
        .collect::<Result<_>>()?;
    Ok(MetricReport { sdr, sir, cd, permutation })
}
