//! MVDR, GEV and multichannel Wiener filters built from spatial covariances.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hermitian::{gevd_principal, loading_amount, CMatrix, ComplexVector, HermitianMatrix, DEFAULT_LOADING};
use crate::mask_cov::{ActivationTensor, CovarianceSet};
use crate::stft::ComplexSpectrogram;

/// Reference microphone for distortionless constraints and MWF output rows.
pub const REF_CHANNEL: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamformerKind {
    Mvdr,
    Gev,
    MwfTi,
    MwfTv,
}

impl BeamformerKind {
    pub fn name(self) -> &'static str {
        match self {
            BeamformerKind::Mvdr => "mvdr",
            BeamformerKind::Gev => "gev",
            BeamformerKind::MwfTi => "mwf-ti",
            BeamformerKind::MwfTv => "mwf-tv",
        }
    }

    pub fn is_time_invariant(self) -> bool {
        self != BeamformerKind::MwfTv
    }
}

impl std::str::FromStr for BeamformerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvdr" => Ok(Self::Mvdr),
            "gev" => Ok(Self::Gev),
            "mwf-ti" | "mwf_ti" => Ok(Self::MwfTi),
            "mwf-tv" | "mwf_tv" => Ok(Self::MwfTv),
            other => Err(Error::Config(format!("unknown beamformer '{other}'"))),
        }
    }
}

/// Time-invariant filters w_{f,n}, one length-M vector per frequency and source.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerBank {
    kind: BeamformerKind,
    filters: Vec<ComplexVector>,
    bins: usize,
    sources: usize,
    mics: usize,
    fallbacks: usize,
}

impl BeamformerBank {
    pub fn from_filters(
        kind: BeamformerKind,
        filters: Vec<ComplexVector>,
        bins: usize,
        sources: usize,
    ) -> Result<Self> {
        if filters.len() != bins * sources || filters.is_empty() {
            return Err(Error::Shape("bank size".into()));
        }
        let mics = filters[0].dim();
        if filters.iter().any(|w| w.dim() != mics || !w.is_finite()) {
            return Err(Error::Shape("bank filters must be finite with equal length".into()));
        }
        Ok(Self { kind, filters, bins, sources, mics, fallbacks: 0 })
    }

    pub fn kind(&self) -> BeamformerKind {
        self.kind
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn sources(&self) -> usize {
        self.sources
    }
    pub fn mics(&self) -> usize {
        self.mics
    }
    pub fn filter(&self, f: usize, n: usize) -> &ComplexVector {
        &self.filters[f * self.sources + n]
    }
    pub fn filters(&self) -> &[ComplexVector] {
        &self.filters
    }
    /// Number of (f, n) entries that fell back to reference-channel pass-through.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

/// Time-varying matrix filters W_{t,f,n}.
#[derive(Debug, Clone)]
pub struct TimeVaryingFilter {
    matrices: Vec<CMatrix>,
    frames: usize,
    bins: usize,
    sources: usize,
    fallback: Vec<bool>,
}

impl TimeVaryingFilter {
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn sources(&self) -> usize {
        self.sources
    }
    pub fn get(&self, t: usize, f: usize, n: usize) -> &CMatrix {
        &self.matrices[(t * self.bins + f) * self.sources + n]
    }
    /// True when every activation at (t, f) was zero and W = I/N was used.
    pub fn is_fallback(&self, t: usize, f: usize) -> bool {
        self.fallback[t * self.bins + f]
    }
}

/// MVDR filter R_ī⁻¹ R_n e / tr(R_ī⁻¹ R_n), with the interference loaded.
pub fn mvdr(target: &HermitianMatrix, interf: &HermitianMatrix) -> Result<ComplexVector> {
    mvdr_with_loading(target, interf, DEFAULT_LOADING)
}

pub fn mvdr_with_loading(
    target: &HermitianMatrix,
    interf: &HermitianMatrix,
    loading: f64,
) -> Result<ComplexVector> {
    let m = target.dim();
    let inv = interf.loaded(loading).as_matrix().inverse()?;
    let prod = &inv * target.as_matrix();
    let tr = prod.trace();
    if tr.norm() < 1e-12 {
        return Err(Error::DegenerateTarget(tr.norm()));
    }
    let w: ComplexVector = ComplexVector((0..m).map(|i| prod[(i, REF_CHANNEL)] / tr).collect());
    Ok(w)
}

/// GEV filter: principal generalized eigenvector of (R_n, R_ī), rescaled by
/// the complex gain minimizing E|α wᴴx − x_ref|² under the observation covariance.
pub fn gev(
    target: &HermitianMatrix,
    interf: &HermitianMatrix,
    observation: &HermitianMatrix,
) -> Result<ComplexVector> {
    let w = gevd_principal(target, &interf.loaded(DEFAULT_LOADING))?;
    Ok(minimal_distortion_scale(&w, observation))
}

/// w · (wᴴ Φ e) / (wᴴ Φ w). Leaves `w` untouched when the output power vanishes.
pub fn minimal_distortion_scale(w: &ComplexVector, observation: &HermitianMatrix) -> ComplexVector {
    let phi_w = observation.mul_vec(w);
    let power = w.dot(&phi_w).re;
    if power <= f64::MIN_POSITIVE {
        return w.clone();
    }
    let cross = phi_w[REF_CHANNEL].conj();
    w.scale(cross / power)
}

/// Wiener matrix (v_n R_n + δ/N·I)(Σ_l v_l R_l + δ·I)⁻¹.
///
/// The loading δ = loading·(tr(Σ)/M + ε₀) is split evenly over the sources so
/// the matrices of all sources sum to the identity for any loading.
fn wiener_matrix(
    weighted: &[HermitianMatrix],
    n: usize,
    loading: f64,
) -> Result<CMatrix> {
    let m = weighted[0].dim();
    let mut total = HermitianMatrix::zeros(m);
    for r in weighted {
        total.axpy(1.0, r);
    }
    let delta = if loading > 0.0 { loading_amount(total.trace_re(), m, loading) } else { 0.0 };
    let mut sum = total.into_matrix();
    sum.add_diag(delta);
    let inv = sum.inverse()?;
    let mut num = weighted[n].as_matrix().clone();
    num.add_diag(delta / weighted.len() as f64);
    Ok(&num * &inv)
}

/// Time-invariant MWF for source `n`: W_f = R_{f,n}(Σ_l R_{f,l})⁻¹ per frequency.
pub fn mwf_time_invariant_matrices(covs: &CovarianceSet, n: usize, loading: f64) -> Result<Vec<CMatrix>> {
    (0..covs.bins())
        .map(|f| {
            let rs: Vec<HermitianMatrix> = (0..covs.sources()).map(|l| covs.get(f, l).clone()).collect();
            wiener_matrix(&rs, n, loading)
        })
        .collect()
}

/// Time-invariant MWF filters for source `n`; the stored filter is Wᴴe so that
/// wᴴx is the reference-channel row of W x.
pub fn mwf_time_invariant(covs: &CovarianceSet, n: usize) -> Result<Vec<ComplexVector>> {
    Ok(mwf_time_invariant_matrices(covs, n, DEFAULT_LOADING)?
        .iter()
        .map(reference_row_filter)
        .collect())
}

fn reference_row_filter(w: &CMatrix) -> ComplexVector {
    ComplexVector((0..w.dim()).map(|j| w[(REF_CHANNEL, j)].conj()).collect())
}

/// Time-varying MWF W_{t,f,n} = v_n R_n (Σ_l v_l R_l)⁻¹ with split loading.
pub fn mwf_time_varying(covs: &CovarianceSet, act: &ActivationTensor) -> Result<TimeVaryingFilter> {
    mwf_time_varying_with_loading(covs, act, DEFAULT_LOADING)
}

pub fn mwf_time_varying_with_loading(
    covs: &CovarianceSet,
    act: &ActivationTensor,
    loading: f64,
) -> Result<TimeVaryingFilter> {
    let (bins, n_src, mics) = (covs.bins(), covs.sources(), covs.mics());
    if act.bins() != bins || act.sources() != n_src {
        return Err(Error::Shape("activation tensor does not match covariance set".into()));
    }
    let frames = act.frames();
    let mut matrices = Vec::with_capacity(frames * bins * n_src);
    let mut fallback = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        for f in 0..bins {
            let all_zero = (0..n_src).all(|n| act.get(t, f, n) == 0.0);
            fallback.push(all_zero);
            if all_zero {
                let w = CMatrix::scaled_identity(mics, 1.0 / n_src as f64);
                matrices.extend(std::iter::repeat_n(w, n_src));
                continue;
            }
            let weighted: Vec<HermitianMatrix> =
                (0..n_src).map(|n| covs.get(f, n).scale(act.get(t, f, n))).collect();
            for n in 0..n_src {
                matrices.push(wiener_matrix(&weighted, n, loading)?);
            }
        }
    }
    Ok(TimeVaryingFilter { matrices, frames, bins, sources: n_src, fallback })
}

/// Builds a time-invariant bank. Degenerate covariances and failed
/// constructions fall back to reference-channel pass-through, as does every
/// filter when there is a single source and hence nothing to suppress.
pub fn build_bank(
    kind: BeamformerKind,
    covs: &CovarianceSet,
    observation: &[HermitianMatrix],
) -> Result<BeamformerBank> {
    let (bins, n_src, mics) = (covs.bins(), covs.sources(), covs.mics());
    if observation.len() != bins {
        return Err(Error::Shape("observation covariance count".into()));
    }
    let passthrough = ComplexVector::basis(mics, REF_CHANNEL);
    if kind == BeamformerKind::MwfTv {
        return Err(Error::Incompatible("time-varying MWF has no time-invariant bank".into()));
    }
    if n_src == 1 {
        return BeamformerBank::from_filters(kind, vec![passthrough; bins], bins, 1);
    }
    let mut filters = Vec::with_capacity(bins * n_src);
    let mut fallbacks = 0;
    for f in 0..bins {
        let mwf = match kind {
            BeamformerKind::MwfTi => {
                let rs: Vec<HermitianMatrix> = (0..n_src).map(|l| covs.get(f, l).clone()).collect();
                Some(rs)
            }
            _ => None,
        };
        for n in 0..n_src {
            let built = if covs.is_degenerate(f, n) {
                None
            } else {
                let interf = covs.interference(f, n);
                let res = match kind {
                    BeamformerKind::Mvdr => mvdr(covs.get(f, n), &interf),
                    BeamformerKind::Gev => gev(covs.get(f, n), &interf, &observation[f]),
                    _ => wiener_matrix(mwf.as_ref().expect("mwf covariances"), n, DEFAULT_LOADING)
                        .map(|w| reference_row_filter(&w)),
                };
                res.ok().filter(ComplexVector::is_finite)
            };
            match built {
                Some(w) => filters.push(w),
                None => {
                    fallbacks += 1;
                    filters.push(passthrough.clone());
                }
            }
        }
    }
    let mut bank = BeamformerBank::from_filters(kind, filters, bins, n_src)?;
    bank.fallbacks = fallbacks;
    Ok(bank)
}

/// ĉ_{t,f,n} = w_{f,n}ᴴ x_{t,f}; one single-channel spectrogram per source.
pub fn apply_bank(bank: &BeamformerBank, x: &ComplexSpectrogram) -> Result<Vec<ComplexSpectrogram>> {
    if x.bins() != bank.bins || x.channels() != bank.mics {
        return Err(Error::Shape(format!(
            "bank expects {} bins x {} mics, got {} x {}",
            bank.bins,
            bank.mics,
            x.bins(),
            x.channels()
        )));
    }
    let mut out: Vec<ComplexSpectrogram> = (0..bank.sources).map(|_| x.zeros_like(1)).collect();
    for t in 0..x.frames() {
        for f in 0..x.bins() {
            let xv = x.vector(t, f);
            for (n, o) in out.iter_mut().enumerate() {
                o.set(t, f, 0, bank.filter(f, n).dot(xv));
            }
        }
    }
    Ok(out)
}

/// Reference-channel output of the time-varying filter, e_refᵀ W_{t,f,n} x_{t,f}.
pub fn apply_time_varying(filter: &TimeVaryingFilter, x: &ComplexSpectrogram) -> Result<Vec<ComplexSpectrogram>> {
    if x.frames() != filter.frames || x.bins() != filter.bins {
        return Err(Error::Shape("time-varying filter grid differs from input".into()));
    }
    let mut out: Vec<ComplexSpectrogram> = (0..filter.sources).map(|_| x.zeros_like(1)).collect();
    for t in 0..x.frames() {
        for f in 0..x.bins() {
            let xv = x.vector(t, f);
            for (n, o) in out.iter_mut().enumerate() {
                let w = filter.get(t, f, n);
                let y: Complex64 = (0..w.dim()).map(|j| w[(REF_CHANNEL, j)] * xv[j]).sum();
                o.set(t, f, 0, y);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{rayleigh_quotient, sample_outer};
    use crate::mask_cov::Tensor3;
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(n);
        for _ in 0..rank {
            acc.axpy(1.0, &sample_outer(&rvec(rng, n)));
        }
        acc
    }

    fn identity_dev(m: &CMatrix) -> f64 {
        (m - &CMatrix::identity(m.dim())).max_abs()
    }

    #[test]
    fn mvdr_examples() {
        let w = mvdr(&HermitianMatrix::from_diag(&[1.0, 0.0]), &HermitianMatrix::identity(2)).unwrap();
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-12 && w[1].norm() < 1e-12);
        let w = mvdr(&HermitianMatrix::from_diag(&[3.7]), &HermitianMatrix::from_diag(&[0.2])).unwrap();
        assert_eq!(w[0], c(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = rvec(&mut rng, 3);
            let interf = random_psd(&mut rng, 3, 4);
            let w = mvdr(&sample_outer(&a), &interf).unwrap();
            assert!((w.dot(&a) - a[0]).norm() < 1e-10);
        }
        assert!(matches!(
            mvdr(&HermitianMatrix::zeros(2), &HermitianMatrix::identity(2)),
            Err(Error::DegenerateTarget(_))
        ));
    }

    #[test]
    fn gev_examples() {
        let rn = HermitianMatrix::from_diag(&[2.0, 1.0]);
        let ri = HermitianMatrix::identity(2);
        let obs = rn.add(&ri);
        let w = gev(&rn, &ri, &obs).unwrap();
        assert!(w[1].norm() < 1e-9 && w[0].norm() > 0.1);
        // Φ = diag(3,2), direction e₀ → α = 1
        assert!((w[0] - c(1.0, 0.0)).norm() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let rn = random_psd(&mut rng, 2, 2);
            let ri = random_psd(&mut rng, 2, 3);
            let obs = rn.add(&ri);
            let w1 = gev(&rn, &ri, &obs).unwrap();
            let w2 = gev(&rn.scale(3.0), &ri.scale(0.25), &obs).unwrap();
            let cos = w1.dot(&w2).norm() / (w1.norm() * w2.norm());
            assert!(cos >= 1.0 - 1e-10);
            let best = rayleigh_quotient(&rn, &ri, &w1);
            for _ in 0..10_000 {
                let v = rvec(&mut rng, 2);
                assert!(rayleigh_quotient(&rn, &ri, &v) <= best * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn mwf_time_invariant_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_psd(&mut rng, 2, 3);
        let set = CovarianceSet::from_matrices(vec![r.clone(), r.clone()], 1, 2).unwrap();
        let w = &mwf_time_invariant_matrices(&set, 0, DEFAULT_LOADING).unwrap()[0];
        assert!((w - &CMatrix::scaled_identity(2, 0.5)).max_abs() < 1e-12);

        let set = CovarianceSet::from_matrices(vec![r.clone(), HermitianMatrix::zeros(2)], 1, 2).unwrap();
        let w = &mwf_time_invariant_matrices(&set, 0, DEFAULT_LOADING).unwrap()[0];
        assert!(identity_dev(w) < 1e-5);

        for _ in 0..20 {
            let r1 = random_psd(&mut rng, 3, 4);
            let r2 = random_psd(&mut rng, 3, 4);
            let total = r1.add(&r2);
            let set = CovarianceSet::from_matrices(vec![r1.clone(), r2], 1, 2).unwrap();
            let w = &mwf_time_invariant_matrices(&set, 0, 0.0).unwrap()[0];
            assert!((&(w * total.as_matrix()) - r1.as_matrix()).max_abs() < 1e-9);
        }
    }

    #[test]
    fn mwf_time_varying_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (bins, frames) = (3, 5);
        let mats: Vec<HermitianMatrix> = (0..bins * 2).map(|_| random_psd(&mut rng, 2, 3)).collect();
        let set = CovarianceSet::from_matrices(mats, bins, 2).unwrap();

        let ones = ActivationTensor::ones(frames, bins, 2);
        let tv = mwf_time_varying(&set, &ones).unwrap();
        for n in 0..2 {
            let ti = mwf_time_invariant_matrices(&set, n, DEFAULT_LOADING).unwrap();
            for t in 0..frames {
                for f in 0..bins {
                    assert!((tv.get(t, f, n) - &ti[f]).max_abs() < 1e-12);
                }
            }
        }

        let mut v = Tensor3::zeros(frames, bins, 2);
        for t in 0..frames {
            for f in 0..bins {
                v.set(t, f, 0, rng.random_range(0.1..2.0));
                v.set(t, f, 1, if t == 2 { 0.0 } else { rng.random_range(0.1..2.0) });
            }
        }
        v.set(4, 1, 0, 0.0);
        v.set(4, 1, 1, 0.0);
        let act = ActivationTensor::new(v).unwrap();
        let tv = mwf_time_varying(&set, &act).unwrap();
        for f in 0..bins {
            assert!(identity_dev(tv.get(2, f, 0)) < 1e-5);
        }
        assert!(tv.is_fallback(4, 1) && !tv.is_fallback(4, 0));
        assert!((tv.get(4, 1, 0) - &CMatrix::scaled_identity(2, 0.5)).max_abs() == 0.0);
        for t in 0..frames {
            for f in 0..bins {
                let sum = tv.get(t, f, 0) + tv.get(t, f, 1);
                assert!(identity_dev(&sum) < 1e-9);
            }
        }
    }

    #[test]
    fn apply_bank_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, f, m) = (4, 3, 2);
        let vals: Vec<Complex64> = (0..t * f * m).map(|_| rvec(&mut rng, 1)[0]).collect();
        let x = ComplexSpectrogram::from_values(vals, t, f, m, StftConfig::speech(8000)).unwrap();
        let pass = BeamformerBank::from_filters(
            BeamformerKind::Mvdr,
            vec![ComplexVector::basis(2, 0); f * 2],
            f,
            2,
        )
        .unwrap();
        let y = apply_bank(&pass, &x).unwrap();
        assert_eq!(y[1], x.channel(0));
        let zero = BeamformerBank::from_filters(BeamformerKind::Gev, vec![ComplexVector::zeros(2); f], f, 1).unwrap();
        assert!(apply_bank(&zero, &x).unwrap()[0].values().iter().all(|v| v.norm() == 0.0));
        let bad = BeamformerBank::from_filters(BeamformerKind::Gev, vec![ComplexVector::zeros(3); f], f, 1).unwrap();
        assert!(apply_bank(&bad, &x).is_err());
    }

    #[test]
    fn single_source_passthrough_for_rank_one_scene() {
        // N = 1 with rank-one target: the raw filters already pass channel 0
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rvec(&mut rng, 2);
        let target = sample_outer(&a).scale(2.0);
        let empty = HermitianMatrix::scaled_identity(2, crate::mask_cov::EPS);
        let s = c(0.3, -0.7);
        let x: Vec<Complex64> = a.iter().map(|v| v * s).collect();
        for w in [mvdr(&target, &empty).unwrap(), gev(&target, &empty, &target).unwrap()] {
            assert!((w.dot(&x) - x[0]).norm() < 1e-4 * x[0].norm());
        }
        // with a full-rank target the bank still passes channel 0 exactly
        let full = target.add(&HermitianMatrix::identity(2));
        let set = CovarianceSet::from_matrices(vec![full.clone()], 1, 1).unwrap();
        for kind in [BeamformerKind::Mvdr, BeamformerKind::Gev, BeamformerKind::MwfTi] {
            let bank = build_bank(kind, &set, std::slice::from_ref(&full)).unwrap();
            assert_eq!(bank.filter(0, 0), &ComplexVector::basis(2, REF_CHANNEL), "{kind:?}");
        }
    }

    #[test]
    fn bank_rejects_time_varying_kind() {
        let set = CovarianceSet::from_matrices(vec![HermitianMatrix::identity(2)], 1, 1).unwrap();
        assert!(build_bank(BeamformerKind::MwfTv, &set, &[HermitianMatrix::identity(2)]).is_err());
    }
}
