//! Masks, mask-weighted spatial covariance estimation, oracle activations and
//! the log-magnitude input feature.


use crate::error::{Error, Result};
use crate::hermitian::{sample_outer, HermitianMatrix};
use crate::stft::ComplexSpectrogram;

/// Guard added to magnitude denominators and inside logarithms.
pub const EPS: f64 = 1e-10;

/// Relative mask mass (per frame) below which a covariance is treated as degenerate.
pub const DEGENERATE_MASS: f64 = 1e-8;

/// A dense T×F×K real tensor, row-major with the last index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    values: Vec<f64>,
    dims: [usize; 3],
}

impl Tensor3 {
    pub fn zeros(frames: usize, bins: usize, sources: usize) -> Self {
        Self { values: vec![0.0; frames * bins * sources], dims: [frames, bins, sources] }
    }

    pub fn from_vec(values: Vec<f64>, frames: usize, bins: usize, sources: usize) -> Result<Self> {
        if values.len() != frames * bins * sources {
            return Err(Error::Shape(format!(
                "{} values for {frames}x{bins}x{sources}",
                values.len()
            )));
        }
        Ok(Self { values, dims: [frames, bins, sources] })
    }

    pub fn frames(&self) -> usize {
        self.dims[0]
    }
    pub fn bins(&self) -> usize {
        self.dims[1]
    }
    pub fn sources(&self) -> usize {
        self.dims[2]
    }
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, t: usize, f: usize, n: usize) -> usize {
        (t * self.dims[1] + f) * self.dims[2] + n
    }
    #[inline]
    pub fn get(&self, t: usize, f: usize, n: usize) -> f64 {
        self.values[self.index(t, f, n)]
    }
    #[inline]
    pub fn set(&mut self, t: usize, f: usize, n: usize, v: f64) {
        let i = self.index(t, f, n);
        self.values[i] = v;
    }

    /// Reorders the last axis: output source `n` takes input source `order[n]`.
    pub fn permute_sources(&self, order: &[usize]) -> Self {
        let mut out = Self::zeros(self.dims[0], self.dims[1], self.dims[2]);
        for t in 0..self.dims[0] {
            for f in 0..self.dims[1] {
                for (n, &src) in order.iter().enumerate() {
                    out.set(t, f, n, self.get(t, f, src));
                }
            }
        }
        out
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        let stride = self.dims[1] * self.dims[2];
        Self {
            values: self.values[start * stride..(start + len) * stride].to_vec(),
            dims: [len, self.dims[1], self.dims[2]],
        }
    }
}

/// T×F×N mask with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor(Tensor3);

impl MaskTensor {
    pub fn new(t: Tensor3) -> Result<Self> {
        if t.values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Config("mask values must lie in [0, 1]".into()));
        }
        Ok(Self(t))
    }

    pub fn from_vec(values: Vec<f64>, frames: usize, bins: usize, sources: usize) -> Result<Self> {
        Self::new(Tensor3::from_vec(values, frames, bins, sources)?)
    }

    pub fn filled(frames: usize, bins: usize, sources: usize, v: f64) -> Result<Self> {
        Self::from_vec(vec![v; frames * bins * sources], frames, bins, sources)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }
}

impl std::ops::Deref for MaskTensor {
    type Target = Tensor3;
    fn deref(&self) -> &Tensor3 {
        &self.0
    }
}

/// T×F×N nonnegative time-varying source activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor(Tensor3);

impl ActivationTensor {
    pub fn new(t: Tensor3) -> Result<Self> {
        if t.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("activations must be finite and nonnegative".into()));
        }
        Ok(Self(t))
    }

    pub fn from_vec(values: Vec<f64>, frames: usize, bins: usize, sources: usize) -> Result<Self> {
        Self::new(Tensor3::from_vec(values, frames, bins, sources)?)
    }

    pub fn ones(frames: usize, bins: usize, sources: usize) -> Self {
        Self(Tensor3 { values: vec![1.0; frames * bins * sources], dims: [frames, bins, sources] })
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }
}

impl std::ops::Deref for ActivationTensor {
    type Target = Tensor3;
    fn deref(&self) -> &Tensor3 {
        &self.0
    }
}

/// T×F normalized log-magnitude features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    values: Vec<f64>,
    frames: usize,
    bins: usize,
}

impl FeatureTensor {
    pub fn from_vec(values: Vec<f64>, frames: usize, bins: usize) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::Shape("feature tensor size".into()));
        }
        Ok(Self { values, frames, bins })
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }
    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        Self {
            values: self.values[start * self.bins..(start + len) * self.bins].to_vec(),
            frames: len,
            bins: self.bins,
        }
    }
}

/// Per-frequency, per-source spatial covariance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    matrices: Vec<HermitianMatrix>,
    mask_mass: Vec<f64>,
    degenerate: Vec<bool>,
    bins: usize,
    sources: usize,
}

impl CovarianceSet {
    /// Assembles a set from F×N matrices (frequency-major). Mask mass defaults to 1.
    pub fn from_matrices(matrices: Vec<HermitianMatrix>, bins: usize, sources: usize) -> Result<Self> {
        if matrices.len() != bins * sources {
            return Err(Error::Shape("covariance set size".into()));
        }
        Ok(Self {
            mask_mass: vec![1.0; matrices.len()],
            degenerate: vec![false; matrices.len()],
            matrices,
            bins,
            sources,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn sources(&self) -> usize {
        self.sources
    }
    pub fn mics(&self) -> usize {
        self.matrices[0].dim()
    }
    pub fn get(&self, f: usize, n: usize) -> &HermitianMatrix {
        &self.matrices[f * self.sources + n]
    }
    pub fn mask_mass(&self, f: usize, n: usize) -> f64 {
        self.mask_mass[f * self.sources + n]
    }
    /// True when the mask mass was too small and the ε·I fallback was used.
    pub fn is_degenerate(&self, f: usize, n: usize) -> bool {
        self.degenerate[f * self.sources + n]
    }

    /// Σ_{l≠n} R_{f,l}; the zero matrix when N = 1.
    pub fn interference(&self, f: usize, n: usize) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(self.mics());
        for l in (0..self.sources).filter(|&l| l != n) {
            acc.axpy(1.0, self.get(f, l));
        }
        acc
    }

    /// Σ_l R_{f,l}.
    pub fn total(&self, f: usize) -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(self.mics());
        for l in 0..self.sources {
            acc.axpy(1.0, self.get(f, l));
        }
        acc
    }
}

fn check_images(x: &ComplexSpectrogram, images: &[ComplexSpectrogram]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Shape("no source images".into()));
    }
    for c in images {
        if !c.same_grid(x) || c.channels() != x.channels() {
            return Err(Error::Shape("source image grid differs from mixture".into()));
        }
    }
    Ok(())
}

/// Phase-sensitive mask against reference channel `ref_channel`, clipped to [0, 1].
pub fn oracle_psm(
    x: &ComplexSpectrogram,
    images: &[ComplexSpectrogram],
    ref_channel: usize,
) -> Result<MaskTensor> {
    check_images(x, images)?;
    if ref_channel >= x.channels() {
        return Err(Error::Shape(format!("reference channel {ref_channel} out of range")));
    }
    let (frames, bins, n_src) = (x.frames(), x.bins(), images.len());
    let mut mask = Tensor3::zeros(frames, bins, n_src);
    for t in 0..frames {
        for f in 0..bins {
            let xr = x.get(t, f, ref_channel);
            let den = xr.norm_sqr().max(EPS);
            for (n, c) in images.iter().enumerate() {
                let num = (c.get(t, f, ref_channel) * xr.conj()).re;
                mask.set(t, f, n, (num / den).clamp(0.0, 1.0));
            }
        }
    }
    MaskTensor::new(mask)
}

/// Mask-weighted covariance R_{f,n} = Σ_t m x xᴴ / Σ_t m.
///
/// When the mask mass of an entry is below `DEGENERATE_MASS · T` the entry
/// becomes ε·I and is flagged.
pub fn estimate_covariance(mask: &MaskTensor, x: &ComplexSpectrogram) -> Result<CovarianceSet> {
    if mask.frames() != x.frames() || mask.bins() != x.bins() {
        return Err(Error::Shape(format!(
            "mask {}x{} vs spectrogram {}x{}",
            mask.frames(),
            mask.bins(),
            x.frames(),
            x.bins()
        )));
    }
    let (frames, bins, n_src, mics) = (x.frames(), x.bins(), mask.sources(), x.channels());
    let mut matrices = Vec::with_capacity(bins * n_src);
    let mut mass = Vec::with_capacity(bins * n_src);
    let mut degenerate = Vec::with_capacity(bins * n_src);
    let mut outers = Vec::with_capacity(frames);
    for f in 0..bins {
        outers.clear();
        outers.extend((0..frames).map(|t| sample_outer(x.vector(t, f))));
        for n in 0..n_src {
            let s: f64 = (0..frames).map(|t| mask.get(t, f, n)).sum();
            mass.push(s);
            if s < DEGENERATE_MASS * frames as f64 {
                matrices.push(HermitianMatrix::scaled_identity(mics, EPS));
                degenerate.push(true);
                continue;
            }
            let mut acc = HermitianMatrix::zeros(mics);
            for (t, xx) in outers.iter().enumerate() {
                let m = mask.get(t, f, n);
                if m != 0.0 {
                    acc.axpy(m, xx);
                }
            }
            matrices.push(HermitianMatrix::hermitize(&acc.scale(1.0 / s)));
            degenerate.push(false);
        }
    }
    Ok(CovarianceSet { matrices, mask_mass: mass, degenerate, bins, sources: n_src })
}

/// Observation covariance per frequency, (1/T) Σ_t x xᴴ.
pub fn observation_covariance(x: &ComplexSpectrogram) -> Vec<HermitianMatrix> {
    let ones = MaskTensor(Tensor3 {
        values: vec![1.0; x.frames() * x.bins()],
        dims: [x.frames(), x.bins(), 1],
    });
    let set = estimate_covariance(&ones, x).expect("shapes agree by construction");
    set.matrices
}

/// Oracle activation v⋆: per-channel power relative to its utterance mean, averaged over channels.
pub fn oracle_activation(images: &[ComplexSpectrogram]) -> Result<ActivationTensor> {
    let first = images.first().ok_or(Error::Shape("no source images".into()))?;
    check_images(first, images)?;
    let (frames, bins, mics, n_src) = (first.frames(), first.bins(), first.channels(), images.len());
    let mut out = Tensor3::zeros(frames, bins, n_src);
    for (n, c) in images.iter().enumerate() {
        for f in 0..bins {
            for m in 0..mics {
                let mean: f64 = (0..frames).map(|t| c.get(t, f, m).norm_sqr()).sum::<f64>() / frames as f64;
                let den = mean + EPS;
                for t in 0..frames {
                    let i = out.index(t, f, n);
                    out.values[i] += c.get(t, f, m).norm_sqr() / den / mics as f64;
                }
            }
        }
    }
    ActivationTensor::new(out)
}

/// Log mean magnitude over channels, normalized per frequency over the utterance.
pub fn input_feature(x: &ComplexSpectrogram) -> Result<FeatureTensor> {
    let (frames, bins, mics) = (x.frames(), x.bins(), x.channels());
    if frames < 2 {
        return Err(Error::Shape("input feature needs at least two frames".into()));
    }
    let mut raw = vec![0.0; frames * bins];
    for t in 0..frames {
        for f in 0..bins {
            let mag: f64 = x.vector(t, f).iter().map(|v| v.norm()).sum::<f64>() / mics as f64;
            raw[t * bins + f] = (mag + EPS).ln();
        }
    }
    for f in 0..bins {
        let mean = (0..frames).map(|t| raw[t * bins + f]).sum::<f64>() / frames as f64;
        let var = (0..frames).map(|t| (raw[t * bins + f] - mean).powi(2)).sum::<f64>() / frames as f64;
        let inv_std = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
        for t in 0..frames {
            let v = &mut raw[t * bins + f];
            *v = (*v - mean) * inv_std;
        }
    }
    FeatureTensor::from_vec(raw, frames, bins)
}
