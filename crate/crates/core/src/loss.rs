//! Training losses: the phase-sensitive approximation baseline and the two
//! multichannel Itakura-Saito losses, with exact gradients and permutation
//! invariant evaluation.
//!
//! The multichannel losses are written as functions of the mask-estimated
//! covariances. Their gradients are accumulated as matrix adjoints with respect
//! to each R̂_{f,n} (and the activations) and then pushed through the
//! mask-weighted average that produced R̂.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hermitian::{logdet, CMatrix, HermitianMatrix, DEFAULT_LOADING};
use crate::mask_cov::{estimate_covariance, oracle_activation, ActivationTensor, CovarianceSet, MaskTensor, Tensor3};
use crate::stft::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Psa,
    L1,
    L2,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Psa => "psa",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }

    /// Whether the loss consumes an estimated activation stream.
    pub fn uses_activation(self) -> bool {
        self == LossKind::L1
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psa" => Ok(Self::Psa),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

/// Loss total with its per-bin breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_bin: Option<Vec<f64>>,
}

impl LossValue {
    fn from_bins(per_bin: Vec<f64>) -> Self {
        Self { total: per_bin.iter().sum(), per_bin: Some(per_bin) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub d_mask: Tensor3,
    pub d_activation: Option<Tensor3>,
}

/// Assignment of output streams to references: stream `n` is scored against reference `mapping[n]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::Config(format!("{mapping:?} is not a permutation")));
            }
        }
        Ok(Self(mapping))
    }

    pub fn mapping(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// All permutations of `n` items in lexicographic order (identity first).
    pub fn all(n: usize) -> Vec<Permutation> {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (0..n).collect();
        loop {
            out.push(Permutation(cur.clone()));
            // next lexicographic permutation
            let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
                break;
            };
            let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
            cur.swap(i - 1, j);
            cur[i..].reverse();
        }
        out
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|m| m.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// What a mask estimator produces.
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub mask: MaskTensor,
    pub activation: Option<ActivationTensor>,
}

/// References a loss is scored against.
#[derive(Debug, Clone)]
pub struct LossTargets<'a> {
    pub mixture: &'a ComplexSpectrogram,
    /// Per-source multichannel images; required by PSA and L1.
    pub images: &'a [ComplexSpectrogram],
    /// Oracle activations v⋆; computed from `images` when absent.
    pub oracle_activation: Option<&'a ActivationTensor>,
    pub ref_channel: usize,
}

fn check_mask(mask: &MaskTensor, x: &ComplexSpectrogram) -> Result<()> {
    if mask.frames() != x.frames() || mask.bins() != x.bins() {
        return Err(Error::Shape("mask grid differs from mixture".into()));
    }
    if x.values().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("mixture"));
    }
    Ok(())
}

fn check_images(images: &[&ComplexSpectrogram], x: &ComplexSpectrogram, n_src: usize) -> Result<()> {
    if images.len() != n_src {
        return Err(Error::Shape(format!("{} references for {n_src} streams", images.len())));
    }
    if images.iter().any(|c| !c.same_grid(x) || c.channels() != x.channels()) {
        return Err(Error::Shape("reference grid differs from mixture".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PSA
// ---------------------------------------------------------------------------

/// (1/TF) Σ_{t,f,n} |m x_ref − c_{n,ref}|².
pub fn loss_psa(
    mask: &MaskTensor,
    x: &ComplexSpectrogram,
    images: &[ComplexSpectrogram],
    ref_channel: usize,
) -> Result<LossValue> {
    let refs: Vec<&ComplexSpectrogram> = images.iter().collect();
    psa_impl(mask, x, &refs, ref_channel, false).map(|(v, _)| v)
}

pub fn loss_psa_grad(
    mask: &MaskTensor,
    x: &ComplexSpectrogram,
    images: &[ComplexSpectrogram],
    ref_channel: usize,
) -> Result<(LossValue, LossGradient)> {
    let refs: Vec<&ComplexSpectrogram> = images.iter().collect();
    psa_impl(mask, x, &refs, ref_channel, true).map(|(v, g)| (v, g.expect("requested")))
}

fn psa_impl(
    mask: &MaskTensor,
    x: &ComplexSpectrogram,
    refs: &[&ComplexSpectrogram],
    ref_channel: usize,
    want_grad: bool,
) -> Result<(LossValue, Option<LossGradient>)> {
    check_mask(mask, x)?;
    check_images(refs, x, mask.sources())?;
    if ref_channel >= x.channels() {
        return Err(Error::Shape("reference channel out of range".into()));
    }
    let (frames, bins, n_src) = (x.frames(), x.bins(), mask.sources());
    let norm = 1.0 / (frames * bins) as f64;
    let mut per_bin = vec![0.0; frames * bins];
    let mut grad = want_grad.then(|| Tensor3::zeros(frames, bins, n_src));
    for t in 0..frames {
        for f in 0..bins {
            let xr = x.get(t, f, ref_channel);
            let mut acc = 0.0;
            for (n, c) in refs.iter().enumerate() {
                let m = mask.get(t, f, n);
                let cr = c.get(t, f, ref_channel);
                acc += (xr * m - cr).norm_sqr();
                if let Some(g) = grad.as_mut() {
                    g.set(t, f, n, 2.0 * norm * (m * xr.norm_sqr() - (cr * xr.conj()).re));
                }
            }
            per_bin[t * bins + f] = acc * norm;
        }
    }
    Ok((
        LossValue::from_bins(per_bin),
        grad.map(|d_mask| LossGradient { d_mask, d_activation: None }),
    ))
}

// ---------------------------------------------------------------------------
// Multichannel losses on covariances
// ---------------------------------------------------------------------------

/// Adjoints of a multichannel loss with respect to its covariance and activation inputs.
#[derive(Debug, Clone)]
pub struct CovarianceAdjoint {
    /// Re⟨R̄, dR⟩ sensitivity per (f, n), frequency-major.
    pub d_covariance: Vec<CMatrix>,
    pub d_activation: Tensor3,
}

/// H̄ + (λ/M)·Re tr(H̄)·I: adjoint through relative diagonal loading.
fn through_loading(adj: &CMatrix, loading: f64) -> CMatrix {
    let mut out = adj.clone();
    out.add_diag(loading / adj.dim() as f64 * adj.trace().re);
    out
}

fn inverse_and_logdet(a: &HermitianMatrix) -> Result<(CMatrix, f64)> {
    let ld = logdet(a)?;
    let inv = HermitianMatrix::hermitize(&a.as_matrix().inverse()?).into_matrix();
    Ok((inv, ld))
}

/// Multichannel posterior loss Σ dᴴΨ⁻¹d + log det Ψ evaluated on given covariances.
///
/// `perm[n]` selects which clean image stream `n` is scored against.
pub fn loss_l1_on_covariances(
    covs: &CovarianceSet,
    act_hat: &ActivationTensor,
    x: &ComplexSpectrogram,
    images: &[&ComplexSpectrogram],
    want_grad: bool,
) -> Result<(LossValue, Option<CovarianceAdjoint>)> {
    let (frames, bins, n_src, mics) = (x.frames(), x.bins(), covs.sources(), x.channels());
    if act_hat.frames() != frames || act_hat.bins() != bins || act_hat.sources() != n_src {
        return Err(Error::Shape("activation tensor does not match".into()));
    }
    check_images(images, x, n_src)?;
    let lambda = DEFAULT_LOADING;
    let mut per_bin = vec![0.0; frames * bins * n_src];
    let mut d_cov = if want_grad { vec![CMatrix::zeros(mics); bins * n_src] } else { Vec::new() };
    let mut d_act = Tensor3::zeros(if want_grad { frames } else { 0 }, bins, n_src);

    let mut spatial: Vec<HermitianMatrix> = Vec::with_capacity(n_src);
    let mut adj: Vec<CMatrix> = Vec::with_capacity(n_src);
    for f in 0..bins {
        for t in 0..frames {
            spatial.clear();
            spatial.extend((0..n_src).map(|n| covs.get(f, n).scale(act_hat.get(t, f, n))));
            let mut total = HermitianMatrix::zeros(mics);
            for r in &spatial {
                total.axpy(1.0, r);
            }
            let total_l = total.loaded(lambda);
            let p = HermitianMatrix::hermitize(&total_l.as_matrix().inverse()?).into_matrix();
            let xv = x.vector(t, f);
            let mut p_adj = CMatrix::zeros(mics);
            adj.clear();
            for n in 0..n_src {
                let r = spatial[n].as_matrix();
                let w = r * &p;
                let c_hat = w.mul_vec(xv);
                let cv = images[n].vector(t, f);
                let d: Vec<Complex64> = cv.iter().zip(c_hat.iter()).map(|(a, b)| a - b).collect();
                let rpr = &(r * &p) * r;
                let psi_raw = r - &rpr;
                let psi = HermitianMatrix::hermitize(&psi_raw).loaded(lambda);
                let (q, ld) = inverse_and_logdet(&psi)?;
                let qd = q.mul_vec(&d);
                let quad: f64 = d.iter().zip(qd.iter()).map(|(a, b)| (a.conj() * b).re).sum();
                per_bin[(t * bins + f) * n_src + n] = quad + ld;
                if !want_grad {
                    continue;
                }
                // Ψ̄ = Ψ⁻¹ − Ψ⁻¹ d dᴴ Ψ⁻¹
                let mut psi_adj = q.clone();
                for i in 0..mics {
                    for j in 0..mics {
                        psi_adj[(i, j)] -= qd[i] * qd[j].conj();
                    }
                }
                let raw_adj = through_loading(&psi_adj, lambda).hermitian_part();
                let mut r_adj = &(&raw_adj - &(&(&raw_adj * r) * &p)) - &(&(&p * r) * &raw_adj);
                p_adj = &p_adj - &(&(r * &raw_adj) * r);
                // d̄ = 2Ψ⁻¹d, ĉ̄ = −d̄, W̄ = ĉ̄ xᴴ
                let mut w_adj = CMatrix::zeros(mics);
                for i in 0..mics {
                    for j in 0..mics {
                        w_adj[(i, j)] = -2.0 * qd[i] * xv[j].conj();
                    }
                }
                r_adj += &(&w_adj * &p);
                p_adj += &(r * &w_adj);
                adj.push(r_adj);
            }
            if !want_grad {
                continue;
            }
            let total_l_adj = (&(&p * &p_adj) * &p).scale(-1.0);
            let total_adj = through_loading(&total_l_adj, lambda);
            for (n, a) in adj.iter_mut().enumerate() {
                *a += &total_adj;
                let v = act_hat.get(t, f, n);
                d_act.set(t, f, n, covs.get(f, n).inner(a));
                d_cov[f * n_src + n].axpy(v, a);
            }
        }
    }
    let adjoint = want_grad.then_some(CovarianceAdjoint { d_covariance: d_cov, d_activation: d_act });
    Ok((LossValue::from_bins(per_bin), adjoint))
}

/// Low-cost multichannel loss Σ tr(X X̂⁻¹) + log det X̂ with X̂ = Σ_n v⋆_n R̂_n.
pub fn loss_l2_on_covariances(
    covs: &CovarianceSet,
    act_star: &ActivationTensor,
    x: &ComplexSpectrogram,
    want_grad: bool,
) -> Result<(LossValue, Option<CovarianceAdjoint>)> {
    let (frames, bins, n_src, mics) = (x.frames(), x.bins(), covs.sources(), x.channels());
    if act_star.frames() != frames || act_star.bins() != bins || act_star.sources() != n_src {
        return Err(Error::Shape("oracle activation does not match".into()));
    }
    let lambda = DEFAULT_LOADING;
    let mut per_bin = vec![0.0; frames * bins];
    let mut d_cov = if want_grad { vec![CMatrix::zeros(mics); bins * n_src] } else { Vec::new() };
    let mut d_act = Tensor3::zeros(if want_grad { frames } else { 0 }, bins, n_src);
    for f in 0..bins {
        for t in 0..frames {
            let mut model = HermitianMatrix::zeros(mics);
            for n in 0..n_src {
                model.axpy(act_star.get(t, f, n), covs.get(f, n));
            }
            let model_l = model.loaded(lambda);
            let (q, ld) = inverse_and_logdet(&model_l)?;
            let xv = x.vector(t, f);
            let qx = q.mul_vec(xv);
            let quad: f64 = xv.iter().zip(qx.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            per_bin[t * bins + f] = quad + ld;
            if !want_grad {
                continue;
            }
            let mut g = q;
            for i in 0..mics {
                for j in 0..mics {
                    g[(i, j)] -= qx[i] * qx[j].conj();
                }
            }
            let g = through_loading(&g, lambda);
            for n in 0..n_src {
                d_act.set(t, f, n, covs.get(f, n).inner(&g));
                d_cov[f * n_src + n].axpy(act_star.get(t, f, n), &g);
            }
        }
    }
    let adjoint = want_grad.then_some(CovarianceAdjoint { d_covariance: d_cov, d_activation: d_act });
    Ok((LossValue::from_bins(per_bin), adjoint))
}

/// Pushes covariance adjoints through R = Σ_t m x xᴴ / Σ_t m.
fn mask_gradient(
    mask: &MaskTensor,
    x: &ComplexSpectrogram,
    covs: &CovarianceSet,
    d_cov: &[CMatrix],
) -> Tensor3 {
    let (frames, bins, n_src) = (mask.frames(), mask.bins(), mask.sources());
    let mut g = Tensor3::zeros(frames, bins, n_src);
    for f in 0..bins {
        for n in 0..n_src {
            if covs.is_degenerate(f, n) {
                continue;
            }
            let adj = &d_cov[f * n_src + n];
            let s = covs.mask_mass(f, n);
            let base = adj.inner(covs.get(f, n).as_matrix());
            for t in 0..frames {
                let q = adj.quad_form(x.vector(t, f)).re;
                g.set(t, f, n, (q - base) / s);
            }
        }
    }
    g
}

/// Multichannel posterior loss built from masks and estimated activations.
pub fn loss_l1(
    mask: &MaskTensor,
    act_hat: &ActivationTensor,
    x: &ComplexSpectrogram,
    images: &[ComplexSpectrogram],
) -> Result<LossValue> {
    check_mask(mask, x)?;
    let covs = estimate_covariance(mask, x)?;
    let refs: Vec<&ComplexSpectrogram> = images.iter().collect();
    Ok(loss_l1_on_covariances(&covs, act_hat, x, &refs, false)?.0)
}

pub fn loss_l1_grad(
    mask: &MaskTensor,
    act_hat: &ActivationTensor,
    x: &ComplexSpectrogram,
    images: &[ComplexSpectrogram],
) -> Result<(LossValue, LossGradient)> {
    let refs: Vec<&ComplexSpectrogram> = images.iter().collect();
    l1_with_refs(mask, act_hat, x, &refs)
}

fn l1_with_refs(
    mask: &MaskTensor,
    act_hat: &ActivationTensor,
    x: &ComplexSpectrogram,
    refs: &[&ComplexSpectrogram],
) -> Result<(LossValue, LossGradient)> {
    check_mask(mask, x)?;
    let covs = estimate_covariance(mask, x)?;
    let (value, adj) = loss_l1_on_covariances(&covs, act_hat, x, refs, true)?;
    let adj = adj.expect("requested");
    let d_mask = mask_gradient(mask, x, &covs, &adj.d_covariance);
    Ok((value, LossGradient { d_mask, d_activation: Some(adj.d_activation) }))
}

/// Multichannel Itakura-Saito loss between x xᴴ and Σ_n v⋆ R̂_n.
pub fn loss_l2(mask: &MaskTensor, act_star: &ActivationTensor, x: &ComplexSpectrogram) -> Result<LossValue> {
    check_mask(mask, x)?;
    let covs = estimate_covariance(mask, x)?;
    Ok(loss_l2_on_covariances(&covs, act_star, x, false)?.0)
}

pub fn loss_l2_grad(
    mask: &MaskTensor,
    act_star: &ActivationTensor,
    x: &ComplexSpectrogram,
) -> Result<(LossValue, LossGradient)> {
    check_mask(mask, x)?;
    let covs = estimate_covariance(mask, x)?;
    let (value, adj) = loss_l2_on_covariances(&covs, act_star, x, true)?;
    let adj = adj.expect("requested");
    let d_mask = mask_gradient(mask, x, &covs, &adj.d_covariance);
    Ok((value, LossGradient { d_mask, d_activation: None }))
}

// ---------------------------------------------------------------------------
// Dispatch and permutation invariance
// ---------------------------------------------------------------------------

/// Evaluates `kind` with references reordered by `perm`, optionally with gradients.
pub fn evaluate(
    kind: LossKind,
    outputs: &ModelOutputs,
    targets: &LossTargets<'_>,
    perm: &Permutation,
    want_grad: bool,
) -> Result<(LossValue, Option<LossGradient>)> {
    let n_src = outputs.mask.sources();
    if perm.len() != n_src {
        return Err(Error::Shape("permutation length differs from stream count".into()));
    }
    let x = targets.mixture;
    match kind {
        LossKind::Psa => {
            let refs: Vec<&ComplexSpectrogram> = perm.mapping().iter().map(|&k| &targets.images[k]).collect();
            check_images(&refs, x, n_src)?;
            psa_impl(&outputs.mask, x, &refs, targets.ref_channel, want_grad)
        }
        LossKind::L1 => {
            let act = outputs
                .activation
                .as_ref()
                .ok_or_else(|| Error::Incompatible("L1 needs an activation stream".into()))?;
            if targets.images.len() != n_src {
                return Err(Error::Shape("reference count differs from stream count".into()));
            }
            let refs: Vec<&ComplexSpectrogram> = perm.mapping().iter().map(|&k| &targets.images[k]).collect();
            if want_grad {
                let (v, g) = l1_with_refs(&outputs.mask, act, x, &refs)?;
                Ok((v, Some(g)))
            } else {
                check_mask(&outputs.mask, x)?;
                let covs = estimate_covariance(&outputs.mask, x)?;
                Ok((loss_l1_on_covariances(&covs, act, x, &refs, false)?.0, None))
            }
        }
        LossKind::L2 => {
            let owned;
            let v_star = match targets.oracle_activation {
                Some(v) => v,
                None => {
                    owned = oracle_activation(targets.images)?;
                    &owned
                }
            };
            if v_star.sources() != n_src {
                return Err(Error::Shape("oracle activation source count".into()));
            }
            let permuted = ActivationTensor::new(v_star.permute_sources(perm.mapping()))?;
            if want_grad {
                let (v, g) = loss_l2_grad(&outputs.mask, &permuted, x)?;
                Ok((v, Some(g)))
            } else {
                Ok((loss_l2(&outputs.mask, &permuted, x)?, None))
            }
        }
    }
}

/// Minimum of the loss over all assignments of output streams to references.
pub fn pit_wrap(
    kind: LossKind,
    outputs: &ModelOutputs,
    targets: &LossTargets<'_>,
) -> Result<(LossValue, Permutation)> {
    let n_src = outputs.mask.sources();
    if n_src > 4 {
        return Err(Error::TooManySources(n_src));
    }
    let mut best: Option<(LossValue, Permutation)> = None;
    for perm in Permutation::all(n_src) {
        let (value, _) = evaluate(kind, outputs, targets, &perm, false)?;
        if best.as_ref().is_none_or(|(b, _)| value.total < b.total) {
            best = Some((value, perm));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// [`pit_wrap`] plus the gradient under the selected permutation.
pub fn pit_wrap_with_grad(
    kind: LossKind,
    outputs: &ModelOutputs,
    targets: &LossTargets<'_>,
) -> Result<(LossValue, LossGradient, Permutation)> {
    let (_, perm) = pit_wrap(kind, outputs, targets)?;
    let (value, grad) = evaluate(kind, outputs, targets, &perm, true)?;
    Ok((value, grad.expect("requested"), perm))
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Finite-difference step on masks and activations.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of comparing supplied gradients with central differences.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub seed: u64,
    pub parameters: usize,
    pub max_rel_error: f64,
    pub rel_tol: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loss={} seed={} params={} max_rel_err={:.3e} tol={:.1e} {}",
            self.loss,
            self.seed,
            self.parameters,
            self.max_rel_error,
            self.rel_tol,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Elementwise relative error |a − b| / max(|a|, |b|, floor), where the floor
/// (1e-6 of the largest finite-difference entry) keeps vanishing components
/// from dominating.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale + 1e-300;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `loss` with respect to every entry of `params`.
pub fn finite_difference(
    params: &[f64],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = loss(&work)?;
        work[i] = orig - step;
        let down = loss(&work)?;
        work[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Compares supplied gradients of a loss over (mask, activation) against finite differences.
pub fn grad_check(
    kind: LossKind,
    outputs: &ModelOutputs,
    targets: &LossTargets<'_>,
    seed: u64,
    rel_tol: f64,
) -> Result<GradCheckReport> {
    let perm = Permutation::identity(outputs.mask.sources());
    let (_, grad) = evaluate(kind, outputs, targets, &perm, true)?;
    let grad = grad.expect("requested");
    let mut analytic = grad.d_mask.values().to_vec();
    if let Some(da) = &grad.d_activation {
        analytic.extend_from_slice(da.values());
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let dims = outputs.mask.dims();
    let n_mask = outputs.mask.values().len();
    let mut params = outputs.mask.values().to_vec();
    if kind.uses_activation() {
        params.extend_from_slice(outputs.activation.as_ref().expect("checked by evaluate").values());
    }
    let numeric = finite_difference(&params, FD_STEP, |p| {
        let mask = MaskTensor::from_vec(p[..n_mask].to_vec(), dims[0], dims[1], dims[2])?;
        let activation = if kind.uses_activation() {
            Some(ActivationTensor::from_vec(p[n_mask..].to_vec(), dims[0], dims[1], dims[2])?)
        } else {
            outputs.activation.clone()
        };
        let o = ModelOutputs { mask, activation };
        Ok(evaluate(kind, &o, targets, &perm, false)?.0.total)
    })?;
    let max_rel_error = max_relative_error(&analytic, &numeric);
    Ok(GradCheckReport {
        loss: kind.name().to_string(),
        seed,
        parameters: params.len(),
        max_rel_error,
        rel_tol,
        passed: max_rel_error < rel_tol,
    })
}

/// A random small problem (masks in [0.05, 0.95], activations in [0.5, 1.5],
/// x = Σ images) for gradient checks and benchmarks.
pub struct RandomInstance {
    pub mixture: ComplexSpectrogram,
    pub images: Vec<ComplexSpectrogram>,
    pub oracle_activation: ActivationTensor,
    pub outputs: ModelOutputs,
}

impl RandomInstance {
    pub fn generate(seed: u64, frames: usize, bins: usize, mics: usize, sources: usize) -> Self {
        use rand::{Rng, SeedableRng};
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cfg = crate::stft::StftConfig::speech(8000);
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let images: Vec<ComplexSpectrogram> = (0..sources)
            .map(|_| {
                let v = (0..frames * bins * mics).map(|_| Complex64::new(gauss(), gauss())).collect();
                ComplexSpectrogram::from_values(v, frames, bins, mics, cfg).expect("finite")
            })
            .collect();
        let mut mixture = images[0].clone();
        for c in &images[1..] {
            mixture.values_mut().iter_mut().zip(c.values()).for_each(|(a, b)| *a += b);
        }
        let n = frames * bins * sources;
        let mask = MaskTensor::from_vec((0..n).map(|_| rng.random_range(0.05..0.95)).collect(), frames, bins, sources)
            .expect("in range");
        let activation = ActivationTensor::from_vec((0..n).map(|_| rng.random_range(0.5..1.5)).collect(), frames, bins, sources)
            .expect("positive");
        let oracle_activation = oracle_activation(&images).expect("shapes agree");
        Self { mixture, images, oracle_activation, outputs: ModelOutputs { mask, activation: Some(activation) } }
    }

    pub fn targets(&self) -> LossTargets<'_> {
        LossTargets {
            mixture: &self.mixture,
            images: &self.images,
            oracle_activation: Some(&self.oracle_activation),
            ref_channel: 0,
        }
    }
}

/// Gradient check on the standard random instance (T=4, F=3, M=2, N=2).
pub fn grad_check_random(kind: LossKind, seed: u64, rel_tol: f64) -> Result<GradCheckReport> {
    let inst = RandomInstance::generate(seed, 4, 3, 2, 2);
    grad_check(kind, &inst.outputs, &inst.targets(), seed, rel_tol)
}
