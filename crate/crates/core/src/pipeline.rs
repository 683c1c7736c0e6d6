//! End-to-end evaluation: masks → covariances → beamformer → iSTFT → metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamformer::{apply_bank, apply_time_varying, build_bank, mwf_time_varying, BeamformerKind, REF_CHANNEL};
use crate::error::{Error, Result};
use crate::estimator::EstimatorModel;
use crate::mask_cov::{estimate_covariance, input_feature, observation_covariance, oracle_activation, oracle_psm, ActivationTensor, MaskTensor};
use crate::metrics::{evaluate_estimates, median, trim_edges, BssEvaluator, MetricReport, DEFAULT_FILTER_LEN};
use crate::scene::Scene;
use crate::stft::{istft, stft, ComplexSpectrogram, StftConfig};

/// Source of the masks fed to the beamformers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Psa,
    L1,
    L2,
    OraclePsm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Psa => "psa",
            Method::L1 => "l1",
            Method::L2 => "l2",
            Method::OraclePsm => "oracle-psm",
        }
    }

    pub fn needs_model(self) -> bool {
        self != Method::OraclePsm
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psa" => Ok(Self::Psa),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "oracle-psm" | "oracle_psm" => Ok(Self::OraclePsm),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_filter_len() -> usize {
    DEFAULT_FILTER_LEN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_filter_len")]
    pub filter_len: usize,
    /// Samples dropped from each end before scoring; defaults to one window.
    #[serde(default)]
    pub trim: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { filter_len: DEFAULT_FILTER_LEN, trim: None }
    }
}

/// Checks that `method` can drive `beamformer`.
pub fn check_combination(method: Method, beamformer: BeamformerKind, model: Option<&EstimatorModel>) -> Result<()> {
    if method.needs_model() {
        let model = model.ok_or_else(|| Error::Incompatible(format!("method {method} needs a trained model")))?;
        if (method == Method::L1) != model.spec().activation_head {
            return Err(Error::Incompatible(format!("model head layout does not match method {method}")));
        }
    }
    if beamformer == BeamformerKind::MwfTv && matches!(method, Method::Psa | Method::L2) {
        return Err(Error::Incompatible(format!(
            "time-varying MWF needs an activation source; method {method} has none"
        )));
    }
    Ok(())
}

/// Spectral representation of a scene plus the scoring machinery.
pub struct PreparedScene {
    pub mixture: ComplexSpectrogram,
    pub images: Vec<ComplexSpectrogram>,
    pub evaluator: BssEvaluator,
    pub trim: usize,
    pub sample_rate: u32,
    pub num_samples: usize,
}

impl PreparedScene {
    pub fn new(scene: &Scene, cfg: &PipelineConfig) -> Result<Self> {
        let stft_cfg = StftConfig::speech(scene.mixture.sample_rate());
        let mixture = stft(&scene.mixture, &stft_cfg)?;
        let images = scene.images.iter().map(|c| stft(c, &stft_cfg)).collect::<Result<Vec<_>>>()?;
        let trim = cfg.trim.unwrap_or(stft_cfg.window_length);
        let refs: Vec<Vec<f64>> =
            scene.images.iter().map(|c| trim_edges(c.channel(REF_CHANNEL), trim).to_vec()).collect();
        let evaluator = BssEvaluator::new(&refs, cfg.filter_len)?;
        Ok(Self {
            mixture,
            images,
            evaluator,
            trim,
            sample_rate: scene.mixture.sample_rate(),
            num_samples: scene.mixture.len(),
        })
    }

    /// Masks (and activations where available) for `method`.
    pub fn masks(&self, method: Method, model: Option<&EstimatorModel>) -> Result<(MaskTensor, Option<ActivationTensor>)> {
        match method {
            Method::OraclePsm => Ok((oracle_psm(&self.mixture, &self.images, REF_CHANNEL)?, Some(oracle_activation(&self.images)?))),
            _ => {
                let model = model.ok_or_else(|| Error::Incompatible(format!("method {method} needs a trained model")))?;
                let out = model.forward(&input_feature(&self.mixture)?)?;
                Ok((out.mask, out.activation))
            }
        }
    }

    /// Separated single-channel waveforms for the given masks.
    pub fn separate(
        &self,
        beamformer: BeamformerKind,
        mask: &MaskTensor,
        activation: Option<&ActivationTensor>,
    ) -> Result<Vec<Vec<f64>>> {
        let covs = estimate_covariance(mask, &self.mixture)?;
        let spectra = if beamformer == BeamformerKind::MwfTv {
            let act = activation.ok_or_else(|| Error::Incompatible("time-varying MWF needs activations".into()))?;
            apply_time_varying(&mwf_time_varying(&covs, act)?, &self.mixture)?
        } else {
            let bank = build_bank(beamformer, &covs, &observation_covariance(&self.mixture))?;
            apply_bank(&bank, &self.mixture)?
        };
        spectra.iter().map(|s| istft(s).map(|w| w.channel(0).to_vec())).collect()
    }

    pub fn score(&self, outputs: &[Vec<f64>]) -> Result<MetricReport> {
        let ests: Vec<Vec<f64>> = outputs.iter().map(|o| trim_edges(o, self.trim).to_vec()).collect();
        evaluate_estimates(&self.evaluator, &ests, self.sample_rate)
    }

    /// Metrics of the unprocessed reference channel offered as every estimate.
    pub fn mixture_report(&self) -> Result<MetricReport> {
        let x = istft(&self.mixture.channel(REF_CHANNEL))?.channel(0).to_vec();
        self.score(&vec![x; self.images.len()])
    }
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneResult {
    pub scene: usize,
    pub method: Method,
    pub beamformer: BeamformerKind,
    pub report: MetricReport,
    pub mixture: MetricReport,
}

impl SceneResult {
    pub fn sdr_improvement(&self) -> f64 {
        self.report.mean_sdr() - self.mixture.mean_sdr()
    }
}

/// Runs every beamformer in `beamformers` on one scene, sharing masks and scoring set-up.
pub fn process_scene(
    index: usize,
    scene: &Scene,
    method: Method,
    beamformers: &[BeamformerKind],
    model: Option<&EstimatorModel>,
    cfg: &PipelineConfig,
) -> Result<Vec<SceneResult>> {
    for bf in beamformers {
        check_combination(method, *bf, model)?;
    }
    let prepared = PreparedScene::new(scene, cfg)?;
    let mixture = prepared.mixture_report()?;
    let (mask, activation) = prepared.masks(method, model)?;
    beamformers
        .iter()
        .map(|&bf| {
            let out = prepared.separate(bf, &mask, activation.as_ref())?;
            Ok(SceneResult { scene: index, method, beamformer: bf, report: prepared.score(&out)?, mixture: mixture.clone() })
        })
        .collect()
}

/// Evaluates a scene set; scenes are processed in parallel and results come back in scene order.
pub fn run_pipeline(
    scenes: &[Scene],
    method: Method,
    beamformers: &[BeamformerKind],
    model: Option<&EstimatorModel>,
    cfg: &PipelineConfig,
) -> Result<Vec<SceneResult>> {
    for bf in beamformers {
        check_combination(method, *bf, model)?;
    }
    let per_scene: Vec<Vec<SceneResult>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| process_scene(i, s, method, beamformers, model, cfg))
        .collect::<Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

/// Aggregate statistics for one (method, beamformer) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: String,
    pub beamformer: String,
    pub scenes: usize,
    pub median_sdr: f64,
    pub mean_sdr: f64,
    pub median_sir: f64,
    pub mean_sir: f64,
    pub median_cd: f64,
    pub mean_cd: f64,
    pub median_sdr_improvement: f64,
}

pub fn summarize(results: &[SceneResult]) -> Vec<Summary> {
    let mut keys: Vec<(Method, BeamformerKind)> = Vec::new();
    for r in results {
        if !keys.contains(&(r.method, r.beamformer)) {
            keys.push((r.method, r.beamformer));
        }
    }
    keys.into_iter()
        .map(|(m, b)| {
            let rows: Vec<&SceneResult> = results.iter().filter(|r| r.method == m && r.beamformer == b).collect();
            let col = |f: &dyn Fn(&SceneResult) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let sdr = col(&|r| r.report.mean_sdr());
            let sir = col(&|r| r.report.mean_sir());
            let cd = col(&|r| r.report.mean_cd());
            let imp = col(&|r| r.sdr_improvement());
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            Summary {
                method: m.name().to_string(),
                beamformer: b.name().to_string(),
                scenes: rows.len(),
                median_sdr: median(&sdr),
                mean_sdr: mean(&sdr),
                median_sir: median(&sir),
                mean_sir: mean(&sir),
                median_cd: median(&cd),
                mean_cd: mean(&cd),
                median_sdr_improvement: median(&imp),
            }
        })
        .collect()
}

/// Per-scene CSV with mixture baselines alongside.
pub fn results_csv(results: &[SceneResult]) -> String {
    let mut s = String::from("scene,method,beamformer,sdr,sir,cd,mixture_sdr,mixture_sir,mixture_cd,sdr_improvement,permutation\n");
    for r in results {
        let perm: Vec<String> = r.report.permutation.mapping().iter().map(|p| p.to_string()).collect();
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.scene,
            r.method.name(),
            r.beamformer.name(),
            r.report.mean_sdr(),
            r.report.mean_sir(),
            r.report.mean_cd(),
            r.mixture.mean_sdr(),
            r.mixture.mean_sir(),
            r.mixture.mean_cd(),
            r.sdr_improvement(),
            perm.join(" ")
        ));
    }
    s
}
