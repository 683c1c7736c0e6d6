//! Synthetic multichannel scenes: linear-array geometry, generated room
//! impulse responses, speech-like sources and the mixing step.

use std::f64::consts::{LN_10, PI};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{convolve, Waveform};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Room volume assumed when deriving the direct-to-reverberant ratio.
pub const ROOM_VOLUME: f64 = 80.0;
/// Half-width in taps of the direct-path fractional-delay kernel.
const DIRECT_HALF_WIDTH: usize = 16;
const TAIL_HALF_WIDTH: usize = 4;
/// Candidate source directions in degrees (15° grid over the front half-plane).
const AZIMUTH_GRID: [f64; 13] = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0, 105.0, 120.0, 135.0, 150.0, 165.0, 180.0];

fn default_sources() -> usize {
    2
}
fn default_mics() -> usize {
    2
}
fn default_rate() -> u32 {
    8000
}
fn default_rt60() -> f64 {
    0.16
}
fn default_geometry() -> Vec<f64> {
    vec![3.0, 3.0, 3.0, 8.0, 3.0, 3.0, 3.0]
}
fn default_distance() -> f64 {
    1.0
}
fn default_duration() -> f64 {
    2.0
}

/// Scene recipe. `geometry` lists the spacings (cm) between adjacent
/// elements of a linear array; `n_mics` of its elements are drawn per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_sources")]
    pub n_sources: usize,
    #[serde(default = "default_mics")]
    pub n_mics: usize,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_rt60")]
    pub rt60: f64,
    #[serde(default = "default_geometry")]
    pub geometry: Vec<f64>,
    /// Source directions in degrees; drawn from a 15° grid when absent.
    #[serde(default)]
    pub azimuths: Option<Vec<f64>>,
    #[serde(default = "default_distance")]
    pub distance: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_sources: default_sources(),
            n_mics: default_mics(),
            sample_rate: default_rate(),
            rt60: default_rt60(),
            geometry: default_geometry(),
            azimuths: None,
            distance: default_distance(),
            duration: default_duration(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 {
            return Err(Error::Config("n_sources must be at least 1".into()));
        }
        if self.n_mics == 0 || self.n_mics > self.geometry.len() + 1 {
            return Err(Error::Config(format!(
                "n_mics = {} but the array has {} elements",
                self.n_mics,
                self.geometry.len() + 1
            )));
        }
        if !(self.rt60 >= 0.0 && self.rt60.is_finite()) {
            return Err(Error::Config("rt60 must be a non-negative number of seconds".into()));
        }
        if self.sample_rate == 0 || self.distance.is_nan() || self.distance <= 0.0 || self.duration.is_nan() || self.duration <= 0.0 {
            return Err(Error::Config("sample_rate, distance and duration must be positive".into()));
        }
        if self.geometry.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Config("microphone spacings must be positive".into()));
        }
        if let Some(az) = &self.azimuths {
            if az.len() != self.n_sources {
                return Err(Error::Config(format!("{} azimuths for {} sources", az.len(), self.n_sources)));
            }
        }
        Ok(())
    }

    /// Element positions (metres) of the full array, centred on the origin.
    pub fn array_positions(&self) -> Vec<f64> {
        let mut pos = vec![0.0];
        for s in &self.geometry {
            pos.push(pos.last().expect("non-empty") + s / 100.0);
        }
        let centre = pos.last().expect("non-empty") / 2.0;
        pos.iter().map(|p| p - centre).collect()
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }
}

/// Spatial layout drawn for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    /// Indices into the full array of the selected microphones.
    pub mic_indices: Vec<usize>,
    /// x-coordinates (metres) of the selected microphones.
    pub mic_positions: Vec<f64>,
    pub azimuths: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub mixture: Waveform,
    pub images: Vec<Waveform>,
    pub config: SceneConfig,
    pub layout: SceneLayout,
}

impl Scene {
    pub fn num_sources(&self) -> usize {
        self.images.len()
    }
}

/// Draws microphones and source directions for `cfg`.
pub fn draw_layout(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<SceneLayout> {
    cfg.validate()?;
    let full = cfg.array_positions();
    let mut mic_indices = sample(rng, full.len(), cfg.n_mics).into_vec();
    mic_indices.sort_unstable();
    let mic_positions = mic_indices.iter().map(|&i| full[i]).collect();
    let azimuths = match &cfg.azimuths {
        Some(a) => a.clone(),
        None if cfg.n_sources <= AZIMUTH_GRID.len() => {
            sample(rng, AZIMUTH_GRID.len(), cfg.n_sources).iter().map(|i| AZIMUTH_GRID[i]).collect()
        }
        None => (0..cfg.n_sources).map(|_| rng.random_range(0.0..180.0)).collect(),
    };
    Ok(SceneLayout { mic_indices, mic_positions, azimuths })
}

/// Hann-windowed sinc evaluated at offset `u` (samples) with the given half-width.
fn windowed_sinc(u: f64, half_width: usize) -> f64 {
    let h = half_width as f64 + 1.0;
    if u.abs() >= h {
        return 0.0;
    }
    let sinc = if u.abs() < 1e-12 { 1.0 } else { (PI * u).sin() / (PI * u) };
    sinc * 0.5 * (1.0 + (PI * u / h).cos())
}

/// Adds `gain · δ(t − delay)` to `h` as a band-limited fractional delay.
fn add_fractional_impulse(h: &mut [f64], delay: f64, gain: f64, half_width: usize) {
    let centre = delay.floor() as isize;
    let hw = half_width as isize;
    for k in (centre - hw - 1)..=(centre + hw + 1) {
        if k < 0 || k as usize >= h.len() {
            continue;
        }
        h[k as usize] += gain * windowed_sinc(k as f64 - delay, half_width);
    }
}

/// Direct-to-reverberant energy ratio from the critical distance of a room
/// of [`ROOM_VOLUME`] at the given reverberation time.
pub fn direct_to_reverberant(distance: f64, rt60: f64) -> f64 {
    let critical = 0.057 * (ROOM_VOLUME / rt60).sqrt();
    (critical / distance).powi(2)
}

/// Synthesizes one impulse response per microphone for a source at `azimuth` degrees.
///
/// The direct path is a fractional delay from the geometry. The tail is a
/// dense train of plane-wave arrivals from random directions whose Gaussian
/// amplitudes decay by 60 dB over `rt60`.
pub fn synthesize_rir(
    mic_positions: &[f64],
    azimuth_deg: f64,
    distance: f64,
    rt60: f64,
    sample_rate: u32,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let fs = sample_rate as f64;
    let az = azimuth_deg.to_radians();
    let (sx, sy) = (distance * az.cos(), distance * az.sin());
    let ranges: Vec<f64> = mic_positions.iter().map(|p| ((sx - p).powi(2) + sy * sy).sqrt()).collect();
    let direct: Vec<f64> = ranges.iter().map(|r| r / SPEED_OF_SOUND * fs).collect();
    let first = direct.iter().cloned().fold(f64::INFINITY, f64::min);
    let aperture = mic_positions.iter().map(|p| p.abs()).fold(0.0, f64::max) / SPEED_OF_SOUND * fs;
    let tail_len = (1.2 * rt60 * fs).ceil() as usize;
    let len = direct.iter().cloned().fold(0.0, f64::max).ceil() as usize
        + DIRECT_HALF_WIDTH
        + tail_len
        + aperture.ceil() as usize
        + TAIL_HALF_WIDTH
        + 2;
    let mut rirs: Vec<Vec<f64>> = ranges
        .iter()
        .zip(&direct)
        .map(|(r, d)| {
            let mut h = vec![0.0; len];
            add_fractional_impulse(&mut h, *d, 1.0 / r.max(0.05), DIRECT_HALF_WIDTH);
            h
        })
        .collect();
    if rt60 <= 0.0 || tail_len == 0 {
        return rirs;
    }
    // Gaussian amplitudes with energy envelope 10^(-6 t / rt60)
    let decay = 3.0 * LN_10 / (rt60 * fs);
    let mut arrivals = Vec::with_capacity(tail_len);
    let mut energy = 0.0;
    for _ in 0..tail_len {
        let t: f64 = rng.random_range(0.0..tail_len as f64);
        let g: f64 = StandardNormal.sample(rng);
        let g = g * (-decay * t).exp();
        let dir: f64 = rng.random_range(0.0..2.0 * PI);
        energy += g * g;
        arrivals.push((t, g, dir.cos()));
    }
    let direct_energy = 1.0 / distance.powi(2);
    let target = direct_energy / direct_to_reverberant(distance, rt60);
    let scale = (target / energy.max(1e-300)).sqrt();
    for (h, p) in rirs.iter_mut().zip(mic_positions) {
        for &(t, g, c) in &arrivals {
            let delay = first + t - p * c / SPEED_OF_SOUND * fs;
            add_fractional_impulse(h, delay, g * scale, TAIL_HALF_WIDTH);
        }
    }
    rirs
}

/// Convolves each mono source with its multichannel impulse responses (the
/// synthesized ones when `rirs` is `None`) and sums the images.
///
/// Images keep the source length; all sources are zero-padded to the longest.
pub fn mix_scene(sources: &[Waveform], cfg: &SceneConfig, rirs: Option<&[Vec<Vec<f64>>]>) -> Result<Scene> {
    cfg.validate()?;
    if sources.len() != cfg.n_sources {
        return Err(Error::Config(format!("{} sources for n_sources = {}", sources.len(), cfg.n_sources)));
    }
    for s in sources {
        if s.num_channels() != 1 {
            return Err(Error::Shape("sources must be mono".into()));
        }
        s.require_rate(cfg.sample_rate)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = draw_layout(cfg, &mut rng)?;
    let responses: Vec<Vec<Vec<f64>>> = match rirs {
        Some(given) => {
            if given.len() != cfg.n_sources {
                return Err(Error::Shape(format!("{} impulse responses for {} sources", given.len(), cfg.n_sources)));
            }
            if let Some(bad) = given.iter().find(|r| r.len() != cfg.n_mics) {
                return Err(Error::Shape(format!(
                    "impulse response has {} channels but the scene has {} microphones",
                    bad.len(),
                    cfg.n_mics
                )));
            }
            given.to_vec()
        }
        None => layout
            .azimuths
            .iter()
            .map(|&az| synthesize_rir(&layout.mic_positions, az, cfg.distance, cfg.rt60, cfg.sample_rate, &mut rng))
            .collect(),
    };
    let len = sources.iter().map(|s| s.len()).max().unwrap_or(0);
    if len == 0 {
        return Err(Error::Empty("sources"));
    }
    let mut images = Vec::with_capacity(sources.len());
    let mut mix = vec![vec![0.0; len]; cfg.n_mics];
    for (src, rir) in sources.iter().zip(&responses) {
        let chans: Vec<Vec<f64>> = rir
            .iter()
            .map(|h| {
                let mut y = convolve(src.channel(0), h);
                y.resize(len, 0.0);
                y
            })
            .collect();
        for (acc, c) in mix.iter_mut().zip(&chans) {
            acc.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        images.push(Waveform::new(chans, cfg.sample_rate)?);
    }
    Ok(Scene { mixture: Waveform::new(mix, cfg.sample_rate)?, images, config: cfg.clone(), layout })
}

/// Speech-like test signal: syllables of harmonic tones with gliding pitch and
/// formant-shaped harmonics, interleaved with noise bursts and pauses.
pub fn synth_speech(seed: u64, num_samples: usize, sample_rate: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let mut out = vec![0.0; num_samples];
    let base_f0: f64 = rng.random_range(90.0..230.0);
    let mut pos = (rng.random_range(0.0..0.1) * fs) as usize;
    while pos < num_samples {
        let dur = (rng.random_range(0.08..0.3) * fs) as usize;
        let end = (pos + dur).min(num_samples);
        let kind: f64 = rng.random();
        if kind < 0.75 {
            let f0_start = base_f0 * rng.random_range(0.85..1.2);
            let f0_end = f0_start * rng.random_range(0.85..1.15);
            let formants = [rng.random_range(300.0..900.0), rng.random_range(900.0..2400.0), rng.random_range(2400.0..3400.0)];
            let mut phase = 0.0;
            for (i, sample) in out[pos..end].iter_mut().enumerate() {
                let u = i as f64 / dur.max(1) as f64;
                let f0 = f0_start + (f0_end - f0_start) * u;
                phase += 2.0 * PI * f0 / fs;
                let env = (PI * u).sin().powi(2);
                let mut acc = 0.0;
                let mut h = 1;
                while (h as f64) * f0 < 0.45 * fs {
                    let fh = h as f64 * f0;
                    let formant_gain: f64 = formants
                        .iter()
                        .enumerate()
                        .map(|(k, fm)| (0.6f64).powi(k as i32) / (1.0 + ((fh - fm) / 150.0).powi(2)))
                        .sum();
                    acc += formant_gain * (h as f64 * phase).sin() / (h as f64).sqrt();
                    h += 1;
                }
                *sample += env * acc;
            }
        } else {
            let mut prev = 0.0;
            for (i, sample) in out[pos..end].iter_mut().enumerate() {
                let u = i as f64 / dur.max(1) as f64;
                let w: f64 = StandardNormal.sample(&mut rng);
                // first difference tilts the burst towards high frequencies
                *sample += 0.4 * (PI * u).sin().powi(2) * (w - 0.7 * prev);
                prev = w;
            }
        }
        pos = end + (rng.random_range(0.0..0.08) * fs) as usize;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / num_samples.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.05 / rms);
    }
    Waveform::mono(out, sample_rate).expect("finite samples")
}

/// Scene with generated speech-like sources.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let len = cfg.num_samples();
    let sources: Vec<Waveform> = (0..cfg.n_sources)
        .map(|n| synth_speech(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(n as u64 + 1), len, cfg.sample_rate))
        .collect();
    mix_scene(&sources, cfg, None)
}

/// Time at which the Schroeder energy decay curve of `h` reaches −60 dB,
/// extrapolated from a line fitted between −5 and −35 dB.
pub fn schroeder_rt60(h: &[f64], sample_rate: u32) -> Option<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for (i, v) in h.iter().enumerate().rev() {
        acc += v * v;
        edc[i] = acc;
    }
    let total = edc.first().copied().filter(|e| *e > 0.0)?;
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= -5.0 && **d >= -35.0)
        .map(|(i, d)| (i as f64 / sample_rate as f64, *d))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, md) = pts.iter().fold((0.0, 0.0), |(a, b), (t, d)| (a + t / n, b + d / n));
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (t, d)| (a + (t - mt) * (d - md), b + (t - mt).powi(2)));
    let slope = num / den;
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mic_anechoic_is_a_delayed_sum() {
        let cfg = SceneConfig {
            n_sources: 2,
            n_mics: 1,
            rt60: 0.0,
            geometry: vec![5.0],
            azimuths: Some(vec![30.0, 120.0]),
            duration: 0.1,
            seed: 3,
            ..SceneConfig::default()
        };
        let sources: Vec<Waveform> = (0..2).map(|n| synth_speech(n, 800, 8000)).collect();
        let scene = mix_scene(&sources, &cfg, None).unwrap();
        let mic = scene.layout.mic_positions[0];
        for t in 0..800 {
            let mut expected = 0.0;
            for (src, az) in sources.iter().zip([30.0f64, 120.0]) {
                let (sx, sy) = (az.to_radians().cos(), az.to_radians().sin());
                let r = ((sx - mic).powi(2) + sy * sy).sqrt();
                let delay = r / 343.0 * 8000.0;
                for (k, s) in src.channel(0).iter().enumerate() {
                    let u = t as f64 - k as f64 - delay;
                    if u.abs() < 17.0 {
                        let sinc = if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) };
                        expected += s / r * sinc * 0.5 * (1.0 + (PI * u / 17.0).cos());
                    }
                }
            }
            assert!((scene.mixture.channel(0)[t] - expected).abs() < 1e-6, "t={t} {} {expected}", scene.mixture.channel(0)[t]);
        }
    }

    #[test]
    fn single_source_mixture_is_its_image() {
        let cfg = SceneConfig { n_sources: 1, duration: 0.25, seed: 9, ..SceneConfig::default() };
        let scene = generate_scene(&cfg).unwrap();
        assert_eq!(scene.mixture.channels(), scene.images[0].channels());
    }

    #[test]
    fn mixture_equals_sum_of_images() {
        let cfg = SceneConfig { duration: 0.5, seed: 4, ..SceneConfig::default() };
        let scene = generate_scene(&cfg).unwrap();
        for m in 0..2 {
            for t in 0..scene.mixture.len() {
                let s: f64 = scene.images.iter().map(|c| c.channel(m)[t]).sum();
                assert!((scene.mixture.channel(m)[t] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthesized_decay_matches_rt60() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rt60 in [0.16, 0.36, 0.61] {
            let rirs = synthesize_rir(&[-0.04, 0.04], 60.0, 1.0, rt60, 8000, &mut rng);
            for h in &rirs {
                let est = schroeder_rt60(h, 8000).unwrap();
                assert!((est - rt60).abs() <= 0.2 * rt60, "rt60 {rt60} estimated {est}");
            }
        }
    }

    #[test]
    fn layout_is_deterministic_and_valid() {
        let cfg = SceneConfig::default();
        let a = draw_layout(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = draw_layout(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mic_indices.len(), 2);
        assert!(a.mic_indices[0] < a.mic_indices[1] && a.mic_indices[1] < 8);
        assert_ne!(a.azimuths[0], a.azimuths[1]);
    }

    #[test]
    fn rir_channel_mismatch_is_rejected() {
        let cfg = SceneConfig { n_sources: 1, duration: 0.1, ..SceneConfig::default() };
        let src = vec![synth_speech(1, 800, 8000)];
        let rir = vec![vec![vec![1.0]]];
        assert!(matches!(mix_scene(&src, &cfg, Some(&rir)), Err(Error::Shape(_))));
    }
}
