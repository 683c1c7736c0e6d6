//! Shared inputs for the kernel benchmarks.

use maskbeam::estimator::TrainingExample;
use maskbeam::mask_cov::{oracle_activation, oracle_psm};
use maskbeam::scene::generate_scene;
use maskbeam::stft::stft;
use maskbeam::{ActivationTensor, ComplexSpectrogram, MaskTensor, Scene, SceneConfig, StftConfig};

/// A default two-source, two-microphone scene of `duration` seconds.
pub fn scene(duration: f64) -> Scene {
    generate_scene(&SceneConfig { duration, seed: 1, ..SceneConfig::default() }).expect("scene")
}

/// One 100-frame training chunk with its oracle mask and activations.
pub struct Chunk {
    pub example: TrainingExample,
    pub mask: MaskTensor,
    pub activation: ActivationTensor,
}

pub fn chunk() -> Chunk {
    let s = scene(0.792);
    let cfg = StftConfig::speech(8000);
    let x: ComplexSpectrogram = stft(&s.mixture, &cfg).expect("stft");
    let images: Vec<ComplexSpectrogram> = s.images.iter().map(|c| stft(c, &cfg).expect("stft")).collect();
    let mask = oracle_psm(&x, &images, 0).expect("psm");
    let activation = oracle_activation(&images).expect("activation");
    let example = TrainingExample::from_spectra(x, images).expect("example");
    Chunk { example, mask, activation }
}
