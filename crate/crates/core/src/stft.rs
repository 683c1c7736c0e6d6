//! Short-time Fourier analysis and weighted overlap-add synthesis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::signal_io::Waveform;

/// Analysis/synthesis taper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl StftConfig {
    /// 32 ms Hann window with an 8 ms shift and no zero padding.
    pub fn speech(sample_rate: u32) -> Self {
        let window_length = (sample_rate as usize * 32) / 1000;
        Self {
            window_length,
            hop: window_length / 4,
            fft_size: window_length,
            window: Window::Hann,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Checks the framing parameters, including constant overlap-add of the taper.
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.hop == 0 {
            return Err(Error::Config("window length and hop must be positive".into()));
        }
        if self.hop > self.window_length || !self.window_length.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} must divide window length {}",
                self.hop, self.window_length
            )));
        }
        if self.fft_size < self.window_length {
            return Err(Error::Config("fft size shorter than window".into()));
        }
        let w = self.window.coefficients(self.window_length);
        let sums: Vec<f64> = (0..self.hop)
            .map(|r| w.iter().skip(r).step_by(self.hop).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        if sums.iter().any(|s| (s - mean).abs() > 1e-9 * mean.abs().max(1e-300)) {
            return Err(Error::Config(format!(
                "{:?} window of length {} with hop {} is not constant overlap-add",
                self.window, self.window_length, self.hop
            )));
        }
        Ok(())
    }

    fn pad(&self) -> usize {
        self.window_length / 2
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop) + 1
    }
}

/// T × F × M complex time-frequency tensor, row-major with the channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    values: Vec<Complex64>,
    frames: usize,
    bins: usize,
    channels: usize,
    config: StftConfig,
    num_samples: usize,
    sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(
        frames: usize,
        bins: usize,
        channels: usize,
        config: StftConfig,
        num_samples: usize,
        sample_rate: u32,
    ) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); frames * bins * channels],
            frames,
            bins,
            channels,
            config,
            num_samples,
            sample_rate,
        }
    }

    /// A spectrogram with the same framing as `self` but `channels` channels.
    pub fn zeros_like(&self, channels: usize) -> Self {
        Self::zeros(
            self.frames,
            self.bins,
            channels,
            self.config,
            self.num_samples,
            self.sample_rate,
        )
    }

    /// Builds a spectrogram from raw T×F×M values that do not come from [`stft`].
    /// The framing metadata is synthesized from `config`.
    pub fn from_values(
        values: Vec<Complex64>,
        frames: usize,
        bins: usize,
        channels: usize,
        config: StftConfig,
    ) -> Result<Self> {
        if values.len() != frames * bins * channels {
            return Err(Error::Shape(format!(
                "{} values for {frames}x{bins}x{channels}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            values,
            frames,
            bins,
            channels,
            config,
            num_samples: frames.saturating_sub(1) * config.hop,
            sample_rate: 8000,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize, m: usize) -> Complex64 {
        self.values[(t * self.bins + f) * self.channels + m]
    }

    #[inline]
    pub fn set(&mut self, t: usize, f: usize, m: usize, v: Complex64) {
        self.values[(t * self.bins + f) * self.channels + m] = v;
    }

    /// The M-channel observation vector at bin (t, f).
    #[inline]
    pub fn vector(&self, t: usize, f: usize) -> &[Complex64] {
        let start = (t * self.bins + f) * self.channels;
        &self.values[start..start + self.channels]
    }

    #[inline]
    pub fn vector_mut(&mut self, t: usize, f: usize) -> &mut [Complex64] {
        let start = (t * self.bins + f) * self.channels;
        &mut self.values[start..start + self.channels]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    /// Frames `start..start + len` as a new spectrogram.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        let stride = self.bins * self.channels;
        Self {
            values: self.values[start * stride..(start + len) * stride].to_vec(),
            frames: len,
            bins: self.bins,
            channels: self.channels,
            config: self.config,
            num_samples: len.saturating_sub(1) * self.config.hop,
            sample_rate: self.sample_rate,
        }
    }

    /// A single channel as its own spectrogram.
    pub fn channel(&self, m: usize) -> Self {
        let mut out = self.zeros_like(1);
        for t in 0..self.frames {
            for f in 0..self.bins {
                out.set(t, f, 0, self.get(t, f, m));
            }
        }
        out
    }
}

fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let j = i.rem_euclid(period);
    if j < len as isize {
        j as usize
    } else {
        (period - j) as usize
    }
}

/// Multichannel STFT with reflection padding of half a window at both ends.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let len = w.len();
    if len == 0 {
        return Err(Error::Empty("stft input"));
    }
    if len <= cfg.window_length {
        return Err(Error::Shape(format!(
            "signal of {len} samples is not longer than one window ({})",
            cfg.window_length
        )));
    }
    let frames = cfg.num_frames(len);
    let bins = cfg.num_bins();
    let n_ch = w.num_channels();
    let pad = cfg.pad() as isize;
    let window = cfg.window.coefficients(cfg.window_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);

    let mut out = ComplexSpectrogram::zeros(frames, bins, n_ch, *cfg, len, w.sample_rate());
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for (m, ch) in w.channels().iter().enumerate() {
        for t in 0..frames {
            buf.fill(Complex64::new(0.0, 0.0));
            let origin = (t * cfg.hop) as isize - pad;
            for (k, wk) in window.iter().enumerate() {
                buf[k] = Complex64::new(ch[reflect(origin + k as isize, len)] * wk, 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                out.set(t, f, m, buf[f]);
            }
        }
    }
    Ok(out)
}

/// Inverse STFT by windowed overlap-add normalized by the summed squared window.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let cfg = s.config;
    cfg.validate()?;
    if s.bins != cfg.num_bins() || s.values.len() != s.frames * s.bins * s.channels {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, config implies {}",
            s.bins,
            cfg.num_bins()
        )));
    }
    let n = cfg.fft_size;
    let pad = cfg.pad();
    let window = cfg.window.coefficients(cfg.window_length);
    let total = (s.frames - 1) * cfg.hop + cfg.window_length;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);

    let mut norm = vec![0.0; total];
    for t in 0..s.frames {
        for (k, wk) in window.iter().enumerate() {
            norm[t * cfg.hop + k] += wk * wk;
        }
    }

    let mut channels = Vec::with_capacity(s.channels);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..s.channels {
        let mut acc = vec![0.0; total];
        for t in 0..s.frames {
            for f in 0..s.bins {
                buf[f] = s.get(t, f, m);
            }
            for f in s.bins..n {
                buf[f] = buf[n - f].conj();
            }
            // imaginary parts of DC and Nyquist do not survive a real signal
            buf[0].im = 0.0;
            if n.is_multiple_of(2) {
                buf[n / 2].im = 0.0;
            }
            ifft.process(&mut buf);
            for (k, wk) in window.iter().enumerate() {
                acc[t * cfg.hop + k] += buf[k].re / n as f64 * wk;
            }
        }
        let out: Vec<f64> = (0..s.num_samples)
            .map(|i| {
                let j = i + pad;
                if j < total && norm[j] > 1e-12 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect();
        channels.push(out);
    }
    Waveform::new(channels, s.sample_rate)
}
