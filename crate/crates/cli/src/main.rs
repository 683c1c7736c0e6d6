use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use maskbeam::beamformer::{apply_bank, apply_time_varying, build_bank, mwf_time_varying};
use maskbeam::binfmt::{write_bank, write_mask};
use maskbeam::estimator::{loss_curve_csv, train, TrainingExample};
use maskbeam::loss::grad_check_random;
use maskbeam::mask_cov::{estimate_covariance, input_feature, observation_covariance, oracle_activation, oracle_psm};
use maskbeam::metrics::median;
use maskbeam::pipeline::{results_csv, run_pipeline, summarize};
use maskbeam::scene::{generate_scene, mix_scene};
use maskbeam::signal_io::{read_wav, write_wav};
use maskbeam::stft::{istft, stft};
use maskbeam::{
    BeamformerKind, EstimatorModel, LossKind, Method, PipelineConfig, SceneConfig, StftConfig, TrainConfig, WavEncoding,
    Waveform,
};
use serde::Deserialize;

mod run;

use run::{load_config, scene_name, RunDir, PROTOCOL_RATE};

const REF_CHANNEL: usize = 0;

#[derive(Parser)]
#[command(name = "maskbeam", version, about = "Mask-based multichannel beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config for this subcommand
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize scenes (or mix user sources) into the run directory
    Mix {
        #[command(flatten)]
        common: Common,
        /// Base seed; scene i uses seed + i
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write oracle phase-sensitive masks for every scene
    OracleMasks {
        #[command(flatten)]
        common: Common,
    },
    /// Train the mask estimator on the run's scenes
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Beamform every scene and write the separated WAVs
    Beamform {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "oracle-psm")]
        method: Method,
        #[arg(long, default_value = "mvdr")]
        beamformer: BeamformerKind,
    },
    /// Score a method against the source images; writes per-scene CSV
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "oracle-psm")]
        method: Method,
        /// Restrict to one beamformer (default: every compatible one)
        #[arg(long)]
        beamformer: Option<BeamformerKind>,
    },
    /// Compare analytic loss gradients with central finite differences
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        loss: LossKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate metrics CSVs into a methods x beamformers table
    Report {
        /// A run directory, or a directory of run directories
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixConfig {
    #[serde(default = "one")]
    count: usize,
    #[serde(default)]
    scene: Option<SceneConfig>,
    /// Mono WAV sources, one per speaker; synthesized when absent.
    #[serde(default)]
    sources: Option<Vec<PathBuf>>,
    /// Multichannel impulse-response WAVs, one per source; synthesized when absent.
    #[serde(default)]
    rirs: Option<Vec<PathBuf>>,
}

fn one() -> usize {
    1
}

impl Default for MixConfig {
    fn default() -> Self {
        Self { count: 1, scene: None, sources: None, rirs: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradCheckConfig {
    #[serde(default = "default_tol")]
    rel_tol: f64,
    #[serde(default = "one")]
    instances: usize,
}

fn default_tol() -> f64 {
    1e-4
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mix { common, seed } => mix(&common, seed),
        Command::OracleMasks { common } => oracle_masks(&common),
        Command::Train { common, loss, seed } => train_cmd(&common, loss, seed),
        Command::Beamform { common, method, beamformer } => beamform(&common, method, beamformer),
        Command::Evaluate { common, method, beamformer } => evaluate(&common, method, beamformer),
        Command::GradCheck { config, loss, seed } => grad_check(config.as_deref(), loss, seed),
        Command::Report { out } => report(&out),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn mix(common: &Common, seed: Option<u64>) -> Result<()> {
    let cfg: MixConfig = load_config(common.config.as_deref(), MixConfig::default)?;
    let base_dir = common.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
    let mut scene_cfg = cfg.scene.clone().unwrap_or_default();
    if let Some(s) = seed {
        scene_cfg.seed = s;
    }
    let sources = match &cfg.sources {
        Some(paths) => Some(
            paths
                .iter()
                .map(|p| {
                    let w = read_wav(resolve(base_dir, p)).with_context(|| format!("reading source {}", p.display()))?;
                    w.require_rate(PROTOCOL_RATE)?;
                    Ok(w)
                })
                .collect::<Result<Vec<Waveform>>>()?,
        ),
        None => None,
    };
    let rirs = match &cfg.rirs {
        Some(paths) => Some(
            paths
                .iter()
                .map(|p| {
                    let w = read_wav(resolve(base_dir, p)).with_context(|| format!("reading RIR {}", p.display()))?;
                    w.require_rate(PROTOCOL_RATE)?;
                    Ok(w.into_channels())
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let run = RunDir::create(&common.out)?;
    for i in 0..cfg.count {
        let c = SceneConfig { seed: scene_cfg.seed + i as u64, ..scene_cfg.clone() };
        let scene = match &sources {
            Some(src) => mix_scene(src, &c, rirs.as_deref())?,
            None if rirs.is_some() => bail!("impulse responses given without sources"),
            None => generate_scene(&c)?,
        };
        run.write_scene(i, &scene)?;
    }
    println!("wrote {} scene(s) to {}", cfg.count, run.scenes().display());
    Ok(())
}

fn oracle_masks(common: &Common) -> Result<()> {
    let run = RunDir::open(&common.out)?;
    let stft_cfg = StftConfig::speech(PROTOCOL_RATE);
    let scenes = run.read_scenes()?;
    for (i, scene) in scenes.iter().enumerate() {
        let x = stft(&scene.mixture, &stft_cfg)?;
        let images = scene.images.iter().map(|c| stft(c, &stft_cfg)).collect::<maskbeam::Result<Vec<_>>>()?;
        let mask = oracle_psm(&x, &images, REF_CHANNEL)?;
        write_mask(run.masks().join(format!("{}_oracle-psm.mask", scene_name(i))), &mask)?;
    }
    println!("wrote {} oracle mask file(s) to {}", scenes.len(), run.masks().display());
    Ok(())
}

fn train_cmd(common: &Common, loss: Option<LossKind>, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainConfig = load_config(common.config.as_deref(), || TrainConfig::new(LossKind::Psa, 2000, 0))?;
    if let Some(l) = loss {
        cfg.loss = l;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let run = RunDir::open(&common.out)?;
    let scenes = run.read_scenes()?;
    let stft_cfg = StftConfig::speech(PROTOCOL_RATE);
    let data = scenes
        .iter()
        .map(|s| TrainingExample::from_scene(s, &stft_cfg))
        .collect::<maskbeam::Result<Vec<_>>>()?;
    let spec = cfg.model_spec(stft_cfg.num_bins(), scenes[0].num_sources());
    let init = EstimatorModel::new(spec, cfg.seed);
    let (model, curve) = train(&init, &data, &cfg)?;
    let name = cfg.loss.name();
    model.save(run.model_path(name))?;
    fs::write(run.models().join(format!("{name}.json")), serde_json::to_string_pretty(&cfg)?)?;
    fs::write(run.metrics().join(format!("train_{name}.csv")), loss_curve_csv(&curve))?;
    println!(
        "trained {name} for {} steps: loss {:.6} -> {:.6}; model at {}",
        curve.len(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN),
        run.model_path(name).display()
    );
    Ok(())
}

fn load_model(run: &RunDir, method: Method) -> Result<Option<EstimatorModel>> {
    if !method.needs_model() {
        return Ok(None);
    }
    let path = run.model_path(method.name());
    let model = EstimatorModel::load(&path).with_context(|| format!("loading {} (run `maskbeam train` first)", path.display()))?;
    Ok(Some(model))
}

fn beamform(common: &Common, method: Method, bf: BeamformerKind) -> Result<()> {
    let _: PipelineConfig = load_config(common.config.as_deref(), PipelineConfig::default)?;
    let run = RunDir::open(&common.out)?;
    let model = load_model(&run, method)?;
    maskbeam::pipeline::check_combination(method, bf, model.as_ref())?;
    let stft_cfg = StftConfig::speech(PROTOCOL_RATE);
    let scenes = run.read_scenes()?;
    for (i, scene) in scenes.iter().enumerate() {
        let x = stft(&scene.mixture, &stft_cfg)?;
        let (mask, act) = match &model {
            None => {
                let images = scene.images.iter().map(|c| stft(c, &stft_cfg)).collect::<maskbeam::Result<Vec<_>>>()?;
                (oracle_psm(&x, &images, REF_CHANNEL)?, Some(oracle_activation(&images)?))
            }
            Some(m) => {
                let out = m.forward(&input_feature(&x)?)?;
                (out.mask, out.activation)
            }
        };
        let tag = format!("{}_{}", method.name(), bf.name());
        write_mask(run.masks().join(format!("{}_{}.mask", scene_name(i), method.name())), &mask)?;
        let covs = estimate_covariance(&mask, &x)?;
        let spectra = if bf == BeamformerKind::MwfTv {
            let act = act.context("time-varying MWF needs activations")?;
            apply_time_varying(&mwf_time_varying(&covs, &act)?, &x)?
        } else {
            let bank = build_bank(bf, &covs, &observation_covariance(&x))?;
            write_bank(run.scene_dir(i).join(format!("{tag}.bank")), &bank)?;
            apply_bank(&bank, &x)?
        };
        for (n, s) in spectra.iter().enumerate() {
            let y = istft(s)?;
            let y = Waveform::mono(y.channel(0)[..scene.mixture.len()].to_vec(), PROTOCOL_RATE)?;
            write_wav(run.scene_dir(i).join(format!("{tag}_{n}.wav")), &y, WavEncoding::Float32)?;
        }
    }
    println!("beamformed {} scene(s) with {method}/{}", scenes.len(), bf.name());
    Ok(())
}

fn evaluate(common: &Common, method: Method, bf: Option<BeamformerKind>) -> Result<()> {
    let cfg: PipelineConfig = load_config(common.config.as_deref(), PipelineConfig::default)?;
    let run = RunDir::open(&common.out)?;
    let model = load_model(&run, method)?;
    let beamformers: Vec<BeamformerKind> = match bf {
        Some(b) => vec![b],
        None => [BeamformerKind::Mvdr, BeamformerKind::Gev, BeamformerKind::MwfTi, BeamformerKind::MwfTv]
            .into_iter()
            .filter(|&b| maskbeam::pipeline::check_combination(method, b, model.as_ref()).is_ok())
            .collect(),
    };
    let scenes = run.read_scenes()?;
    let results = run_pipeline(&scenes, method, &beamformers, model.as_ref(), &cfg)?;
    let csv_path = run.metrics().join(format!("eval_{}.csv", method.name()));
    fs::write(&csv_path, results_csv(&results))?;
    let summary = summarize(&results);
    fs::write(run.metrics().join(format!("eval_{}.json", method.name())), serde_json::to_string_pretty(&summary)?)?;
    for s in &summary {
        println!(
            "{:<11} {:<7} scenes={:<3} SDR={:7.2} SIR={:7.2} CD={:6.2} dSDR={:6.2}",
            s.method, s.beamformer, s.scenes, s.median_sdr, s.median_sir, s.median_cd, s.median_sdr_improvement
        );
    }
    println!("per-scene metrics in {}", csv_path.display());
    Ok(())
}

fn grad_check(config: Option<&Path>, loss: LossKind, seed: u64) -> Result<()> {
    let cfg: GradCheckConfig = load_config(config, || GradCheckConfig { rel_tol: default_tol(), instances: 1 })?;
    let mut failed = 0;
    for s in seed..seed + cfg.instances as u64 {
        let report = grad_check_random(loss, s, cfg.rel_tol)?;
        println!("{report}");
        if !report.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} gradient check(s) failed", cfg.instances);
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Row {
    scene: usize,
    method: String,
    beamformer: String,
    sdr: f64,
    sir: f64,
    cd: f64,
    mixture_sdr: f64,
    mixture_sir: f64,
    mixture_cd: f64,
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("metrics").is_dir() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    if root.is_dir() {
        for entry in fs::read_dir(root)? {
            let p = entry?.path();
            if p.join("metrics").is_dir() {
                dirs.push(p);
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn report(root: &Path) -> Result<()> {
    let mut rows: Vec<(PathBuf, Row)> = Vec::new();
    for dir in run_dirs(root)? {
        let mut files: Vec<PathBuf> = fs::read_dir(dir.join("metrics"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "csv")
                    && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("eval_"))
            })
            .collect();
        files.sort();
        for f in files {
            let mut rdr = csv::Reader::from_path(&f).with_context(|| format!("reading {}", f.display()))?;
            for r in rdr.deserialize() {
                rows.push((dir.clone(), r.with_context(|| format!("parsing {}", f.display()))?));
            }
        }
    }
    if rows.is_empty() {
        bail!("no runs found in {}", root.display());
    }

    let mut table = String::from("method,beamformer,scenes,sdr,sir,cd\n");
    // the unprocessed mixture, once per (run, scene)
    let mut seen: Vec<(&Path, usize)> = Vec::new();
    let mut mix: [Vec<f64>; 3] = Default::default();
    for (dir, r) in &rows {
        if !seen.contains(&(dir.as_path(), r.scene)) {
            seen.push((dir.as_path(), r.scene));
            mix[0].push(r.mixture_sdr);
            mix[1].push(r.mixture_sir);
            mix[2].push(r.mixture_cd);
        }
    }
    let mut lines = vec![("mixture".to_string(), "-".to_string(), seen.len(), median(&mix[0]), median(&mix[1]), median(&mix[2]))];
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for (_, r) in &rows {
        if !keys.contains(&(r.method.as_str(), r.beamformer.as_str())) {
            keys.push((r.method.as_str(), r.beamformer.as_str()));
        }
    }
    for (m, b) in keys {
        let sel: Vec<&Row> = rows.iter().map(|(_, r)| r).filter(|r| r.method == m && r.beamformer == b).collect();
        let col = |f: fn(&Row) -> f64| median(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        lines.push((m.to_string(), b.to_string(), sel.len(), col(|r| r.sdr), col(|r| r.sir), col(|r| r.cd)));
    }

    println!("{:<11} {:<7} {:>6} {:>8} {:>8} {:>7}", "method", "bf", "scenes", "SDR", "SIR", "CD");
    for (m, b, n, sdr, sir, cd) in &lines {
        println!("{m:<11} {b:<7} {n:>6} {sdr:>8.2} {sir:>8.2} {cd:>7.2}");
        table.push_str(&format!("{m},{b},{n},{sdr:.4},{sir:.4},{cd:.4}\n"));
    }
    let out = root.join("report.csv");
    fs::write(&out, table).with_context(|| format!("writing {}", out.display()))?;
    println!("medians over scenes; table written to {}", out.display());
    Ok(())
}
