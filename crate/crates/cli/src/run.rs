//! Run-directory layout and JSON config loading.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maskbeam::scene::SceneLayout;
use maskbeam::signal_io::{read_wav, write_wav};
use maskbeam::{Scene, SceneConfig, WavEncoding};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Sample rate of the evaluation protocol; inputs at other rates are rejected.
pub const PROTOCOL_RATE: u32 = 8000;

/// Parses a JSON config, or returns `fallback` when no path was given.
/// Schema errors name the file and carry serde_json's line and column.
pub fn load_config<T: DeserializeOwned>(path: Option<&Path>, fallback: impl FnOnce() -> T) -> Result<T> {
    let Some(path) = path else { return Ok(fallback()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    config: SceneConfig,
    layout: SceneLayout,
}

/// `runs/<name>/{scenes,masks,models,metrics}`.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        let run = Self { root: root.to_path_buf() };
        for sub in ["scenes", "masks", "models", "metrics"] {
            fs::create_dir_all(run.root.join(sub)).with_context(|| format!("creating {}", run.root.join(sub).display()))?;
        }
        Ok(run)
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.join("scenes").is_dir() {
            bail!("{} is not a run directory (no scenes/); run `maskbeam mix` first", root.display());
        }
        Self::create(root)
    }

    pub fn scenes(&self) -> PathBuf {
        self.root.join("scenes")
    }
    pub fn masks(&self) -> PathBuf {
        self.root.join("masks")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn scene_dir(&self, index: usize) -> PathBuf {
        self.scenes().join(scene_name(index))
    }

    pub fn model_path(&self, loss: &str) -> PathBuf {
        self.models().join(format!("{loss}.mbem"))
    }

    pub fn write_scene(&self, index: usize, scene: &Scene) -> Result<()> {
        let dir = self.scene_dir(index);
        fs::create_dir_all(&dir)?;
        write_wav(dir.join("mixture.wav"), &scene.mixture, WavEncoding::Float32)?;
        for (n, img) in scene.images.iter().enumerate() {
            write_wav(dir.join(format!("image_{n}.wav")), img, WavEncoding::Float32)?;
        }
        let meta = SceneMeta { config: scene.config.clone(), layout: scene.layout.clone() };
        fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read_scene(&self, index: usize) -> Result<Scene> {
        let dir = self.scene_dir(index);
        let meta: SceneMeta = serde_json::from_str(&fs::read_to_string(dir.join("scene.json"))?)
            .with_context(|| format!("parsing {}", dir.join("scene.json").display()))?;
        let mixture = read_wav(dir.join("mixture.wav"))?;
        mixture.require_rate(PROTOCOL_RATE)?;
        let images = (0..meta.config.n_sources)
            .map(|n| read_wav(dir.join(format!("image_{n}.wav"))))
            .collect::<maskbeam::Result<Vec<_>>>()?;
        Ok(Scene { mixture, images, config: meta.config, layout: meta.layout })
    }

    pub fn read_scenes(&self) -> Result<Vec<Scene>> {
        let count = self.scene_count();
        if count == 0 {
            bail!("no scenes in {}", self.scenes().display());
        }
        (0..count).map(|i| self.read_scene(i)).collect()
    }

    fn scene_count(&self) -> usize {
        (0..).take_while(|&n| self.scene_dir(n).join("scene.json").is_file()).count()
    }
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}
