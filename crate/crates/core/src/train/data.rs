use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::scene::{generate_scene, load_png, read_annotations, SceneGenConfig};

use super::augment::{center_crop, Sample};

/// Which synthetic stream a scene belongs to. Streams never share seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Probe,
    Test,
}

impl Split {
    fn offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Probe => 1_000_000,
            Split::Test => 2_000_000,
        }
    }

    /// Scene seed of item `index`.
    pub fn seed(self, base: u64, index: usize) -> u64 {
        base.wrapping_mul(10_000_000)
            .wrapping_add(self.offset())
            .wrapping_add(index as u64)
    }
}

pub fn synthetic_split(config: &SceneGenConfig, base: u64, split: Split, count: usize) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let s = generate_scene(config, split.seed(base, i))?;
            Ok(Sample {
                image: s.image,
                points: s.annotations,
            })
        })
        .collect()
}

/// Reads `annotations.txt` and `images/<image_id>.png` from `dir`.
pub fn load_samples(dir: &Path, channels: usize) -> Result<Vec<Sample>> {
    let sets = read_annotations(&dir.join("annotations.txt"))?;
    sets.into_iter()
        .map(|points| {
            let path = dir.join("images").join(format!("{}.png", points.image_id));
            let image = load_png(&path, channels)?;
            if (image.width, image.height) != (points.width, points.height) {
                return Err(Error::Shape(format!(
                    "{}: image is {}x{} but annotations say {}x{}",
                    path.display(),
                    image.width,
                    image.height,
                    points.width,
                    points.height
                )));
            }
            Ok(Sample { image, points })
        })
        .collect()
}

/// Training, probe and test samples. Probe and test samples are already
/// center-cropped to the training crop size.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub probe: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let d = &config.data;
        let crop = config.train.crop;
        let channels = config.scene.channels;
        let train = match &d.train_dir {
            Some(dir) => load_samples(dir, channels)?,
            None => synthetic_split(&config.scene, d.seed, Split::Train, d.train_scenes)?,
        };
        let probe = match &d.train_dir {
            Some(_) => train.iter().take(d.probe_scenes).cloned().collect(),
            None => synthetic_split(&config.scene, d.seed, Split::Probe, d.probe_scenes)?,
        };
        let test = match &d.test_dir {
            Some(dir) => load_samples(dir, channels)?,
            None => synthetic_split(&config.scene, d.seed, Split::Test, d.test_scenes)?,
        };
        Ok(Self {
            train,
            probe: probe.iter().map(|s| center_crop(s, crop)).collect(),
            test: test.iter().map(|s| center_crop(s, crop)).collect(),
        })
    }

    /// Test split only, for evaluation runs.
    pub fn build_test(config: &ExperimentConfig) -> Result<Vec<Sample>> {
        let d = &config.data;
        let test = match &d.test_dir {
            Some(dir) => load_samples(dir, config.scene.channels)?,
            None => synthetic_split(&config.scene, d.seed, Split::Test, d.test_scenes)?,
        };
        Ok(test.iter().map(|s| center_crop(s, config.train.crop)).collect())
    }
}
