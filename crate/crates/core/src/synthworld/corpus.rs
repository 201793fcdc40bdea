use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::arm::{CameraModel, SimArm};
use super::logs::{generate_robot_logs, LogConfig};
use super::scene::{hand_region, render_frame, texture, Entity, ObjectShape, SceneState};
use super::script::{generate_episode, ActivityScript, Episode, ScriptKind};
use crate::detector::{read_detections, write_detections, DetectionSet, FrameImage, HandClass};
use crate::error::{Error, Result};
use crate::manip::RobotLogRecord;
use crate::seed;
use crate::tensor::io::{read_tensor, write_tensor};

/// A frame with its boxes exposed, for detector training.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub frame: FrameImage,
    pub truth: DetectionSet,
}

/// Hand-center spread beyond each class region in the labeled set.
const LABEL_MARGIN: f64 = 0.08;
const LABEL_HAND_SIZE: (f64, f64) = (0.16, 0.26);

/// One random labeled scene: each hand class present with probability 0.8
/// near its usual region, a few objects, fresh texture.
pub fn labeled_scene(index: usize, size: (usize, usize), seed: u64) -> Result<LabeledFrame> {
    let s = seed::derive(seed::derive_str(seed, "detector_set"), index as u64);
    let mut rng = seed::rng(s);
    let mut entities = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let shape = [ObjectShape::Cup, ObjectShape::Trivet, ObjectShape::Crate][rng.gen_range(0..3)];
        let w = rng.gen_range(0.07..0.16);
        let h = rng.gen_range(0.07..0.14);
        entities.push(Entity::object(shape, rng.gen_range(0.15..0.85), rng.gen_range(0.3..0.7), w, h));
    }
    for class in HandClass::ALL {
        if !rng.gen_bool(0.8) {
            continue;
        }
        let r = hand_region(class);
        let cx = rng.gen_range(r.x0 - LABEL_MARGIN..r.x1 + LABEL_MARGIN);
        let cy = rng.gen_range(r.y0 - LABEL_MARGIN..r.y1 + LABEL_MARGIN);
        let side = rng.gen_range(LABEL_HAND_SIZE.0..LABEL_HAND_SIZE.1);
        let aspect: f64 = rng.gen_range(0.8..1.25);
        entities.push(Entity::hand(class, cx, cy, side * aspect.sqrt(), side / aspect.sqrt()));
    }
    let state = SceneState { entities };
    let tex = texture(size.0, size.1, seed::derive_str(s, "texture"));
    Ok(LabeledFrame {
        frame: render_frame(&state, size, Some(&tex), index, "detector")?,
        truth: state.truth(index),
    })
}

pub fn generate_detector_set(n: usize, size: (usize, usize), seed: u64) -> Result<Vec<LabeledFrame>> {
    (0..n).map(|i| labeled_scene(i, size, seed)).collect()
}

/// Which scripts the interaction episodes use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Alternating table-clearing and trivet-pushing episodes.
    Interaction,
    Only(ScriptKind),
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Scenario> {
        if s == "interaction" {
            return Some(Scenario::Interaction);
        }
        ScriptKind::parse(s).map(Scenario::Only)
    }

    pub fn kind(self, index: usize) -> ScriptKind {
        match self {
            Scenario::Interaction if index % 2 == 0 => ScriptKind::ClearTable,
            Scenario::Interaction => ScriptKind::PushTrivet,
            Scenario::Only(k) => k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    /// (height, width) of rendered frames.
    pub frame_size: (usize, usize),
    pub scenario: Scenario,
    pub episodes: usize,
    pub train_episodes: usize,
    /// Inclusive episode length range in frames.
    pub duration: (usize, usize),
    pub detector_frames: usize,
    pub detector_train: usize,
    pub logs: LogConfig,
    pub held_out_logs: usize,
}

impl Default for CorpusConfig {
    /// 47 episodes (32 train / 15 test) of 60–100 frames at 96×96, a
    /// 500-frame labeled set and 50 robot logs.
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            frame_size: (96, 96),
            scenario: Scenario::Interaction,
            episodes: 47,
            train_episodes: 32,
            duration: (60, 100),
            detector_frames: 500,
            detector_train: 400,
            logs: LogConfig::default(),
            held_out_logs: 10,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("at least one episode is required".into()));
        }
        if self.train_episodes > self.episodes {
            return Err(Error::Config("train split larger than the episode count".into()));
        }
        if self.duration.0 == 0 || self.duration.0 > self.duration.1 {
            return Err(Error::Config("episode duration range is empty".into()));
        }
        if self.detector_train > self.detector_frames {
            return Err(Error::Config("detector train split larger than the labeled set".into()));
        }
        if self.held_out_logs > self.logs.n_sequences {
            return Err(Error::Config("more held-out logs than logs".into()));
        }
        let (h, w) = self.frame_size;
        if h == 0 || w == 0 {
            return Err(Error::Config("frame size must be positive".into()));
        }
        Ok(())
    }

    pub fn episode_id(index: usize) -> String {
        format!("ep_{index:03}")
    }

    /// Script of episode `index`, seeded independently of the others.
    pub fn episode_script(&self, index: usize) -> ActivityScript {
        let s = seed::derive(seed::derive_str(self.seed, "episodes"), index as u64);
        let mut rng = seed::rng(s);
        let duration = rng.gen_range(self.duration.0..=self.duration.1);
        ActivityScript::sample(self.scenario.kind(index), duration, s)
    }
}

/// Everything the pipeline trains and evaluates on, in memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub detector: Vec<LabeledFrame>,
    pub episodes: Vec<Episode>,
    pub logs: Vec<Vec<RobotLogRecord>>,
}

impl Corpus {
    pub fn generate(config: &CorpusConfig, arm: &SimArm, cam: &CameraModel) -> Result<Corpus> {
        config.validate()?;
        let detector = generate_detector_set(config.detector_frames, config.frame_size, config.seed)?;
        let episodes = (0..config.episodes)
            .map(|i| generate_episode(&config.episode_script(i), &CorpusConfig::episode_id(i), config.frame_size))
            .collect::<Result<Vec<_>>>()?;
        let logs = generate_robot_logs(arm, cam, &config.logs, seed::derive_str(config.seed, "logs"))?;
        Ok(Corpus {
            config: config.clone(),
            detector,
            episodes,
            logs,
        })
    }

    pub fn train_episodes(&self) -> &[Episode] {
        &self.episodes[..self.config.train_episodes]
    }

    pub fn test_episodes(&self) -> &[Episode] {
        &self.episodes[self.config.train_episodes..]
    }

    pub fn detector_train(&self) -> &[LabeledFrame] {
        &self.detector[..self.config.detector_train]
    }

    pub fn detector_test(&self) -> &[LabeledFrame] {
        &self.detector[self.config.detector_train..]
    }

    pub fn train_logs(&self) -> &[Vec<RobotLogRecord>] {
        &self.logs[..self.logs.len() - self.config.held_out_logs]
    }

    pub fn held_out_logs(&self) -> &[Vec<RobotLogRecord>] {
        &self.logs[self.logs.len() - self.config.held_out_logs..]
    }
}

/// Per-episode directory manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub fps: usize,
    pub n_frames: usize,
    pub script: ActivityScript,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub id: String,
    pub kind: ScriptKind,
    pub n_frames: usize,
    pub split: String,
}

/// Top-level corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: CorpusConfig,
    pub episodes: Vec<EpisodeSummary>,
    pub detector_frames: usize,
    pub log_files: Vec<String>,
}

pub fn frame_file(t: usize) -> String {
    format!("frame_{t:05}.ftr")
}

pub fn log_file(i: usize) -> String {
    format!("logs_{i:03}.jsonl")
}

fn write_json(path: &FsPath, value: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &FsPath) -> Result<T> {
    let f = fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn write_frames(dir: &FsPath, frames: &[&FrameImage], truth: &[DetectionSet], episode: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in frames {
        write_tensor(&dir.join(frame_file(f.frame_index)), &f.pixels)?;
    }
    let mut out = BufWriter::new(fs::File::create(dir.join("truth.jsonl"))?);
    write_detections(&mut out, episode, truth)?;
    out.flush()?;
    Ok(())
}

fn read_frames(dir: &FsPath, n: usize, episode: &str) -> Result<(Vec<FrameImage>, Vec<DetectionSet>)> {
    let frames = (0..n)
        .map(|t| FrameImage::new(read_tensor(&dir.join(frame_file(t)))?, t, episode))
        .collect::<Result<Vec<_>>>()?;
    let records = read_detections(BufReader::new(fs::File::open(dir.join("truth.jsonl"))?))?;
    if records.len() != n {
        return Err(Error::Format(format!("{}: {} truth lines for {n} frames", dir.display(), records.len())));
    }
    let truth = records.into_iter().map(|r| DetectionSet::new(r.t, r.boxes)).collect();
    Ok((frames, truth))
}

pub fn write_episode(dir: &FsPath, episode: &Episode) -> Result<()> {
    let frames: Vec<&FrameImage> = episode.frames.iter().collect();
    write_frames(dir, &frames, &episode.truth, &episode.id)?;
    write_json(
        &dir.join("manifest.json"),
        &EpisodeManifest {
            episode_id: episode.id.clone(),
            fps: episode.fps,
            n_frames: episode.len(),
            script: episode.script.clone(),
        },
    )
}

/// Loads an episode directory; the scene states are recomputed from the
/// stored script.
pub fn read_episode(dir: &FsPath) -> Result<Episode> {
    let m: EpisodeManifest = read_json(&dir.join("manifest.json"))?;
    let (frames, truth) = read_frames(dir, m.n_frames, &m.episode_id)?;
    Ok(Episode {
        id: m.episode_id,
        states: m.script.states()?,
        script: m.script,
        frames,
        truth,
        fps: m.fps,
    })
}

pub fn write_logs(path: &FsPath, records: &[RobotLogRecord]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_logs(path: &FsPath) -> Result<Vec<RobotLogRecord>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Corpus directory layout.
#[derive(Clone, Debug)]
pub struct CorpusPaths {
    pub root: PathBuf,
}

impl CorpusPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusPaths { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn detector(&self) -> PathBuf {
        self.root.join("detector")
    }

    pub fn episode(&self, id: &str) -> PathBuf {
        self.root.join("episodes").join(id)
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
}

pub fn write_corpus(root: &FsPath, corpus: &Corpus) -> Result<CorpusManifest> {
    let paths = CorpusPaths::new(root);
    fs::create_dir_all(root)?;
    let frames: Vec<&FrameImage> = corpus.detector.iter().map(|l| &l.frame).collect();
    let truth: Vec<DetectionSet> = corpus.detector.iter().map(|l| l.truth.clone()).collect();
    write_frames(&paths.detector(), &frames, &truth, "detector")?;
    let mut episodes = Vec::new();
    for (i, ep) in corpus.episodes.iter().enumerate() {
        write_episode(&paths.episode(&ep.id), ep)?;
        episodes.push(EpisodeSummary {
            id: ep.id.clone(),
            kind: ep.script.kind,
            n_frames: ep.len(),
            split: if i < corpus.config.train_episodes { "train" } else { "test" }.into(),
        });
    }
    fs::create_dir_all(paths.logs())?;
    let mut log_files = Vec::new();
    for (i, log) in corpus.logs.iter().enumerate() {
        let name = log_file(i);
        write_logs(&paths.logs().join(&name), log)?;
        log_files.push(format!("logs/{name}"));
    }
    let manifest = CorpusManifest {
        config: corpus.config.clone(),
        episodes,
        detector_frames: corpus.detector.len(),
        log_files,
    };
    write_json(&paths.manifest(), &manifest)?;
    Ok(manifest)
}

pub fn read_corpus_manifest(root: &FsPath) -> Result<CorpusManifest> {
    read_json(&CorpusPaths::new(root).manifest())
}

pub fn read_corpus(root: &FsPath) -> Result<Corpus> {
    let manifest = read_corpus_manifest(root)?;
    let paths = CorpusPaths::new(root);
    let (frames, truth) = read_frames(&paths.detector(), manifest.detector_frames, "detector")?;
    let detector = frames
        .into_iter()
        .zip(truth)
        .map(|(frame, truth)| LabeledFrame { frame, truth })
        .collect();
    let episodes = manifest
        .episodes
        .iter()
        .map(|e| read_episode(&paths.episode(&e.id)))
        .collect::<Result<Vec<_>>>()?;
    let logs = manifest
        .log_files
        .iter()
        .map(|f| read_logs(&root.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: manifest.config,
        detector,
        episodes,
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            episodes: 3,
            train_episodes: 2,
            duration: (6, 8),
            detector_frames: 4,
            detector_train: 3,
            frame_size: (24, 24),
            logs: LogConfig {
                n_sequences: 2,
                records: 12,
                ..LogConfig::default()
            },
            held_out_logs: 1,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn default_counts() {
        let c = CorpusConfig::default();
        assert_eq!((c.episodes, c.train_episodes, c.logs.n_sequences), (47, 32, 50));
        assert_eq!(c.detector_frames, 500);
    }

    #[test]
    fn labeled_scenes_vary_and_repeat() {
        let a = labeled_scene(0, (32, 32), 5).unwrap();
        assert_eq!(a, labeled_scene(0, (32, 32), 5).unwrap());
        assert_ne!(a.frame.pixels, labeled_scene(1, (32, 32), 5).unwrap().frame.pixels);
    }

    #[test]
    fn corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = Corpus::generate(&small(), &SimArm::default(), &CameraModel::default()).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.episodes, corpus.episodes);
        assert_eq!(back.detector, corpus.detector);
        assert_eq!(back.logs, corpus.logs);
        assert_eq!(back.test_episodes().len(), 1);
    }

    #[test]
    fn zero_episodes_rejected() {
        let c = CorpusConfig { episodes: 0, ..small() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
