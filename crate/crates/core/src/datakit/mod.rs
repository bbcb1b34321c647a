//! Dataset assembly: episode sweeps, windowing, the train/eval split and
//! normalization statistics.
//!
//! A dataset directory holds `manifest.json` and one episode table per
//! episode under `episodes/`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatedParams, KnownParams, Normalizer, ObservationWindow, TrainingExample};
use crate::simulator::{run_episode, EpisodeRecord, EpisodeSpec, SimConfig, SimError, SimMode, SoilType, StepRow, OBS_DIM};

pub const MANIFEST_FORMAT: &str = "soil-pinn-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Smallest per-channel standard deviation accepted by [`compute_normalizer`].
pub const MIN_STD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("episode {id} has {rows} rows, not a positive multiple of {window}")]
    ShortEpisode { id: usize, rows: usize, window: usize },
    #[error("{failed} of {total} episodes failed, first: {first}")]
    EpisodesFailed { failed: usize, total: usize, first: String },
    #[error("empty training split")]
    EmptySplit,
    #[error("observation channel {channel} is degenerate (std {std:e})")]
    DegenerateChannel { channel: &'static str, std: f64 },
    #[error("training forces are all zero")]
    ZeroForce,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// What to simulate.
///
/// Episodes are the product soil type × density level × command draw. The
/// density levels are a uniform grid over [0, 100] including both ends;
/// every `eval_every`-th level, starting with the first, goes to eval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: String,
    pub mode: SimMode,
    pub soil_types: Vec<SoilType>,
    pub density_levels: usize,
    pub commands_per_level: usize,
    pub v_target_range_m_per_s: [f64; 2],
    pub d_target_range_m: [f64; 2],
    pub eval_every: usize,
    pub window_len: usize,
    pub seed: u64,
}

impl DatasetSpec {
    fn base(id: &str, mode: SimMode, density_levels: usize, commands_per_level: usize) -> Self {
        Self {
            id: id.into(),
            mode,
            soil_types: SoilType::ALL.to_vec(),
            density_levels,
            commands_per_level,
            v_target_range_m_per_s: [0.3, 1.0],
            d_target_range_m: [0.05, 0.3],
            eval_every: 3,
            window_len: 60,
            seed: 0,
        }
    }

    /// 432 force-model-only episodes: 4 types × 27 levels × 4 commands.
    pub fn full_fee() -> Self {
        Self::base("fee-full", SimMode::FeePure, 27, 4)
    }

    /// 576 episodes with every soil effect: 4 types × 36 levels × 4 commands.
    pub fn full_default() -> Self {
        Self::base("default-full", SimMode::Default, 36, 4)
    }

    /// 48 force-model-only episodes for laptop-scale runs.
    pub fn desk_fee() -> Self {
        Self::base("fee-desk", SimMode::FeePure, 12, 1)
    }

    /// 48 episodes with every soil effect for laptop-scale runs.
    pub fn desk_default() -> Self {
        Self::base("default-desk", SimMode::Default, 12, 1)
    }

    pub fn episode_count(&self) -> usize {
        self.soil_types.len() * self.density_levels * self.commands_per_level
    }

    /// Rescales the density grid to give `n` episodes.
    pub fn with_episode_count(mut self, n: usize) -> Result<Self, DataError> {
        let per_level = self.soil_types.len() * self.commands_per_level;
        if per_level == 0 || n == 0 || n % per_level != 0 {
            return Err(DataError::InvalidSpec(format!("{n} episodes is not a multiple of {per_level} (types × commands)")));
        }
        self.density_levels = n / per_level;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.into()));
        if self.soil_types.is_empty() || self.density_levels == 0 || self.commands_per_level == 0 {
            return bad("no episodes");
        }
        if self.eval_every < 2 {
            return bad("eval_every must be at least 2");
        }
        if self.density_levels <= 1 {
            return bad("need at least two density levels for a train/eval split");
        }
        if self.window_len == 0 {
            return bad("window_len must be positive");
        }
        let [v0, v1] = self.v_target_range_m_per_s;
        let [d0, d1] = self.d_target_range_m;
        if !(v0 > 0.0 && v0 <= v1 && v1.is_finite()) {
            return bad("velocity range must be positive and ordered");
        }
        if !(d0.is_finite() && d1.is_finite() && d0 <= d1) {
            return bad("depth range must be ordered");
        }
        Ok(())
    }

    pub fn density(&self, level: usize) -> f64 {
        if self.density_levels == 1 {
            return 50.0;
        }
        100.0 * level as f64 / (self.density_levels - 1) as f64
    }

    pub fn split_of(&self, level: usize) -> Split {
        if level % self.eval_every == 0 {
            Split::Eval
        } else {
            Split::Train
        }
    }

    /// Every episode in generation order, with its split.
    pub fn episodes(&self) -> Result<Vec<(EpisodeSpec, Split)>, DataError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.episode_count());
        for &soil_type in &self.soil_types {
            for level in 0..self.density_levels {
                for _ in 0..self.commands_per_level {
                    let [v0, v1] = self.v_target_range_m_per_s;
                    let [d0, d1] = self.d_target_range_m;
                    let v_target = if v1 > v0 { rng.random_range(v0..v1) } else { v0 };
                    let d_target = if d1 > d0 { rng.random_range(d0..d1) } else { d0 };
                    let id = out.len();
                    let seed = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(id as u64 + 1);
                    let spec = EpisodeSpec { id, soil_type, relative_density: self.density(level), mode: self.mode, v_target, d_target, seed };
                    out.push((spec, self.split_of(level)));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub spec: EpisodeSpec,
    pub split: Split,
    pub file: String,
    pub steps: usize,
    pub windows: usize,
    /// Failure message; an entry with an error has no file.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub software: String,
    pub spec: DatasetSpec,
    /// Human-readable episode count breakdown.
    pub factorization: String,
    pub sim: SimConfig,
    pub episodes: Vec<EpisodeEntry>,
    pub train_windows: usize,
    pub eval_windows: usize,
    pub normalizer: Option<Normalizer>,
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(DataError::Manifest(format!("not a dataset manifest: {}", m.format)));
        }
        if m.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn window_count(&self) -> usize {
        self.train_windows + self.eval_windows
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub episode: usize,
    pub window_index: usize,
    pub soil_type: SoilType,
    pub relative_density: f64,
    pub mode: SimMode,
    pub split: Split,
    pub window: ObservationWindow,
    pub known: KnownParams,
    /// Measured force at the last step, N.
    pub force: [f64; 2],
    /// Simulator values of the unknowns at the last step; Δd is zero.
    pub truth: EstimatedParams,
}

impl TrainingExample for SequenceSample {
    fn window(&self) -> &ObservationWindow {
        &self.window
    }

    fn known(&self) -> &KnownParams {
        &self.known
    }

    fn force(&self) -> [f64; 2] {
        self.force
    }
}

pub fn known_params(row: &StepRow) -> KnownParams {
    KnownParams { c_a: row.c_a, gamma: row.gamma, rho: row.rho, alpha: row.alpha, w: row.w, d: row.d, q: row.q, v: [row.v_x, row.v_z] }
}

pub fn truth_params(row: &StepRow) -> EstimatedParams {
    EstimatedParams { phi: row.phi, c: row.c, delta: row.delta, beta: row.beta, delta_d: 0.0 }
}

/// Cuts an episode into non-overlapping windows; window `i` covers rows
/// `[T·i, T·(i+1))` and takes its labels from its last row.
pub fn window_episode(ep: &EpisodeRecord, split: Split, window_len: usize) -> Result<Vec<SequenceSample>, DataError> {
    let n = ep.rows.len();
    if window_len == 0 || n == 0 || n % window_len != 0 {
        return Err(DataError::ShortEpisode { id: ep.meta.spec.id, rows: n, window: window_len });
    }
    Ok(ep
        .rows
        .chunks(window_len)
        .enumerate()
        .map(|(i, rows)| {
            let last = rows[rows.len() - 1];
            SequenceSample {
                episode: ep.meta.spec.id,
                window_index: i,
                soil_type: ep.meta.spec.soil_type,
                relative_density: ep.meta.spec.relative_density,
                mode: ep.meta.spec.mode,
                split,
                window: ObservationWindow { rows: rows.iter().map(StepRow::obs).collect(), t_end: last.t },
                known: known_params(&last),
                force: last.force(),
                truth: truth_params(&last),
            }
        })
        .collect())
}

pub fn window_episodes(episodes: &[(EpisodeRecord, Split)], window_len: usize) -> Result<Vec<SequenceSample>, DataError> {
    let mut out = Vec::new();
    for (ep, split) in episodes {
        out.extend(window_episode(ep, *split, window_len)?);
    }
    Ok(out)
}

/// Observation statistics and force scale of the training samples only.
pub fn compute_normalizer<'a>(train: impl IntoIterator<Item = &'a SequenceSample>) -> Result<Normalizer, DataError> {
    let mut n = 0usize;
    let mut sum = [0.0; OBS_DIM];
    let mut force = 0.0;
    let mut windows = 0usize;
    let samples: Vec<&SequenceSample> = train.into_iter().filter(|s| s.split == Split::Train).collect();
    for s in &samples {
        for r in &s.window.rows {
            for (a, x) in sum.iter_mut().zip(r) {
                *a += x;
            }
            n += 1;
        }
        force += s.force[0].hypot(s.force[1]);
        windows += 1;
    }
    if n == 0 {
        return Err(DataError::EmptySplit);
    }
    let mean = sum.map(|s| s / n as f64);
    let mut var = [0.0; OBS_DIM];
    for s in &samples {
        for r in &s.window.rows {
            for i in 0..OBS_DIM {
                let e = r[i] - mean[i];
                var[i] += e * e;
            }
        }
    }
    let std = var.map(|v| (v / n as f64).sqrt());
    for (i, &s) in std.iter().enumerate() {
        if !(s >= MIN_STD) {
            return Err(DataError::DegenerateChannel { channel: crate::simulator::OBS_NAMES[i], std: s });
        }
    }
    let scale = force / windows as f64;
    if !(scale > 0.0) {
        return Err(DataError::ZeroForce);
    }
    Ok(Normalizer::new(mean, std, scale))
}

fn episode_file(id: usize) -> String {
    format!("episodes/ep{id:04}.csv")
}

/// Simulates every episode of `spec` in parallel. Results keep the
/// generation order regardless of scheduling.
pub fn simulate_dataset(spec: &DatasetSpec, sim: &SimConfig) -> Result<Vec<(EpisodeSpec, Split, Result<EpisodeRecord, SimError>)>, DataError> {
    let eps = spec.episodes()?;
    Ok(eps.into_par_iter().map(|(e, s)| (e, s, run_episode(sim, &e))).collect())
}

/// Simulates, writes episode tables and the manifest into `out`, and
/// returns the manifest. Any failed episode is recorded and then reported
/// as an error.
pub fn generate_dataset(spec: &DatasetSpec, sim: &SimConfig, out: &Path) -> Result<DatasetManifest, DataError> {
    std::fs::create_dir_all(out.join("episodes"))?;
    let results = simulate_dataset(spec, sim)?;
    let mut entries = Vec::with_capacity(results.len());
    let mut train = Vec::new();
    let mut counts = [0usize; 2];
    let mut failures = Vec::new();
    for (e, split, res) in results {
        match res {
            Ok(rec) => {
                let file = episode_file(e.id);
                rec.save(&out.join(&file))?;
                let w = window_episode(&rec, split, spec.window_len)?;
                counts[(split == Split::Eval) as usize] += w.len();
                entries.push(EpisodeEntry { spec: e, split, file, steps: rec.rows.len(), windows: w.len(), error: None });
                if split == Split::Train {
                    train.extend(w);
                }
            }
            Err(err) => {
                failures.push(format!("episode {}: {err}", e.id));
                entries.push(EpisodeEntry { spec: e, split, file: String::new(), steps: 0, windows: 0, error: Some(err.to_string()) });
            }
        }
    }
    let normalizer = if failures.is_empty() { Some(compute_normalizer(&train)?) } else { None };
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        software: concat!("soil-pinn ", env!("CARGO_PKG_VERSION")).into(),
        spec: spec.clone(),
        factorization: format!(
            "{} soil types x {} density levels x {} commands = {} episodes",
            spec.soil_types.len(),
            spec.density_levels,
            spec.commands_per_level,
            spec.episode_count()
        ),
        sim: sim.clone(),
        episodes: entries,
        train_windows: counts[0],
        eval_windows: counts[1],
        normalizer,
    };
    manifest.save(out)?;
    if let Some(first) = failures.first() {
        return Err(DataError::EpisodesFailed { failed: failures.len(), total: manifest.episodes.len(), first: first.clone() });
    }
    Ok(manifest)
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub train: Vec<SequenceSample>,
    pub eval: Vec<SequenceSample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let manifest = DatasetManifest::load(dir)?;
        if let Some(e) = manifest.episodes.iter().find(|e| e.error.is_some()) {
            return Err(DataError::Manifest(format!("dataset has failed episode {}", e.spec.id)));
        }
        let loaded: Vec<Result<Vec<SequenceSample>, DataError>> = manifest
            .episodes
            .par_iter()
            .map(|e| {
                let rec = EpisodeRecord::load(&dir.join(&e.file))?;
                if rec.meta.spec != e.spec {
                    return Err(DataError::Manifest(format!("episode file {} does not match the manifest", e.file)));
                }
                window_episode(&rec, e.split, manifest.spec.window_len)
            })
            .collect();
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for (e, w) in manifest.episodes.iter().zip(loaded) {
            match e.split {
                Split::Train => train.extend(w?),
                Split::Eval => eval.extend(w?),
            }
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, train, eval })
    }

    pub fn normalizer(&self) -> Result<Normalizer, DataError> {
        match &self.manifest.normalizer {
            Some(n) => Ok(n.clone()),
            None => compute_normalizer(&self.train),
        }
    }
}
