//! Episode tables.
//!
//! An episode file starts with one comment line
//! `# soil-pinn-episode v1 <json meta>` followed by a comma-separated table
//! with a header row and one row per control step. Angles are in radians,
//! forces in N, lengths in m.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{SimError, SimMode};
use crate::simulator::soil::{SoilConfig, SoilType};

pub const EPISODE_FORMAT: &str = "soil-pinn-episode";
pub const EPISODE_VERSION: u32 = 1;

/// Number of observation channels.
pub const OBS_DIM: usize = 9;

pub const OBS_NAMES: [&str; OBS_DIM] = ["p_x_b", "p_z_b", "p_z_c", "v_x_c", "v_z_b", "v_z_c", "u_zr", "u_za", "u_x"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: usize,
    pub soil_type: SoilType,
    pub relative_density: f64,
    pub mode: SimMode,
    /// Commanded forward velocity, m/s.
    pub v_target: f64,
    /// Commanded depth of cut, m.
    pub d_target: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub spec: EpisodeSpec,
    pub soil: SoilConfig,
    pub steps: usize,
    pub control_hz: f64,
    /// Upper clamp of the controller's depth offset, m.
    pub offset_limit: f64,
    /// Velocity error below which the controller lowers the blade, m/s.
    pub e_vmin: f64,
}

/// One control step. Ground-truth columns describe the wedge the simulator
/// used to decide shearing during that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub t: f64,
    pub p_x_b: f64,
    pub p_z_b: f64,
    pub p_z_c: f64,
    pub v_x_c: f64,
    pub v_z_b: f64,
    pub v_z_c: f64,
    pub u_zr: f64,
    pub u_za: f64,
    pub u_x: f64,
    pub f_x: f64,
    pub f_z: f64,
    pub phi: f64,
    pub c: f64,
    pub delta: f64,
    pub c_a: f64,
    pub gamma: f64,
    pub rho: f64,
    pub alpha: f64,
    pub w: f64,
    pub d: f64,
    pub q: f64,
    pub v_x: f64,
    pub v_z: f64,
    pub beta: f64,
    pub ctrl_offset: f64,
    pub vel_error: f64,
}

impl StepRow {
    pub fn obs(&self) -> [f64; OBS_DIM] {
        [self.p_x_b, self.p_z_b, self.p_z_c, self.v_x_c, self.v_z_b, self.v_z_c, self.u_zr, self.u_za, self.u_x]
    }

    pub fn force(&self) -> [f64; 2] {
        [self.f_x, self.f_z]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub meta: EpisodeMeta,
    pub rows: Vec<StepRow>,
}

impl EpisodeRecord {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        let meta = serde_json::to_string(&self.meta)?;
        writeln!(out, "# {EPISODE_FORMAT} v{EPISODE_VERSION} {meta}")?;
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, SimError> {
        let mut input = BufReader::new(input);
        let mut first = String::new();
        input.read_line(&mut first)?;
        let prefix = format!("# {EPISODE_FORMAT} v");
        let rest = first.trim_end().strip_prefix(&prefix).ok_or_else(|| SimError::Format("missing episode header".into()))?;
        let (version, meta) = rest.split_once(' ').ok_or_else(|| SimError::Format("malformed episode header".into()))?;
        if version != EPISODE_VERSION.to_string() {
            return Err(SimError::Format(format!("unsupported episode version {version}")));
        }
        let meta: EpisodeMeta = serde_json::from_str(meta)?;
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<Result<Vec<StepRow>, _>>()?;
        Ok(Self { meta, rows })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SimError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
