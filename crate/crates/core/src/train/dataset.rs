//! `WVDS` episode datasets.
//!
//! Layout (little-endian):
//!
//! ```text
//! "WVDS"  u32 version
//! u32 episodes  u32 steps  u32 substeps  u32 d1  u32 d2  u32 design_dim
//! [u8; 32] config hash
//! u8 region  u8 actuation mode  u16 scatterer count
//! f64 action_period  f64 solver dt
//! u32 config length, config text (UTF-8, `key = value` lines)
//! episodes × {
//!     u64 seed
//!     steps × { f32 image[d1*d2]  f32 design[D]  f32 action[D]  f32 sigma[substeps] }
//! }
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::field2d::RegionSpec;
use crate::robot::{ActuationMode, DesignState, Robot, SpaceName};

pub const DATASET_MAGIC: &[u8; 4] = b"WVDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub episodes: usize,
    pub steps: usize,
    pub substeps: usize,
    pub d1: usize,
    pub d2: usize,
    pub design_dim: usize,
    pub config_hash: [u8; 32],
    pub region: RegionSpec,
    pub space: SpaceName,
    pub action_period: f64,
    pub dt: f64,
    /// Taken from the config text; not stored separately on disk.
    pub warm_up_steps: usize,
    pub config_text: String,
}

impl DatasetHeader {
    pub fn for_env(env: &EnvConfig, space: SpaceName, episodes: usize) -> Self {
        let sim = &env.sim;
        DatasetHeader {
            episodes,
            steps: sim.episode_steps,
            substeps: sim.substeps(),
            d1: sim.sensor_size,
            d2: sim.sensor_size,
            design_dim: 3 * space.count,
            config_hash: env.hash(space),
            region: sim.task_region,
            space,
            action_period: sim.action_period,
            dt: sim.time_step(),
            warm_up_steps: sim.warm_up_steps,
            config_text: env.to_text(),
        }
    }

    pub fn env(&self) -> Result<EnvConfig> {
        let env = EnvConfig::parse(&self.config_text)?;
        if env.hash(self.space) != self.config_hash {
            return Err(Error::Format("dataset config text does not match its hash".into()));
        }
        Ok(env)
    }

    pub fn robot(&self) -> Result<Robot> {
        let env = self.env()?;
        env.robot(self.space)
    }

    pub fn image_len(&self) -> usize {
        self.d1 * self.d2
    }

    fn step_floats(&self) -> usize {
        self.image_len() + 2 * self.design_dim + self.substeps
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(DATASET_MAGIC);
        for v in [DATASET_VERSION as usize, self.episodes, self.steps, self.substeps, self.d1, self.d2, self.design_dim] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&self.config_hash);
        b.push(self.region.code());
        b.push(self.space.mode.code());
        b.extend_from_slice(&(self.space.count as u16).to_le_bytes());
        b.extend_from_slice(&self.action_period.to_le_bytes());
        b.extend_from_slice(&self.dt.to_le_bytes());
        b.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config_text.as_bytes());
        b
    }

    fn decode<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not a WVDS dataset".into()));
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let mut u = [0usize; 6];
        for x in &mut u {
            *x = read_u32(r)? as usize;
        }
        let mut config_hash = [0u8; 32];
        read_exact(r, &mut config_hash)?;
        let mut small = [0u8; 4];
        read_exact(r, &mut small)?;
        let region = RegionSpec::from_code(small[0]).ok_or_else(|| Error::Format("bad region code".into()))?;
        let mode = ActuationMode::from_code(small[1]).ok_or_else(|| Error::Format("bad actuation mode".into()))?;
        let count = u16::from_le_bytes([small[2], small[3]]) as usize;
        let action_period = read_f64(r)?;
        let dt = read_f64(r)?;
        let n = read_u32(r)? as usize;
        let mut text = vec![0u8; n];
        read_exact(r, &mut text)?;
        let config_text = String::from_utf8(text).map_err(|_| Error::Format("config text is not UTF-8".into()))?;
        let mut h = DatasetHeader {
            episodes: u[0],
            steps: u[1],
            substeps: u[2],
            d1: u[3],
            d2: u[4],
            design_dim: u[5],
            config_hash,
            region,
            space: SpaceName { mode, count },
            action_period,
            dt,
            warm_up_steps: 0,
            config_text,
        };
        if h.design_dim != 3 * count {
            return Err(Error::Format("design dimension disagrees with scatterer count".into()));
        }
        h.warm_up_steps = h.env()?.sim.warm_up_steps;
        Ok(h)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("dataset truncated".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// One episode with per-step arrays stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub images: Vec<f32>,
    pub designs: Vec<f32>,
    pub actions: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl EpisodeRecord {
    fn empty(seed: u64) -> Self {
        EpisodeRecord { seed, images: Vec::new(), designs: Vec::new(), actions: Vec::new(), sigma: Vec::new() }
    }

    pub fn steps(&self, h: &DatasetHeader) -> usize {
        self.sigma.len() / h.substeps
    }

    pub fn image(&self, h: &DatasetHeader, i: usize) -> Vec<f64> {
        let n = h.image_len();
        self.images[i * n..(i + 1) * n].iter().map(|x| *x as f64).collect()
    }

    pub fn design(&self, h: &DatasetHeader, i: usize) -> Vec<f64> {
        let n = h.design_dim;
        self.designs[i * n..(i + 1) * n].iter().map(|x| *x as f64).collect()
    }

    pub fn action(&self, h: &DatasetHeader, i: usize) -> Vec<f64> {
        let n = h.design_dim;
        self.actions[i * n..(i + 1) * n].iter().map(|x| *x as f64).collect()
    }

    /// σ samples of action step `i`.
    pub fn sigma_step(&self, h: &DatasetHeader, i: usize) -> &[f32] {
        &self.sigma[i * h.substeps..(i + 1) * h.substeps]
    }

    fn encode_into(&self, h: &DatasetHeader, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.seed.to_le_bytes());
        let (n, d, s) = (h.image_len(), h.design_dim, h.substeps);
        for i in 0..h.steps {
            let parts: [&[f32]; 4] = [
                &self.images[i * n..(i + 1) * n],
                &self.designs[i * d..(i + 1) * d],
                &self.actions[i * d..(i + 1) * d],
                &self.sigma[i * s..(i + 1) * s],
            ];
            for p in parts {
                for x in p {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }

    fn decode<R: Read>(h: &DatasetHeader, r: &mut R) -> Result<Self> {
        let mut b = [0u8; 8];
        read_exact(r, &mut b)?;
        let mut rec = EpisodeRecord::empty(u64::from_le_bytes(b));
        let mut buf = vec![0u8; 4 * h.step_floats()];
        let (n, d) = (h.image_len(), h.design_dim);
        for _ in 0..h.steps {
            read_exact(r, &mut buf)?;
            let mut it = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
            rec.images.extend(it.by_ref().take(n));
            rec.designs.extend(it.by_ref().take(d));
            rec.actions.extend(it.by_ref().take(d));
            rec.sigma.extend(it);
        }
        Ok(rec)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.encode();
        for e in &self.episodes {
            e.encode_into(&self.header, &mut out);
        }
        out
    }

    pub fn from_reader<R: Read>(r: &mut R) -> Result<Self> {
        let header = DatasetHeader::decode(r)?;
        let episodes = (0..header.episodes).map(|_| EpisodeRecord::decode(&header, r)).collect::<Result<Vec<_>>>()?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after the last episode".into()));
        }
        Ok(Dataset { header, episodes })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_reader(&mut &bytes[..])
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_reader(&mut BufReader::new(fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = DatasetWriter::create(path, &self.header)?;
        for e in &self.episodes {
            w.write_episode(e)?;
        }
        w.finish()
    }

    /// Every σ sample is finite and non-negative.
    pub fn sigma_valid(&self) -> bool {
        self.episodes.iter().flat_map(|e| &e.sigma).all(|s| s.is_finite() && *s >= 0.0)
    }

    pub fn max_sigma(&self) -> f64 {
        self.episodes.iter().flat_map(|e| &e.sigma).fold(0.0f64, |m, s| m.max(*s as f64))
    }

    /// Keep only the listed episodes (in the given order).
    pub fn subset(&self, episodes: &[usize]) -> Dataset {
        let mut header = self.header.clone();
        header.episodes = episodes.len();
        Dataset { header, episodes: episodes.iter().map(|i| self.episodes[*i].clone()).collect() }
    }
}

/// Streams episodes to disk as they are produced; the file appears under
/// its final name only after [`finish`](DatasetWriter::finish).
pub struct DatasetWriter {
    header: DatasetHeader,
    out: BufWriter<fs::File>,
    tmp: std::path::PathBuf,
    path: std::path::PathBuf,
    written: usize,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: &DatasetHeader) -> Result<Self> {
        let tmp = path.with_extension("partial");
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        out.write_all(&header.encode())?;
        Ok(DatasetWriter { header: header.clone(), out, tmp, path: path.to_path_buf(), written: 0 })
    }

    pub fn write_episode(&mut self, e: &EpisodeRecord) -> Result<()> {
        if e.sigma.len() != self.header.steps * self.header.substeps {
            return Err(Error::ShapeMismatch("episode length disagrees with the dataset header".into()));
        }
        let mut buf = Vec::new();
        e.encode_into(&self.header, &mut buf);
        self.out.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.episodes {
            return Err(Error::Format(format!(
                "wrote {} of {} announced episodes",
                self.written, self.header.episodes
            )));
        }
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        drop(self.out);
        fs::rename(&self.tmp, &self.path)?;
        Ok(())
    }
}

/// Independent per-episode seed derived from a run seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One episode under the uniformly random policy.
pub fn random_episode(env: &EnvConfig, robot: &Robot, seed: u64) -> Result<EpisodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d0 = robot.sample_design(&mut rng)?;
    record_episode(env, robot, &d0, seed, |_, _, _| Ok(robot.random_action(&mut rng).rates))
}

/// Run an episode from `d0`, asking `policy(step, image, design)` for each action.
pub fn record_episode<P>(env: &EnvConfig, robot: &Robot, d0: &DesignState, seed: u64, mut policy: P) -> Result<EpisodeRecord>
where
    P: FnMut(usize, &[f64], &DesignState) -> Result<Vec<f64>>,
{
    let sim = &env.sim;
    let mut e = Environment::new(sim, robot.clone(), d0)?;
    let mut rec = EpisodeRecord::empty(seed);
    for i in 0..sim.episode_steps {
        let image = e.observe().data.clone();
        let design = e.design().clone();
        let action = policy(i, &image, &design)?;
        let spec = crate::robot::ActionSpec { rates: action };
        let out = e.step(&spec)?;
        rec.images.extend(image.iter().map(|x| *x as f32));
        rec.designs.extend(design.to_flat().iter().map(|x| *x as f32));
        rec.actions.extend(spec.clamped(&robot.space).rates.iter().map(|x| *x as f32));
        rec.sigma.extend(out.sigma.iter().map(|x| *x as f32));
    }
    Ok(rec)
}

/// Generate `episodes` random-policy episodes and stream them to `path`.
/// Episodes are simulated in parallel but written in index order, so the
/// file depends only on the inputs and `seed`.
pub fn generate_dataset(env: &EnvConfig, space: SpaceName, episodes: usize, seed: u64, path: &Path) -> Result<DatasetHeader> {
    let header = DatasetHeader::for_env(env, space, episodes);
    let robot = env.robot(space)?;
    let mut w = DatasetWriter::create(path, &header)?;
    let chunk = rayon::current_num_threads().max(1) * 2;
    let mut start = 0;
    while start < episodes {
        let end = (start + chunk).min(episodes);
        let recs = (start..end)
            .into_par_iter()
            .map(|i| random_episode(env, &robot, derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        for r in &recs {
            w.write_episode(r)?;
        }
        start = end;
    }
    w.finish()?;
    Ok(header)
}

/// In-memory variant of [`generate_dataset`].
pub fn generate_in_memory(env: &EnvConfig, space: SpaceName, episodes: usize, seed: u64) -> Result<Dataset> {
    let header = DatasetHeader::for_env(env, space, episodes);
    let robot = env.robot(space)?;
    let recs = (0..episodes)
        .into_par_iter()
        .map(|i| random_episode(env, &robot, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { header, episodes: recs })
}
