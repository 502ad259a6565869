//! Episode storage and its append-only file format.
//!
//! ```text
//! header: b"LMPD" | version u32 | obs_dim u64 | action_dim u64
//! block:  byte_len u64 | seed u64 | policy u8 | n u64
//!         | n*obs_dim f64 | n*action_dim f64 | n f64
//! ```
//!
//! All integers and floats are little-endian. `byte_len` counts the bytes of
//! the block after itself, so readers can skip blocks they do not need.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rssm::SequenceBatch;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"LMPD";
pub const DATASET_VERSION: u32 = 1;

/// Which controller produced an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Random,
    /// Planner with exploration noise.
    Explore,
    /// Planner without noise.
    Evaluate,
}

impl Policy {
    fn tag(self) -> u8 {
        match self {
            Policy::Random => 0,
            Policy::Explore => 1,
            Policy::Evaluate => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Policy::Random),
            1 => Ok(Policy::Explore),
            2 => Ok(Policy::Evaluate),
            t => Err(Error::Format(format!("unknown policy tag {t}"))),
        }
    }
}

/// Aligned triples `(x_t, a_t, r_{t+1})` of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub policy: Policy,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl EpisodeRecord {
    pub fn new(seed: u64, policy: Policy) -> Self {
        Self {
            seed,
            policy,
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, observation: Vec<f64>, action: Vec<f64>, reward: f64) {
        self.observations.push(observation);
        self.actions.push(action);
        self.rewards.push(reward);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            episodes: Vec::new(),
        }
    }

    pub fn transitions(&self) -> usize {
        self.episodes.iter().map(EpisodeRecord::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions() == 0
    }

    pub fn push(&mut self, episode: EpisodeRecord) -> Result<()> {
        let shape_ok = episode.observations.len() == episode.len()
            && episode.actions.len() == episode.len()
            && episode.observations.iter().all(|o| o.len() == self.obs_dim)
            && episode.actions.iter().all(|a| a.len() == self.action_dim);
        if !shape_ok {
            return Err(Error::Shape {
                op: "dataset push",
                lhs: vec![self.obs_dim, self.action_dim],
                rhs: vec![
                    episode.observations.first().map_or(0, Vec::len),
                    episode.actions.first().map_or(0, Vec::len),
                ],
            });
        }
        self.episodes.push(episode);
        Ok(())
    }

    /// Random batch of `batch_size` segments of `seq_len` consecutive
    /// triples. The segment length shrinks to the shortest usable episode
    /// when needed; episodes shorter than two steps are never drawn.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        seq_len: usize,
        rng: &mut R,
    ) -> Result<SequenceBatch> {
        let usable: Vec<&EpisodeRecord> = self.episodes.iter().filter(|e| e.len() >= 2).collect();
        if usable.is_empty() || batch_size == 0 {
            return Err(Error::EmptyDataset);
        }
        let l = usable
            .iter()
            .map(|e| e.len())
            .min()
            .unwrap_or(0)
            .min(seq_len.max(2));
        let mut obs = vec![Vec::with_capacity(batch_size * self.obs_dim); l];
        let mut actions = vec![Vec::with_capacity(batch_size * self.action_dim); l - 1];
        let mut rewards = vec![Vec::with_capacity(batch_size); l - 1];
        for _ in 0..batch_size {
            let ep = usable[rng.gen_range(0..usable.len())];
            let start = rng.gen_range(0..=ep.len() - l);
            for t in 0..l {
                obs[t].extend_from_slice(&ep.observations[start + t]);
                if t + 1 < l {
                    actions[t].extend_from_slice(&ep.actions[start + t]);
                    rewards[t].push(ep.rewards[start + t]);
                }
            }
        }
        let to = |rows: Vec<Vec<f64>>, width: usize| -> Result<Vec<Tensor>> {
            rows.into_iter()
                .map(|d| Tensor::new(vec![batch_size, width], d))
                .collect()
        };
        Ok(SequenceBatch {
            obs: to(obs, self.obs_dim)?,
            actions: to(actions, self.action_dim)?,
            rewards: to(rewards, 1)?,
        })
    }

    /// Writes the header and every episode.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        write_header(w, self.obs_dim, self.action_dim)?;
        for e in &self.episodes {
            write_episode(w, e)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format(format!("bad dataset magic {magic:?}")));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let obs_dim = read_len(r)?;
        let action_dim = read_len(r)?;
        let mut data = Dataset::new(obs_dim, action_dim);
        loop {
            let mut len_bytes = [0u8; 8];
            match r.read(&mut len_bytes[..1])? {
                0 => break,
                _ => r.read_exact(&mut len_bytes[1..])?,
            }
            let byte_len = u64::from_le_bytes(len_bytes);
            let mut block = vec![0u8; usize::try_from(byte_len).map_err(|_| {
                Error::Format("block length overflows usize".into())
            })?];
            r.read_exact(&mut block)?;
            data.push(parse_episode(&block, obs_dim, action_dim)?)?;
        }
        Ok(data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_len(r: &mut impl Read) -> Result<usize> {
    usize::try_from(u64::from_le_bytes(read_array(r)?))
        .map_err(|_| Error::Format("length overflows usize".into()))
}

fn write_header(w: &mut impl Write, obs_dim: usize, action_dim: usize) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(obs_dim as u64).to_le_bytes())?;
    w.write_all(&(action_dim as u64).to_le_bytes())?;
    Ok(())
}

fn write_episode(w: &mut impl Write, e: &EpisodeRecord) -> Result<()> {
    let mut block = Vec::new();
    block.extend_from_slice(&e.seed.to_le_bytes());
    block.push(e.policy.tag());
    block.extend_from_slice(&(e.len() as u64).to_le_bytes());
    for v in e.observations.iter().flatten() {
        block.extend_from_slice(&v.to_le_bytes());
    }
    for v in e.actions.iter().flatten() {
        block.extend_from_slice(&v.to_le_bytes());
    }
    for v in &e.rewards {
        block.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&(block.len() as u64).to_le_bytes())?;
    w.write_all(&block)?;
    Ok(())
}

fn parse_episode(block: &[u8], obs_dim: usize, action_dim: usize) -> Result<EpisodeRecord> {
    let short = || Error::Format("truncated episode block".into());
    if block.len() < 17 {
        return Err(short());
    }
    let seed = u64::from_le_bytes(block[0..8].try_into().expect("8 bytes"));
    let policy = Policy::from_tag(block[8])?;
    let n = u64::from_le_bytes(block[9..17].try_into().expect("8 bytes")) as usize;
    let floats = n
        .checked_mul(obs_dim + action_dim + 1)
        .ok_or_else(short)?;
    if block.len() != 17 + 8 * floats {
        return Err(short());
    }
    let values: Vec<f64> = block[17..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let (obs, rest) = values.split_at(n * obs_dim);
    let (actions, rewards) = rest.split_at(n * action_dim);
    let rows = |flat: &[f64], width: usize| -> Vec<Vec<f64>> {
        (0..n).map(|t| flat[t * width..(t + 1) * width].to_vec()).collect()
    };
    Ok(EpisodeRecord {
        seed,
        policy,
        observations: rows(obs, obs_dim),
        actions: rows(actions, action_dim),
        rewards: rewards.to_vec(),
    })
}

/// Appends episodes to a dataset file, writing the header on creation.
#[derive(Debug)]
pub struct DatasetWriter {
    out: BufWriter<File>,
}

impl DatasetWriter {
    pub fn create(path: &Path, obs_dim: usize, action_dim: usize) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        write_header(&mut out, obs_dim, action_dim)?;
        out.flush()?;
        Ok(Self { out })
    }

    /// Opens an existing file for appending; its header must match.
    pub fn append(path: &Path, obs_dim: usize, action_dim: usize) -> Result<Self> {
        let existing = Dataset::read(&mut BufReader::new(File::open(path)?))?;
        if existing.obs_dim != obs_dim || existing.action_dim != action_dim {
            return Err(Error::Format(format!(
                "dataset dims ({}, {}) do not match ({obs_dim}, {action_dim})",
                existing.obs_dim, existing.action_dim
            )));
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, episode: &EpisodeRecord) -> Result<()> {
        write_episode(&mut self.out, episode)?;
        self.out.flush()?;
        Ok(())
    }
}
