//! Offline datasets rolled out from a behavior policy.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{fmt_f64, sample_index, FeatureMap, LinearMdp, PolicyTable};
use crate::rng::{DrawPurpose, StreamFactory};

pub const CSV_HEADER: &str = "episode,h,s,a,r,s_next";

/// One logged step `(s_h, a_h, r_h, s_{h+1})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    /// 1-based step.
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: u64,
    pub instance_hash: String,
    pub behavior_hash: String,
    pub horizon: usize,
    pub num_episodes: usize,
    /// Global index of this dataset's first episode (nonzero for the second half of a split).
    pub first_episode: usize,
}

/// `K` episodes stored step-major: `step(h)[k]` is episode `k` at step `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    steps: Vec<Vec<Transition>>,
}

/// How D (value regression) and D' (variance regression) are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// First half of the episodes for D, second half for D'.
    Half,
    /// D' aliases D.
    #[default]
    None,
}

impl Dataset {
    /// Assemble from per-episode trajectories, checking shape and chaining.
    pub fn from_episodes(meta: DatasetMeta, episodes: Vec<Vec<Transition>>) -> Result<Self> {
        let horizon = meta.horizon;
        if episodes.is_empty() {
            return Err(Error::EmptyData("dataset with zero episodes".into()));
        }
        let mut steps = vec![Vec::with_capacity(episodes.len()); horizon];
        for (k, ep) in episodes.into_iter().enumerate() {
            if ep.len() != horizon {
                return Err(Error::InvalidArgument(format!(
                    "episode {k} has {} steps, expected {horizon}",
                    ep.len()
                )));
            }
            for (i, t) in ep.into_iter().enumerate() {
                if t.h != i + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "episode {k}: record {i} has step {}",
                        t.h
                    )));
                }
                steps[i].push(t);
            }
        }
        let data = Self {
            meta: DatasetMeta {
                num_episodes: steps[0].len(),
                ..meta
            },
            steps,
        };
        data.check_chaining()?;
        Ok(data)
    }

    fn check_chaining(&self) -> Result<()> {
        for h in 1..self.horizon() {
            for (k, (cur, next)) in self.steps[h - 1].iter().zip(&self.steps[h]).enumerate() {
                if cur.s_next != next.s {
                    return Err(Error::InvalidArgument(format!(
                        "episode {k} breaks chaining at step {h}: s_next = {} but next s = {}",
                        cur.s_next, next.s
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn num_episodes(&self) -> usize {
        self.steps[0].len()
    }

    /// All `K` records at step `h` (1-based), in episode order.
    pub fn step(&self, h: usize) -> &[Transition] {
        &self.steps[h - 1]
    }

    pub fn episode(&self, k: usize) -> Vec<Transition> {
        self.steps.iter().map(|step| step[k]).collect()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            meta: DatasetMeta {
                num_episodes: range.len(),
                first_episode: self.meta.first_episode + range.start,
                ..self.meta.clone()
            },
            steps: self.steps.iter().map(|s| s[range.clone()].to_vec()).collect(),
        }
    }

    /// Check state and action indices against a model.
    pub fn check_against<M: FeatureMap + ?Sized>(&self, model: &M) -> Result<()> {
        for t in self.steps.iter().flatten() {
            if t.s >= model.num_states() || t.s_next >= model.num_states() || t.a >= model.num_actions() {
                return Err(Error::InvalidArgument(format!(
                    "record at step {} references (s, a, s') = ({}, {}, {}) outside the model",
                    t.h, t.s, t.a, t.s_next
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.horizon() * self.num_episodes());
        out.push_str(CSV_HEADER);
        out.push('\n');
        for k in 0..self.num_episodes() {
            for t in self.steps.iter().map(|s| &s[k]) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.meta.first_episode + k,
                    t.h,
                    t.s,
                    t.a,
                    fmt_f64(t.r),
                    t.s_next
                );
            }
        }
        out
    }

    /// Parse the CSV body; `meta` comes from the JSON sidecar.
    pub fn from_csv(meta: DatasetMeta, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == CSV_HEADER => {}
            _ => {
                return Err(Error::Malformed {
                    line: 1,
                    message: format!("expected header `{CSV_HEADER}`"),
                })
            }
        }
        let mut episodes: Vec<Vec<Transition>> = Vec::new();
        let mut current: Option<usize> = None;
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Malformed { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", fields.len())));
            }
            let int = |j: usize| {
                fields[j]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| bad(format!("field {j}: {e}")))
            };
            let episode = int(0)?;
            let t = Transition {
                h: int(1)?,
                s: int(2)?,
                a: int(3)?,
                r: fields[4]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("reward: {e}")))?,
                s_next: int(5)?,
            };
            if current != Some(episode) {
                current = Some(episode);
                episodes.push(Vec::new());
            }
            episodes.last_mut().expect("pushed above").push(t);
        }
        let first = meta.first_episode;
        let data = Self::from_episodes(meta, episodes)?;
        Ok(Self {
            meta: DatasetMeta {
                first_episode: first,
                ..data.meta
            },
            steps: data.steps,
        })
    }

    /// Write `<path>` (CSV) and `<path>.json` (metadata sidecar).
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        Self::from_csv(meta, &std::fs::read_to_string(path)?)
    }

    /// SHA-256 over the CSV serialization and metadata.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(&self.meta).expect("meta serializes"));
        hasher.update(self.to_csv());
        hex::encode(hasher.finalize())
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

/// Short hex digest identifying a behavior policy.
pub fn policy_hash(policy: &PolicyTable) -> String {
    let json = serde_json::to_string(policy).expect("policy serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..16])
}

/// Roll out `episodes` independent trajectories of `behavior` in `mdp`.
///
/// Episode `k` only reads random streams addressed by `(seed, k, step, purpose)`,
/// so the output is identical however the episodes are scheduled.
pub fn generate(mdp: &LinearMdp, behavior: &PolicyTable, episodes: usize, seed: u64) -> Result<Dataset> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("episode count must be at least 1".into()));
    }
    behavior.check_shape(mdp.horizon(), mdp.num_states(), mdp.num_actions())?;
    let streams = StreamFactory::new(seed);
    let noise = mdp.reward_noise_std();
    let horizon = mdp.horizon();
    let trajectories: Vec<Vec<Transition>> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let k64 = k as u64;
            let u0: f64 = streams.stream(k64, 0, DrawPurpose::InitialState).gen();
            let mut s = sample_index(mdp.initial_dist(), u0);
            let mut ep = Vec::with_capacity(horizon);
            for h in 1..=horizon {
                let ua: f64 = streams.stream(k64, h, DrawPurpose::Action).gen();
                let a = behavior.sample(h, s, ua);
                let mut r = mdp.mean_reward(h, s, a);
                if noise > 0.0 {
                    let z: f64 = streams.stream(k64, h, DrawPurpose::RewardNoise).sample(StandardNormal);
                    r += noise * z;
                }
                let un: f64 = streams.stream(k64, h, DrawPurpose::NextState).gen();
                let s_next = sample_index(mdp.next_state_dist(h, s, a), un);
                ep.push(Transition { h, s, a, r, s_next });
                s = s_next;
            }
            ep
        })
        .collect();
    let meta = DatasetMeta {
        seed,
        instance_hash: mdp.content_hash(),
        behavior_hash: policy_hash(behavior),
        horizon,
        num_episodes: episodes,
        first_episode: 0,
    };
    Dataset::from_episodes(meta, trajectories)
}

/// Halve a dataset into disjoint `(D, D')` by episode index.
pub fn split(data: &Dataset) -> Result<(Dataset, Dataset)> {
    let k = data.num_episodes();
    if !k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "cannot halve an odd number of episodes ({k})"
        )));
    }
    Ok((data.slice(0..k / 2), data.slice(k / 2..k)))
}

/// Form `(D, D')` under a split mode; `SplitMode::None` aliases one allocation.
pub fn prepare(data: Dataset, mode: SplitMode) -> Result<(Arc<Dataset>, Arc<Dataset>)> {
    match mode {
        SplitMode::Half => {
            let (d, dp) = split(&data)?;
            Ok((Arc::new(d), Arc::new(dp)))
        }
        SplitMode::None => {
            let shared = Arc::new(data);
            Ok((Arc::clone(&shared), shared))
        }
    }
}
