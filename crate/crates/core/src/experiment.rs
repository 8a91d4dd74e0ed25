//! Config-driven sweeps over algorithms, horizons, dataset sizes and trials.
//!
//! Every `(H, K, trial)` cell draws one dataset from a seed derived from
//! `(master_seed, H, K, trial)` and runs each configured algorithm on it, so
//! algorithms are compared on paired data. The optimal value is computed
//! once per horizon. Rows come back in cell order regardless of how many
//! worker threads ran the cells.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, prepare, SplitMode};
use crate::error::{Error, Result};
use crate::instances::{build_hard, build_synthetic, default_alpha, random_tabular, HardInstanceConfig, SyntheticConfig, TabularSpec};
use crate::mdp::{exact_value_iteration, fmt_f64, FeatureMap, LinearMdp, PolicyTable};
use crate::pvi::{solve, suboptimality_against, Algorithm, SolverParams};
use crate::rng::hash_words;

pub const RESULTS_HEADER: &str = "algorithm,H,K,trial,seed,subopt,wall_ms";
pub const SUMMARY_HEADER: &str = "algorithm,H,K,n,mean,std";

/// Rows below this are reported as a numerical failure rather than written.
pub const SUBOPT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Synthetic {
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default = "default_p")]
        p: f64,
        /// At least `max(H)` bits; each horizon uses a prefix. Defaults to `h mod 2`.
        #[serde(default)]
        alpha: Option<Vec<u8>>,
        #[serde(default)]
        reward_noise_std: f64,
    },
    Hard {
        d: usize,
        /// Defaults to the largest admissible gap `1/sqrt(3d)`.
        #[serde(default)]
        delta: Option<f64>,
        /// Seeds the draw of `u_h`, together with `H`.
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_hard_noise")]
        reward_noise_std: f64,
    },
    Tabular {
        states: usize,
        actions: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        reward_noise_std: f64,
    },
    File {
        path: PathBuf,
        /// Policy table JSON; uniform when absent.
        #[serde(default)]
        behavior: Option<PathBuf>,
    },
}

fn default_r() -> f64 {
    0.9
}

fn default_p() -> f64 {
    0.6
}

fn default_hard_noise() -> f64 {
    1.0
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec::Synthetic {
            r: default_r(),
            p: default_p(),
            alpha: None,
            reward_noise_std: 0.0,
        }
    }
}

impl InstanceSpec {
    /// Model and behavior policy at horizon `horizon`.
    pub fn build(&self, horizon: usize) -> Result<(LinearMdp, PolicyTable)> {
        match self {
            InstanceSpec::Synthetic {
                r,
                p,
                alpha,
                reward_noise_std,
            } => {
                let alpha = match alpha {
                    None => default_alpha(horizon),
                    Some(bits) if bits.len() >= horizon => bits[..horizon].to_vec(),
                    Some(bits) => {
                        return Err(Error::InvalidConfig(format!(
                            "alpha has {} bits, horizon {horizon} needs more",
                            bits.len()
                        )))
                    }
                };
                build_synthetic(&SyntheticConfig {
                    horizon,
                    r: *r,
                    p: *p,
                    alpha,
                    reward_noise_std: *reward_noise_std,
                })
            }
            InstanceSpec::Hard {
                d,
                delta,
                seed,
                reward_noise_std,
            } => {
                let delta = delta.unwrap_or_else(|| HardInstanceConfig::max_delta(*d));
                let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[*seed, horizon as u64]));
                let mut config = HardInstanceConfig::random(*d, horizon, delta, &mut rng);
                config.reward_noise_std = *reward_noise_std;
                let inst = build_hard(&config)?;
                Ok((inst.mdp, inst.behavior))
            }
            InstanceSpec::Tabular {
                states,
                actions,
                seed,
                reward_noise_std,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[*seed, horizon as u64]));
                let mut spec = TabularSpec::new(horizon, *states, *actions);
                spec.reward_noise_std = *reward_noise_std;
                let mdp = random_tabular(&spec, &mut rng)?;
                let behavior = PolicyTable::uniform(horizon, *states, *actions);
                Ok((mdp, behavior))
            }
            InstanceSpec::File { path, behavior } => {
                let mdp = LinearMdp::load(path)?;
                if mdp.horizon() != horizon {
                    return Err(Error::InvalidConfig(format!(
                        "{} has horizon {}, config asks for {horizon}",
                        path.display(),
                        mdp.horizon()
                    )));
                }
                let behavior = match behavior {
                    None => PolicyTable::uniform(horizon, mdp.num_states(), mdp.num_actions()),
                    Some(p) => {
                        let table: PolicyTable = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                        table.validate()?;
                        table.check_shape(horizon, mdp.num_states(), mdp.num_actions())?;
                        table
                    }
                };
                Ok((mdp, behavior))
            }
        }
    }
}

/// A preset name or a fully specified algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlgorithmEntry {
    Preset(String),
    Custom(Algorithm),
}

impl AlgorithmEntry {
    pub fn resolve(&self, c: f64, higher_order: bool) -> Result<Algorithm> {
        match self {
            AlgorithmEntry::Preset(name) => Algorithm::preset(name, c, higher_order).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown algorithm {name:?}; presets are {}",
                    Algorithm::PRESETS.join(", ")
                ))
            }),
            AlgorithmEntry::Custom(alg) => Ok(alg.clone()),
        }
    }
}

fn default_algorithms() -> Vec<AlgorithmEntry> {
    ["VAPVI", "PEVI", "LSVI", "VAVI"]
        .iter()
        .map(|s| AlgorithmEntry::Preset((*s).into()))
        .collect()
}

fn default_trials() -> usize {
    50
}

fn default_h_list() -> Vec<usize> {
    vec![20]
}

fn default_lambda() -> f64 {
    0.01
}

fn default_c() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// `count` log-spaced integers from `lo` to `hi`, rounded and deduplicated.
pub fn log_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if count <= 1 || lo >= hi {
        return vec![lo];
    }
    let ratio = (hi as f64 / lo as f64).ln() / (count - 1) as f64;
    let mut grid: Vec<usize> = (0..count)
        .map(|i| (lo as f64 * (ratio * i as f64).exp()).round() as usize)
        .collect();
    grid.dedup();
    grid
}

/// 20 log-spaced points from 5 to 1000.
pub fn default_k_grid() -> Vec<usize> {
    log_grid(5, 1000, 20)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub instance: InstanceSpec,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<AlgorithmEntry>,
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_h_list")]
    pub h_list: Vec<usize>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Bonus constant applied to preset algorithms.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub split_mode: SplitMode,
    /// Higher-order penalty terms for preset algorithms.
    #[serde(default = "default_true")]
    pub higher_order: bool,
    #[serde(default)]
    pub variance_offset: f64,
    /// Fill `wall_ms`; leaves the CSV nondeterministic.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        self.algorithms
            .iter()
            .map(|e| e.resolve(self.c, self.higher_order))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.algorithms.is_empty() {
            return bad("no algorithms configured".into());
        }
        if self.k_grid.is_empty() || self.h_list.is_empty() {
            return bad("K grid and horizon list must be nonempty".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if has_duplicates(&self.k_grid) || has_duplicates(&self.h_list) {
            return bad("K grid and horizon list must not repeat values".into());
        }
        if self.h_list.contains(&0) {
            return bad("horizons must be positive".into());
        }
        for &k in &self.k_grid {
            match self.split_mode {
                SplitMode::None if k == 0 => return bad("K must be positive".into()),
                SplitMode::Half if k < 2 || !k.is_multiple_of(2) => {
                    return bad(format!("K = {k} cannot be halved into two nonempty halves"))
                }
                _ => {}
            }
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be positive", self.lambda));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("C = {} must be >= 0", self.c));
        }
        if self.variance_offset != 0.0 && self.variance_offset != 1.0 {
            return bad("variance_offset must be 0 or 1".into());
        }
        let algs = self.algorithms()?;
        let mut names = HashSet::new();
        for alg in &algs {
            alg.bonus.validate()?;
            if alg.name.is_empty() || alg.name.contains([',', '"', '\n', '\r']) {
                return bad(format!("algorithm name {:?} is not CSV-safe", alg.name));
            }
            if !names.insert(alg.name.as_str()) {
                return bad(format!("algorithm {:?} listed twice", alg.name));
            }
        }
        Ok(())
    }
}

fn has_duplicates(xs: &[usize]) -> bool {
    let mut seen = HashSet::new();
    !xs.iter().all(|x| seen.insert(*x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub algorithm: String,
    pub horizon: usize,
    pub episodes: usize,
    pub trial: usize,
    pub seed: u64,
    pub subopt: f64,
    pub wall_ms: u64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.algorithm,
            self.horizon,
            self.episodes,
            self.trial,
            self.seed,
            fmt_f64(self.subopt),
            self.wall_ms
        )
    }
}

/// Per-horizon facts recorded next to the results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRecord {
    #[serde(rename = "H")]
    pub horizon: usize,
    pub instance_hash: String,
    pub v_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub pairing: String,
    pub horizons: Vec<HorizonRecord>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub metadata: RunMetadata,
}

impl RunOutput {
    pub fn to_csv(&self) -> String {
        results_csv(&self.rows)
    }

    /// Writes the CSV and a `<path>.json` metadata sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.metadata)? + "\n";
        std::fs::write(crate::data::sidecar_path(path), meta)?;
        Ok(())
    }
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv_line());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub horizon: usize,
    pub episodes: usize,
    pub trial: usize,
    pub seed: u64,
}

/// Cells in output order with their collision-free child seeds.
pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut used = HashSet::new();
    let mut out = Vec::new();
    for &horizon in &config.h_list {
        for &episodes in &config.k_grid {
            for trial in 0..config.trials {
                let mut seed = hash_words(&[config.master_seed, horizon as u64, episodes as u64, trial as u64]);
                let mut attempt = 0u64;
                while !used.insert(seed) {
                    attempt += 1;
                    seed = hash_words(&[seed, attempt]);
                }
                out.push(Cell {
                    horizon,
                    episodes,
                    trial,
                    seed,
                });
            }
        }
    }
    out
}

struct Prepared {
    mdp: LinearMdp,
    behavior: PolicyTable,
    v_star: f64,
}

/// Run the sweep on `jobs` worker threads (0 picks the rayon default).
pub fn run(config: &ExperimentConfig, jobs: usize) -> Result<RunOutput> {
    config.validate()?;
    let algorithms = config.algorithms()?;
    let mut prepared = BTreeMap::new();
    let mut horizons = Vec::new();
    for &h in &config.h_list {
        let (mdp, behavior) = config.instance.build(h)?;
        let v_star = exact_value_iteration(&mdp).v_star;
        horizons.push(HorizonRecord {
            horizon: h,
            instance_hash: mdp.content_hash(),
            v_star,
        });
        prepared.insert(h, Prepared { mdp, behavior, v_star });
    }
    let grid = cells(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let per_cell: Vec<Result<Vec<ResultRow>>> = pool.install(|| {
        grid.par_iter()
            .map(|cell| run_cell(config, &algorithms, &prepared[&cell.horizon], cell))
            .collect()
    });
    let mut rows = Vec::with_capacity(grid.len() * algorithms.len());
    for r in per_cell {
        rows.extend(r?);
    }
    Ok(RunOutput {
        rows,
        metadata: RunMetadata {
            pairing: "paired: all algorithms in a cell share one dataset".into(),
            horizons,
            config: config.clone(),
        },
    })
}

fn run_cell(
    config: &ExperimentConfig,
    algorithms: &[Algorithm],
    inst: &Prepared,
    cell: &Cell,
) -> Result<Vec<ResultRow>> {
    let data = generate(&inst.mdp, &inst.behavior, cell.episodes, cell.seed)?;
    let (d, dprime) = prepare(data, config.split_mode)?;
    let mut rows = Vec::with_capacity(algorithms.len());
    for alg in algorithms {
        let params = SolverParams {
            lambda: config.lambda,
            bonus: alg.bonus.clone(),
            weighting: alg.weighting,
            variance_offset: config.variance_offset,
        };
        let start = Instant::now();
        let solution = solve(&d, &dprime, &inst.mdp, &params)?;
        let wall_ms = if config.record_timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let subopt = suboptimality_against(&inst.mdp, inst.v_star, &solution.policy)?;
        if subopt < -SUBOPT_TOL {
            return Err(Error::Numerical(format!(
                "{} at H={} K={} trial={} beat the optimum by {}",
                alg.name, cell.horizon, cell.episodes, cell.trial, -subopt
            )));
        }
        rows.push(ResultRow {
            algorithm: alg.name.clone(),
            horizon: cell.horizon,
            episodes: cell.episodes,
            trial: cell.trial,
            seed: cell.seed,
            subopt,
            wall_ms,
        });
    }
    Ok(rows)
}

/// Parse a results CSV written by [`results_csv`].
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == RESULTS_HEADER => {}
        _ => {
            return Err(Error::Malformed {
                line: 1,
                message: format!("expected header {RESULTS_HEADER:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Malformed { line: line_no, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", fields.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {name} {s:?}"))
        }
        let parsed = (|| -> std::result::Result<ResultRow, String> {
            let subopt: f64 = num(fields[5], "subopt")?;
            if !subopt.is_finite() {
                return Err(format!("non-finite subopt {:?}", fields[5]));
            }
            Ok(ResultRow {
                algorithm: fields[0].to_string(),
                horizon: num(fields[1], "H")?,
                episodes: num(fields[2], "K")?,
                trial: num(fields[3], "trial")?,
                seed: num(fields[4], "seed")?,
                subopt,
                wall_ms: num(fields[6], "wall_ms")?,
            })
        })()
        .map_err(bad)?;
        if parsed.algorithm.is_empty() {
            return Err(bad("empty algorithm name".into()));
        }
        rows.push(parsed);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub horizon: usize,
    pub episodes: usize,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator); 0 when `n = 1`.
    pub std: f64,
}

/// Group by `(algorithm, H, K)`, sorted by that key.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(&str, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.algorithm.as_str(), r.horizon, r.episodes))
            .or_default()
            .push(r.subopt);
    }
    groups
        .into_iter()
        .map(|((alg, h, k), xs)| {
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            SummaryRow {
                algorithm: alg.to_string(),
                horizon: h,
                episodes: k,
                n,
                mean,
                std,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.algorithm,
            r.horizon,
            r.episodes,
            r.n,
            fmt_f64(r.mean),
            fmt_f64(r.std)
        ));
    }
    out
}
