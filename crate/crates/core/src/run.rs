//! Fitted runs: fitting a model configuration to a dataset, and saving or
//! loading the result as a directory of plain files.
//!
//! Directory layout:
//!
//! ```text
//! run.toml                      manifest (dataset hash, per-chain metadata, warnings)
//! model.toml                    the model configuration used, including sampler seed
//! data/longitudinal.csv         canonical copy of the input tables
//! data/survival.csv
//! chain_<k>.csv                 draws on the natural scale
//! chain_<k>_unconstrained.csv   the same draws on the sampling scale
//! summary.csv                   posterior summary of the fixed parameters
//! diagnostics.csv               split-R̂, ESS and MCSE for every parameter
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::JointDataset;
use crate::diagnostics::{diagnose_all, ParamDiagnostics};
use crate::error::{Error, Result};
use crate::io::{self, DrawStats, SummaryRow};
use crate::modelsel::{log_marginal_joint, BridgeConfig, BridgeEstimate, BridgeSpace};
use crate::posterior::JointModel;
use crate::sampler::{run_hmc, Adaptation, PosteriorChain};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub index: usize,
    pub seed: u64,
    pub step_size: f64,
    pub mean_accept: f64,
    pub divergences: usize,
    pub warmup_divergences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub dataset_hash: String,
    pub n_subjects: usize,
    pub dimension: usize,
    #[serde(default)]
    pub standardization: Vec<Standardization>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub chain: Vec<ChainRecord>,
}

pub struct FittedRun {
    pub config: ModelConfig,
    /// The dataset as supplied, before any standardisation.
    pub data: JointDataset,
    pub model: JointModel,
    pub chains: Vec<PosteriorChain>,
    pub manifest: RunManifest,
}

/// Build the model for `config` on a copy of `data`, standardising the
/// configured columns first.
pub fn prepare_model(config: &ModelConfig, data: &JointDataset) -> Result<(JointModel, Vec<Standardization>)> {
    config.validate()?;
    let mut d = data.clone();
    let stats = d.standardize(&config.data.standardize)?;
    let standardization = config
        .data
        .standardize
        .iter()
        .zip(stats)
        .map(|(c, (mean, sd))| Standardization { column: c.clone(), mean, sd })
        .collect();
    let spec = config.to_spec(Some(&d))?;
    Ok((JointModel::new(spec, d)?, standardization))
}

fn is_random_effect(name: &str) -> bool {
    name.starts_with("re.b0[") || name.starts_with("re.b1[")
}

pub fn fit(config: &ModelConfig, data: JointDataset) -> Result<FittedRun> {
    let (model, standardization) = prepare_model(config, &data)?;
    log::info!("fitting {} parameters to {} subjects", model.dim(), model.n_subjects());
    let chains = run_hmc(&model, &config.sampler, |rng| model.priors.initial_point(rng))?;
    let mut warnings: Vec<String> =
        chains.iter().flat_map(|c| c.warnings.iter().map(move |w| format!("chain {}: {w}", c.chain))).collect();
    let manifest = RunManifest {
        format_version: FORMAT_VERSION,
        dataset_hash: io::dataset_hash(&data)?,
        n_subjects: data.len(),
        dimension: model.dim(),
        standardization,
        warnings: vec![],
        chain: chain_records(&chains),
    };
    let mut run = FittedRun { config: config.clone(), data, model, chains, manifest };
    if run.chains.iter().all(|c| c.draws.len() >= crate::diagnostics::MIN_DRAWS) {
        let names = run.model.names();
        let worst = run
            .diagnostics()?
            .iter()
            .zip(&names)
            .filter(|(d, n)| !d.degenerate && !is_random_effect(n))
            .map(|(d, _)| d.rhat)
            .fold(0.0, f64::max);
        if worst > 1.05 {
            warnings.push(format!("largest split R-hat among fixed parameters is {worst:.3}"));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    run.manifest.warnings = warnings;
    Ok(run)
}

fn chain_records(chains: &[PosteriorChain]) -> Vec<ChainRecord> {
    chains
        .iter()
        .map(|c| ChainRecord {
            index: c.chain,
            seed: c.seed,
            step_size: c.adaptation.step_size,
            mean_accept: c.mean_accept(),
            divergences: c.n_divergent(),
            warmup_divergences: c.warmup_divergences,
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::validation(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::validation(format!("cannot open {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::validation(format!("cannot write {}: {e}", path.display())))
}

pub fn write_dataset(dir: &Path, data: &JointDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::validation(format!("cannot create {}: {e}", dir.display())))?;
    io::write_longitudinal(create(&dir.join("longitudinal.csv"))?, data)?;
    io::write_survival(create(&dir.join("survival.csv"))?, data)
}

pub fn read_dataset_files(longitudinal: &Path, survival: &Path) -> Result<JointDataset> {
    io::read_dataset(open(longitudinal)?, open(survival)?)
}

impl FittedRun {
    /// Pooled draws on the natural scale, `[chain][iteration][parameter]`.
    pub fn constrained_draws(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(|u| self.model.constrain(u)).collect())
            .collect()
    }

    pub fn diagnostics(&self) -> Result<Vec<ParamDiagnostics>> {
        diagnose_all(&self.constrained_draws()?)
    }

    /// Posterior summaries of every parameter other than the random effects.
    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        let draws = self.constrained_draws()?;
        let names = self.model.names();
        Ok(names
            .iter()
            .enumerate()
            .filter(|(_, n)| !is_random_effect(n))
            .map(|(k, n)| {
                let v: Vec<f64> = draws.iter().flatten().map(|d| d[k]).collect();
                io::summarize(n, &v)
            })
            .collect())
    }

    pub fn log_marginal(&self, space: BridgeSpace, cfg: &BridgeConfig) -> Result<BridgeEstimate> {
        log_marginal_joint(&self.model, &self.chains, space, cfg)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::validation(format!("cannot create {}: {e}", dir.display())))?;
        let manifest = toml::to_string(&self.manifest).map_err(|e| Error::numeric(format!("manifest: {e}")))?;
        write_text(&dir.join("run.toml"), &manifest)?;
        write_text(&dir.join("model.toml"), &self.config.to_toml()?)?;
        write_dataset(&dir.join("data"), &self.data)?;
        let names = self.model.names();
        let natural = self.constrained_draws()?;
        for (c, nat) in self.chains.iter().zip(&natural) {
            let stats: Vec<DrawStats> = (0..c.draws.len())
                .map(|i| DrawStats { accept_stat: c.accept_stat[i], n_leapfrog: c.n_leapfrog[i], divergent: c.divergent[i] })
                .collect();
            io::write_chain(create(&dir.join(format!("chain_{}.csv", c.chain)))?, &names, nat, &stats)?;
            io::write_chain(create(&dir.join(format!("chain_{}_unconstrained.csv", c.chain)))?, &names, &c.draws, &stats)?;
        }
        io::write_summary(create(&dir.join("summary.csv"))?, &self.summary()?)?;
        if self.chains.iter().all(|c| c.draws.len() >= crate::diagnostics::MIN_DRAWS) {
            io::write_diagnostics(create(&dir.join("diagnostics.csv"))?, &names, &self.diagnostics()?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: RunManifest = crate::config::parse_toml(&read_text(&dir.join("run.toml"))?, "run manifest")?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!("unsupported run format version {}", manifest.format_version)));
        }
        let config = ModelConfig::from_toml(&read_text(&dir.join("model.toml"))?)?;
        let data = read_dataset_files(&dir.join("data/longitudinal.csv"), &dir.join("data/survival.csv"))?;
        let hash = io::dataset_hash(&data)?;
        if hash != manifest.dataset_hash {
            return Err(Error::validation(format!("{}: stored data do not match the recorded dataset hash", dir.display())));
        }
        let (model, _) = prepare_model(&config, &data)?;
        let names = model.names();
        let mut chains = Vec::with_capacity(manifest.chain.len());
        for rec in &manifest.chain {
            let (file_names, draws, stats) = io::read_chain(open(&dir.join(format!("chain_{}_unconstrained.csv", rec.index)))?)?;
            if file_names != names {
                return Err(Error::validation(format!("chain {} does not match the model parameters", rec.index)));
            }
            chains.push(PosteriorChain {
                chain: rec.index,
                seed: rec.seed,
                draws,
                accept_stat: stats.iter().map(|s| s.accept_stat).collect(),
                n_leapfrog: stats.iter().map(|s| s.n_leapfrog).collect(),
                divergent: stats.iter().map(|s| s.divergent).collect(),
                warmup_divergences: rec.warmup_divergences,
                adaptation: Adaptation { step_size: rec.step_size, inv_metric: vec![] },
                warnings: vec![],
            });
        }
        if chains.is_empty() {
            return Err(Error::validation(format!("{}: the run has no chains", dir.display())));
        }
        Ok(Self { config, data, model, chains, manifest })
    }
}

/// Truth manifest written next to a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationManifest {
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub admin_time: f64,
    pub random_censoring_rate: f64,
    /// Censoring proportion expected at `admin_time` under the generating model.
    pub expected_censoring: f64,
    pub realized_censoring: f64,
    pub dataset_hash: String,
    pub truth: std::collections::BTreeMap<String, f64>,
}

/// Simulate `n` subjects from `scenario` into `dir`: the two data tables,
/// `random_effects.csv`, `truth.toml` and the fitting configuration
/// `model.toml`.
pub fn write_simulation(dir: &Path, scenario: &crate::config::ScenarioConfig, n: usize) -> Result<SimulationManifest> {
    let sim = crate::simulate::Simulator::new(scenario)?;
    let (data, b) = sim.dataset(n)?;
    write_dataset(dir, &data)?;
    let mut re = String::from("subject_id,b0,b1\n");
    for (s, b) in data.subjects.iter().zip(&b) {
        re.push_str(&format!("{},{},{}\n", s.id, b[0], b[1]));
    }
    write_text(&dir.join("random_effects.csv"), &re)?;
    let manifest = SimulationManifest {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        n,
        admin_time: sim.admin_time,
        random_censoring_rate: sim.random_rate,
        expected_censoring: sim.expected_censoring,
        realized_censoring: data.censoring_rate(),
        dataset_hash: io::dataset_hash(&data)?,
        truth: scenario.truth.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::numeric(format!("truth manifest: {e}")))?;
    write_text(&dir.join("truth.toml"), &text)?;
    write_text(&dir.join("model.toml"), &scenario.fit_config().to_toml()?)?;
    Ok(manifest)
}
