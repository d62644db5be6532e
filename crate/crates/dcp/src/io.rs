//! JSON artifact schemas and file helpers.
//!
//! Every artifact written by the CLI is wrapped in an [`Artifact`] carrying
//! the crate version and the configuration that produced it.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::completion::CompletionConfig;
use crate::sampler::SamplerConfig;
use crate::soc::{DualSolution, InstanceLoads, PrimalSolution};
use crate::Result;

/// Envelope for CLI outputs: payload plus version and configuration echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub version: String,
    pub config: serde_json::Value,
    pub data: T,
}

impl<T> Artifact<T> {
    pub fn new(config: serde_json::Value, data: T) -> Self {
        Artifact {
            version: crate::VERSION.to_string(),
            config,
            data,
        }
    }
}

/// Independent variables together with the completion configuration they
/// were produced under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XiFile {
    pub config: CompletionConfig,
    pub xi: crate::completion::IndependentVars,
}

/// Reference optimum of one network instance, committed alongside the
/// repository: the nominal loads with primal and dual optima of the
/// relaxation, produced offline by an interior-point solve. The
/// `provenance` field records how.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub case_name: String,
    pub provenance: String,
    pub loads: InstanceLoads,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal: PrimalSolution,
    pub dual: DualSolution,
}

/// Reference objectives for the held-out split of a sampled dataset,
/// produced offline for the instances a given sampler/split seed yields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRefs {
    pub case_name: String,
    pub provenance: String,
    pub sampler: SamplerConfig,
    pub split_seed: u64,
    pub fractions: (f64, f64, f64),
    pub refs: Vec<TestRef>,
}

/// One reference: the instance's position in the full sampled list, a
/// checksum of its total active load, and the reference objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestRef {
    pub index: usize,
    pub total_p: f64,
    pub objective: f64,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Write one instance per line.
pub fn save_dataset(path: &Path, instances: &[InstanceLoads]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut file = fs::File::create(path)?;
    for inst in instances {
        serde_json::to_writer(&mut file, inst)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<InstanceLoads>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Hex SHA-256 of a file's bytes, for provenance fields.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// The committed 14-bus reference fixture.
pub fn case14_fixture() -> Result<Fixture> {
    Ok(serde_json::from_str(crate::CASE14_FIXTURE_TEXT)?)
}
