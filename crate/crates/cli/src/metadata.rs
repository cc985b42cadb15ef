use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::SEED_ENV;
use crate::error::{CliError, CliResult};

pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Seed {
    pub value: u64,
    /// `flag` or the environment variable name.
    pub source: String,
}

/// The seed in effect: the environment variable wins over the flag.
pub fn resolve_seed(flag: u64) -> CliResult<Seed> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(|value| Seed { value, source: SEED_ENV.to_string() })
            .map_err(|_| CliError::Input(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(Seed { value: flag, source: "flag".into() }),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

#[derive(Debug, Serialize)]
pub struct RunMetadata<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<Seed>,
    pub config: &'a C,
    pub inputs: Vec<InputDigest>,
    /// SHA-256 of the command, version, seed, config and input digests.
    pub config_hash: String,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notes: Option<serde_json::Value>,
}

impl<'a, C: Serialize> RunMetadata<'a, C> {
    pub fn new(
        command: &'static str,
        seed: Option<Seed>,
        config: &'a C,
        inputs: Vec<InputDigest>,
    ) -> CliResult<Self> {
        let version = env!("CARGO_PKG_VERSION");
        let canonical = serde_json::to_string(&(command, version, &seed, config, &inputs))?;
        Ok(Self {
            tool: "strucmp",
            version,
            command,
            seed,
            config,
            inputs,
            config_hash: sha256_hex(canonical.as_bytes()),
            outputs: Vec::new(),
            notes: None,
        })
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(METADATA_FILE), text + "\n")?;
        Ok(())
    }
}
