//! Report envelopes. Every subcommand answers with the same wrapper: the
//! command name, a hash of the effective configuration, the configuration
//! echo itself, and the command's payload. Reports are deterministic given
//! config and seed except for the timestamp field.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    /// SHA-256 of the serialized effective configuration.
    config_sha256: String,
    /// Wall-clock seconds since the Unix epoch. The one field exempt from
    /// the determinism contract.
    generated_at_epoch_s: u64,
    config: &'a RunConfig,
    report: T,
}

pub fn config_hash(config: &RunConfig) -> anyhow::Result<String> {
    let bytes = serde_json::to_vec(config).context("cannot serialize the config echo")?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Render the full envelope. Separated from `emit` so tests can inspect the
/// exact bytes that would land on disk.
pub fn render<T: Serialize>(
    command: &str,
    config: &RunConfig,
    payload: T,
) -> anyhow::Result<String> {
    let envelope = Envelope {
        command,
        config_sha256: config_hash(config)?,
        generated_at_epoch_s: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config,
        report: payload,
    };
    let mut json =
        serde_json::to_string_pretty(&envelope).context("cannot serialize the report")?;
    json.push('\n');
    Ok(json)
}

/// Write the report to `out`, or to standard output when no path is given.
pub fn emit<T: Serialize>(
    command: &str,
    config: &RunConfig,
    out: Option<&Path>,
    payload: T,
) -> anyhow::Result<()> {
    let json = render(command, config, payload)?;
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)
                        .with_context(|| format!("cannot create {}", dir.display()))?;
                }
            }
            std::fs::write(path, json)
                .with_context(|| format!("cannot write report {}", path.display()))?;
        }
        None => print!("{json}"),
    }
    Ok(())
}
