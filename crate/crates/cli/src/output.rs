//! Result emission and config provenance shared by every subcommand.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::Cli;

/// Writes the result JSON to stdout or to `--out`.
pub fn emit(cli: &Cli, result: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    match &cli.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

/// Loads a subcommand config file, or the default when no path is given.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let file = File::open(path)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

/// Serializes the fully resolved config of a run into its output directory.
pub fn write_config_dir<C: Serialize>(dir: &Path, subcommand: &str, config: &C) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{subcommand}.config.json"));
    write_json(&path, config)?;
    Ok(path)
}

/// Serializes the fully resolved config next to a single-file output,
/// as `<file>.config.json`.
pub fn write_config_sidecar<C: Serialize>(output: &Path, config: &C) -> Result<PathBuf> {
    let mut name = output.as_os_str().to_os_string();
    name.push(".config.json");
    let path = PathBuf::from(name);
    write_json(&path, config)?;
    Ok(path)
}

fn write_json<C: Serialize>(path: &Path, value: &C) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Converts a config to a `Value` for embedding in the result JSON.
pub fn config_value<C: Serialize>(config: &C) -> Result<Value> {
    Ok(serde_json::to_value(config)?)
}
