//! `kappa`: chance-corrected inter-rater agreement.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use serde::Serialize;
use serde_json::{json, Value};

use slideseg_core::metrics::{kappa_from_agreement, randolph_kappa, RaterTable};

use crate::error::{CliError, Result};
use crate::{output, Cli};

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Rating table as JSON: {"categories": q, "assignments": [[case ratings], ...]}
    /// with zero-based category ids.
    #[arg(long, conflicts_with_all = ["observed", "categories"])]
    pub table: Option<PathBuf>,

    /// Observed agreement for the closed form, in [0, 1].
    #[arg(long, requires = "categories", required_unless_present = "table")]
    pub observed: Option<f64>,

    /// Number of categories for the closed form.
    #[arg(long)]
    pub categories: Option<usize>,
}

#[derive(Deserialize)]
struct TableFile {
    categories: usize,
    assignments: Vec<Vec<usize>>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    deterministic: bool,
    table: &'a Option<PathBuf>,
    observed: Option<f64>,
    categories: Option<usize>,
}

pub fn run(cli: &Cli, args: &KappaArgs) -> Result<Value> {
    let (p_observed, kappa) = match &args.table {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let file: TableFile = serde_json::from_str(&text)?;
            let table = RaterTable::new(file.categories, file.assignments)?;
            randolph_kappa(&table)?
        }
        None => {
            let observed = args.observed.expect("clap enforces --observed");
            let categories = args.categories.expect("clap enforces --categories");
            if !(0.0..=1.0).contains(&observed) {
                return Err(CliError::Config(format!(
                    "observed agreement {observed} outside [0, 1]"
                )));
            }
            if categories < 2 {
                return Err(CliError::Config(format!(
                    "kappa needs at least 2 categories, got {categories}"
                )));
            }
            (observed, kappa_from_agreement(observed, categories))
        }
    };

    eprintln!("observed agreement {p_observed:.4}, kappa {kappa:.4}");

    let resolved = Resolved {
        seed: cli.seed,
        deterministic: cli.deterministic,
        table: &args.table,
        observed: args.observed,
        categories: args.categories,
    };

    Ok(json!({
        "p_observed": p_observed,
        "kappa": kappa,
        "config": output::config_value(&resolved)?,
    }))
}
