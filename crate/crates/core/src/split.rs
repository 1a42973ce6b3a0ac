//! Patient-stratified train/val/test split assignment.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CoreError::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

/// One slide of a dataset: file locations plus patient identity and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub feature_path: PathBuf,
    pub label_path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Assigns every slide to a split by patient, deterministically in `seed`.
///
/// Patient counts per split are `n_val = round(n * val)`,
/// `n_test = round(n * test)`, remainder to train, which reproduces the
/// published 49-patient 70:15:15 partition of 35/7/7.
pub fn assign_splits(
    mut slides: Vec<SlideRecord>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<SlideRecord>> {
    let (train, val, test) = ratios;
    let sum = train + val + test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::BadSplitRatios(sum));
    }
    if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&val) || !(0.0..=1.0).contains(&test)
    {
        return Err(CoreError::InvalidInput(format!(
            "split ratios must lie in [0, 1], got {ratios:?}"
        )));
    }

    let patients: Vec<String> = slides
        .iter()
        .map(|s| s.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = patients.len();
    if n < 3 {
        return Err(CoreError::InsufficientPatients { needed: 3, found: n });
    }

    let mut shuffled = patients;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let n_val = (n as f64 * val).round() as usize;
    let n_test = ((n as f64 * test).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;

    let split_of = |idx: usize| {
        if idx < n_train {
            Split::Train
        } else if idx < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };
    let assignment: std::collections::HashMap<&str, Split> = shuffled
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), split_of(i)))
        .collect();

    for slide in &mut slides {
        slide.split = Some(assignment[slide.patient_id.as_str()]);
    }
    Ok(slides)
}

/// Writes slide records as JSON lines.
pub fn save_slide_manifest(path: &Path, slides: &[SlideRecord]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).map_err(io_at(path))?);
    for slide in slides {
        serde_json::to_writer(&mut file, slide)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads slide records from a JSON-lines manifest.
pub fn load_slide_manifest(path: &Path) -> Result<Vec<SlideRecord>> {
    let file = BufReader::new(File::open(path).map_err(io_at(path))?);
    let mut slides = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        slides.push(serde_json::from_str(&line)?);
    }
    Ok(slides)
}
