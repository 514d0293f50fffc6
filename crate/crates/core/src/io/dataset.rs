use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor_file::{read_bytes, read_tensor, write_bytes, write_tensor};
use crate::error::{contract, Error, Result};
use crate::phantom::{BeamSpec, PhantomCase, PhantomGeometry, STRUCTURE_CHANNELS};

pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMeta {
    pub case_id: String,
    pub seed: u64,
    pub size: usize,
    pub beams: Vec<BeamSpec>,
    pub geometry: PhantomGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<PhantomCase>,
    pub val: Vec<PhantomCase>,
    pub test: Vec<PhantomCase>,
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes `x.ddtf`, `y.ddtf` and `meta.json` into `dir`.
pub fn write_case(dir: &Path, case: &PhantomCase) -> Result<()> {
    create_dir(dir)?;
    write_tensor(dir.join("x.ddtf"), &case.x)?;
    write_tensor(dir.join("y.ddtf"), &case.y)?;
    write_json(
        &dir.join("meta.json"),
        &CaseMeta {
            case_id: case.case_id.clone(),
            seed: case.seed,
            size: case.size,
            beams: case.beams.clone(),
            geometry: case.geometry.clone(),
        },
    )
}

pub fn read_case(dir: &Path) -> Result<PhantomCase> {
    let meta: CaseMeta = read_json(&dir.join("meta.json"))?;
    let x = read_tensor(dir.join("x.ddtf"))?;
    let y = read_tensor(dir.join("y.ddtf"))?;
    let s = meta.size;
    contract!(
        x.shape() == [STRUCTURE_CHANNELS, s, s] && y.shape() == [1, s, s],
        "{}: tensors {:?}/{:?} do not match size {s}",
        dir.display(),
        x.shape(),
        y.shape()
    );
    Ok(PhantomCase {
        case_id: meta.case_id,
        x,
        y,
        seed: meta.seed,
        size: s,
        beams: meta.beams,
        geometry: meta.geometry,
    })
}

/// One directory per case under `root`, plus `split.json`.
pub fn write_dataset(root: &Path, train: &[PhantomCase], val: &[PhantomCase], test: &[PhantomCase]) -> Result<()> {
    create_dir(root)?;
    for case in train.iter().chain(val).chain(test) {
        write_case(&root.join(&case.case_id), case)?;
    }
    let ids = |v: &[PhantomCase]| v.iter().map(|c| c.case_id.clone()).collect();
    write_json(
        &root.join(SPLIT_FILE),
        &SplitManifest {
            train: ids(train),
            val: ids(val),
            test: ids(test),
        },
    )
}

pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let split_path = root.join(SPLIT_FILE);
    contract!(
        split_path.is_file(),
        "{} is not a dataset directory (no {SPLIT_FILE})",
        root.display()
    );
    let split: SplitManifest = read_json(&split_path)?;
    let load = |ids: &[String]| -> Result<Vec<PhantomCase>> { ids.iter().map(|id| read_case(&root.join(id))).collect() };
    Ok(Dataset {
        train: load(&split.train)?,
        val: load(&split.val)?,
        test: load(&split.test)?,
    })
}

/// Case directories named in `split.json`, in split order.
pub fn case_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let split: SplitManifest = read_json(&root.join(SPLIT_FILE))?;
    Ok(split
        .train
        .iter()
        .chain(&split.val)
        .chain(&split.test)
        .map(|id| root.join(id))
        .collect())
}
