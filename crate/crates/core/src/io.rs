//! CSV snapshots, checkpoints and all-or-nothing output directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::energy::{EnergyReport, CSV_HEADER};
use crate::error::{Result, StefanError};
use crate::fields::{BulkField, Grid, InterfaceField};
use crate::solver::{SolverConfig, State, StepInfo};

fn parse_err(path: &Path, message: impl Into<String>) -> StefanError {
    StefanError::Parse {
        context: path.display().to_string(),
        message: message.into(),
    }
}

/// Data rows of a CSV file with the given header; `#` lines are skipped.
fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == header => {}
        other => {
            return Err(parse_err(
                path,
                format!("expected header {header:?}, found {:?}", other.unwrap_or("")),
            ))
        }
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(n, line)| {
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            match row {
                Ok(r) if r.len() == width => Ok(r),
                Ok(r) => Err(parse_err(path, format!("row {}: {} columns, expected {width}", n + 2, r.len()))),
                Err(e) => Err(parse_err(path, format!("row {}: {e}", n + 2))),
            }
        })
        .collect()
}

pub fn interface_csv(grid: &Grid, rho: &InterfaceField) -> String {
    let mut s = String::from("x,rho\n");
    for (x, r) in grid.tangential.nodes().iter().zip(rho.values()) {
        writeln!(s, "{x:.17e},{r:.17e}").unwrap();
    }
    s
}

pub fn bulk_csv(grid: &Grid, u: &BulkField) -> String {
    let mut s = String::from("x,z,u\n");
    let xs = grid.tangential.nodes();
    for (j, z) in grid.normal.nodes().iter().enumerate() {
        for (x, v) in xs.iter().zip(u.row(j)) {
            writeln!(s, "{x:.17e},{z:.17e},{v:.17e}").unwrap();
        }
    }
    s
}

pub fn read_interface_csv(path: &Path, grid: &Grid) -> Result<InterfaceField> {
    let rows = read_rows(path, "x,rho")?;
    if rows.len() != grid.n_x() {
        return Err(StefanError::GridMismatch(format!(
            "{}: {} interface values for n_x = {}",
            path.display(),
            rows.len(),
            grid.n_x()
        )));
    }
    InterfaceField::new(rows.into_iter().map(|r| r[1]).collect())
}

pub fn read_bulk_csv(path: &Path, grid: &Grid) -> Result<BulkField> {
    let rows = read_rows(path, "x,z,u")?;
    if rows.len() != grid.point_count() {
        return Err(StefanError::GridMismatch(format!(
            "{}: {} bulk values for a {}x{} grid",
            path.display(),
            rows.len(),
            grid.n_x(),
            grid.n_z()
        )));
    }
    BulkField::new(grid.n_x(), grid.n_z(), rows.into_iter().map(|r| r[2]).collect())
}

/// The report table with a commented metadata header.
pub fn reports_csv(reports: &[EnergyReport], meta: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in meta {
        writeln!(s, "# {k} = {v}").unwrap();
    }
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub t: f64,
    pub epsilon: f64,
    pub n_x: usize,
    pub n_z: usize,
    pub config_hash: String,
}

const CHECKPOINT_FILE: &str = "checkpoint.txt";

/// Writes `u.csv`, `rho.csv`, `rho_prev.csv` and `checkpoint.txt` into `dir`.
pub fn write_checkpoint(dir: &Path, grid: &Grid, state: &State, cfg: &SolverConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("u.csv"), bulk_csv(grid, &state.u))?;
    fs::write(dir.join("rho.csv"), interface_csv(grid, &state.rho))?;
    fs::write(dir.join("rho_prev.csv"), interface_csv(grid, &state.rho_prev))?;
    let meta = format!(
        "t = {:.17e}\nepsilon = {:.17e}\nn_x = {}\nn_z = {}\nconfig_hash = {}\n",
        state.t,
        cfg.epsilon,
        cfg.n_x,
        cfg.n_z,
        cfg.hash()
    );
    fs::write(dir.join(CHECKPOINT_FILE), meta)?;
    Ok(())
}

pub fn read_checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path)?;
    let get = |key: &str| -> Result<String> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_string())
            .ok_or_else(|| parse_err(&path, format!("missing key {key}")))
    };
    let num = |v: String| v.parse::<f64>().map_err(|e| parse_err(&path, e.to_string()));
    let int = |v: String| v.parse::<usize>().map_err(|e| parse_err(&path, e.to_string()));
    Ok(CheckpointMeta {
        t: num(get("t")?)?,
        epsilon: num(get("epsilon")?)?,
        n_x: int(get("n_x")?)?,
        n_z: int(get("n_z")?)?,
        config_hash: get("config_hash")?,
    })
}

/// State stored by [`write_checkpoint`]; the grid must match `cfg`.
pub fn read_checkpoint(dir: &Path, cfg: &SolverConfig) -> Result<State> {
    let meta = read_checkpoint_meta(dir)?;
    if meta.n_x != cfg.n_x || meta.n_z != cfg.n_z {
        return Err(StefanError::GridMismatch(format!(
            "checkpoint grid {}x{} does not match the configured {}x{}",
            meta.n_x, meta.n_z, cfg.n_x, cfg.n_z
        )));
    }
    if meta.config_hash != cfg.hash() {
        log::warn!(
            "resuming a checkpoint written with config {} under config {}",
            meta.config_hash,
            cfg.hash()
        );
    }
    let grid = Grid::new(cfg.n_x, cfg.n_z)?;
    Ok(State {
        t: meta.t,
        u: read_bulk_csv(&dir.join("u.csv"), &grid)?,
        rho: read_interface_csv(&dir.join("rho.csv"), &grid)?,
        rho_prev: read_interface_csv(&dir.join("rho_prev.csv"), &grid)?,
        step: StepInfo::default(),
    })
}

/// Output directory built under a temporary name and renamed into place by
/// [`StagedDir::commit`]. Dropped without commit, it is removed.
#[derive(Debug)]
pub struct StagedDir {
    staging: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| StefanError::Config(format!("bad output directory {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.staging.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, contents)?;
        Ok(())
    }

    /// Replaces `target` with the staged directory.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            let old = self.staging.with_extension("old");
            fs::rename(&self.target, &old)?;
            fs::rename(&self.staging, &self.target)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&self.staging, &self.target)?;
        }
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
