//! Artifact bundle: tables, fits and a manifest with content hashes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shuttlesim_core::ToneFit;

use crate::analysis::{Fits, Outcome};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::simulate::Table;
use crate::table::write_charge_csv;

pub const DATA: &str = "data.csv";
pub const FITS: &str = "fits.json";
pub const SUMMARY: &str = "summary.csv";
pub const RATIOS: &str = "ratios.csv";
pub const THRESHOLD: &str = "threshold.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub label: String,
    pub master_seed: u64,
    /// The configuration the bundle was produced from, seed override applied.
    pub config: ExperimentConfig,
    pub schedule_digest: String,
    pub masked_points: usize,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// `<output_dir>/<experiment>/<label>/`.
pub fn bundle_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(config.experiment.name()).join(&config.label)
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `bytes` to `dir/name` and returns its manifest entry.
fn put(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry, CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
    Ok(FileEntry {
        name: name.into(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len() as u64,
    })
}

fn entry_of(dir: &Path, name: &str) -> Result<FileEntry, CliError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| io_error(&path, e))?;
    Ok(FileEntry {
        name: name.into(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-line fitted parameters as a flat table.
fn summary_csv(fits: &Fits, series: Option<&str>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["b_t"];
    header.extend(series);
    header.extend([
        "status",
        "model",
        "t2_star_ns",
        "t2_star_err_ns",
        "nu_lt_mhz",
        "nu_lt_err_mhz",
        "a_lt",
        "nu_gt_mhz",
        "nu_gt_err_mhz",
        "a_gt",
    ]);
    w.write_record(&header)?;
    for l in &fits.lines {
        let mut rec = vec![l.b_t.to_string()];
        if series.is_some() {
            rec.push(opt(l.value));
        }
        let status = match &l.outcome {
            Outcome::Ok { .. } => "ok",
            Outcome::Skipped { .. } => "skipped",
            Outcome::Failed { .. } => "failed",
        };
        rec.push(status.into());
        let cols: [Option<f64>; 8] = match l.outcome.fit() {
            Some(ToneFit::Two(f)) => {
                rec.push("two_tone".into());
                [
                    Some(f.t2_star_ns),
                    Some(f.t2_star_err_ns),
                    Some(f.nu_lt_mhz),
                    Some(f.nu_lt_err_mhz),
                    Some(f.a_lt),
                    Some(f.nu_gt_mhz),
                    Some(f.nu_gt_err_mhz),
                    Some(f.a_gt),
                ]
            }
            Some(ToneFit::SingleFallback(f)) => {
                rec.push("single_tone".into());
                [
                    Some(f.t2_star_ns),
                    Some(f.t2_star_err_ns),
                    Some(f.nu_mhz),
                    Some(f.nu_err_mhz),
                    Some(f.a),
                    None,
                    None,
                    None,
                ]
            }
            None => {
                rec.push(String::new());
                [None; 8]
            }
        };
        rec.extend(cols.into_iter().map(opt));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn ratios_csv(fits: &Fits) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &fits.ratios {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Writes the fit-derived files and returns their entries.
fn write_fit_files(dir: &Path, fits: &Fits, series: Option<&str>, spin: bool) -> Result<Vec<FileEntry>, CliError> {
    let mut json = serde_json::to_vec_pretty(fits)?;
    json.push(b'\n');
    let mut files = vec![put(dir, FITS, &json)?];
    if spin {
        files.push(put(dir, SUMMARY, &summary_csv(fits, series)?)?);
    }
    let ratios = dir.join(RATIOS);
    if fits.ratios.is_empty() {
        if ratios.exists() {
            fs::remove_file(&ratios).map_err(|e| io_error(&ratios, e))?;
        }
    } else {
        files.push(put(dir, RATIOS, &ratios_csv(fits)?)?);
    }
    Ok(files)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    put(dir, MANIFEST, &json)?;
    Ok(())
}

/// Writes a complete bundle into `dir`.
pub fn write_bundle(
    dir: &Path,
    config: &ExperimentConfig,
    table: &Table,
    threshold_json: &str,
    schedule_digest: &str,
    masked_points: usize,
    fits: &Fits,
) -> Result<Manifest, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut data = Vec::new();
    let series = match table {
        Table::Spin(t) => {
            t.write_csv(&mut data)?;
            t.layout.series
        }
        Table::Charge(rows) => {
            write_charge_csv(rows, &mut data)?;
            None
        }
    };
    let mut files = vec![put(dir, DATA, &data)?];
    files.extend(write_fit_files(dir, fits, series, matches!(table, Table::Spin(_)))?);
    let mut threshold = threshold_json.as_bytes().to_vec();
    threshold.write_all(b"\n").map_err(|e| CliError::Io(e.to_string()))?;
    files.push(put(dir, THRESHOLD, &threshold)?);
    files.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest {
        experiment: config.experiment.name().into(),
        label: config.label.clone(),
        master_seed: config.master_seed,
        config: config.clone(),
        schedule_digest: schedule_digest.into(),
        masked_points,
        files,
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Replaces the fit files of an existing bundle and refreshes its manifest.
pub fn rewrite_fits(dir: &Path, manifest: &Manifest, fits: &Fits, series: Option<&str>, spin: bool) -> Result<Manifest, CliError> {
    let mut files = write_fit_files(dir, fits, series, spin)?;
    for name in [DATA, THRESHOLD] {
        if manifest.files.iter().any(|f| f.name == name) {
            files.push(entry_of(dir, name)?);
        }
    }
    files.sort_by(|a, b| a.name.cmp(&b.name));
    let updated = Manifest {
        files,
        ..manifest.clone()
    };
    write_manifest(dir, &updated)?;
    Ok(updated)
}

/// Checks every listed file against its recorded hash.
pub fn verify(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    for f in &manifest.files {
        let actual = entry_of(dir, &f.name)?;
        if actual != *f {
            return Err(CliError::Config(format!("{} does not match its manifest hash", f.name)));
        }
    }
    Ok(())
}
