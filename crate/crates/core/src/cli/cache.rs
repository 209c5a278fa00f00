//! On-disk design cache.
//!
//! One file per design: a header line
//! `#class=<c>,instance=<i>,dim=<d>,multiplier=<m>,s=<s>,seed=<lhs seed>`
//! followed by `s` comma-separated rows of `d + 1` floats (x columns, then the
//! scaled objective value) in shortest round-trip notation. `manifest.json`
//! lists every file with its checksum and is written last, so an interrupted
//! run leaves a detectably incomplete cache.

use super::{io_err, CliError, ExperimentConfig, Result};
use crate::fnsuite::{make_instance, ClassId, InstanceSpec};
use crate::sampling::{build_design, DesignMatrix, DesignOrigin, Multiplier};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "transopt-design-cache-1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// Relative to the cache directory.
    pub file: String,
    pub class: u32,
    pub instance: u64,
    pub dim: usize,
    pub multiplier: usize,
    pub s: usize,
    pub seed: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dataset_seed: u64,
    pub entries: Vec<CacheEntry>,
}

pub fn design_path(class: ClassId, instance: u64, dim: usize, multiplier: usize) -> String {
    format!(
        "d{dim}_m{multiplier}/c{:02}_i{instance:04}.csv",
        class.get()
    )
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Serializes a design in the cache format.
pub fn write_design(des: &DesignMatrix) -> Result<String> {
    let origin = des
        .origin
        .ok_or_else(|| CliError::Runtime("design has no origin to record".into()))?;
    let mut out = format!(
        "#class={},instance={},dim={},multiplier={},s={},seed={}\n",
        des.class_label.get(),
        origin.instance_id,
        des.d,
        origin.multiplier,
        des.s,
        origin.seed
    );
    for (row, y) in des.x.chunks_exact(des.d).zip(&des.y) {
        for v in row {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{y}");
    }
    Ok(out)
}

/// Parses a design written by [`write_design`]; `y_raw` is not stored and
/// comes back as `None`.
pub fn read_design(text: &str) -> Result<DesignMatrix> {
    let bad = |m: String| CliError::Cache(m);
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| bad("missing design header".into()))?;
    let mut fields = BTreeMap::new();
    for kv in header.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field {kv:?}")))?;
        let v: u64 = v
            .parse()
            .map_err(|_| bad(format!("header field {k} is not an integer")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| bad(format!("header lacks {k}")))
    };
    let class = ClassId::new(get("class")? as u32).map_err(|e| bad(e.to_string()))?;
    let (d, s) = (get("dim")? as usize, get("s")? as usize);
    let mut x = Vec::with_capacity(s * d);
    let mut y = Vec::with_capacity(s);
    let mut rows = 0;
    for line in lines {
        let mut n = 0;
        for tok in line.split(',') {
            let v: f64 = tok
                .parse()
                .map_err(|_| bad(format!("row {}: bad number {tok:?}", rows + 1)))?;
            if n < d {
                x.push(v);
            } else {
                y.push(v);
            }
            n += 1;
        }
        if n != d + 1 {
            return Err(bad(format!(
                "row {}: {n} fields, expected {}",
                rows + 1,
                d + 1
            )));
        }
        rows += 1;
    }
    if rows != s {
        return Err(bad(format!("{rows} rows, header declares {s}")));
    }
    Ok(DesignMatrix {
        x,
        y_raw: None,
        y,
        class_label: class,
        s,
        d,
        origin: Some(DesignOrigin {
            instance_id: get("instance")?,
            multiplier: get("multiplier")? as usize,
            seed: get("seed")?,
        }),
    })
}

/// Builds every design of the configured dataset and writes the cache plus
/// its manifest. Re-running with the same config reproduces every file
/// byte for byte.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let dir = cfg.cache_dir();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    }
    let mut entries = Vec::new();
    for &dim in &cfg.dims {
        for &m in &cfg.multipliers {
            let multiplier = Multiplier::new(m).map_err(|e| CliError::Config(e.to_string()))?;
            let sub = dir.join(format!("d{dim}_m{m}"));
            fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
            for class in ClassId::all() {
                for instance in 1..=cfg.instances_per_class {
                    let spec = InstanceSpec::new(class.get(), instance, dim)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let des = build_design(&make_instance(spec), multiplier, cfg.seed)
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                    let text = write_design(&des)?;
                    let rel = design_path(class, instance, dim, m);
                    let path = dir.join(&rel);
                    fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
                    entries.push(CacheEntry {
                        file: rel,
                        class: class.get(),
                        instance,
                        dim,
                        multiplier: m,
                        s: des.s,
                        seed: des.origin.map_or(0, |o| o.seed),
                        sha256: sha256_hex(text.as_bytes()),
                    });
                }
            }
            log::info!("generated d={dim} m={m}");
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        dataset_seed: cfg.seed,
        entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Runtime(format!("serializing manifest: {e}")))?;
    fs::write(&manifest_path, json + "\n").map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest)
}

fn regenerate_hint(dir: &Path) -> String {
    format!(
        "run `transopt generate` with the same config to (re)build the cache in {}",
        dir.display()
    )
}

/// Loads every design of one `(dim, multiplier)` dataset from the cache,
/// verifying each file against the manifest.
pub fn load_dataset(
    cfg: &ExperimentConfig,
    dim: usize,
    multiplier: usize,
) -> Result<Vec<DesignMatrix>> {
    let dir = cfg.cache_dir();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|_| {
        CliError::Cache(format!(
            "no manifest at {}; {}",
            manifest_path.display(),
            regenerate_hint(&dir)
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        CliError::Cache(format!(
            "unreadable manifest: {e}; {}",
            regenerate_hint(&dir)
        ))
    })?;
    if manifest.format != FORMAT {
        return Err(CliError::Cache(format!(
            "manifest format {:?}; {}",
            manifest.format,
            regenerate_hint(&dir)
        )));
    }
    if manifest.dataset_seed != cfg.seed {
        return Err(CliError::Cache(format!(
            "cache was generated with seed {}, config asks for {}; {}",
            manifest.dataset_seed,
            cfg.seed,
            regenerate_hint(&dir)
        )));
    }
    let index: BTreeMap<&str, &CacheEntry> = manifest
        .entries
        .iter()
        .map(|e| (e.file.as_str(), e))
        .collect();
    let mut out = Vec::new();
    for class in ClassId::all() {
        for instance in 1..=cfg.instances_per_class {
            let rel = design_path(class, instance, dim, multiplier);
            let entry = index.get(rel.as_str()).ok_or_else(|| {
                CliError::Cache(format!("manifest lacks {rel}; {}", regenerate_hint(&dir)))
            })?;
            let path: PathBuf = dir.join(&rel);
            let bytes = fs::read(&path).map_err(|e| {
                CliError::Cache(format!(
                    "{}: {e}; {}",
                    path.display(),
                    regenerate_hint(&dir)
                ))
            })?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(CliError::Cache(format!(
                    "{rel} does not match its manifest checksum; {}",
                    regenerate_hint(&dir)
                )));
            }
            let text = String::from_utf8(bytes)
                .map_err(|_| CliError::Cache(format!("{rel} is not UTF-8")))?;
            let des = read_design(&text).map_err(|e| match e {
                CliError::Cache(m) => CliError::Cache(format!("{rel}: {m}")),
                other => other,
            })?;
            if des.d != dim || des.class_label != class {
                return Err(CliError::Cache(format!(
                    "{rel}: header disagrees with its path"
                )));
            }
            out.push(des);
        }
    }
    Ok(out)
}
