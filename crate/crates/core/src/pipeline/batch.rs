use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{FailurePolicy, PipelineConfig, Variant, CONFIG_SCHEMA_VERSION};
use super::{anonymize, image_seed, Adapters, ManifestRecord};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const IMAGES_DIR: &str = "images";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputItem {
    /// File name, used as the record key.
    pub id: String,
    pub path: PathBuf,
}

impl InputItem {
    fn stem(&self) -> &str {
        self.path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.id)
    }
}

/// Image files in `dir`, sorted by name. Output names derive from file
/// stems, so two inputs sharing a stem are rejected.
pub fn list_inputs(dir: &Path) -> Result<Vec<InputItem>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("input directory {} does not exist", dir.display())));
    }
    let mut items = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_image || !path.is_file() {
            continue;
        }
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("non UTF-8 file name {}", path.display())))?
            .to_owned();
        items.push(InputItem { id, path });
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let mut stems = HashSet::new();
    for item in &items {
        if !stems.insert(item.stem().to_owned()) {
            return Err(Error::Config(format!(
                "two inputs share the stem {:?}; outputs would collide",
                item.stem()
            )));
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
    /// Not attempted because an earlier failure aborted the run.
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    pub processed: usize,
    pub failed: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub variant: Variant,
    pub a_s: f64,
    pub run_seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub records: Vec<ManifestRecord>,
    pub summary: RunSummary,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTiming {
    pub input: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub manifest: RunManifest,
    pub timings: Vec<ImageTiming>,
}

impl BatchOutcome {
    /// Mean wall time over successfully processed images.
    pub fn mean_seconds(&self) -> Option<f64> {
        let ok: Vec<f64> = self
            .manifest
            .records
            .iter()
            .zip(&self.timings)
            .filter(|(r, _)| r.status == RecordStatus::Ok)
            .map(|(_, t)| t.seconds)
            .collect();
        (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn process(
    item: &InputItem,
    config: &PipelineConfig,
    config_hash: &str,
    adapters: &Adapters,
    out_dir: &Path,
) -> ManifestRecord {
    let mut record = ManifestRecord::new(item.id.clone(), config, config_hash);
    let fail = |record: &mut ManifestRecord, e: Error| {
        record.status = RecordStatus::Failed;
        record.error = Some(e.to_string());
    };
    let image = match Image::load(&item.path) {
        Ok(img) => img,
        Err(e) => {
            fail(&mut record, e);
            return record;
        }
    };
    let hash = image.content_hash();
    let seed = image_seed(config.seed, &hash);
    record.input_hash = Some(hash);
    record.seed = Some(seed);
    let result = anonymize(&image, config, adapters, seed).and_then(|a| {
        let rel = format!("{IMAGES_DIR}/{}.png", item.stem());
        write_atomic(&out_dir.join(&rel), &a.image.encode_png()?)?;
        Ok((a.record, rel))
    });
    match result {
        Ok((done, rel)) => {
            record.output = Some(rel);
            record.warnings = done.warnings;
            record.latent_shape = done.latent_shape;
            record.attribute_map_shape = done.attribute_map_shape;
            record.swaps = done.swaps;
        }
        Err(e) => fail(&mut record, e),
    }
    record
}

/// Anonymizes every input into `out_dir/images` and writes the manifest.
///
/// Per-image failures become records; the manifest always lists every input
/// exactly once, in input order.
pub fn run_batch(
    inputs: &[InputItem],
    config: &PipelineConfig,
    adapters: &Adapters,
    out_dir: &Path,
) -> Result<BatchOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir.join(IMAGES_DIR))?;
    let config_hash = config.config_hash();
    let workers = if adapters.shareable() { config.workers } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let stop = AtomicBool::new(false);

    let results: Vec<(ManifestRecord, f64)> = pool.install(|| {
        inputs
            .par_iter()
            .map(|item| {
                if stop.load(Ordering::SeqCst) {
                    let mut r = ManifestRecord::new(item.id.clone(), config, &config_hash);
                    r.status = RecordStatus::Aborted;
                    return (r, 0.0);
                }
                let started = Instant::now();
                let record = process(item, config, &config_hash, adapters, out_dir);
                if record.status == RecordStatus::Failed && config.failure_policy == FailurePolicy::Abort {
                    stop.store(true, Ordering::SeqCst);
                }
                (record, started.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut summary = RunSummary {
        total: results.len(),
        ..RunSummary::default()
    };
    let mut records = Vec::with_capacity(results.len());
    let mut timings = Vec::with_capacity(results.len());
    for (record, seconds) in results {
        match record.status {
            RecordStatus::Ok => summary.processed += 1,
            RecordStatus::Failed => summary.failed += 1,
            RecordStatus::Aborted => summary.aborted += 1,
        }
        timings.push(ImageTiming {
            input: record.input.clone(),
            seconds,
        });
        records.push(record);
    }
    let manifest = RunManifest {
        schema_version: CONFIG_SCHEMA_VERSION,
        variant: config.variant,
        a_s: config.a_s,
        run_seed: config.seed,
        config_hash,
        config: config.clone(),
        records,
        summary,
    };
    write_atomic(&out_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    write_atomic(&out_dir.join(TIMINGS_FILE), &serde_json::to_vec_pretty(&timings)?)?;
    Ok(BatchOutcome { manifest, timings })
}
