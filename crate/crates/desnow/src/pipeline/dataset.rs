//! Dataset synthesis driver and the on-disk manifest tying together paired
//! clean/noisy/label files with per-scan noise levels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::geom::io::{read_label_map, read_range_image, write_label_map, write_range_image};
use crate::geom::{LabelMap, RangeImage, SensorConfig};
use crate::synth::{
    extract_noise_labels, generate_scene, generate_snow, inject_noise, noise_fraction,
    stratify_noise_level, NoiseLevel, SceneSpec, SynthConfig,
};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRecord {
    pub id: String,
    pub clean: String,
    pub noisy: String,
    pub labels: String,
    pub noise_level: NoiseLevel,
    pub noise_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sensor: SensorConfig,
    pub scans: Vec<ScanRecord>,
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| PipelineError::BadManifest(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, PipelineError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::BadManifest(e.to_string()))
}

/// One scan pulled into memory.
#[derive(Debug, Clone)]
pub struct LoadedScan {
    pub id: String,
    pub clean: RangeImage,
    pub noisy: RangeImage,
    pub labels: LabelMap,
    pub noise_level: NoiseLevel,
}

pub fn load_scan(dir: &Path, record: &ScanRecord) -> Result<LoadedScan, PipelineError> {
    let (clean, _) = read_range_image(&dir.join(&record.clean))?;
    let (noisy, _) = read_range_image(&dir.join(&record.noisy))?;
    let (labels, _) = read_label_map(&dir.join(&record.labels))?;
    Ok(LoadedScan {
        id: record.id.clone(),
        clean,
        noisy,
        labels,
        noise_level: record.noise_level,
    })
}

pub fn load_all_scans(dir: &Path, manifest: &Manifest) -> Result<Vec<LoadedScan>, PipelineError> {
    manifest.scans.iter().map(|r| load_scan(dir, r)).collect()
}

#[derive(Debug, Clone)]
pub struct DatasetParams {
    pub scenes: usize,
    pub seed: u64,
    pub scene_spec: SceneSpec,
    pub synth: SynthConfig,
}

/// Generate `scenes` paired clean/noisy/label scans under `dir` and write
/// the manifest. Fully deterministic per seed.
pub fn synthesize_dataset(
    dir: &Path,
    sensor: &SensorConfig,
    params: &DatasetParams,
) -> Result<Manifest, PipelineError> {
    use rand::{Rng, SeedableRng};
    std::fs::create_dir_all(dir)?;
    let empty_ref = RangeImage::empty(sensor.n_rows, sensor.n_cols());
    let mut scans = Vec::with_capacity(params.scenes);
    for i in 0..params.scenes {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(1_000 + i as u64);
        let scene_seed: u64 = rng.random();
        let snow_seed: u64 = rng.random();
        let (lo, hi) = params.scene_spec.snow.count_range;
        let count = if hi > lo { rng.random_range(lo..=hi) } else { lo };

        let clean = generate_scene(&params.scene_spec, sensor, scene_seed)?;
        let snow = generate_snow(count, params.scene_spec.snow.radial, snow_seed, sensor);
        // captured against empty background: every snow return labels Noise
        let snow_labels = extract_noise_labels(&snow, &empty_ref, params.synth.sensing_margin)?;
        let (noisy, gt) = inject_noise(&clean, &snow, &snow_labels, &params.synth)?;

        let id = format!("scan_{i:04}");
        let record = ScanRecord {
            clean: format!("{id}_clean.rimg"),
            noisy: format!("{id}_noisy.rimg"),
            labels: format!("{id}_labels.rimg"),
            noise_level: stratify_noise_level(&gt)?,
            noise_fraction: noise_fraction(&gt)?,
            id,
        };
        write_range_image(&dir.join(&record.clean), &clean, sensor.delta_h)?;
        write_range_image(&dir.join(&record.noisy), &noisy, sensor.delta_h)?;
        write_label_map(&dir.join(&record.labels), &gt, sensor.delta_h)?;
        scans.push(record);
    }
    let manifest = Manifest { seed: params.seed, sensor: sensor.clone(), scans };
    save_manifest(dir, &manifest)?;
    Ok(manifest)
}
