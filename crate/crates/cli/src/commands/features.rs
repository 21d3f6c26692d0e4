use std::path::Path;

use anyhow::{anyhow, Context};
use edpredict::features::{extract_features, feature_names, FeatureMode};
use edpredict::io::{read_mvol, read_nifti_subset, FeatureTable};
use edpredict::io::mvol::Content;
use edpredict::MaskVolume;
use rayon::prelude::*;

use super::{stem, volume_files};
use crate::manifest::{sidecar, Recorder};
use crate::{CliResult, FeaturesArgs, ModeArg};

pub fn load_mask(path: &Path) -> anyhow::Result<MaskVolume> {
    let v = if path.extension().and_then(|e| e.to_str()) == Some("nii") {
        read_nifti_subset(path, Content::Mask)
    } else {
        read_mvol(path)
    };
    Ok(v.and_then(|v| v.into_mask()).with_context(|| format!("{}: cannot load mask", path.display()))?)
}

pub fn run(a: &FeaturesArgs) -> CliResult {
    let mode = match a.mode {
        ModeArg::Mid => FeatureMode::Mid,
        ModeArg::Multi => FeatureMode::Multi,
        ModeArg::Volume => FeatureMode::Volume,
        ModeArg::All => FeatureMode::All,
    };
    let files = volume_files(&a.masks)?;
    if files.is_empty() {
        return Err(anyhow!("{}: no .mvol or .nii masks found", a.masks.display()).into());
    }
    let mut rec = Recorder::new("features", None);
    rec.config(serde_json::json!({ "masks": a.masks, "mode": format!("{mode:?}").to_lowercase() }))?;
    let rows: Vec<Vec<f64>> = files
        .par_iter()
        .map(|f| {
            let mask = load_mask(f)?;
            extract_features(&mask, mode).with_context(|| format!("{}: feature extraction failed", f.display()))
        })
        .collect::<anyhow::Result<_>>()?;
    let mut table = FeatureTable::new(feature_names(mode));
    for (f, row) in files.iter().zip(rows) {
        table.push(stem(f), row)?;
        rec.input(f)?;
    }
    table.write_csv(&a.out)?;
    log::info!("{} rows x {} columns -> {}", table.len(), table.columns.len(), a.out.display());
    rec.artifact(&a.out);
    rec.finish(&sidecar(&a.out))?;
    Ok(())
}
