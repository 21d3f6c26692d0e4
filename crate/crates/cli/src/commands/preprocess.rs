use std::path::{Path, PathBuf};

use anyhow::Context;
use edpredict::io::mvol::Content;
use edpredict::io::{read_mvol, read_nifti_subset, write_mvol, AnyVolume};
use edpredict::preprocess::{preprocess_image, preprocess_mask, PreprocessConfig};

use super::{create_dir, read_config, stem, volume_files};
use crate::manifest::{sidecar, Recorder};
use crate::{usage, CliResult, PreprocessArgs};

fn process(input: &Path, output: &Path, cfg: &PreprocessConfig, nifti_mask: bool) -> anyhow::Result<()> {
    let v = if input.extension().and_then(|e| e.to_str()) == Some("nii") {
        read_nifti_subset(input, if nifti_mask { Content::Mask } else { Content::Image })
    } else {
        read_mvol(input)
    }
    .with_context(|| format!("{}: cannot load volume", input.display()))?;
    let ctx = || format!("{}: preprocessing failed", input.display());
    match v {
        AnyVolume::Image(img) => write_mvol(&preprocess_image(&img, cfg).with_context(ctx)?, output)?,
        AnyVolume::Mask(m) => write_mvol(&preprocess_mask(&m, cfg).with_context(ctx)?, output)?,
    }
    Ok(())
}

pub fn run(a: &PreprocessArgs) -> CliResult {
    let cfg: PreprocessConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => PreprocessConfig::default(),
    };
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    let mut rec = Recorder::new("preprocess", None);
    rec.config(&cfg)?;
    let (jobs, manifest): (Vec<(PathBuf, PathBuf)>, PathBuf) = if a.input.is_dir() {
        create_dir(&a.out)?;
        let jobs = volume_files(&a.input)?.into_iter().map(|f| {
            let o = a.out.join(format!("{}.mvol", stem(&f)));
            (f, o)
        });
        let jobs = jobs.collect();
        (jobs, a.out.join("manifest.json"))
    } else {
        if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        (vec![(a.input.clone(), a.out.clone())], sidecar(&a.out))
    };
    for (input, output) in &jobs {
        rec.input(input)?;
        process(input, output, &cfg, a.mask)?;
        rec.artifact(output);
    }
    log::info!("preprocessed {} volume(s)", jobs.len());
    rec.finish(&manifest)?;
    Ok(())
}
