use edpredict::phantom::{generate_cohort, PhantomSpec, Signal};

use super::{create_dir, read_config};
use crate::manifest::Recorder;
use crate::{usage, CliResult, PhantomArgs, SignalArg};

pub fn run(a: &PhantomArgs) -> CliResult {
    let mut spec: PhantomSpec = match &a.config {
        Some(p) => read_config(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(n) = a.n {
        spec.n_patients = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.signal {
        spec.signal = match s {
            SignalArg::Strong => Signal::Strong,
            SignalArg::None => Signal::None,
            SignalArg::Imaging => Signal::ImagingOnly,
            SignalArg::Clinical => Signal::ClinicalOnly,
        };
    }
    if let Some(d) = &a.dims {
        match d[..] {
            [x, y, z] => spec.dims = [x, y, z],
            _ => return usage(format!("--dims takes three values X,Y,Z, got {}", d.len())),
        }
    }
    if let Some(r) = a.missing_rate {
        spec.missing_rate = r;
    }
    if spec.n_patients == 0 {
        return usage("--n must be at least 1");
    }
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    let mut rec = Recorder::new("phantom", Some(spec.seed));
    rec.config(&spec)?;
    create_dir(&a.out)?;
    let truth = generate_cohort(&spec, &a.out)?;
    log::info!("wrote {} patients to {}", truth.patients.len(), a.out.display());
    for name in ["volumes", "masks", "clinical.csv", "labels.csv", "truth.json"] {
        rec.artifact(a.out.join(name));
    }
    rec.finish(&a.out.join("manifest.json"))?;
    Ok(())
}
