use std::collections::BTreeMap;

use edpredict::eval::{
    nested_cv, write_chosen_configs, write_metrics_json, write_roc_csv, CVPlan, Dataset, SearchSpace, Sources,
};
use edpredict::io::{read_clinical_csv, read_labels_csv, FeatureTable};
use edpredict::model::{Modality, ModelKind};

use super::{create_dir, read_config};
use crate::manifest::{write_json, Recorder};
use crate::{usage, CliResult, ModelArg, TrainEvalArgs};

pub fn run(a: &TrainEvalArgs) -> CliResult {
    if a.outer < 2 {
        return usage(format!("--outer must be at least 2, got {}", a.outer));
    }
    if a.inner < 2 {
        return usage(format!("--inner must be at least 2, got {}", a.inner));
    }
    if a.trials < 1 || a.max_epochs < 1 || a.patience < 1 {
        return usage("--trials, --max-epochs and --patience must be at least 1");
    }
    let kind = match a.model {
        ModelArg::Logreg => ModelKind::Logreg,
        ModelArg::Svm => ModelKind::LinearSvm,
        ModelArg::Mlp => ModelKind::Mlp,
        ModelArg::Fusion => ModelKind::Fusion,
        ModelArg::Mtl => ModelKind::Mtl,
    };
    match kind {
        ModelKind::Fusion | ModelKind::Mtl if a.features.is_none() || a.clinical.is_none() => {
            return usage(format!("--model {kind} needs both --features and --clinical"));
        }
        _ if a.features.is_none() && a.clinical.is_none() => return usage("give --features, --clinical or both"),
        _ => {}
    }
    let space: SearchSpace = match &a.space {
        Some(p) => read_config(p)?,
        None => SearchSpace::default(),
    };
    let plan = CVPlan {
        outer_k: a.outer,
        inner_k: a.inner,
        trials: a.trials,
        seed: a.seed,
        strict: a.strict,
        max_epochs: a.max_epochs,
        patience: a.patience,
        space,
        ..Default::default()
    };
    if let Err(e) = plan.validate() {
        return usage(e.to_string());
    }

    let mut rec = Recorder::new("train-eval", Some(a.seed));
    let labels = read_labels_csv(&a.labels)?;
    rec.input(&a.labels)?;
    let imaging = match &a.features {
        Some(p) => {
            rec.input(p)?;
            Some(FeatureTable::read_csv(p)?)
        }
        None => None,
    };
    let clinical = match &a.clinical {
        Some(p) => {
            rec.input(p)?;
            Some(read_clinical_csv(p)?)
        }
        None => None,
    };
    let mtl = kind == ModelKind::Mtl;
    let (ds, imputation) = Dataset::assemble(Sources {
        imaging: imaging.as_ref(),
        clinical: clinical.as_deref(),
        labels: &labels,
        clinical_columns: clinical.is_some() && !mtl,
        age_target: mtl,
    })?;
    let n_flagged = ds.excluded.iter().filter(|&&e| e).count();
    rec.config(serde_json::json!({
        "model": kind,
        "plan": plan,
        "features": a.features,
        "clinical": a.clinical,
        "labels": a.labels,
        "columns": ds.schema.names,
        "rows_with_missing_clinical": n_flagged,
        "imputation": imputation,
    }))?;

    let result = nested_cv(&ds, kind, &plan)?;
    create_dir(&a.out)?;

    let mut design = FeatureTable::new(ds.schema.names.clone());
    for (id, row) in ds.patient_ids.iter().zip(&ds.x) {
        design.push(id.clone(), row.clone())?;
    }
    let path = a.out.join("design.csv");
    design.write_csv(&path)?;
    rec.artifact(path);

    let mut partition: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    partition.insert("clinical", Vec::new());
    partition.insert("imaging", Vec::new());
    for (name, m) in ds.schema.names.iter().zip(&ds.schema.modalities) {
        let key = if *m == Modality::Clinical { "clinical" } else { "imaging" };
        partition.entry(key).or_default().push(name);
    }
    let path = a.out.join("partition.json");
    write_json(&path, &partition)?;
    rec.artifact(path);

    let path = a.out.join("metrics.json");
    write_metrics_json(&result, &path)?;
    rec.artifact(path);
    let path = a.out.join("chosen_configs.json");
    write_chosen_configs(&result, &path)?;
    rec.artifact(path);
    for (f, m) in result.folds.iter().zip(&result.models) {
        let path = a.out.join(format!("roc_fold{}.csv", f.fold));
        write_roc_csv(f, &path)?;
        rec.artifact(path);
        let path = a.out.join(format!("model_fold{}.json", f.fold));
        m.save(&path)?;
        rec.artifact(path);
    }
    let agg = &result.aggregate;
    log::info!(
        "{kind}: AUC {:.3} ± {:.3}, BA {:.3} ± {:.3}, F1 {:.3} ± {:.3}",
        agg.auc.mean,
        agg.auc.sd,
        agg.balanced_accuracy.mean,
        agg.balanced_accuracy.sd,
        agg.f1.mean,
        agg.f1.sd
    );
    rec.finish(&a.out.join("manifest.json"))?;
    Ok(())
}
