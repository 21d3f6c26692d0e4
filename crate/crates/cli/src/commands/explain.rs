use std::collections::{BTreeMap, HashMap};

use anyhow::{anyhow, bail};
use edpredict::eval::MeanSd;
use edpredict::explain::{aggregate_shares, explain_rows, Estimator, Method, ModalityShares, ShareMode, EXACT_LIMIT};
use edpredict::io::FeatureTable;
use edpredict::model::{Modality, OutputScale, TrainedModel};
use serde::Serialize;

use super::read_config;
use crate::manifest::{sidecar, write_json, Recorder};
use crate::{usage, CliResult, ExplainArgs, OutputArg};

#[derive(Serialize)]
struct RowAttribution {
    patient_id: String,
    prediction: f64,
    phi: Vec<f64>,
    residual_redistributed: f64,
}

#[derive(Serialize)]
struct ShapFile {
    model: String,
    output: OutputScale,
    method: Method,
    feature_names: Vec<String>,
    n_background: usize,
    baseline: f64,
    rows: Vec<RowAttribution>,
    mean_abs_phi: Vec<f64>,
    efficiency_max_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    modality_shares: Option<ModalityShares>,
}

/// Model columns picked out of a feature table by name.
fn select(table: &FeatureTable, names: &[String]) -> anyhow::Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| table.column_index(n).ok_or_else(|| anyhow!("feature table lacks model column {n:?}")))
        .collect::<anyhow::Result<_>>()?;
    Ok(table.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect())
}

fn partition_for(names: &[String], map: &BTreeMap<String, Vec<String>>) -> anyhow::Result<Vec<Modality>> {
    let mut of: HashMap<&str, Modality> = HashMap::new();
    for (key, cols) in map {
        let m = match key.as_str() {
            "clinical" => Modality::Clinical,
            "imaging" => Modality::Imaging,
            other => bail!("unknown modality {other:?} in partition"),
        };
        for c in cols {
            if of.insert(c, m).is_some() {
                bail!("feature {c:?} is listed twice in the partition");
            }
        }
    }
    names
        .iter()
        .map(|n| of.get(n.as_str()).copied().ok_or_else(|| anyhow!("partition does not cover feature {n:?}")))
        .collect()
}

pub fn run(a: &ExplainArgs) -> CliResult {
    if a.sampled && a.permutations == 0 {
        return usage("--permutations must be at least 1");
    }
    let mut rec = Recorder::new("explain", Some(a.seed));
    let model = TrainedModel::load(&a.model)?;
    rec.input(&a.model)?;
    let d = model.feature_names.len();
    if d > EXACT_LIMIT && !a.sampled {
        return usage(format!(
            "model has {d} features, above the exact-enumeration limit of {EXACT_LIMIT}; rerun with --sampled"
        ));
    }
    let table = FeatureTable::read_csv(&a.features)?;
    rec.input(&a.features)?;
    let mut rows = select(&table, &model.feature_names)?;
    let mut ids = table.patient_ids.clone();
    if let Some(n) = a.rows {
        rows.truncate(n);
        ids.truncate(n);
    }
    let background = match a.background.parse::<usize>() {
        Ok(n) => select(&table, &model.feature_names)?.into_iter().take(n).collect::<Vec<_>>(),
        Err(_) => {
            let path = std::path::Path::new(&a.background);
            rec.input(path)?;
            select(&FeatureTable::read_csv(path)?, &model.feature_names)?
        }
    };
    if background.is_empty() || rows.is_empty() {
        return Err(anyhow!("need at least one background row and one row to explain").into());
    }
    let partition = match &a.partition {
        Some(p) => {
            rec.input(p)?;
            let map: BTreeMap<String, Vec<String>> = read_config(p)?;
            Some(partition_for(&model.feature_names, &map)?)
        }
        None => None,
    };
    let scale = match a.output {
        OutputArg::Probability => OutputScale::Probability,
        OutputArg::Margin => OutputScale::Margin,
    };
    let estimator = if a.sampled {
        Estimator::Sampled { n_permutations: a.permutations, seed: a.seed }
    } else {
        Estimator::Exact
    };
    rec.config(serde_json::json!({
        "model": a.model,
        "features": a.features,
        "background": a.background,
        "n_background": background.len(),
        "rows": rows.len(),
        "estimator": format!("{estimator:?}"),
        "output": scale,
        "signed_shares": a.signed_shares,
    }))?;

    let scorer = model.scorer(scale)?;
    let reports = explain_rows(&scorer, &rows, &background, estimator)?;
    let mode = if a.signed_shares { ShareMode::Signed } else { ShareMode::Absolute };
    let shares = match &partition {
        Some(p) => Some(aggregate_shares(&reports, p, mode)?),
        None => None,
    };
    let mean_abs_phi = (0..d)
        .map(|j| MeanSd::of(&reports.iter().map(|r| r.phi[j].abs()).collect::<Vec<_>>()).mean)
        .collect();
    let file = ShapFile {
        model: model.kind.to_string(),
        output: scale,
        method: reports[0].method,
        feature_names: model.feature_names.clone(),
        n_background: background.len(),
        baseline: reports[0].baseline,
        efficiency_max_gap: reports.iter().map(|r| r.efficiency_gap().abs()).fold(0.0, f64::max),
        rows: reports
            .iter()
            .zip(ids)
            .map(|(r, id)| RowAttribution {
                patient_id: id,
                prediction: r.prediction,
                phi: r.phi.clone(),
                residual_redistributed: r.residual_redistributed,
            })
            .collect(),
        mean_abs_phi,
        modality_shares: shares,
    };
    write_json(&a.out, &file)?;
    rec.artifact(&a.out);
    rec.finish(&sidecar(&a.out))?;
    Ok(())
}
