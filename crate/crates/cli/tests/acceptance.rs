//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use edpredict::eval::{
    audit_leakage, auc, balanced_accuracy, f1, nested_cv, stratified_holdout, CVPlan, CVResult, Dataset, Sources,
};
use edpredict::explain::{aggregate_shares, explain_rows, shapley_exact, shapley_sampled, Estimator, ShareMode, EXACT_LIMIT};
use edpredict::features::{extract_features, feature_names, multi_slice_features, single_slice_features, volume_features, FeatureMode};
use edpredict::io::{ClinicalRecord, FeatureTable, OutcomeLabel};
use edpredict::model::{
    class_weights, fit, mtl_loss, sigmoid, weighted_ce, weighted_ce_grad, Architecture, Modality, ModelConfig, ModelKind, Network,
    Objective, OutputScale, Split,
};
use edpredict::phantom::{generate_patient_mask, PhantomSpec, Signal};
use edpredict::seed::rng_for;
use edpredict::Label;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn main() {
    let criteria: Vec<(&str, fn(&mut Shared) -> Outcome)> = vec![
        ("1 geometry oracle", c1_geometry),
        ("2 rotation/translation exactness", c2_invariance),
        ("3 metric oracles", c3_metrics),
        ("4 pipeline signal recovery", c4_signal),
        ("5 leakage guard", c5_leakage),
        ("6 training correctness", c6_training),
        ("7 Shapley axioms", c7_shapley),
        ("8 fusion modality shares", c8_modality),
        ("9 CLI reproducibility", c9_reproducible),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut shared))).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

/// Results reused by later criteria.
#[derive(Default)]
struct Shared {
    geometry_failures: Vec<String>,
    geometry_patients: usize,
    invariance_failures: Vec<String>,
    cv_runs: Vec<(String, CVResult, Dataset)>,
}

fn geometry_spec() -> PhantomSpec {
    PhantomSpec { n_patients: 100, dims: [512, 512, 24], seed: 11, ..Default::default() }
}

/// Criteria 1 and 2 share the 100 generated masks; each mask is dropped after use.
fn c1_geometry(shared: &mut Shared) -> Outcome {
    let spec = geometry_spec();
    let mut clock = Duration::ZERO;
    let (mut worst_width, mut worst_volume) = (0.0f64, 0.0f64);
    for i in 0..spec.n_patients {
        let start = Instant::now();
        let p = generate_patient_mask(&spec, i).map_err(|e| e.to_string())?;
        let mid = single_slice_features(&p.mask).map_err(|e| e.to_string())?;
        let vol = volume_features(&p.mask).map_err(|e| e.to_string())?;
        clock += start.elapsed();

        let t = &p.truth;
        for k in 0..12 {
            let err = (mid.medians_mm[k] - t.sector_widths_mm[k]).abs();
            worst_width = worst_width.max(err);
            if err > 0.273 {
                shared.geometry_failures.push(format!("{} sector {k}: {} vs {}", t.patient_id, mid.medians_mm[k], t.sector_widths_mm[k]));
            }
        }
        for (got, want, what) in [(vol.prostate_ml, t.prostate_ml, "prostate"), (vol.fascia_ml, t.fascia_ml, "fascia")] {
            let rel = (got - want).abs() / want;
            worst_volume = worst_volume.max(rel);
            if rel >= 0.02 {
                shared.geometry_failures.push(format!("{} {what} volume {got} vs {want}", t.patient_id));
            }
        }
        if let Err(e) = invariance(&p.mask, i) {
            shared.invariance_failures.push(format!("{}: {e}", t.patient_id));
        }
        shared.geometry_patients += 1;
    }
    ensure!(shared.geometry_failures.is_empty(), "{} mismatches, first: {}", shared.geometry_failures.len(), shared.geometry_failures[0]);
    ensure!(clock < Duration::from_secs(300), "generation and extraction took {:.1} s", clock.as_secs_f64());
    Ok(format!(
        "{} patients, max sector error {worst_width:.4} mm, max volume error {:.3}%, {:.1} s",
        shared.geometry_patients,
        100.0 * worst_volume,
        clock.as_secs_f64()
    ))
}

fn invariance(mask: &edpredict::MaskVolume, i: usize) -> Result<(), String> {
    let base = single_slice_features(mask).map_err(|e| e.to_string())?.medians_mm;
    let rot = single_slice_features(&mask.rotated_quarter_turn()).map_err(|e| e.to_string())?.medians_mm;
    for k in 0..12 {
        if rot[(k + 3) % 12] != base[k] {
            return Err(format!("rotation: sector {k} {} became {}", base[k], rot[(k + 3) % 12]));
        }
    }
    let (dx, dy) = ((i % 7) as isize * 5 - 15, (i % 5) as isize * 7 - 14);
    let moved = mask.shifted(dx, dy, Label::Background);
    let same = |m: &edpredict::MaskVolume| -> Result<(Vec<f64>, Vec<f64>), String> {
        let mut multi = single_slice_features(m).map_err(|e| e.to_string())?.medians_mm.to_vec();
        multi.extend(multi_slice_features(m).map_err(|e| e.to_string())?.values());
        let v = volume_features(m).map_err(|e| e.to_string())?;
        Ok((multi, vec![v.prostate_ml, v.fascia_ml, v.n_slices_used as f64]))
    };
    let (a, b) = (same(mask)?, same(&moved)?);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&a.0) != bits(&b.0) || bits(&a.1) != bits(&b.1) {
        return Err(format!("translation by ({dx}, {dy}) changed the features"));
    }
    Ok(())
}

fn c2_invariance(shared: &mut Shared) -> Outcome {
    ensure!(shared.geometry_patients == 100, "only {} patients were generated", shared.geometry_patients);
    ensure!(
        shared.invariance_failures.is_empty(),
        "{} patients failed, first: {}",
        shared.invariance_failures.len(),
        shared.invariance_failures[0]
    );
    Ok("100/100 patients: quarter turn shifts medians by 3 sectors, translations are bit-identical".into())
}

fn brute_auc(s: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn c3_metrics(_: &mut Shared) -> Outcome {
    let mut rng = rng_for(3, &[]);
    let mut worst = 0.0f64;
    for inst in 0..1000 {
        let n = rng.gen_range(2..=200);
        let q = rng.gen_range(0.1..0.9);
        let mut y: Vec<u8> = (0..n).map(|_| rng.gen_bool(q) as u8).collect();
        y[0] = 1;
        y[1] = 0;
        let ties = inst % 3 == 0;
        let s: Vec<f64> = (0..n).map(|_| if ties { rng.gen_range(0..6) as f64 / 5.0 } else { rng.gen::<f64>() }).collect();
        let got = auc(&s, &y).map_err(|e| e.to_string())?;
        let want = brute_auc(&s, &y);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-12, "instance {inst}: auc {got} vs brute force {want}");

        let preds: Vec<u8> = s.iter().map(|&v| u8::from(v >= 0.5)).collect();
        let count = |p: u8, l: u8| preds.iter().zip(&y).filter(|&(&a, &b)| a == p && b == l).count() as f64;
        let (tp, tn, fp, fn_) = (count(1, 1), count(0, 0), count(1, 0), count(0, 1));
        let ba_want = (tp / (tp + fn_) + tn / (tn + fp)) / 2.0;
        let f1_want = if 2.0 * tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        let ba = balanced_accuracy(&preds, &y).map_err(|e| e.to_string())?;
        let f = f1(&preds, &y).map_err(|e| e.to_string())?;
        ensure!((ba - ba_want).abs() <= 1e-12, "instance {inst}: BA {ba} vs {ba_want}");
        ensure!((f - f1_want).abs() <= 1e-12, "instance {inst}: F1 {f} vs {f1_want}");
    }
    Ok(format!("1000 instances, max |auc − brute force| = {worst:.1e}"))
}

/// Mid-slice features plus clinical records for a mask-only phantom cohort.
fn cohort(signal: Signal, n: usize, seed: u64, clinical_columns: bool) -> Result<Dataset, String> {
    let spec = PhantomSpec { n_patients: n, signal, seed, ..Default::default() };
    let mut table = FeatureTable::new(feature_names(FeatureMode::Mid));
    let mut records: Vec<ClinicalRecord> = Vec::with_capacity(n);
    let mut labels: Vec<OutcomeLabel> = Vec::with_capacity(n);
    for i in 0..n {
        let p = generate_patient_mask(&spec, i).map_err(|e| e.to_string())?;
        let row = extract_features(&p.mask, FeatureMode::Mid).map_err(|e| e.to_string())?;
        table.push(p.truth.patient_id.clone(), row).map_err(|e| e.to_string())?;
        records.push(p.clinical);
        labels.push(p.label);
    }
    let (ds, _) = Dataset::assemble(Sources {
        imaging: Some(&table),
        clinical: Some(&records),
        labels: &labels,
        clinical_columns,
        age_target: false,
    })
    .map_err(|e| e.to_string())?;
    Ok(ds)
}

fn c4_signal(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let plan = CVPlan { outer_k: 5, inner_k: 3, trials: 50, seed: 4, ..Default::default() };
    let mut aucs = BTreeMap::new();
    for (name, signal) in [("strong", Signal::Strong), ("none", Signal::None)] {
        let ds = cohort(signal, 400, 40, false)?;
        let r = nested_cv(&ds, ModelKind::Logreg, &plan).map_err(|e| e.to_string())?;
        aucs.insert(name, r.aggregate.auc);
        shared.cv_runs.push((format!("logreg/{name}"), r, ds));
    }
    let elapsed = start.elapsed();
    let (strong, none) = (aucs["strong"], aucs["none"]);
    let detail = format!(
        "strong AUC {:.3} ± {:.3}, none AUC {:.3} ± {:.3}, {:.1} s",
        strong.mean,
        strong.sd,
        none.mean,
        none.sd,
        elapsed.as_secs_f64()
    );
    ensure!(strong.mean >= 0.80, "{detail}");
    ensure!((0.40..=0.60).contains(&none.mean), "{detail}");
    ensure!(elapsed <= Duration::from_secs(900), "{detail}");
    Ok(detail)
}

fn c5_leakage(shared: &mut Shared) -> Outcome {
    // every model family, including strict-mode exclusions
    let ds = cohort(Signal::Strong, 120, 50, true)?;
    let mut mtl_ds = ds.clone();
    mtl_ds.ages = Some(vec![0.0; ds.len()]);
    for (i, age) in mtl_ds.ages.as_mut().unwrap().iter_mut().enumerate() {
        *age = 50.0 + (i % 30) as f64;
    }
    for kind in [ModelKind::LinearSvm, ModelKind::Mlp, ModelKind::Fusion, ModelKind::Mtl] {
        for strict in [false, true] {
            let plan = CVPlan { trials: 2, max_epochs: 40, patience: 10, seed: 5, strict, ..Default::default() };
            let data = if kind == ModelKind::Mtl { &mtl_ds } else { &ds };
            let r = nested_cv(data, kind, &plan).map_err(|e| format!("{kind}: {e}"))?;
            shared.cv_runs.push((format!("{kind}/strict={strict}"), r, data.clone()));
        }
    }
    let mut checked = 0;
    for (name, r, data) in &shared.cv_runs {
        audit_leakage(r, data).map_err(|e| format!("{name}: {e}"))?;
        for f in &r.folds {
            for inner in &f.inner_folds {
                ensure!(!inner.iter().any(|i| f.test.contains(i)), "{name} fold {}: test index inside an inner fold", f.fold);
            }
            ensure!(
                !f.retrain_train.iter().chain(&f.retrain_val).any(|i| f.test.contains(i)),
                "{name} fold {}: test index used in the refit",
                f.fold
            );
        }
        checked += r.folds.len();
    }
    Ok(format!("{} runs, {checked} outer folds, no overlap", shared.cv_runs.len()))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn c6_training(_: &mut Shared) -> Outcome {
    let mut worst = 0.0f64;
    let h = 1e-6;
    for seed in 0..100u64 {
        let mut rng = rng_for(6, &[seed]);
        let n = rng.gen_range(4..12);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.5) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let w = (rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));

        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let g = weighted_ce_grad(&probs, &labels, w).map_err(|e| e.to_string())?;
        for i in 0..n {
            let (mut a, mut b) = (probs.clone(), probs.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (weighted_ce(&a, &labels, w).unwrap() - weighted_ce(&b, &labels, w).unwrap()) / (2.0 * h);
            worst = worst.max(rel_err(g[i], fd));
        }

        let d_img = rng.gen_range(2..6);
        let d_clin = rng.gen_range(2..6);
        let d = d_img + d_clin;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ages: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let hidden = rng.gen_range(2..6);
        let emb = rng.gen_range(1..5);
        let fusion =
            Architecture::Fusion { imaging: (0..d_img).collect(), clinical: (d_img..d).collect(), hidden, imaging_emb: emb, clinical_emb: emb };
        let lambda = rng.gen_range(0.01..2.0);
        for (arch, with_ages) in [(fusion, false), (Architecture::Multitask { inputs: d, hidden }, true)] {
            let net = Network::new(arch).map_err(|e| e.to_string())?;
            let p: Vec<f64> = net.init_params(&mut rng).iter().map(|v| v * 2.0).collect();
            let obj = Objective { hinge: false, weights: w, lambda_reg: lambda, l2: 1e-3 };
            let ages = with_ages.then_some(ages.as_slice());
            let mut grad = vec![0.0; p.len()];
            net.loss_grad(&p, &refs, &labels, ages, &obj, &mut grad);
            for k in 0..p.len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (net.loss(&a, &refs, &labels, ages, &obj) - net.loss(&b, &refs, &labels, ages, &obj)) / (2.0 * h);
                let e = rel_err(grad[k], fd);
                worst = worst.max(e);
                ensure!(e <= 1e-4, "seed {seed}: parameter {k} analytic {} vs numeric {fd}", grad[k]);
            }
        }

        let age_pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ce = weighted_ce(&probs, &labels, w).unwrap();
        let m = mtl_loss(&probs, &age_pred, &labels, &ages, w, 0.0).map_err(|e| e.to_string())?;
        ensure!(m == ce, "seed {seed}: λ=0 multitask loss {m} differs from weighted CE {ce}");

        let (w0, w1) = class_weights(&labels).map_err(|e| e.to_string())?;
        let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
        let n0 = n as f64 - n1;
        ensure!((w0 * n0 - w1 * n1).abs() <= 1e-12 * n as f64, "seed {seed}: w0·n0 = {} but w1·n1 = {}", w0 * n0, w1 * n1);
    }
    ensure!(worst <= 1e-4, "max relative gradient error {worst:.2e}");
    Ok(format!("100 seeds, max relative gradient error {worst:.2e}"))
}

fn c7_shapley(_: &mut Shared) -> Outcome {
    let mut rng = rng_for(7, &[]);
    let (mut eff, mut lin) = (0.0f64, 0.0f64);
    for trial in 0..50 {
        let d = rng.gen_range(1..=10);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let bg: Vec<Vec<f64>> = (0..rng.gen_range(1..20)).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let linear = |z: &[f64]| b + w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>();
        let r = shapley_exact(&linear, &x, &bg, EXACT_LIMIT).map_err(|e| e.to_string())?;
        for i in 0..d {
            let b0 = bg.iter().map(|r| r[i]).sum::<f64>() / bg.len() as f64;
            let want = w[i] * (x[i] - b0);
            lin = lin.max((r.phi[i] - want).abs());
            ensure!((r.phi[i] - want).abs() <= 1e-8, "trial {trial}: φ_{i} = {} vs {want}", r.phi[i]);
        }
        let quad = |z: &[f64]| sigmoid(z.iter().enumerate().map(|(i, v)| (i as f64 - 2.0) * v * z[(i + 1) % d]).sum::<f64>() + z[0]);
        let r2 = shapley_exact(&quad, &x, &bg, EXACT_LIMIT).map_err(|e| e.to_string())?;
        for rep in [&r, &r2] {
            eff = eff.max(rep.efficiency_gap().abs());
            ensure!(rep.efficiency_gap().abs() <= 1e-6, "trial {trial}: efficiency gap {}", rep.efficiency_gap());
        }
    }

    let model = |x: &[f64]| {
        let z = 0.8 * x[0] - 0.5 * x[1] * x[2] + 0.3 * x[3].sin() + 0.2 * x[4] * x[5] - 0.4 * x[6] + 0.1 * x[7] * x[0];
        sigmoid(z)
    };
    let mut sampled_worst = 0.0f64;
    for trial in 0..3u64 {
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bg: Vec<Vec<f64>> = (0..30).map(|_| (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let exact = shapley_exact(&model, &x, &bg, EXACT_LIMIT).map_err(|e| e.to_string())?;
        let sampled = shapley_sampled(&model, &x, &bg, 20_000, &mut rng_for(70, &[trial])).map_err(|e| e.to_string())?;
        for i in 0..8 {
            sampled_worst = sampled_worst.max((exact.phi[i] - sampled.phi[i]).abs());
        }
    }
    ensure!(sampled_worst <= 0.02, "sampled estimate off by {sampled_worst:.4}");
    Ok(format!(
        "max efficiency gap {eff:.1e}, max linear error {lin:.1e}, max sampled error {sampled_worst:.4} at d=8"
    ))
}

fn imaging_share(signal: Signal, seed: u64) -> Result<(f64, f64), String> {
    let ds = cohort(signal, 400, seed, true)?;
    let (train_all, test) = stratified_holdout(&ds.labels, 0.25, seed).map_err(|e| e.to_string())?;
    let sub: Vec<u8> = train_all.iter().map(|&i| ds.labels[i]).collect();
    let (tr, va) = stratified_holdout(&sub, 0.2, seed + 1).map_err(|e| e.to_string())?;
    let pick = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&k| train_all[k]).collect() };
    let (tr, va) = (pick(&tr), pick(&va));
    let split = |idx: &[usize]| Split { rows: ds.rows(idx), labels: ds.labels_of(idx), ages: None };
    let config = ModelConfig { kind: ModelKind::Fusion, seed, ..Default::default() };
    let model = fit(&config, &ds.schema, &split(&tr), &split(&va)).map_err(|e| e.to_string())?;
    let scorer = model.scorer(OutputScale::Probability).map_err(|e| e.to_string())?;
    let probs: Vec<f64> = test.iter().map(|&i| scorer(&ds.x[i])).collect();
    let test_auc = auc(&probs, &ds.labels_of(&test)).map_err(|e| e.to_string())?;
    let background: Vec<Vec<f64>> = tr.iter().take(50).map(|&i| ds.x[i].clone()).collect();
    let rows: Vec<Vec<f64>> = test.iter().take(60).map(|&i| ds.x[i].clone()).collect();
    let reports =
        explain_rows(&scorer, &rows, &background, Estimator::Sampled { n_permutations: 200, seed }).map_err(|e| e.to_string())?;
    let partition: &[Modality] = &ds.schema.modalities;
    let shares = aggregate_shares(&reports, partition, ShareMode::Absolute).map_err(|e| e.to_string())?;
    Ok((shares.imaging.mean, test_auc))
}

fn c8_modality(_: &mut Shared) -> Outcome {
    let (img, img_auc) = imaging_share(Signal::ImagingOnly, 80)?;
    let (clin_img, clin_auc) = imaging_share(Signal::ClinicalOnly, 81)?;
    let detail = format!(
        "imaging-only signal: imaging share {img:.3} (test AUC {img_auc:.3}); clinical-only signal: clinical share {:.3} (test AUC {clin_auc:.3})",
        1.0 - clin_img
    );
    ensure!(img > 0.5, "{detail}");
    ensure!(1.0 - clin_img > 0.5, "{detail}");
    Ok(detail)
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_edpredict")).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let config = r#"{"dims": [96, 96, 24], "radius_mm": [5.0, 6.0], "width_mm": [3.0, 5.0], "center_jitter_mm": 0.5}"#;
    std::fs::write(dir.join("phantom.json"), config).map_err(|e| e.to_string())?;
    run_cli(dir, &["phantom", "--config", "phantom.json", "--n", "30", "--seed", "9", "--out", "ph"])?;
    for mode in ["mid", "multi", "volume", "all"] {
        run_cli(dir, &["features", "--masks", "ph/masks", "--mode", mode, "--out", &format!("feat_{mode}.csv")])?;
    }
    run_cli(dir, &["preprocess", "--in", "ph/volumes", "--out", "pp_volumes"])?;
    run_cli(dir, &["preprocess", "--in", "ph/masks", "--out", "pp_masks", "--mask"])?;
    let common = ["--labels", "ph/labels.csv", "--trials", "2", "--outer", "3", "--inner", "2", "--max-epochs", "30", "--seed", "2"];
    let mut args = vec!["train-eval", "--features", "feat_volume.csv", "--model", "logreg", "--out", "te_logreg"];
    args.extend(common);
    run_cli(dir, &args)?;
    let mut args = vec!["train-eval", "--features", "feat_mid.csv", "--clinical", "ph/clinical.csv", "--model", "fusion", "--out", "te_fusion"];
    args.extend(common);
    run_cli(dir, &args)?;
    run_cli(dir, &["explain", "--model", "te_logreg/model_fold0.json", "--features", "te_logreg/design.csv", "--out", "shap_exact.json"])?;
    run_cli(
        dir,
        &[
            "explain",
            "--model",
            "te_fusion/model_fold0.json",
            "--features",
            "te_fusion/design.csv",
            "--partition",
            "te_fusion/partition.json",
            "--sampled",
            "--permutations",
            "20",
            "--background",
            "10",
            "--rows",
            "5",
            "--seed",
            "3",
            "--out",
            "shap_sampled.json",
        ],
    )
}

fn files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c9_reproducible(_: &mut Shared) -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (fa, fb) = (files(a.path()), files(b.path()));
    ensure!(fa == fb, "the two runs produced different file sets");
    let mut compared = 0;
    for f in &fa {
        if f.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("manifest.json")) {
            continue;
        }
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        ensure!(x == y, "{} differs between runs", f.display());
        compared += 1;
    }
    Ok(format!("{compared} result files byte-identical across two runs of phantom, features, preprocess, train-eval and explain"))
}
