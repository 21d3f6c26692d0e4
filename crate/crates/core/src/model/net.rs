//! Small fully connected networks over a flat parameter vector.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ce_on_logit, hinge_on_margin};
use super::ModelError;

/// Affine layer. Parameters at `offset`: weights row-major `[outputs][inputs]`, then biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Dense {
    pub fn n_params(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.offset..self.offset + self.outputs * self.inputs
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.offset + self.outputs * self.inputs..self.offset + self.n_params()
    }

    fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        let w = &p[self.weight_range()];
        let b = &p[self.bias_range()];
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            *out_o = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn backward(&self, p: &[f64], x: &[f64], dout: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let (wr, br) = (self.weight_range(), self.bias_range());
        {
            let gw = &mut grad[wr.clone()];
            for (o, &d) in dout.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (g, xi) in gw[o * self.inputs..(o + 1) * self.inputs].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        for (g, d) in grad[br].iter_mut().zip(dout) {
            *g += d;
        }
        if let Some(dx) = dx {
            let w = &p[wr];
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &d) in dout.iter().enumerate() {
                for (v, wi) in dx.iter_mut().zip(&w[o * self.inputs..(o + 1) * self.inputs]) {
                    *v += d * wi;
                }
            }
        }
    }
}

/// Stack of dense layers with tanh between them, and after the last one when `tanh_last`.
#[derive(Clone, Debug, PartialEq)]
struct Chain {
    layers: Vec<Dense>,
    tanh_last: bool,
}

impl Chain {
    fn new(sizes: &[usize], offset: &mut usize, tanh_last: bool) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let d = Dense { inputs: w[0], outputs: w[1], offset: *offset };
                *offset += d.n_params();
                d
            })
            .collect();
        Self { layers, tanh_last }
    }

    fn activated(&self, l: usize) -> bool {
        l + 1 < self.layers.len() || self.tanh_last
    }

    /// Returns every activation, input first.
    fn forward(&self, p: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            layer.forward(p, &acts[l], &mut out);
            if self.activated(l) {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates parameter gradients and returns the gradient with respect to the input.
    fn backward(&self, p: &[f64], acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut delta = dout.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if self.activated(l) {
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let mut dx = vec![0.0; layer.inputs];
            layer.backward(p, &acts[l], &delta, grad, Some(&mut dx));
            delta = dx;
        }
        delta
    }
}

/// Serializable network shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Linear {
        inputs: usize,
    },
    Mlp {
        inputs: usize,
        hidden: usize,
    },
    /// Two-layer encoders per modality, concatenated, one hidden layer, then a logit.
    Fusion {
        imaging: Vec<usize>,
        clinical: Vec<usize>,
        hidden: usize,
        imaging_emb: usize,
        clinical_emb: usize,
    },
    /// Shared encoder with a class head and an age head.
    Multitask {
        inputs: usize,
        hidden: usize,
    },
}

impl Architecture {
    pub fn inputs(&self) -> usize {
        match self {
            Architecture::Linear { inputs }
            | Architecture::Mlp { inputs, .. }
            | Architecture::Multitask { inputs, .. } => *inputs,
            Architecture::Fusion { imaging, clinical, .. } => imaging.len() + clinical.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Single(Chain),
    Fusion { imaging: Vec<usize>, clinical: Vec<usize>, img: Chain, clin: Chain, head: Chain },
    Multitask { encoder: Chain, class_head: Dense, age_head: Dense },
}

/// Training objective evaluated by [`Network::loss_grad`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub hinge: bool,
    pub weights: (f64, f64),
    pub lambda_reg: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    architecture: Architecture,
    body: Body,
    n_params: usize,
    segments: Vec<(&'static str, Range<usize>)>,
}

fn chain_range(c: &Chain) -> Range<usize> {
    let first = c.layers.first().map_or(0, |l| l.offset);
    let last = c.layers.last().map_or(first, |l| l.offset + l.n_params());
    first..last
}

impl Network {
    pub fn new(architecture: Architecture) -> Result<Self, ModelError> {
        let mut off = 0;
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(ModelError::Config(format!("{name} must be >= 1")))
            } else {
                Ok(())
            }
        };
        let (body, segments) = match &architecture {
            Architecture::Linear { inputs } => {
                positive("inputs", *inputs)?;
                let c = Chain::new(&[*inputs, 1], &mut off, false);
                let seg = vec![("linear", chain_range(&c))];
                (Body::Single(c), seg)
            }
            Architecture::Mlp { inputs, hidden } => {
                positive("inputs", *inputs)?;
                positive("hidden", *hidden)?;
                let c = Chain::new(&[*inputs, *hidden, 1], &mut off, false);
                let seg = vec![("mlp", chain_range(&c))];
                (Body::Single(c), seg)
            }
            Architecture::Fusion { imaging, clinical, hidden, imaging_emb, clinical_emb } => {
                if imaging.is_empty() || clinical.is_empty() {
                    return Err(ModelError::Config("fusion needs both imaging and clinical columns".into()));
                }
                positive("hidden", *hidden)?;
                positive("d_emb", *imaging_emb)?;
                if imaging_emb != clinical_emb {
                    return Err(ModelError::Config(format!(
                        "encoder output dims differ: imaging {imaging_emb}, clinical {clinical_emb}"
                    )));
                }
                let e = *imaging_emb;
                let img = Chain::new(&[imaging.len(), *hidden, e], &mut off, true);
                let clin = Chain::new(&[clinical.len(), *hidden, e], &mut off, true);
                let head = Chain::new(&[2 * e, e, 1], &mut off, false);
                let seg = vec![
                    ("imaging_encoder", chain_range(&img)),
                    ("clinical_encoder", chain_range(&clin)),
                    ("fusion_head", chain_range(&head)),
                ];
                (Body::Fusion { imaging: imaging.clone(), clinical: clinical.clone(), img, clin, head }, seg)
            }
            Architecture::Multitask { inputs, hidden } => {
                positive("inputs", *inputs)?;
                positive("hidden", *hidden)?;
                let encoder = Chain::new(&[*inputs, *hidden], &mut off, true);
                let class_head = Dense { inputs: *hidden, outputs: 1, offset: off };
                off += class_head.n_params();
                let age_head = Dense { inputs: *hidden, outputs: 1, offset: off };
                off += age_head.n_params();
                let seg = vec![
                    ("encoder", chain_range(&encoder)),
                    ("class_head", class_head.offset..class_head.offset + class_head.n_params()),
                    ("age_head", age_head.offset..age_head.offset + age_head.n_params()),
                ];
                (Body::Multitask { encoder, class_head, age_head }, seg)
            }
        };
        if let Body::Fusion { imaging, clinical, .. } = &body {
            let d = architecture.inputs();
            let mut seen = vec![false; d];
            for &c in imaging.iter().chain(clinical) {
                if c >= d || seen[c] {
                    return Err(ModelError::Config(format!("fusion column {c} is out of range or repeated")));
                }
                seen[c] = true;
            }
        }
        Ok(Self { architecture, body, n_params: off, segments })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn inputs(&self) -> usize {
        self.architecture.inputs()
    }

    /// Named parameter blocks, in storage order.
    pub fn segments(&self) -> &[(&'static str, Range<usize>)] {
        &self.segments
    }

    fn dense_layers(&self) -> Vec<Dense> {
        match &self.body {
            Body::Single(c) => c.layers.clone(),
            Body::Fusion { img, clin, head, .. } => {
                img.layers.iter().chain(&clin.layers).chain(&head.layers).copied().collect()
            }
            Body::Multitask { encoder, class_head, age_head } => {
                let mut v = encoder.layers.clone();
                v.push(*class_head);
                v.push(*age_head);
                v
            }
        }
    }

    /// Xavier-uniform weights and zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        for layer in self.dense_layers() {
            let a = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for v in &mut p[layer.weight_range()] {
                *v = rng.gen_range(-a..a);
            }
        }
        p
    }

    /// Sum of squared weights, biases excluded.
    pub fn l2_penalty(&self, p: &[f64]) -> f64 {
        self.dense_layers().iter().map(|l| p[l.weight_range()].iter().map(|w| w * w).sum::<f64>()).sum()
    }

    fn add_l2_grad(&self, p: &[f64], l2: f64, grad: &mut [f64]) {
        for l in self.dense_layers() {
            for i in l.weight_range() {
                grad[i] += 2.0 * l2 * p[i];
            }
        }
    }

    fn check(&self, p: &[f64], x: &[f64]) -> Result<(), ModelError> {
        if p.len() != self.n_params {
            return Err(ModelError::LengthMismatch { expected: self.n_params, actual: p.len() });
        }
        if x.len() != self.inputs() {
            return Err(ModelError::DimensionMismatch { expected: self.inputs(), actual: x.len() });
        }
        Ok(())
    }

    /// Score (logit or margin) and, for the multitask body, the standardized age prediction.
    pub fn forward(&self, p: &[f64], x: &[f64]) -> Result<(f64, Option<f64>), ModelError> {
        self.check(p, x)?;
        Ok(self.forward_unchecked(p, x))
    }

    pub(crate) fn forward_unchecked(&self, p: &[f64], x: &[f64]) -> (f64, Option<f64>) {
        match &self.body {
            Body::Single(c) => (c.forward(p, x)[c.layers.len()][0], None),
            Body::Fusion { imaging, clinical, img, clin, head } => {
                let xi: Vec<f64> = imaging.iter().map(|&j| x[j]).collect();
                let xc: Vec<f64> = clinical.iter().map(|&j| x[j]).collect();
                let mut cat = img.forward(p, &xi).pop().unwrap_or_default();
                cat.extend(clin.forward(p, &xc).pop().unwrap_or_default());
                (head.forward(p, &cat)[head.layers.len()][0], None)
            }
            Body::Multitask { encoder, class_head, age_head } => {
                let h = encoder.forward(p, x).pop().unwrap_or_default();
                let (mut s, mut a) = ([0.0], [0.0]);
                class_head.forward(p, &h, &mut s);
                age_head.forward(p, &h, &mut a);
                (s[0], Some(a[0]))
            }
        }
    }

    /// Fusion probability from separate imaging and clinical vectors.
    pub fn fusion_forward(&self, p: &[f64], imaging_x: &[f64], clinical_x: &[f64]) -> Result<f64, ModelError> {
        let Body::Fusion { imaging, clinical, .. } = &self.body else {
            return Err(ModelError::Config("fusion_forward needs a fusion network".into()));
        };
        if imaging_x.len() != imaging.len() || clinical_x.len() != clinical.len() {
            return Err(ModelError::DimensionMismatch {
                expected: imaging.len() + clinical.len(),
                actual: imaging_x.len() + clinical_x.len(),
            });
        }
        let mut x = vec![0.0; self.inputs()];
        for (&j, &v) in imaging.iter().zip(imaging_x) {
            x[j] = v;
        }
        for (&j, &v) in clinical.iter().zip(clinical_x) {
            x[j] = v;
        }
        Ok(super::loss::sigmoid(self.forward(p, &x)?.0))
    }

    /// Backpropagates `d_score` and `d_age` for one sample into `grad`.
    fn backward_sample(&self, p: &[f64], x: &[f64], d_score: f64, d_age: f64, grad: &mut [f64]) {
        match &self.body {
            Body::Single(c) => {
                let acts = c.forward(p, x);
                c.backward(p, &acts, &[d_score], grad);
            }
            Body::Fusion { imaging, clinical, img, clin, head } => {
                let xi: Vec<f64> = imaging.iter().map(|&j| x[j]).collect();
                let xc: Vec<f64> = clinical.iter().map(|&j| x[j]).collect();
                let ai = img.forward(p, &xi);
                let ac = clin.forward(p, &xc);
                let mut cat = ai[img.layers.len()].clone();
                cat.extend_from_slice(&ac[clin.layers.len()]);
                let ah = head.forward(p, &cat);
                let dcat = head.backward(p, &ah, &[d_score], grad);
                let e = ai[img.layers.len()].len();
                img.backward(p, &ai, &dcat[..e], grad);
                clin.backward(p, &ac, &dcat[e..], grad);
            }
            Body::Multitask { encoder, class_head, age_head } => {
                let acts = encoder.forward(p, x);
                let h = &acts[encoder.layers.len()];
                let mut dh = vec![0.0; h.len()];
                let mut tmp = vec![0.0; h.len()];
                class_head.backward(p, h, &[d_score], grad, Some(&mut dh));
                age_head.backward(p, h, &[d_age], grad, Some(&mut tmp));
                for (a, b) in dh.iter_mut().zip(&tmp) {
                    *a += b;
                }
                encoder.backward(p, &acts, &dh, grad);
            }
        }
    }

    /// Mean objective over `rows` plus the L2 term; writes its gradient into `grad`.
    /// `ages` holds standardized targets and is only read by the multitask body.
    pub fn loss_grad(
        &self,
        p: &[f64],
        rows: &[&[f64]],
        labels: &[u8],
        ages: Option<&[f64]>,
        objective: &Objective,
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = rows.len().max(1) as f64;
        let mut total = 0.0;
        for (i, (x, &y)) in rows.iter().zip(labels).enumerate() {
            let (s, age_pred) = self.forward_unchecked(p, x);
            let (l, ds) = if objective.hinge { hinge_on_margin(s, y, objective.weights) } else { ce_on_logit(s, y, objective.weights) };
            total += l;
            let mut da = 0.0;
            if let (Some(a), Some(ages)) = (age_pred, ages) {
                let r = a - ages[i];
                total += objective.lambda_reg * r * r;
                da = 2.0 * objective.lambda_reg * r / n;
            }
            self.backward_sample(p, x, ds / n, da, grad);
        }
        if objective.l2 > 0.0 {
            self.add_l2_grad(p, objective.l2, grad);
        }
        total / n + objective.l2 * self.l2_penalty(p)
    }

    /// Objective value alone.
    pub fn loss(&self, p: &[f64], rows: &[&[f64]], labels: &[u8], ages: Option<&[f64]>, objective: &Objective) -> f64 {
        let n = rows.len().max(1) as f64;
        let mut total = 0.0;
        for (i, (x, &y)) in rows.iter().zip(labels).enumerate() {
            let (s, age_pred) = self.forward_unchecked(p, x);
            total += if objective.hinge { hinge_on_margin(s, y, objective.weights).0 } else { ce_on_logit(s, y, objective.weights).0 };
            if let (Some(a), Some(ages)) = (age_pred, ages) {
                total += objective.lambda_reg * (a - ages[i]).powi(2);
            }
        }
        total / n + objective.l2 * self.l2_penalty(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::loss::{mtl_loss, sigmoid, weighted_ce};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    fn numeric(net: &Network, p: &[f64], rows: &[&[f64]], y: &[u8], ages: Option<&[f64]>, obj: &Objective) -> Vec<f64> {
        let h = 1e-6;
        (0..p.len())
            .map(|i| {
                let (mut a, mut b) = (p.to_vec(), p.to_vec());
                a[i] += h;
                b[i] -= h;
                (net.loss(&a, rows, y, ages, obj) - net.loss(&b, rows, y, ages, obj)) / (2.0 * h)
            })
            .collect()
    }

    fn instance(seed: u64, d: usize, n: usize) -> (Vec<Vec<f64>>, Vec<u8>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        let a = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        (x, y, a)
    }

    fn check_arch(arch: Architecture, hinge: bool, seeds: std::ops::Range<u64>) {
        let net = Network::new(arch).unwrap();
        for seed in seeds {
            let (x, y, a) = instance(seed, net.inputs(), 6);
            let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let p = net.init_params(&mut rng);
            let obj = Objective { hinge, weights: (0.8, 1.4), lambda_reg: 0.7, l2: 1e-3 };
            let mut g = vec![0.0; p.len()];
            net.loss_grad(&p, &rows, &y, Some(&a), &obj, &mut g);
            let fd = numeric(&net, &p, &rows, &y, Some(&a), &obj);
            let e = rel_err(&g, &fd);
            assert!(e < 1e-4, "seed {seed}: relative error {e}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_arch(Architecture::Linear { inputs: 4 }, false, 0..20);
        check_arch(Architecture::Mlp { inputs: 4, hidden: 5 }, false, 0..20);
        check_arch(
            Architecture::Fusion { imaging: vec![0, 2, 4], clinical: vec![1, 3], hidden: 4, imaging_emb: 3, clinical_emb: 3 },
            false,
            0..20,
        );
        check_arch(Architecture::Multitask { inputs: 3, hidden: 4 }, false, 0..20);
    }

    #[test]
    fn hinge_gradient_away_from_kinks() {
        let net = Network::new(Architecture::Linear { inputs: 3 }).unwrap();
        let mut checked = 0;
        for seed in 0..40 {
            let (x, y, _) = instance(seed, 3, 6);
            let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
            let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
            let near_kink = rows.iter().zip(&y).any(|(r, &yy)| {
                let t = if yy == 1 { 1.0 } else { -1.0 };
                (t * net.forward(&p, r).unwrap().0 - 1.0).abs() < 1e-3
            });
            if near_kink {
                continue;
            }
            let obj = Objective { hinge: true, weights: (1.1, 0.9), lambda_reg: 0.0, l2: 1e-2 };
            let mut g = vec![0.0; p.len()];
            net.loss_grad(&p, &rows, &y, None, &obj, &mut g);
            assert!(rel_err(&g, &numeric(&net, &p, &rows, &y, None, &obj)) < 1e-4);
            checked += 1;
        }
        assert!(checked > 30);
    }

    #[test]
    fn network_loss_matches_standalone_losses() {
        let net = Network::new(Architecture::Multitask { inputs: 3, hidden: 4 }).unwrap();
        let (x, y, a) = instance(3, 3, 8);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let outs: Vec<(f64, Option<f64>)> = rows.iter().map(|r| net.forward(&p, r).unwrap()).collect();
        let probs: Vec<f64> = outs.iter().map(|o| sigmoid(o.0)).collect();
        let ages: Vec<f64> = outs.iter().map(|o| o.1.unwrap()).collect();
        let w = (0.9, 1.1);
        let obj = Objective { hinge: false, weights: w, lambda_reg: 0.4, l2: 0.0 };
        let direct = mtl_loss(&probs, &ages, &y, &a, w, 0.4).unwrap();
        assert!((net.loss(&p, &rows, &y, Some(&a), &obj) - direct).abs() < 1e-12);
        let obj0 = Objective { lambda_reg: 0.0, ..obj };
        assert!((net.loss(&p, &rows, &y, Some(&a), &obj0) - weighted_ce(&probs, &y, w).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fusion_blocked_clinical_path() {
        let arch = Architecture::Fusion { imaging: vec![0, 1], clinical: vec![2, 3, 4], hidden: 6, imaging_emb: 4, clinical_emb: 4 };
        let net = Network::new(arch).unwrap();
        let mut p = net.init_params(&mut ChaCha8Rng::seed_from_u64(5));
        let r = net.segments().iter().find(|s| s.0 == "clinical_encoder").unwrap().1.clone();
        p[r].iter_mut().for_each(|v| *v = 0.0);
        let img = [0.3, -1.2];
        let base = net.fusion_forward(&p, &img, &[0.1, 0.2, 0.3]).unwrap();
        for j in 0..3 {
            let mut c = [0.1, 0.2, 0.3];
            c[j] += 1e-3;
            assert_eq!(net.fusion_forward(&p, &img, &c).unwrap(), base);
        }
        let moved = net.fusion_forward(&p, &[1.3, -1.2], &[0.1, 0.2, 0.3]).unwrap();
        assert_ne!(moved, base);
    }

    #[test]
    fn fusion_config_errors() {
        let bad = Architecture::Fusion { imaging: vec![0], clinical: vec![1], hidden: 4, imaging_emb: 8, clinical_emb: 16 };
        assert!(matches!(Network::new(bad), Err(ModelError::Config(_))));
        let dup = Architecture::Fusion { imaging: vec![0, 1], clinical: vec![1], hidden: 4, imaging_emb: 8, clinical_emb: 8 };
        assert!(matches!(Network::new(dup), Err(ModelError::Config(_))));
    }

    #[test]
    fn linear_closed_form() {
        let net = Network::new(Architecture::Linear { inputs: 2 }).unwrap();
        let p = [0.5, -2.0, 0.25];
        let (s, _) = net.forward(&p, &[3.0, 1.0]).unwrap();
        assert_eq!(s, 0.5 * 3.0 - 2.0 + 0.25);
        assert!(matches!(net.forward(&p, &[1.0]), Err(ModelError::DimensionMismatch { .. })));
    }
}
