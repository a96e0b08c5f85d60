//! Single-hidden-layer network with logistic hidden units, trained by
//! full-batch gradient descent.

use alloc::vec::Vec;

use rand::Rng;

use super::{FitMetadata, FittedModel, ModelBody};
use crate::data::{ColumnKind, DesignMatrix};
use crate::error::{Error, Result};
use crate::learners::Family;
use crate::rng;
use crate::stats::{logistic, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnetOptions {
    pub hidden_units: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for NnetOptions {
    fn default() -> Self {
        NnetOptions {
            hidden_units: 2,
            steps: 2000,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Output {
    Identity,
    Logistic,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    inputs: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
    /// hidden × inputs, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// outputs × hidden, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
    output: Output,
    y_center: f64,
    y_scale: f64,
}

impl Network {
    fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn forward(&self, x: &[f64], h: &mut [f64], o: &mut [f64]) {
        let p = x.len();
        for (k, hk) in h.iter_mut().enumerate() {
            let row = &self.w1[k * p..(k + 1) * p];
            *hk = logistic(self.b1[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
        let nh = h.len();
        for (c, oc) in o.iter_mut().enumerate() {
            let row = &self.w2[c * nh..(c + 1) * nh];
            *oc = self.b2[c] + row.iter().zip(h.iter()).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn standardized(&self, design: &DesignMatrix) -> Vec<f64> {
        let m = design.values();
        let p = self.inputs.len();
        let mut out = alloc::vec![0.0; m.nrows() * p];
        for i in 0..m.nrows() {
            for (j, &c) in self.inputs.iter().enumerate() {
                out[i * p + j] = (m[(i, c)] - self.center[j]) / self.scale[j];
            }
        }
        out
    }

    /// Output per row: `[mean]` for gaussian, `[P(y=1)]` for binomial,
    /// class probabilities for multinomial.
    pub fn predict(&self, design: &DesignMatrix) -> Vec<Vec<f64>> {
        let p = self.inputs.len();
        let x = self.standardized(design);
        let mut h = alloc::vec![0.0; self.hidden()];
        (0..design.n_rows())
            .map(|i| {
                let mut o = alloc::vec![0.0; self.b2.len()];
                self.forward(&x[i * p..(i + 1) * p], &mut h, &mut o);
                match self.output {
                    Output::Identity => o[0] = self.y_center + self.y_scale * o[0],
                    Output::Logistic => o[0] = logistic(o[0]),
                    Output::Softmax => softmax_in_place(&mut o),
                }
                o
            })
            .collect()
    }
}

pub fn fit_nnet(
    design: &DesignMatrix,
    response: &[f64],
    family: Family,
    options: &NnetOptions,
    seed: u64,
) -> Result<FittedModel> {
    if options.hidden_units == 0 {
        return Err(Error::InvalidSpec("nnet needs at least one hidden unit".into()));
    }
    if response.len() != design.n_rows() || response.is_empty() {
        return Err(Error::InvalidArgument("response length differs from design rows".into()));
    }
    family.check_response(response)?;
    let n = response.len();
    let m = design.values();
    let mut inputs = Vec::new();
    let mut center = Vec::new();
    let mut scale = Vec::new();
    for (j, col) in design.columns().iter().enumerate() {
        if col.kind == ColumnKind::Intercept {
            continue;
        }
        let c = m.column(j);
        let mean = c.iter().sum::<f64>() / n as f64;
        let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        inputs.push(j);
        center.push(mean);
        scale.push(if var > 0.0 { libm::sqrt(var) } else { 1.0 });
    }
    let (output, outs) = match family {
        Family::Gaussian => (Output::Identity, 1),
        Family::Binomial => (Output::Logistic, 1),
        Family::Multinomial { classes } => (Output::Softmax, classes),
    };
    let (y_center, y_scale) = if output == Output::Identity {
        let mean = response.iter().sum::<f64>() / n as f64;
        let var = response.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        (mean, if var > 0.0 { libm::sqrt(var) } else { 1.0 })
    } else {
        (0.0, 1.0)
    };

    let p = inputs.len();
    let nh = options.hidden_units;
    let mut r = rng::stream(seed);
    let mut init = |len: usize| -> Vec<f64> { (0..len).map(|_| r.random::<f64>() - 0.5).collect() };
    let mut net = Network {
        inputs,
        center,
        scale,
        w1: init(nh * p),
        b1: init(nh),
        w2: init(outs * nh),
        b2: init(outs),
        output,
        y_center,
        y_scale,
    };
    let x = net.standardized(design);
    // Per-row targets in the output space.
    let target: Vec<f64> = match output {
        Output::Identity => response.iter().map(|y| (y - y_center) / y_scale).collect(),
        Output::Logistic => response.to_vec(),
        Output::Softmax => {
            let mut t = alloc::vec![0.0; n * outs];
            for (i, &y) in response.iter().enumerate() {
                t[i * outs + y as usize] = 1.0;
            }
            t
        }
    };

    let mut h = alloc::vec![0.0; nh];
    let mut o = alloc::vec![0.0; outs];
    let mut d_out = alloc::vec![0.0; outs];
    let mut d_hid = alloc::vec![0.0; nh];
    let mut g_w1 = alloc::vec![0.0; nh * p];
    let mut g_b1 = alloc::vec![0.0; nh];
    let mut g_w2 = alloc::vec![0.0; outs * nh];
    let mut g_b2 = alloc::vec![0.0; outs];
    let inv_n = 1.0 / n as f64;
    for _ in 0..options.steps {
        g_w1.fill(0.0);
        g_b1.fill(0.0);
        g_w2.fill(0.0);
        g_b2.fill(0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let xi = &x[i * p..(i + 1) * p];
            net.forward(xi, &mut h, &mut o);
            match output {
                Output::Identity => {
                    let e = o[0] - target[i];
                    loss += 0.5 * e * e;
                    d_out[0] = e;
                }
                Output::Logistic => {
                    let q = logistic(o[0]);
                    let y = target[i];
                    loss -= y * libm::log(q.max(1e-300)) + (1.0 - y) * libm::log((1.0 - q).max(1e-300));
                    d_out[0] = q - y;
                }
                Output::Softmax => {
                    softmax_in_place(&mut o);
                    for c in 0..outs {
                        let y = target[i * outs + c];
                        if y > 0.0 {
                            loss -= libm::log(o[c].max(1e-300));
                        }
                        d_out[c] = o[c] - y;
                    }
                }
            }
            d_hid.fill(0.0);
            for c in 0..outs {
                g_b2[c] += d_out[c];
                for k in 0..nh {
                    g_w2[c * nh + k] += d_out[c] * h[k];
                    d_hid[k] += d_out[c] * net.w2[c * nh + k];
                }
            }
            for k in 0..nh {
                let dz = d_hid[k] * h[k] * (1.0 - h[k]);
                g_b1[k] += dz;
                for (g, v) in g_w1[k * p..(k + 1) * p].iter_mut().zip(xi) {
                    *g += dz * v;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let step = options.learning_rate * inv_n;
        for (w, g) in net.w1.iter_mut().zip(&g_w1) {
            *w -= step * g;
        }
        for (w, g) in net.b1.iter_mut().zip(&g_b1) {
            *w -= step * g;
        }
        for (w, g) in net.w2.iter_mut().zip(&g_w2) {
            *w -= step * g;
        }
        for (w, g) in net.b2.iter_mut().zip(&g_b2) {
            *w -= step * g;
        }
    }
    if net.w1.iter().chain(&net.w2).any(|w| !w.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(FittedModel {
        learner: "nnet".into(),
        family,
        body: ModelBody::Net(net),
        meta: FitMetadata {
            n_train: n,
            iterations: options.steps,
            ..FitMetadata::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::fit_glm;
    use rand_distr::{Distribution, StandardNormal};

    fn linear_data(n: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
        let mut r = rng::stream(seed);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let y = x
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut r);
                1.0 + 0.5 * v + e
            })
            .collect();
        (DesignMatrix::with_intercept(&[x]), y)
    }

    fn mse(y: &[f64], p: &[f64]) -> f64 {
        y.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
    }

    #[test]
    fn one_hidden_unit_tracks_linear_fit() {
        let (d, y) = linear_data(4000, 11);
        let opts = NnetOptions {
            hidden_units: 1,
            ..NnetOptions::default()
        };
        let net = fit_nnet(&d, &y, Family::Gaussian, &opts, 3).unwrap();
        let glm = fit_glm(&d, &y, Family::Gaussian, None).unwrap();
        let (a, b) = (mse(&y, &net.predict(&d)), mse(&y, &glm.predict(&d)));
        assert!(a <= 1.1 * b, "nnet {a} glm {b}");
    }

    #[test]
    fn same_seed_same_weights() {
        let (d, y) = linear_data(200, 1);
        let a = fit_nnet(&d, &y, Family::Gaussian, &NnetOptions::default(), 9).unwrap();
        let b = fit_nnet(&d, &y, Family::Gaussian, &NnetOptions::default(), 9).unwrap();
        match (&a.body, &b.body) {
            (ModelBody::Net(x), ModelBody::Net(y)) => assert_eq!(x, y),
            _ => unreachable!(),
        }
    }

    #[test]
    fn binomial_outputs_are_probabilities() {
        let (d, y) = linear_data(300, 2);
        let yb: Vec<f64> = y.iter().map(|v| f64::from(u8::from(*v > 1.0))).collect();
        let fit = fit_nnet(&d, &yb, Family::Binomial, &NnetOptions::default(), 1).unwrap();
        assert!(fit.predict(&d).iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn softmax_outputs_sum_to_one() {
        let (d, y) = linear_data(200, 3);
        let yc: Vec<f64> = y.iter().map(|v| (v.clamp(-0.5, 2.49) + 0.5).floor()).collect();
        let fit = fit_nnet(&d, &yc, Family::Multinomial { classes: 3 }, &NnetOptions::default(), 1).unwrap();
        for row in fit.predict_classes(&d) {
            assert_eq!(row.len(), 3);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
