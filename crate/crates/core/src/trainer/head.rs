//! FC-BN-ReLU-FC-BN-exp variance predictor with hand-written backprop.
//!
//! The second batch norm normalizes over every (row, output) entry with a
//! single scalar mean/variance and a single scalar scale and shift.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::VARIANCE_FLOOR;
use crate::error::{PfeError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    Train,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyHead {
    pub(crate) din: usize,
    pub(crate) hidden: usize,
    pub(crate) dout: usize,
    /// hidden × din, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub beta1: Vec<f64>,
    pub running_mean1: Vec<f64>,
    pub running_var1: Vec<f64>,
    /// dout × hidden, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub gamma2: f64,
    pub beta2: f64,
    pub running_mean2: f64,
    pub running_var2: f64,
    pub bn_momentum: f64,
    pub mode: HeadMode,
}

/// Gradient of the objective for every trainable parameter of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub beta1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub gamma2: f64,
    pub beta2: f64,
}

/// Names a trainable tensor; used to report gradient-check coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamTensor {
    W1,
    B1,
    Gamma1,
    Beta1,
    W2,
    B2,
    Gamma2,
    Beta2,
}

impl ParamTensor {
    pub const ORDER: [ParamTensor; 8] = [
        ParamTensor::W1,
        ParamTensor::B1,
        ParamTensor::Gamma1,
        ParamTensor::Beta1,
        ParamTensor::W2,
        ParamTensor::B2,
        ParamTensor::Gamma2,
        ParamTensor::Beta2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamTensor::W1 => "w1",
            ParamTensor::B1 => "b1",
            ParamTensor::Gamma1 => "gamma1",
            ParamTensor::Beta1 => "beta1",
            ParamTensor::W2 => "w2",
            ParamTensor::B2 => "b2",
            ParamTensor::Gamma2 => "gamma2",
            ParamTensor::Beta2 => "beta2",
        }
    }
}

impl HeadGradients {
    pub fn zeros_like(head: &UncertaintyHead) -> Self {
        Self {
            w1: vec![0.0; head.w1.len()],
            b1: vec![0.0; head.b1.len()],
            gamma1: vec![0.0; head.gamma1.len()],
            beta1: vec![0.0; head.beta1.len()],
            w2: vec![0.0; head.w2.len()],
            b2: vec![0.0; head.b2.len()],
            gamma2: 0.0,
            beta2: 0.0,
        }
    }

    pub fn tensor(&self, t: ParamTensor) -> &[f64] {
        match t {
            ParamTensor::W1 => &self.w1,
            ParamTensor::B1 => &self.b1,
            ParamTensor::Gamma1 => &self.gamma1,
            ParamTensor::Beta1 => &self.beta1,
            ParamTensor::W2 => &self.w2,
            ParamTensor::B2 => &self.b2,
            ParamTensor::Gamma2 => std::slice::from_ref(&self.gamma2),
            ParamTensor::Beta2 => std::slice::from_ref(&self.beta2),
        }
    }

    pub fn tensor_mut(&mut self, t: ParamTensor) -> &mut [f64] {
        match t {
            ParamTensor::W1 => &mut self.w1,
            ParamTensor::B1 => &mut self.b1,
            ParamTensor::Gamma1 => &mut self.gamma1,
            ParamTensor::Beta1 => &mut self.beta1,
            ParamTensor::W2 => &mut self.w2,
            ParamTensor::B2 => &mut self.b2,
            ParamTensor::Gamma2 => std::slice::from_mut(&mut self.gamma2),
            ParamTensor::Beta2 => std::slice::from_mut(&mut self.beta2),
        }
    }

    pub fn max_abs(&self) -> f64 {
        ParamTensor::ORDER
            .iter()
            .flat_map(|t| self.tensor(*t).iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Intermediate values of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) inputs: Vec<Vec<f64>>,
    xhat1: Vec<Vec<f64>>,
    inv_std1: Vec<f64>,
    pre_relu: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    xhat2: Vec<Vec<f64>>,
    inv_std2: f64,
    pub(crate) batch_mean1: Vec<f64>,
    pub(crate) batch_var1: Vec<f64>,
    pub(crate) batch_mean2: f64,
    pub(crate) batch_var2: f64,
    /// Predicted variances after the floor clamp.
    pub variances: Vec<Vec<f64>>,
    clamped: Vec<Vec<bool>>,
}

impl ForwardCache {
    /// BN1 outputs before the ReLU, one row per input.
    pub fn pre_relu(&self) -> &[Vec<f64>] {
        &self.pre_relu
    }
}

impl UncertaintyHead {
    /// Random initialization: weights ~ N(0, 1/fan_in), BN scale 1, shift 0.
    pub fn init(din: usize, hidden: usize, dout: usize, seed: u64) -> Result<Self> {
        if din == 0 || hidden == 0 || dout == 0 {
            return Err(PfeError::validation("head dimensions must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * s
                })
                .collect()
        };
        let w1 = gauss(hidden * din, din);
        let w2 = gauss(dout * hidden, hidden);
        Ok(Self {
            din,
            hidden,
            dout,
            w1,
            b1: vec![0.0; hidden],
            gamma1: vec![1.0; hidden],
            beta1: vec![0.0; hidden],
            running_mean1: vec![0.0; hidden],
            running_var1: vec![1.0; hidden],
            w2,
            b2: vec![0.0; dout],
            gamma2: 1.0,
            beta2: 0.0,
            running_mean2: 0.0,
            running_var2: 1.0,
            bn_momentum: BN_MOMENTUM,
            mode: HeadMode::Train,
        })
    }

    /// All weights, biases and shifts zero; scales one; running stats (0, 1).
    pub fn zeroed(din: usize, hidden: usize, dout: usize) -> Result<Self> {
        let mut h = Self::init(din, hidden, dout, 0)?;
        h.w1.iter_mut().for_each(|w| *w = 0.0);
        h.w2.iter_mut().for_each(|w| *w = 0.0);
        Ok(h)
    }

    pub fn input_dim(&self) -> usize {
        self.din
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.dout
    }

    pub fn set_mode(&mut self, mode: HeadMode) {
        self.mode = mode;
    }

    pub fn tensor(&self, t: ParamTensor) -> &[f64] {
        match t {
            ParamTensor::W1 => &self.w1,
            ParamTensor::B1 => &self.b1,
            ParamTensor::Gamma1 => &self.gamma1,
            ParamTensor::Beta1 => &self.beta1,
            ParamTensor::W2 => &self.w2,
            ParamTensor::B2 => &self.b2,
            ParamTensor::Gamma2 => std::slice::from_ref(&self.gamma2),
            ParamTensor::Beta2 => std::slice::from_ref(&self.beta2),
        }
    }

    pub fn tensor_mut(&mut self, t: ParamTensor) -> &mut [f64] {
        match t {
            ParamTensor::W1 => &mut self.w1,
            ParamTensor::B1 => &mut self.b1,
            ParamTensor::Gamma1 => &mut self.gamma1,
            ParamTensor::Beta1 => &mut self.beta1,
            ParamTensor::W2 => &mut self.w2,
            ParamTensor::B2 => &mut self.b2,
            ParamTensor::Gamma2 => std::slice::from_mut(&mut self.gamma2),
            ParamTensor::Beta2 => std::slice::from_mut(&mut self.beta2),
        }
    }

    pub fn param_count(&self) -> usize {
        ParamTensor::ORDER.iter().map(|t| self.tensor(*t).len()).sum()
    }

    fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(PfeError::EmptySet("head inputs"));
        }
        for x in inputs {
            if x.len() != self.din {
                return Err(PfeError::Dimension {
                    expected: self.din,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(PfeError::validation("non-finite head input"));
            }
        }
        Ok(())
    }

    fn affine1(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.din..(h + 1) * self.din];
                self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn affine2(&self, hid: &[f64]) -> Vec<f64> {
        (0..self.dout)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(hid).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Predicted variances. Train mode uses batch statistics and needs at
    /// least two rows; inference mode uses the running statistics.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self.mode {
            HeadMode::Train => Ok(self.forward_train(inputs)?.variances),
            HeadMode::Inference => {
                self.check_inputs(inputs)?;
                Ok(inputs.iter().map(|x| self.infer_row(x)).collect())
            }
        }
    }

    fn infer_row(&self, x: &[f64]) -> Vec<f64> {
        let a1 = self.affine1(x);
        let hid: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let xh = (a1[h] - self.running_mean1[h]) / (self.running_var1[h] + BN_EPS).sqrt();
                (self.gamma1[h] * xh + self.beta1[h]).max(0.0)
            })
            .collect();
        let inv2 = 1.0 / (self.running_var2 + BN_EPS).sqrt();
        self.affine2(&hid)
            .into_iter()
            .map(|a| {
                let y = self.gamma2 * (a - self.running_mean2) * inv2 + self.beta2;
                y.exp().max(VARIANCE_FLOOR)
            })
            .collect()
    }

    /// Single-row inference with running statistics regardless of mode.
    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(std::slice::from_ref(&x.to_vec()))?;
        Ok(self.infer_row(x))
    }

    /// Train-mode forward pass that keeps everything backprop needs.
    /// Running statistics are not touched.
    pub fn forward_train(&self, inputs: &[Vec<f64>]) -> Result<ForwardCache> {
        self.check_inputs(inputs)?;
        let n = inputs.len();
        if n < 2 {
            return Err(PfeError::BatchTooSmall(n));
        }
        let nf = n as f64;
        let a1: Vec<Vec<f64>> = inputs.iter().map(|x| self.affine1(x)).collect();

        let mut mean1 = vec![0.0; self.hidden];
        let mut var1 = vec![0.0; self.hidden];
        for row in &a1 {
            for (m, v) in mean1.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean1.iter_mut().for_each(|m| *m /= nf);
        for row in &a1 {
            for h in 0..self.hidden {
                let c = row[h] - mean1[h];
                var1[h] += c * c;
            }
        }
        var1.iter_mut().for_each(|v| *v /= nf);
        let inv_std1: Vec<f64> = var1.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut xhat1 = Vec::with_capacity(n);
        let mut pre_relu = Vec::with_capacity(n);
        let mut hidden = Vec::with_capacity(n);
        for row in &a1 {
            let xh: Vec<f64> = (0..self.hidden)
                .map(|h| (row[h] - mean1[h]) * inv_std1[h])
                .collect();
            let y: Vec<f64> = (0..self.hidden)
                .map(|h| self.gamma1[h] * xh[h] + self.beta1[h])
                .collect();
            hidden.push(y.iter().map(|v| v.max(0.0)).collect::<Vec<f64>>());
            pre_relu.push(y);
            xhat1.push(xh);
        }

        let a2: Vec<Vec<f64>> = hidden.iter().map(|h| self.affine2(h)).collect();
        let m = (n * self.dout) as f64;
        let mean2 = a2.iter().flatten().sum::<f64>() / m;
        let var2 = a2
            .iter()
            .flatten()
            .map(|a| (a - mean2) * (a - mean2))
            .sum::<f64>()
            / m;
        let inv_std2 = 1.0 / (var2 + BN_EPS).sqrt();

        let mut xhat2 = Vec::with_capacity(n);
        let mut variances = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        for row in &a2 {
            let xh: Vec<f64> = row.iter().map(|a| (a - mean2) * inv_std2).collect();
            let mut out = Vec::with_capacity(self.dout);
            let mut cl = Vec::with_capacity(self.dout);
            for &x in &xh {
                let e = (self.gamma2 * x + self.beta2).exp();
                cl.push(!(e >= VARIANCE_FLOOR));
                out.push(e.max(VARIANCE_FLOOR));
            }
            variances.push(out);
            clamped.push(cl);
            xhat2.push(xh);
        }

        Ok(ForwardCache {
            inputs: inputs.to_vec(),
            xhat1,
            inv_std1,
            pre_relu,
            hidden,
            xhat2,
            inv_std2,
            batch_mean1: mean1,
            batch_var1: var1,
            batch_mean2: mean2,
            batch_var2: var2,
            variances,
            clamped,
        })
    }

    /// Backpropagates `d_var` (∂objective/∂σ² per row and output) through the
    /// cached forward pass. No weight decay is added here.
    pub fn backward(&self, cache: &ForwardCache, d_var: &[Vec<f64>]) -> HeadGradients {
        let n = cache.inputs.len();
        let nf = n as f64;
        let mut g = HeadGradients::zeros_like(self);

        // exp and the second batch norm (scalar statistics over n·dout entries).
        let m = (n * self.dout) as f64;
        let mut dxhat2 = vec![vec![0.0; self.dout]; n];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..n {
            for o in 0..self.dout {
                let dy = if cache.clamped[i][o] {
                    0.0
                } else {
                    d_var[i][o] * cache.variances[i][o]
                };
                let xh = cache.xhat2[i][o];
                g.gamma2 += dy * xh;
                g.beta2 += dy;
                let dx = dy * self.gamma2;
                dxhat2[i][o] = dx;
                sum_dxhat += dx;
                sum_dxhat_xhat += dx * xh;
            }
        }
        let mut da2 = vec![vec![0.0; self.dout]; n];
        for i in 0..n {
            for o in 0..self.dout {
                da2[i][o] = cache.inv_std2 / m
                    * (m * dxhat2[i][o] - sum_dxhat - cache.xhat2[i][o] * sum_dxhat_xhat);
            }
        }

        // second affine layer and relu
        let mut dy1 = vec![vec![0.0; self.hidden]; n];
        for i in 0..n {
            for o in 0..self.dout {
                let d = da2[i][o];
                g.b2[o] += d;
                let row = o * self.hidden;
                for h in 0..self.hidden {
                    g.w2[row + h] += d * cache.hidden[i][h];
                    dy1[i][h] += d * self.w2[row + h];
                }
            }
            for h in 0..self.hidden {
                if cache.pre_relu[i][h] <= 0.0 {
                    dy1[i][h] = 0.0;
                }
            }
        }

        // first batch norm (per-unit statistics over the batch)
        for h in 0..self.hidden {
            let mut sum_dx = 0.0;
            let mut sum_dx_xh = 0.0;
            for i in 0..n {
                let dy = dy1[i][h];
                let xh = cache.xhat1[i][h];
                g.gamma1[h] += dy * xh;
                g.beta1[h] += dy;
                let dx = dy * self.gamma1[h];
                sum_dx += dx;
                sum_dx_xh += dx * xh;
            }
            let scale = cache.inv_std1[h] / nf;
            let row = h * self.din;
            for i in 0..n {
                let dx = dy1[i][h] * self.gamma1[h];
                let da1 = scale * (nf * dx - sum_dx - cache.xhat1[i][h] * sum_dx_xh);
                g.b1[h] += da1;
                for (k, x) in cache.inputs[i].iter().enumerate() {
                    g.w1[row + k] += da1 * x;
                }
            }
        }
        g
    }

    /// Exponential moving average of the batch statistics in `cache`.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let m = self.bn_momentum;
        for h in 0..self.hidden {
            self.running_mean1[h] = m * self.running_mean1[h] + (1.0 - m) * cache.batch_mean1[h];
            self.running_var1[h] = m * self.running_var1[h] + (1.0 - m) * cache.batch_var1[h];
        }
        self.running_mean2 = m * self.running_mean2 + (1.0 - m) * cache.batch_mean2;
        self.running_var2 = m * self.running_var2 + (1.0 - m) * cache.batch_var2;
    }

    pub(crate) fn sq_weight_norm(&self) -> f64 {
        self.w1.iter().chain(&self.w2).map(|w| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        ParamTensor::ORDER
            .iter()
            .all(|t| self.tensor(*t).iter().all(|v| v.is_finite()))
    }
}
