use super::Param;

/// Per-channel batch normalization over the rows of a `[rows][channels]`
/// buffer. Running statistics follow the usual exponential average with an
/// unbiased variance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    /// Identity at initialization: gamma = 1, beta = 0, unit running variance.
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(channels, 1.0),
            beta: Param::zeros(channels),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn forward_train(&mut self, x: &mut [f64]) -> BnCache {
        let c = self.channels;
        let rows = x.len() / c;
        assert!(rows > 0 && x.len() == rows * c, "batchnorm input size");
        let mut mean = vec![0.0; c];
        for row in x.chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let unbias = if rows > 1 {
            rows as f64 / (rows - 1) as f64
        } else {
            1.0
        };
        for ch in 0..c {
            self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
            self.running_var[ch] =
                (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var[ch] * unbias;
        }
        self.normalize(x, &mean, inv_std, true)
    }

    pub fn forward_infer(&self, x: &mut [f64]) -> BnCache {
        let inv_std = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mean = self.running_mean.clone();
        self.normalize(x, &mean, inv_std, false)
    }

    fn normalize(&self, x: &mut [f64], mean: &[f64], inv_std: Vec<f64>, batch_stats: bool) -> BnCache {
        let c = self.channels;
        let mut xhat = vec![0.0; x.len()];
        for (row, hrow) in x.chunks_exact_mut(c).zip(xhat.chunks_exact_mut(c)) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                hrow[ch] = h;
                row[ch] = self.gamma.value[ch] * h + self.beta.value[ch];
            }
        }
        BnCache {
            xhat,
            inv_std,
            batch_stats,
        }
    }

    /// Accumulates gamma/beta gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &BnCache, dy: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let rows = dy.len() / c;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (drow, hrow) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] += drow[ch];
                sum_dy_xhat[ch] += drow[ch] * hrow[ch];
            }
        }
        for ch in 0..c {
            self.beta.grad[ch] += sum_dy[ch];
            self.gamma.grad[ch] += sum_dy_xhat[ch];
        }
        let mut dx = vec![0.0; dy.len()];
        if cache.batch_stats {
            let inv_rows = 1.0 / rows as f64;
            for ((dxr, drow), hrow) in dx
                .chunks_exact_mut(c)
                .zip(dy.chunks_exact(c))
                .zip(cache.xhat.chunks_exact(c))
            {
                for ch in 0..c {
                    let g = self.gamma.value[ch] * cache.inv_std[ch];
                    dxr[ch] = g * (drow[ch] - inv_rows * (sum_dy[ch] + hrow[ch] * sum_dy_xhat[ch]));
                }
            }
        } else {
            for (dxr, drow) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    dxr[ch] = drow[ch] * self.gamma.value[ch] * cache.inv_std[ch];
                }
            }
        }
        dx
    }
}
