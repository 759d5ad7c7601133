use rand::Rng;

use super::{gemm, Param, Strided};

/// Valid (unpadded) dilated temporal convolution on `[batch][time][cin]`.
///
/// Weights are stored `[tap][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel) as f64).sqrt();
        let weight = Param::uniform(kernel * cin * cout, bound, rng);
        let bias = bias.then(|| Param::uniform(cout, bound, rng));
        Self {
            cin,
            cout,
            kernel,
            dilation,
            weight,
            bias,
        }
    }

    /// Frames consumed at the borders: `t_out = t_in - span()`.
    pub fn span(&self) -> usize {
        (self.kernel - 1) * self.dilation
    }

    pub fn out_len(&self, t_in: usize) -> Option<usize> {
        t_in.checked_sub(self.span()).filter(|&t| t > 0)
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    pub fn forward(&self, x: &[f64], batch: usize, t_in: usize) -> Vec<f64> {
        assert_eq!(x.len(), batch * t_in * self.cin, "conv1d input size");
        let t_out = self.out_len(t_in).expect("sequence shorter than kernel span");
        let mut y = vec![0.0; batch * t_out * self.cout];
        if let Some(b) = &self.bias {
            for row in y.chunks_exact_mut(self.cout) {
                row.copy_from_slice(&b.value);
            }
        }
        let w_tap = self.cin * self.cout;
        for n in 0..batch {
            for k in 0..self.kernel {
                let a_off = (n * t_in + k * self.dilation) * self.cin;
                gemm(
                    t_out,
                    self.cin,
                    self.cout,
                    1.0,
                    Strided::rows(x, a_off, self.cin),
                    Strided::rows(&self.weight.value, k * w_tap, self.cout),
                    1.0,
                    &mut y,
                    n * t_out * self.cout,
                    self.cout,
                );
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &[f64], batch: usize, t_in: usize, dy: &[f64]) -> Vec<f64> {
        let t_out = self.out_len(t_in).expect("sequence shorter than kernel span");
        assert_eq!(dy.len(), batch * t_out * self.cout, "conv1d grad size");
        if let Some(b) = &mut self.bias {
            for row in dy.chunks_exact(self.cout) {
                b.grad.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
        }
        let w_tap = self.cin * self.cout;
        let mut dx = vec![0.0; x.len()];
        for n in 0..batch {
            let dy_off = n * t_out * self.cout;
            for k in 0..self.kernel {
                let x_off = (n * t_in + k * self.dilation) * self.cin;
                // dW[k] += X_k^T dY
                gemm(
                    self.cin,
                    t_out,
                    self.cout,
                    1.0,
                    Strided::cols(x, x_off, self.cin),
                    Strided::rows(dy, dy_off, self.cout),
                    1.0,
                    &mut self.weight.grad,
                    k * w_tap,
                    self.cout,
                );
                // dX_k += dY W[k]^T
                gemm(
                    t_out,
                    self.cout,
                    self.cin,
                    1.0,
                    Strided::rows(dy, dy_off, self.cout),
                    Strided::cols(&self.weight.value, k * w_tap, self.cout),
                    1.0,
                    &mut dx,
                    x_off,
                    self.cin,
                );
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::max_rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(conv: &Conv1d, x: &[f64], batch: usize, t_in: usize) -> Vec<f64> {
        let t_out = t_in - conv.span();
        let mut y = vec![0.0; batch * t_out * conv.cout];
        for n in 0..batch {
            for t in 0..t_out {
                for o in 0..conv.cout {
                    let mut s = conv.bias.as_ref().map_or(0.0, |b| b.value[o]);
                    for k in 0..conv.kernel {
                        for i in 0..conv.cin {
                            let xi = x[(n * t_in + t + k * conv.dilation) * conv.cin + i];
                            s += xi * conv.weight.value[(k * conv.cin + i) * conv.cout + o];
                        }
                    }
                    y[(n * t_out + t) * conv.cout + o] = s;
                }
            }
        }
        y
    }

    #[test]
    fn forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::new(4, 5, 3, 2, true, &mut rng);
        let x: Vec<f64> = (0..2 * 11 * 4).map(|_| rng.random::<f64>() - 0.5).collect();
        let y = conv.forward(&x, 2, 11);
        let want = naive(&conv, &x, 2, 11);
        assert_eq!(y.len(), 2 * 7 * 5);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv1d::new(3, 2, 3, 3, true, &mut rng);
        let (batch, t_in) = (2, 10);
        let x: Vec<f64> = (0..batch * t_in * 3).map(|_| rng.random::<f64>() - 0.5).collect();
        let r: Vec<f64> = (0..batch * 4 * 2).map(|_| rng.random::<f64>() - 0.5).collect();
        let loss = |c: &Conv1d, x: &[f64]| -> f64 {
            c.forward(x, batch, t_in).iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let dx = conv.backward(&x, batch, t_in, &r);
        let h = 1e-6;
        let mut num = Vec::new();
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            num.push((loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h));
        }
        assert!(max_rel_error(&dx, &num, 1e-4) < 1e-6);

        let analytic = conv.weight.grad.clone();
        let mut num = Vec::new();
        for i in 0..analytic.len() {
            let mut c = conv.clone();
            c.weight.value[i] += h;
            let lp = loss(&c, &x);
            c.weight.value[i] -= 2.0 * h;
            num.push((lp - loss(&c, &x)) / (2.0 * h));
        }
        assert!(max_rel_error(&analytic, &num, 1e-4) < 1e-6);
        let db: Vec<f64> = (0..2).map(|o| r.iter().skip(o).step_by(2).sum()).collect();
        assert!(max_rel_error(&conv.bias.as_ref().unwrap().grad, &db, 1e-8) < 1e-12);
    }
}
