use rand::Rng;

use super::{gemm, Param, Strided};

/// Square-kernel 2D convolution on NHWC buffers, lowered to im2col + gemm.
/// Weights are `[ky][kx][cin][cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

#[derive(Debug, Clone)]
pub struct Conv2dCache {
    cols: Vec<f64>,
    batch: usize,
    h: usize,
    w: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight: Param::uniform(kernel * kernel * cin * cout, bound, rng),
            bias: bias.then(|| Param::zeros(cout)),
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |s: usize| (s + 2 * self.pad - self.kernel) / self.stride + 1;
        (o(h), o(w))
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    fn patch(&self) -> usize {
        self.kernel * self.kernel * self.cin
    }

    pub fn forward(&self, x: &[f64], batch: usize, h: usize, w: usize) -> (Vec<f64>, Conv2dCache) {
        assert_eq!(x.len(), batch * h * w * self.cin, "conv2d input size");
        let (ho, wo) = self.out_size(h, w);
        let patch = self.patch();
        let rows = batch * ho * wo;
        let mut cols = vec![0.0; rows * patch];
        for n in 0..batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let r = (n * ho + oy) * wo + ox;
                    let dst = &mut cols[r * patch..(r + 1) * patch];
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((n * h + iy as usize) * w + ix as usize) * self.cin;
                            let d = (ky * self.kernel + kx) * self.cin;
                            dst[d..d + self.cin].copy_from_slice(&x[src..src + self.cin]);
                        }
                    }
                }
            }
        }
        let mut y = vec![0.0; rows * self.cout];
        if let Some(b) = &self.bias {
            for row in y.chunks_exact_mut(self.cout) {
                row.copy_from_slice(&b.value);
            }
        }
        gemm(
            rows,
            patch,
            self.cout,
            1.0,
            Strided::rows(&cols, 0, patch),
            Strided::rows(&self.weight.value, 0, self.cout),
            1.0,
            &mut y,
            0,
            self.cout,
        );
        (y, Conv2dCache { cols, batch, h, w })
    }

    pub fn backward(&mut self, cache: &Conv2dCache, dy: &[f64]) -> Vec<f64> {
        let (batch, h, w) = (cache.batch, cache.h, cache.w);
        let (ho, wo) = self.out_size(h, w);
        let patch = self.patch();
        let rows = batch * ho * wo;
        assert_eq!(dy.len(), rows * self.cout, "conv2d grad size");
        if let Some(b) = &mut self.bias {
            for row in dy.chunks_exact(self.cout) {
                b.grad.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
        }
        gemm(
            patch,
            rows,
            self.cout,
            1.0,
            Strided::cols(&cache.cols, 0, patch),
            Strided::rows(dy, 0, self.cout),
            1.0,
            &mut self.weight.grad,
            0,
            self.cout,
        );
        let mut dcols = vec![0.0; rows * patch];
        gemm(
            rows,
            self.cout,
            patch,
            1.0,
            Strided::rows(dy, 0, self.cout),
            Strided::cols(&self.weight.value, 0, self.cout),
            0.0,
            &mut dcols,
            0,
            patch,
        );
        let mut dx = vec![0.0; batch * h * w * self.cin];
        for n in 0..batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let r = (n * ho + oy) * wo + ox;
                    let src = &dcols[r * patch..(r + 1) * patch];
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((n * h + iy as usize) * w + ix as usize) * self.cin;
                            let s = (ky * self.kernel + kx) * self.cin;
                            for c in 0..self.cin {
                                dx[dst + c] += src[s + c];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Transposed convolution (fractionally strided) on NHWC buffers.
/// Weights are `[cin][ky][kx][cout]`; output size is
/// `(in - 1) * stride - 2 * pad + kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        // each output pixel sees about cin * (kernel / stride)^2 inputs
        let fan_in = (cin * (kernel / stride.max(1)).pow(2)).max(1) as f64;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight: Param::uniform(cin * kernel * kernel * cout, bound, rng),
            bias: bias.then(|| Param::zeros(cout)),
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |s: usize| (s - 1) * self.stride + self.kernel - 2 * self.pad;
        (o(h), o(w))
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    fn taps(&self) -> usize {
        self.kernel * self.kernel * self.cout
    }

    /// Calls `f(input_pixel_row, tap_offset, output_offset)` for every
    /// input pixel / kernel tap pair that lands inside the output.
    fn for_each_tap(&self, batch: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.out_size(h, w);
        for n in 0..batch {
            for iy in 0..h {
                for ix in 0..w {
                    let r = (n * h + iy) * w + ix;
                    for ky in 0..self.kernel {
                        let oy = (iy * self.stride + ky) as isize - self.pad as isize;
                        if oy < 0 || oy >= ho as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ox = (ix * self.stride + kx) as isize - self.pad as isize;
                            if ox < 0 || ox >= wo as isize {
                                continue;
                            }
                            let out = ((n * ho + oy as usize) * wo + ox as usize) * self.cout;
                            f(r, (ky * self.kernel + kx) * self.cout, out);
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], batch: usize, h: usize, w: usize) -> Vec<f64> {
        assert_eq!(x.len(), batch * h * w * self.cin, "deconv input size");
        let (ho, wo) = self.out_size(h, w);
        let taps = self.taps();
        let rows = batch * h * w;
        let mut cols = vec![0.0; rows * taps];
        gemm(
            rows,
            self.cin,
            taps,
            1.0,
            Strided::rows(x, 0, self.cin),
            Strided::rows(&self.weight.value, 0, taps),
            0.0,
            &mut cols,
            0,
            taps,
        );
        let mut y = vec![0.0; batch * ho * wo * self.cout];
        if let Some(b) = &self.bias {
            for row in y.chunks_exact_mut(self.cout) {
                row.copy_from_slice(&b.value);
            }
        }
        let cout = self.cout;
        self.for_each_tap(batch, h, w, |r, tap, out| {
            let src = &cols[r * taps + tap..r * taps + tap + cout];
            y[out..out + cout].iter_mut().zip(src).for_each(|(a, b)| *a += b);
        });
        y
    }

    pub fn backward(&mut self, x: &[f64], batch: usize, h: usize, w: usize, dy: &[f64]) -> Vec<f64> {
        let (ho, wo) = self.out_size(h, w);
        assert_eq!(dy.len(), batch * ho * wo * self.cout, "deconv grad size");
        if let Some(b) = &mut self.bias {
            for row in dy.chunks_exact(self.cout) {
                b.grad.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
        }
        let taps = self.taps();
        let rows = batch * h * w;
        let mut dcols = vec![0.0; rows * taps];
        let cout = self.cout;
        self.for_each_tap(batch, h, w, |r, tap, out| {
            dcols[r * taps + tap..r * taps + tap + cout].copy_from_slice(&dy[out..out + cout]);
        });
        gemm(
            self.cin,
            rows,
            taps,
            1.0,
            Strided::cols(x, 0, self.cin),
            Strided::rows(&dcols, 0, taps),
            1.0,
            &mut self.weight.grad,
            0,
            taps,
        );
        let mut dx = vec![0.0; x.len()];
        gemm(
            rows,
            taps,
            self.cin,
            1.0,
            Strided::rows(&dcols, 0, taps),
            Strided::cols(&self.weight.value, 0, taps),
            0.0,
            &mut dx,
            0,
            self.cin,
        );
        dx
    }
}
