use crate::error::{Error, Result};

/// Row-major B×N×D token tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub b: usize,
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(b: usize, n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != b * n * d {
            return Err(Error::DimensionMismatch {
                context: "token tensor",
                expected: b * n * d,
                got: data.len(),
            });
        }
        Ok(Self { b, n, d, data })
    }

    pub fn zeros(b: usize, n: usize, d: usize) -> Self {
        Self {
            b,
            n,
            d,
            data: vec![0.0; b * n * d],
        }
    }

    pub fn at(&self, b: usize, n: usize, d: usize) -> f64 {
        self.data[(b * self.n + n) * self.d + d]
    }

    pub fn row(&self, b: usize, n: usize) -> &[f64] {
        let s = (b * self.n + n) * self.d;
        &self.data[s..s + self.d]
    }

    pub(crate) fn row_mut(&mut self, b: usize, n: usize) -> &mut [f64] {
        let s = (b * self.n + n) * self.d;
        &mut self.data[s..s + self.d]
    }
}

/// Row-major B×C×H×W feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(b: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != b * c * h * w {
            return Err(Error::DimensionMismatch {
                context: "feature map",
                expected: b * c * h * w,
                got: data.len(),
            });
        }
        Ok(Self { b, c, h, w, data })
    }

    pub fn zeros(b: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            b,
            c,
            h,
            w,
            data: vec![0.0; b * c * h * w],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.b, self.c, self.h, self.w]
    }

    fn idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.c + c) * self.h + y) * self.w + x
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(b, c, y, x)]
    }

    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(b, c, y, x);
        self.data[i] = v;
    }
}

/// Bias-free dense map on the last axis: `y = W x`, `W` is out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
}

impl Linear {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != out_dim * in_dim {
            return Err(Error::DimensionMismatch {
                context: "linear weights",
                expected: out_dim * in_dim,
                got: weights.len(),
            });
        }
        Ok(Self {
            out_dim,
            in_dim,
            weights,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        (0..dim).for_each(|i| weights[i * dim + i] = 1.0);
        Self {
            out_dim: dim,
            in_dim: dim,
            weights,
        }
    }

    pub fn apply(&self, t: &Tensor3) -> Result<Tensor3> {
        if t.d != self.in_dim {
            return Err(Error::DimensionMismatch {
                context: "linear input width",
                expected: self.in_dim,
                got: t.d,
            });
        }
        let mut out = Tensor3::zeros(t.b, t.n, self.out_dim);
        for b in 0..t.b {
            for n in 0..t.n {
                let x = t.row(b, n);
                let y = out.row_mut(b, n);
                for (o, yo) in y.iter_mut().enumerate() {
                    let w = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                    *yo = w.iter().zip(x).map(|(a, v)| a * v).sum();
                }
            }
        }
        Ok(out)
    }
}

/// Stride-1 convolution with odd square kernel and zero padding `k/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_c: usize,
    pub in_c: usize,
    pub k: usize,
    /// out_c × in_c × k × k, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(out_c: usize, in_c: usize, k: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {k}")));
        }
        if weights.len() != out_c * in_c * k * k || bias.len() != out_c {
            return Err(Error::invalid(format!(
                "conv parameters do not match {out_c}x{in_c}x{k}x{k}"
            )));
        }
        Ok(Self {
            out_c,
            in_c,
            k,
            weights,
            bias,
        })
    }

    pub fn identity_1x1(c: usize) -> Self {
        let mut weights = vec![0.0; c * c];
        (0..c).for_each(|i| weights[i * c + i] = 1.0);
        Self {
            out_c: c,
            in_c: c,
            k: 1,
            weights,
            bias: vec![0.0; c],
        }
    }

    fn w(&self, o: usize, i: usize, dy: usize, dx: usize) -> f64 {
        self.weights[((o * self.in_c + i) * self.k + dy) * self.k + dx]
    }

    pub fn apply(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.c != self.in_c {
            return Err(Error::DimensionMismatch {
                context: "conv input channels",
                expected: self.in_c,
                got: x.c,
            });
        }
        let pad = (self.k / 2) as i64;
        let mut out = FeatureMap::zeros(x.b, self.out_c, x.h, x.w);
        for b in 0..x.b {
            for o in 0..self.out_c {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        let mut acc = self.bias[o];
                        for i in 0..self.in_c {
                            for dy in 0..self.k {
                                let sy = y as i64 + dy as i64 - pad;
                                if sy < 0 || sy >= x.h as i64 {
                                    continue;
                                }
                                for dx in 0..self.k {
                                    let sx = xx as i64 + dx as i64 - pad;
                                    if sx < 0 || sx >= x.w as i64 {
                                        continue;
                                    }
                                    acc += self.w(o, i, dy, dx) * x.at(b, i, sy as usize, sx as usize);
                                }
                            }
                        }
                        out.set(b, o, y, xx, acc);
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn max_pool_2x2(x: &FeatureMap) -> Result<FeatureMap> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(Error::invalid(format!("2x2 pooling needs even dims, got {}x{}", x.h, x.w)));
    }
    let mut out = FeatureMap::zeros(x.b, x.c, x.h / 2, x.w / 2);
    for b in 0..x.b {
        for c in 0..x.c {
            for y in 0..x.h / 2 {
                for xx in 0..x.w / 2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dy, dx)| x.at(b, c, 2 * y + dy, 2 * xx + dx))
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.set(b, c, y, xx, m);
                }
            }
        }
    }
    Ok(out)
}

/// Half-pixel-centred bilinear resize (source coordinate
/// `(dst + 0.5)·in/out − 0.5`, clamped at the borders).
pub fn upsample_bilinear(x: &FeatureMap, out_h: usize, out_w: usize) -> FeatureMap {
    let src = |dst: usize, inp: usize, out: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = FeatureMap::zeros(x.b, x.c, out_h, out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = src(y, x.h, out_h);
        for xx in 0..out_w {
            let (x0, x1, fx) = src(xx, x.w, out_w);
            for b in 0..x.b {
                for c in 0..x.c {
                    let top = x.at(b, c, y0, x0) * (1.0 - fx) + x.at(b, c, y0, x1) * fx;
                    let bot = x.at(b, c, y1, x0) * (1.0 - fx) + x.at(b, c, y1, x1) * fx;
                    out.set(b, c, y, xx, top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    out
}

/// B×C×H×W → B×(H·W)×C: one token per spatial position.
pub fn flatten_tokens(x: &FeatureMap) -> Tensor3 {
    let mut t = Tensor3::zeros(x.b, x.h * x.w, x.c);
    for b in 0..x.b {
        for y in 0..x.h {
            for xx in 0..x.w {
                let row = t.row_mut(b, y * x.w + xx);
                for (c, r) in row.iter_mut().enumerate() {
                    *r = x.at(b, c, y, xx);
                }
            }
        }
    }
    t
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens(t: &Tensor3, h: usize, w: usize) -> Result<FeatureMap> {
    if t.n != h * w {
        return Err(Error::DimensionMismatch {
            context: "token count vs spatial grid",
            expected: h * w,
            got: t.n,
        });
    }
    let mut x = FeatureMap::zeros(t.b, t.d, h, w);
    for b in 0..t.b {
        for n in 0..t.n {
            for (c, v) in t.row(b, n).iter().enumerate() {
                x.set(b, c, n / w, n % w, *v);
            }
        }
    }
    Ok(x)
}
