use super::mlp::softmax;
use super::tensor::{Linear, Tensor3};
use crate::error::{Error, Result};

/// Per batch item, the N_q×N_k row-softmax of `q kᵀ / sqrt(d_k)`.
pub fn attention_weights(q: &Tensor3, k: &Tensor3) -> Result<Vec<Vec<f64>>> {
    if q.b != k.b || q.d != k.d {
        return Err(Error::invalid(format!(
            "attention q is {}x{}x{}, k is {}x{}x{}",
            q.b, q.n, q.d, k.b, k.n, k.d
        )));
    }
    let scale = 1.0 / (q.d as f64).sqrt();
    let mut all = Vec::with_capacity(q.b);
    for b in 0..q.b {
        let mut weights = Vec::with_capacity(q.n * k.n);
        for i in 0..q.n {
            let logits: Vec<f64> = (0..k.n)
                .map(|j| q.row(b, i).iter().zip(k.row(b, j)).map(|(x, y)| x * y).sum::<f64>() * scale)
                .collect();
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("attention logits, batch {b} row {i}"),
                    step: i,
                });
            }
            weights.extend(softmax(&logits));
        }
        all.push(weights);
    }
    Ok(all)
}

fn apply_weights(weights: &[Vec<f64>], v: &Tensor3, n_q: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(v.b, n_q, v.d);
    for (b, w) in weights.iter().enumerate() {
        for i in 0..n_q {
            let row = out.row_mut(b, i);
            for j in 0..v.n {
                let a = w[i * v.n + j];
                for (o, x) in row.iter_mut().zip(v.row(b, j)) {
                    *o += a * x;
                }
            }
        }
    }
    out
}

/// Scaled dot-product attention `softmax(q kᵀ / sqrt(d_k)) v`.
pub fn attention(q: &Tensor3, k: &Tensor3, v: &Tensor3) -> Result<Tensor3> {
    if k.n != v.n || k.b != v.b {
        return Err(Error::invalid(format!("attention k has {} tokens, v has {}", k.n, v.n)));
    }
    let w = attention_weights(q, k)?;
    Ok(apply_weights(&w, v, q.n))
}

/// Bias-free projections of a multi-head attention block of width E.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub heads: usize,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
}

impl MhaParams {
    pub fn identity(width: usize, heads: usize) -> Self {
        Self {
            heads,
            w_q: Linear::identity(width),
            w_k: Linear::identity(width),
            w_v: Linear::identity(width),
            w_o: Linear::identity(width),
        }
    }

    pub fn width(&self) -> usize {
        self.w_o.out_dim
    }

    fn validate(&self) -> Result<()> {
        let e = self.w_q.out_dim;
        let square = [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
            .iter()
            .all(|l| l.out_dim == e && l.in_dim == e);
        if !square {
            return Err(Error::invalid("multi-head projections must all be E x E"));
        }
        if self.heads == 0 || e % self.heads != 0 {
            return Err(Error::invalid(format!("width {e} is not divisible by {} heads", self.heads)));
        }
        Ok(())
    }
}

fn head_slice(t: &Tensor3, h: usize, width: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(t.b, t.n, width);
    for b in 0..t.b {
        for n in 0..t.n {
            out.row_mut(b, n).copy_from_slice(&t.row(b, n)[h * width..(h + 1) * width]);
        }
    }
    out
}

/// Output and the per-head attention weights (`[head][batch]`).
pub fn multi_head_attention_with_weights(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    params: &MhaParams,
) -> Result<(Tensor3, Vec<Vec<Vec<f64>>>)> {
    params.validate()?;
    let (qp, kp, vp) = (params.w_q.apply(q)?, params.w_k.apply(k)?, params.w_v.apply(v)?);
    let e = params.width();
    let dh = e / params.heads;
    let mut concat = Tensor3::zeros(q.b, q.n, e);
    let mut all_weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (qh, kh, vh) = (head_slice(&qp, h, dh), head_slice(&kp, h, dh), head_slice(&vp, h, dh));
        if kh.n != vh.n {
            return Err(Error::invalid("multi-head k and v token counts differ"));
        }
        let w = attention_weights(&qh, &kh)?;
        let out = apply_weights(&w, &vh, qh.n);
        for b in 0..q.b {
            for n in 0..q.n {
                concat.row_mut(b, n)[h * dh..(h + 1) * dh].copy_from_slice(out.row(b, n));
            }
        }
        all_weights.push(w);
    }
    Ok((params.w_o.apply(&concat)?, all_weights))
}

/// Projects q, k, v, attends per head, concatenates heads and applies the
/// output projection.
pub fn multi_head_attention(q: &Tensor3, k: &Tensor3, v: &Tensor3, params: &MhaParams) -> Result<Tensor3> {
    Ok(multi_head_attention_with_weights(q, k, v, params)?.0)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    pub(crate) fn randn(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seed::stream(seed, "test.randn", 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    pub(crate) fn rand_t3(b: usize, n: usize, d: usize, seed: u64) -> Tensor3 {
        Tensor3::new(b, n, d, randn(b * n * d, seed)).unwrap()
    }

    /// Triple loop straight from the definition.
    fn naive_attention(q: &Tensor3, k: &Tensor3, v: &Tensor3) -> Vec<f64> {
        let mut out = vec![0.0; q.b * q.n * v.d];
        for b in 0..q.b {
            for i in 0..q.n {
                let mut logits = vec![0.0; k.n];
                for j in 0..k.n {
                    let mut s = 0.0;
                    for c in 0..q.d {
                        s += q.at(b, i, c) * k.at(b, j, c);
                    }
                    logits[j] = s / (q.d as f64).sqrt();
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for j in 0..k.n {
                    let a = (logits[j] - m).exp() / z;
                    for c in 0..v.d {
                        out[(b * q.n + i) * v.d + c] += a * v.at(b, j, c);
                    }
                }
            }
        }
        out
    }

    fn naive_mha(q: &Tensor3, k: &Tensor3, v: &Tensor3, p: &MhaParams) -> Vec<f64> {
        let e = p.width();
        let dh = e / p.heads;
        let project = |t: &Tensor3, l: &Linear| -> Vec<f64> {
            let mut out = vec![0.0; t.b * t.n * e];
            for b in 0..t.b {
                for n in 0..t.n {
                    for o in 0..e {
                        for i in 0..e {
                            out[(b * t.n + n) * e + o] += l.weights[o * e + i] * t.at(b, n, i);
                        }
                    }
                }
            }
            out
        };
        let (qp, kp, vp) = (project(q, &p.w_q), project(k, &p.w_k), project(v, &p.w_v));
        let mut concat = vec![0.0; q.b * q.n * e];
        for h in 0..p.heads {
            let slice = |src: &[f64], n: usize| -> Tensor3 {
                let mut d = Vec::new();
                for b in 0..q.b {
                    for t in 0..n {
                        for c in 0..dh {
                            d.push(src[(b * n + t) * e + h * dh + c]);
                        }
                    }
                }
                Tensor3::new(q.b, n, dh, d).unwrap()
            };
            let o = naive_attention(&slice(&qp, q.n), &slice(&kp, k.n), &slice(&vp, v.n));
            for b in 0..q.b {
                for t in 0..q.n {
                    for c in 0..dh {
                        concat[(b * q.n + t) * e + h * dh + c] = o[(b * q.n + t) * dh + c];
                    }
                }
            }
        }
        let ct = Tensor3::new(q.b, q.n, e, concat).unwrap();
        project(&ct, &p.w_o)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    pub(crate) fn random_mha(e: usize, heads: usize, seed: u64) -> MhaParams {
        let lin = |s| Linear::new(e, e, randn(e * e, s).iter().map(|v| v * 0.5).collect()).unwrap();
        MhaParams {
            heads,
            w_q: lin(seed),
            w_k: lin(seed + 1),
            w_v: lin(seed + 2),
            w_o: lin(seed + 3),
        }
    }

    #[test]
    fn single_token_returns_v() {
        let (q, k, v) = (rand_t3(2, 1, 3, 1), rand_t3(2, 1, 3, 2), rand_t3(2, 1, 4, 3));
        assert_eq!(attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn equal_logits_average_v() {
        let q = Tensor3::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let k = Tensor3::new(1, 3, 2, vec![0.0, 1.0, 0.0, -2.0, 0.0, 5.0]).unwrap();
        let v = rand_t3(1, 3, 2, 4);
        let out = attention(&q, &k, &v).unwrap();
        for c in 0..2 {
            let mean = (v.at(0, 0, c) + v.at(0, 1, c) + v.at(0, 2, c)) / 3.0;
            assert!((out.at(0, 0, c) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_triple_loop_reference() {
        let (q, k, v) = (rand_t3(2, 3, 4, 5), rand_t3(2, 3, 4, 6), rand_t3(2, 3, 4, 7));
        let out = attention(&q, &k, &v).unwrap();
        assert!(max_diff(&out.data, &naive_attention(&q, &k, &v)) <= 1e-12);
    }

    #[test]
    fn rows_sum_to_one_and_shift_invariant() {
        let (q, k) = (rand_t3(2, 4, 3, 8), rand_t3(2, 5, 3, 9));
        for w in attention_weights(&q, &k).unwrap() {
            for row in w.chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        // Adding a vector c to every key adds q·c to each whole logit row.
        let mut k2 = k.clone();
        for b in 0..2 {
            for j in 0..5 {
                k2.row_mut(b, j).iter_mut().zip([0.3, -1.0, 2.0]).for_each(|(x, c)| *x += c);
            }
        }
        let v = rand_t3(2, 5, 2, 10);
        let a = attention(&q, &k, &v).unwrap();
        let b = attention(&q, &k2, &v).unwrap();
        assert!(max_diff(&a.data, &b.data) <= 1e-12);
    }

    #[test]
    fn non_finite_logits_report_row() {
        let q = Tensor3::new(1, 2, 1, vec![1.0, f64::NAN]).unwrap();
        let k = Tensor3::new(1, 1, 1, vec![1.0]).unwrap();
        let err = attention(&q, &k, &k).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1, .. }), "{err}");
    }

    #[test]
    fn one_head_identity_projection_is_attention() {
        let (q, k, v) = (rand_t3(2, 3, 4, 11), rand_t3(2, 3, 4, 12), rand_t3(2, 3, 4, 13));
        let mha = multi_head_attention(&q, &k, &v, &MhaParams::identity(4, 1)).unwrap();
        assert!(max_diff(&mha.data, &attention(&q, &k, &v).unwrap().data) <= 1e-15);
    }

    #[test]
    fn two_heads_match_reference() {
        let (q, k, v) = (rand_t3(2, 3, 4, 14), rand_t3(2, 3, 4, 15), rand_t3(2, 3, 4, 16));
        let p = random_mha(4, 2, 17);
        let (out, weights) = multi_head_attention_with_weights(&q, &k, &v, &p).unwrap();
        assert!(max_diff(&out.data, &naive_mha(&q, &k, &v, &p)) <= 1e-12);
        for head in weights {
            for w in head {
                for row in w.chunks(3) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
        assert!(multi_head_attention(&q, &k, &v, &random_mha(4, 3, 1)).is_err());
    }
}
