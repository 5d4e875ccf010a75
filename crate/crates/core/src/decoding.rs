//! Row-at-a-time inference helpers for greedy decoding.
//!
//! Decoder layers only look at rows up to the current position, so each step
//! only needs the new row plus cached key/value projections of earlier rows.

use crate::encoder::{TokenId, BOS, EOS, MASK, PAD};
use crate::error::{GdrError, Result};
use crate::numerics::graph::softmax_into;
use crate::numerics::{argmax, Matrix, ParameterStore, Scalar, LAYER_NORM_EPS};

pub(crate) struct Linear<S> {
    w: Matrix<S>,
    b: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn load(store: &ParameterStore<S>, w: &str, b: &str) -> Result<Self> {
        Ok(Self {
            w: store.get(w)?.to_matrix()?,
            b: store.get(b)?.data().to_vec(),
        })
    }

    pub fn apply(&self, x: &[S]) -> Vec<S> {
        let mut out = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == S::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.w.row(i)) {
                *o += xi * w;
            }
        }
        out
    }
}

pub(crate) struct Norm<S> {
    gain: Vec<S>,
    bias: Vec<S>,
}

impl<S: Scalar> Norm<S> {
    pub fn load(store: &ParameterStore<S>, prefix: &str) -> Result<Self> {
        Ok(Self {
            gain: store.get(&format!("{prefix}.gain"))?.data().to_vec(),
            bias: store.get(&format!("{prefix}.bias"))?.data().to_vec(),
        })
    }

    /// `LayerNorm(x + sub)`
    pub fn residual(&self, x: &[S], sub: &[S]) -> Vec<S> {
        let sum: Vec<S> = x.iter().zip(sub).map(|(&a, &b)| a + b).collect();
        let n = S::from_usize(sum.len()).unwrap();
        let mean = sum.iter().copied().sum::<S>() / n;
        let var = sum.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let is = S::one() / (var + S::of(LAYER_NORM_EPS)).sqrt();
        sum.iter()
            .enumerate()
            .map(|(c, &v)| self.gain[c] * ((v - mean) * is) + self.bias[c])
            .collect()
    }
}

pub(crate) struct Ffn<S> {
    inner: Linear<S>,
    outer: Linear<S>,
}

impl<S: Scalar> Ffn<S> {
    pub fn load(store: &ParameterStore<S>, prefix: &str) -> Result<Self> {
        Ok(Self {
            inner: Linear::load(store, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?,
            outer: Linear::load(store, &format!("{prefix}.w2"), &format!("{prefix}.b2"))?,
        })
    }

    pub fn apply(&self, x: &[S]) -> Vec<S> {
        let mut h = self.inner.apply(x);
        h.iter_mut().for_each(|v| *v = v.max(S::zero()));
        self.outer.apply(&h)
    }
}

pub(crate) struct Attention<S> {
    heads: usize,
    q: Linear<S>,
    k: Linear<S>,
    v: Linear<S>,
    o: Linear<S>,
}

impl<S: Scalar> Attention<S> {
    pub fn load(store: &ParameterStore<S>, prefix: &str, heads: usize) -> Result<Self> {
        let lin = |p: &str| Linear::load(store, &format!("{prefix}.w{p}"), &format!("{prefix}.b{p}"));
        Ok(Self {
            heads,
            q: lin("q")?,
            k: lin("k")?,
            v: lin("v")?,
            o: lin("o")?,
        })
    }

    /// Cache pre-filled with the projections of `seq` rows; rows flagged
    /// invalid are never attended.
    pub fn memory(&self, seq: &Matrix<S>, valid: Option<&[bool]>) -> KvCache<S> {
        let mut cache = KvCache::default();
        for r in 0..seq.rows() {
            if valid.map_or(true, |v| v[r]) {
                self.push(&mut cache, seq.row(r));
            }
        }
        cache
    }

    pub fn push(&self, cache: &mut KvCache<S>, row: &[S]) {
        cache.k.push(self.k.apply(row));
        cache.v.push(self.v.apply(row));
    }

    /// Attention output for one query row over every cached row.
    pub fn attend(&self, cache: &KvCache<S>, query: &[S]) -> Result<Vec<S>> {
        if cache.k.is_empty() {
            return Err(GdrError::Empty("attention cache"));
        }
        let q = self.q.apply(query);
        let hidden = q.len();
        let dk = hidden / self.heads;
        let scale = S::one() / S::from_usize(dk).unwrap().sqrt();
        let mut ctx = vec![S::zero(); hidden];
        let mut scores = vec![S::zero(); cache.k.len()];
        let mut w = vec![S::zero(); cache.k.len()];
        for h in 0..self.heads {
            let cols = h * dk..(h + 1) * dk;
            for (s, k) in scores.iter_mut().zip(&cache.k) {
                let mut dot = S::zero();
                for c in cols.clone() {
                    dot += q[c] * k[c];
                }
                *s = dot * scale;
            }
            softmax_into(&scores, |_| true, &mut w)?;
            for (&wj, v) in w.iter().zip(&cache.v) {
                for c in cols.clone() {
                    ctx[c] += wj * v[c];
                }
            }
        }
        Ok(self.o.apply(&ctx))
    }
}

#[derive(Default)]
pub(crate) struct KvCache<S> {
    k: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

/// Word embedding plus sinusoidal position code for one position.
pub(crate) fn embed_row<S: Scalar>(table: &Matrix<S>, id: TokenId, pos: usize) -> Result<Vec<S>> {
    if id >= table.rows() {
        return Err(GdrError::OutOfRange {
            what: "token id",
            value: id,
            limit: table.rows(),
        });
    }
    let hidden = table.cols();
    let mut row = table.row(id).to_vec();
    for i in (0..hidden).step_by(2) {
        let angle = pos as f64 / 10000f64.powf(i as f64 / hidden as f64);
        row[i] += S::of(angle.sin());
        if i + 1 < hidden {
            row[i + 1] += S::of(angle.cos());
        }
    }
    Ok(row)
}

/// Tokens never produced by greedy decoding.
pub const BANNED_OUTPUTS: [TokenId; 3] = [PAD, BOS, MASK];

/// Greedy choice over `logits` skipping [`BANNED_OUTPUTS`]; ties go to the
/// lowest id.
pub(crate) fn pick<S: Scalar>(logits: &[S]) -> Result<TokenId> {
    let mut masked = logits.to_vec();
    for &b in &BANNED_OUTPUTS {
        if b < masked.len() {
            masked[b] = S::neg_infinity();
        }
    }
    if masked.iter().any(|v| v.is_nan()) {
        return Err(GdrError::NonFinite("decoder logits".into()));
    }
    argmax(&masked).ok_or(GdrError::Empty("decoder logits"))
}

/// Feeds BOS then each chosen token through `step` until `choose` returns
/// `None`, EOS is chosen, or `max_len` tokens were emitted. Returns the
/// emitted ids and the logits of every step.
pub(crate) fn run_decoder<S: Scalar>(
    max_len: usize,
    max_positions: usize,
    mut step: impl FnMut(TokenId, usize) -> Result<Vec<S>>,
    mut choose: impl FnMut(usize, &[S]) -> Result<Option<TokenId>>,
) -> Result<(Vec<TokenId>, Vec<Vec<S>>)> {
    if max_len == 0 {
        return Err(GdrError::Invalid("max decode length must be at least 1".into()));
    }
    if max_len > max_positions {
        return Err(GdrError::OutOfRange {
            what: "max decode length",
            value: max_len,
            limit: max_positions,
        });
    }
    let mut ids = Vec::new();
    let mut all_logits = Vec::new();
    let mut prev = BOS;
    for pos in 0..max_len {
        let logits = step(prev, pos)?;
        let next = choose(pos, &logits)?;
        all_logits.push(logits);
        match next {
            None => break,
            Some(id) => {
                ids.push(id);
                if id == EOS {
                    break;
                }
                prev = id;
            }
        }
    }
    Ok((ids, all_logits))
}

pub(crate) fn softmax_row<S: Scalar>(logits: &[S]) -> Result<Vec<f64>> {
    let mut p = vec![S::zero(); logits.len()];
    softmax_into(logits, |_| true, &mut p)?;
    Ok(p.into_iter().map(Scalar::as_f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::sinusoidal_positions;

    #[test]
    fn embed_row_matches_position_table() {
        let table: Matrix<f64> = Matrix::zeros(6, 8);
        let pe: Matrix<f64> = sinusoidal_positions(5, 8);
        for t in 0..5 {
            assert_eq!(embed_row(&table, 5, t).unwrap(), pe.row(t));
        }
        assert!(embed_row(&table, 6, 0).is_err());
    }

    #[test]
    fn pick_skips_banned_ids() {
        assert_eq!(pick(&[9.0, 9.0, 1.0, 1.0, 9.0, 0.5]).unwrap(), 2);
        assert!(pick(&[0.0, 1.0, f64::NAN]).is_err());
    }
}
