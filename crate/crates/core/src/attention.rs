//! Frame-by-word attention: every frame builds its own summary of the query.
//!
//! Scores are additive, `r[t, j] = w_r · tanh(W_s h_q[j] + W_v h_v[t] + b_r)`,
//! normalized by a softmax over the valid words of the frame's item.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamSet, Scalar, Tensor, Var};

/// Parameter layout: `<prefix>.{w_s, w_v, b_r, w_r}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub prefix: String,
    pub dim: usize,
    /// Width of the shared scoring space.
    pub inner: usize,
}

pub struct Attended<'g, S> {
    /// `[T*B, d]` frame-specific query summaries.
    pub summary: Var<'g, S>,
    /// `[T*B, m]`; padded words get exactly 0.
    pub weights: Var<'g, S>,
    pub scores: Var<'g, S>,
}

/// `[rows, m]` validity mask for time-major rows whose item is `row % batch`.
pub fn word_mask(rows: usize, word_lens: &[usize], m: usize) -> Vec<bool> {
    let batch = word_lens.len();
    (0..rows * m).map(|i| (i % m) < word_lens[(i / m) % batch]).collect()
}

fn word_count(query_rows: usize, batch: usize) -> Result<usize> {
    if batch == 0 || query_rows == 0 || !query_rows.is_multiple_of(batch) {
        return Err(Error::Data(format!(
            "query of {query_rows} rows cannot be split over {batch} items"
        )));
    }
    Ok(query_rows / batch)
}

impl Attention {
    pub fn new(prefix: impl Into<String>, dim: usize, inner: usize) -> Self {
        Self {
            prefix: prefix.into(),
            dim,
            inner,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<S: Scalar>(&self, params: &mut ParamSet<S>, rng: &mut impl Rng) {
        let (d, a) = (self.dim, self.inner);
        params.insert(self.name("w_s"), Tensor::uniform(&[d, a], 1.0 / (d as f64).sqrt(), rng));
        params.insert(self.name("w_v"), Tensor::uniform(&[d, a], 1.0 / (d as f64).sqrt(), rng));
        params.insert(self.name("b_r"), Tensor::zeros(&[a]));
        params.insert(self.name("w_r"), Tensor::uniform(&[a], 1.0 / (a as f64).sqrt(), rng));
    }

    /// `video` is `[T*B, d]` time-major, `query` is `[m*B, d]` word-major,
    /// `word_lens[b]` the number of real words of item `b`.
    pub fn attend<'g, S: Scalar>(
        &self,
        bound: &Bound<'g, S>,
        video: Var<'g, S>,
        query: Var<'g, S>,
        word_lens: &[usize],
    ) -> Result<Attended<'g, S>> {
        let batch = word_lens.len();
        let m = word_count(query.shape()[0], batch)?;
        let frames = video
            .matmul(bound.get(&self.name("w_v"))?)?
            .add(bound.get(&self.name("b_r"))?)?;
        let words = query.matmul(bound.get(&self.name("w_s"))?)?;
        let scores = frames.pair_tanh_score(words, bound.get(&self.name("w_r"))?, batch)?;
        let mask = word_mask(video.shape()[0], word_lens, m);
        let weights = scores.masked_softmax_rows(&mask)?;
        let summary = weights.grouped_weighted_sum(query, batch)?;
        Ok(Attended {
            summary,
            weights,
            scores,
        })
    }
}

/// Replaces attention by the plain mean of each item's word states,
/// repeated for every one of `video_rows` frame rows.
pub fn mean_pool_query<'g, S: Scalar>(video_rows: usize, query: Var<'g, S>, word_lens: &[usize]) -> Result<Var<'g, S>> {
    let batch = word_lens.len();
    let m = word_count(query.shape()[0], batch)?;
    let data = (0..video_rows * m)
        .map(|i| {
            let len = word_lens[(i / m) % batch];
            if i % m < len {
                S::one() / S::of(len as f64)
            } else {
                S::zero()
            }
        })
        .collect();
    let weights = query.graph().constant(Tensor::new(vec![video_rows, m], data)?);
    Ok(weights.grouped_weighted_sum(query, batch)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        Tensor::uniform(&[rows, cols], 1.0, rng)
    }

    fn setup(seed: u64, d: usize) -> (Attention, ParamSet<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let att = Attention::new("att", d, d);
        let mut p = ParamSet::new();
        att.init(&mut p, &mut rng);
        (att, p, rng)
    }

    #[test]
    fn single_word_gets_all_the_weight() {
        let (att, p, mut rng) = setup(1, 4);
        let g = Graph::new();
        let b = p.bind(&g);
        let q = random(&mut rng, 1, 4);
        let out = att
            .attend(&b, g.constant(random(&mut rng, 5, 4)), g.constant(q.clone()), &[1])
            .unwrap();
        for t in 0..5 {
            assert_eq!(out.weights.value().row(t), &[1.0]);
            assert_eq!(out.summary.value().row(t), q.row(0));
        }
    }

    #[test]
    fn zero_scorer_gives_mean_of_words() {
        let (att, mut p, mut rng) = setup(2, 3);
        p.get_mut("att.w_r").unwrap().data_mut().fill(0.0);
        let g = Graph::new();
        let b = p.bind(&g);
        let q = g.constant(random(&mut rng, 4, 3));
        let out = att.attend(&b, g.constant(random(&mut rng, 6, 3)), q, &[4]).unwrap();
        let pooled = mean_pool_query(6, q, &[4]).unwrap().value();
        for t in 0..6 {
            assert!(out.weights.value().row(t).iter().all(|&w| (w - 0.25).abs() < 1e-15));
            for (x, y) in out.summary.value().row(t).iter().zip(pooled.row(t)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_hand_evaluation() {
        let mut p = ParamSet::new();
        p.insert("att.w_s", Tensor::matrix(2, 2, vec![0.5, -0.2, 0.1, 0.3]).unwrap());
        p.insert("att.w_v", Tensor::matrix(2, 2, vec![-0.4, 0.6, 0.2, 0.7]).unwrap());
        p.insert("att.b_r", Tensor::vector(vec![0.05, -0.1]));
        p.insert("att.w_r", Tensor::vector(vec![1.5, -0.8]));
        let hv = [[1.0, 2.0], [-0.5, 0.3]];
        let hq = [[0.2, -1.0], [0.9, 0.4]];

        let mut expected_w = [[0.0f64; 2]; 2];
        let mut expected_s = [[0.0f64; 2]; 2];
        for t in 0..2 {
            // v_k = Σ_i hv[t][i] W_v[i][k] + b_k, q_k = Σ_i hq[j][i] W_s[i][k]
            let v0: f64 = hv[t][0] * -0.4 + hv[t][1] * 0.2 + 0.05;
            let v1 = hv[t][0] * 0.6 + hv[t][1] * 0.7 - 0.1;
            let mut r = [0.0f64; 2];
            for j in 0..2 {
                let q0 = hq[j][0] * 0.5 + hq[j][1] * 0.1;
                let q1 = hq[j][0] * -0.2 + hq[j][1] * 0.3;
                r[j] = 1.5 * (q0 + v0).tanh() - 0.8 * (q1 + v1).tanh();
            }
            let (e0, e1) = (r[0].exp(), r[1].exp());
            let beta = [e0 / (e0 + e1), e1 / (e0 + e1)];
            expected_w[t] = beta;
            for k in 0..2 {
                expected_s[t][k] = beta[0] * hq[0][k] + beta[1] * hq[1][k];
            }
        }

        let g = Graph::new();
        let b = p.bind(&g);
        let video = g.constant(Tensor::matrix(2, 2, hv.concat()).unwrap());
        let query = g.constant(Tensor::matrix(2, 2, hq.concat()).unwrap());
        let out = Attention::new("att", 2, 2).attend(&b, video, query, &[2]).unwrap();
        for t in 0..2 {
            for k in 0..2 {
                assert!((out.weights.value().at(t, k) - expected_w[t][k]).abs() < 1e-12);
                assert!((out.summary.value().at(t, k) - expected_s[t][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padded_words_get_zero_weight() {
        let (att, p, mut rng) = setup(3, 4);
        let g = Graph::new();
        let b = p.bind(&g);
        // Two items, item 1 has a single real word; rows are j * 2 + b.
        let out = att
            .attend(
                &b,
                g.constant(random(&mut rng, 6, 4)),
                g.constant(random(&mut rng, 6, 4)),
                &[3, 1],
            )
            .unwrap();
        let w = out.weights.value();
        for r in 0..6 {
            let row = w.row(r);
            if r % 2 == 1 {
                assert_eq!(row, &[1.0, 0.0, 0.0]);
            }
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_query_is_an_error() {
        let (att, p, _) = setup(4, 2);
        let g = Graph::new();
        let b = p.bind(&g);
        let q = g.constant(Tensor::zeros(&[0, 2]));
        assert!(att.attend(&b, g.constant(Tensor::zeros(&[3, 2])), q, &[1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn weights_are_distributions_and_summaries_stay_in_the_hull(
            seed in any::<u64>(), t in 1usize..6, m in 1usize..5
        ) {
            let (att, p, mut rng) = setup(seed, 3);
            let g = Graph::new();
            let b = p.bind(&g);
            let q = random(&mut rng, m, 3);
            let out = att
                .attend(&b, g.constant(random(&mut rng, t, 3)), g.constant(q.clone()), &[m])
                .unwrap();
            let (w, s) = (out.weights.value(), out.summary.value());
            for r in 0..t {
                prop_assert!(w.row(r).iter().all(|&x| x >= 0.0));
                prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for k in 0..3 {
                    let lo = (0..m).map(|j| q.at(j, k)).fold(f64::INFINITY, f64::min);
                    let hi = (0..m).map(|j| q.at(j, k)).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(s.at(r, k) >= lo - 1e-12 && s.at(r, k) <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn word_order_permutation_permutes_nothing_in_the_summary(seed in any::<u64>(), m in 2usize..5) {
            let (att, p, mut rng) = setup(seed, 3);
            let v = random(&mut rng, 4, 3);
            let q = random(&mut rng, m, 3);
            let mut reversed = Vec::new();
            for j in (0..m).rev() {
                reversed.extend_from_slice(q.row(j));
            }
            let qr = Tensor::matrix(m, 3, reversed).unwrap();
            let g = Graph::new();
            let b = p.bind(&g);
            let a = att.attend(&b, g.constant(v.clone()), g.constant(q), &[m]).unwrap().summary.value();
            let c = att.attend(&b, g.constant(v), g.constant(qr), &[m]).unwrap().summary.value();
            for (x, y) in a.data().iter().zip(c.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
