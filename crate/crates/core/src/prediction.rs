//! Start, end and internal-frame heads, the training losses, and boundary
//! decoding.
//!
//! Logits leave the heads batch-major as `[B, T]`; the frame mask marks
//! `b * T + t` valid when `t` is inside item `b`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{BiLstm, Dropout};
use crate::error::{Error, Result};
use crate::numerics::{Bound, ParamSet, Scalar, Tensor, Var};

/// One hidden layer with tanh, then a scalar output:
/// `<prefix>.{w1 [in, hidden], b1, w2 [hidden, 1], b2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<S: Scalar>(&self, params: &mut ParamSet<S>, rng: &mut impl Rng) {
        let (i, h) = (self.input, self.hidden);
        params.insert(self.name("w1"), Tensor::uniform(&[i, h], 1.0 / (i as f64).sqrt(), rng));
        params.insert(self.name("b1"), Tensor::zeros(&[h]));
        params.insert(self.name("w2"), Tensor::uniform(&[h, 1], 1.0 / (h as f64).sqrt(), rng));
        params.insert(self.name("b2"), Tensor::zeros(&[1]));
    }

    /// `[rows, input] -> [rows, 1]`
    pub fn forward<'g, S: Scalar>(&self, bound: &Bound<'g, S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        let h = x
            .matmul(bound.get(&self.name("w1"))?)?
            .add(bound.get(&self.name("b1"))?)?
            .tanh()?;
        Ok(h.matmul(bound.get(&self.name("w2"))?)?
            .add(bound.get(&self.name("b2"))?)?)
    }
}

pub const HEADS: [&str; 3] = ["start", "end", "internal"];

/// Three heads, each a BiLSTM over the cross features followed by an MLP.
/// With `tied`, the heads share one BiLSTM; the MLPs are always separate.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub lstms: Vec<BiLstm>,
    pub mlps: Vec<Mlp>,
}

pub struct Logits<'g, S> {
    pub start: Var<'g, S>,
    pub end: Var<'g, S>,
    pub internal: Var<'g, S>,
}

impl Predictor {
    /// `input` is the cross-feature width, `dim` the (even) BiLSTM output
    /// width, `hidden` the MLP hidden width.
    pub fn new(input: usize, dim: usize, hidden: usize, tied: bool) -> Self {
        let lstms = if tied {
            vec![BiLstm::new("pred.lstm", input, dim / 2)]
        } else {
            HEADS
                .iter()
                .map(|h| BiLstm::new(format!("pred.{h}.lstm"), input, dim / 2))
                .collect()
        };
        let mlps = HEADS
            .iter()
            .map(|h| Mlp::new(format!("pred.{h}.mlp"), dim, hidden))
            .collect();
        Self { lstms, mlps }
    }

    pub fn init<S: Scalar>(&self, params: &mut ParamSet<S>, rng: &mut impl Rng) {
        for l in &self.lstms {
            l.init(params, rng);
        }
        for m in &self.mlps {
            m.init(params, rng);
        }
    }

    /// `cross` is `[T*B, input]` time-major; `frame_lens[b]` the valid length of item `b`.
    pub fn forward<'g, S: Scalar>(
        &self,
        bound: &Bound<'g, S>,
        cross: Var<'g, S>,
        frame_lens: &[usize],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Logits<'g, S>> {
        let batch = frame_lens.len();
        let steps = cross.shape()[0] / batch.max(1);
        let mut states = Vec::with_capacity(self.lstms.len());
        for l in &self.lstms {
            states.push(l.forward(bound, cross, frame_lens, dropout.as_deref_mut())?);
        }
        let mut out = Vec::with_capacity(3);
        for (k, mlp) in self.mlps.iter().enumerate() {
            let h = states[k.min(states.len() - 1)];
            out.push(mlp.forward(bound, h)?.reshape(&[steps, batch])?.transpose()?);
        }
        Ok(Logits {
            start: out[0],
            end: out[1],
            internal: out[2],
        })
    }
}

/// Batch-major validity mask, `b * steps + t`.
pub fn frame_mask(frame_lens: &[usize], steps: usize) -> Vec<bool> {
    frame_lens
        .iter()
        .flat_map(|&l| (0..steps).map(move |t| t < l))
        .collect()
}

fn check_spans(frame_lens: &[usize], spans: &[(usize, usize)]) -> Result<()> {
    if spans.len() != frame_lens.len() || spans.is_empty() {
        return Err(Error::Data(format!(
            "{} ground-truth spans for a batch of {}",
            spans.len(),
            frame_lens.len()
        )));
    }
    for (b, (&(s, e), &len)) in spans.iter().zip(frame_lens).enumerate() {
        if s > e || e >= len {
            return Err(Error::Data(format!(
                "item {b}: span ({s}, {e}) invalid for {len} frames"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of `-[log P_s(s) + log P_e(e)]`, the softmaxes taken
/// over valid frames only.
pub fn boundary_loss<'g, S: Scalar>(
    start: Var<'g, S>,
    end: Var<'g, S>,
    frame_lens: &[usize],
    spans: &[(usize, usize)],
) -> Result<Var<'g, S>> {
    check_spans(frame_lens, spans)?;
    let steps = start.shape()[1];
    let mask = frame_mask(frame_lens, steps);
    let starts: Vec<usize> = spans.iter().enumerate().map(|(b, &(s, _))| b * steps + s).collect();
    let ends: Vec<usize> = spans.iter().enumerate().map(|(b, &(_, e))| b * steps + e).collect();
    let ls = start
        .masked_log_softmax_rows(&mask)?
        .reshape(&[mask.len()])?
        .gather(&starts)?
        .sum()?;
    let le = end
        .masked_log_softmax_rows(&mask)?
        .reshape(&[mask.len()])?
        .gather(&ends)?
        .sum()?;
    let k = S::of(spans.len() as f64);
    Ok(ls.add(le)?.scale(-S::one() / k)?)
}

/// Mean over the batch of `-Σ_{j=s..=e} log P_f(j) / (e - s)`.
///
/// A single-frame span (`s == e`) divides by 1 instead; such spans are
/// counted in the returned total. With `strict_mean` the divisor is the
/// number of summed terms, `e - s + 1`.
pub fn internal_loss<'g, S: Scalar>(
    internal: Var<'g, S>,
    frame_lens: &[usize],
    spans: &[(usize, usize)],
    strict_mean: bool,
) -> Result<(Var<'g, S>, usize)> {
    check_spans(frame_lens, spans)?;
    let steps = internal.shape()[1];
    let mask = frame_mask(frame_lens, steps);
    let mut degenerate = 0;
    let mut weights = vec![S::zero(); mask.len()];
    for (b, &(s, e)) in spans.iter().enumerate() {
        let denom = if strict_mean {
            e - s + 1
        } else if s == e {
            degenerate += 1;
            1
        } else {
            e - s
        };
        weights[b * steps + s..=b * steps + e].fill(S::one() / S::of(denom as f64));
    }
    let w = internal
        .graph()
        .constant(Tensor::new(vec![spans.len(), steps], weights)?);
    let k = S::of(spans.len() as f64);
    let loss = internal
        .masked_log_softmax_rows(&mask)?
        .mul(w)?
        .sum()?
        .scale(-S::one() / k)?;
    Ok((loss, degenerate))
}

/// `L_c + lambda * L_I`
pub fn total_loss<'g, S: Scalar>(boundary: Var<'g, S>, internal: Var<'g, S>, lambda: f64) -> Result<Var<'g, S>> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(boundary.add(internal.scale(S::of(lambda))?)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l_c: f64,
    pub l_i: f64,
    pub total: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPrediction {
    pub start: usize,
    pub end: usize,
    /// `e_s[start] + e_e[end]`
    pub score: f64,
}

/// Best `(t_s, t_e)` with `t_s <= t_e` by `e_s[t_s] + e_e[t_e]`; ties go to
/// the smallest `t_s`, then the smallest `t_e`.
pub fn infer_boundaries<S: Scalar>(start: &[S], end: &[S]) -> Result<BoundaryPrediction> {
    if start.is_empty() || start.len() != end.len() {
        return Err(Error::Data(format!(
            "cannot decode logits of lengths {} and {}",
            start.len(),
            end.len()
        )));
    }
    let (mut arg_s, mut best_s) = (0, start[0]);
    let mut best = (0, 0, start[0] + end[0]);
    for te in 1..start.len() {
        if start[te] > best_s {
            arg_s = te;
            best_s = start[te];
        }
        let score = best_s + end[te];
        if score > best.2 {
            best = (arg_s, te, score);
        }
    }
    Ok(BoundaryPrediction {
        start: best.0,
        end: best.1,
        score: best.2.to_f64_lossy(),
    })
}

struct Candidate<S> {
    score: S,
    start: usize,
    end: usize,
}

impl<S: Scalar> Ord for Candidate<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .partial_cmp(&other.score)
            .unwrap_or(Ordering::Equal)
            .then(other.start.cmp(&self.start))
            .then(other.end.cmp(&self.end))
    }
}

impl<S: Scalar> PartialOrd for Candidate<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> PartialEq for Candidate<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Candidate<S> {}

/// The `k` best feasible pairs in decoding order (score descending, then
/// `t_s`, then `t_e` ascending). Returns every feasible pair when fewer than `k` exist.
pub fn infer_top_k<S: Scalar>(start: &[S], end: &[S], k: usize) -> Result<Vec<BoundaryPrediction>> {
    infer_boundaries(start, end)?;
    if k == 0 {
        return Err(Error::Config("top-k needs k >= 1".into()));
    }
    let n = start.len();
    // Ends by decreasing logit, earliest first on ties. Each start walks this
    // list, skipping ends before it, and a heap merges the walks.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| end[b].partial_cmp(&end[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut cursor = vec![0usize; n];
    let advance = |ts: usize, cursor: &mut [usize]| -> Option<usize> {
        while cursor[ts] < n {
            let te = order[cursor[ts]];
            cursor[ts] += 1;
            if te >= ts {
                return Some(te);
            }
        }
        None
    };
    let mut heap = BinaryHeap::with_capacity(n);
    for ts in 0..n {
        if let Some(te) = advance(ts, &mut cursor) {
            heap.push(Candidate {
                score: start[ts] + end[te],
                start: ts,
                end: te,
            });
        }
    }
    let mut out = Vec::with_capacity(k.min(n * (n + 1) / 2));
    while out.len() < k {
        let Some(c) = heap.pop() else { break };
        out.push(BoundaryPrediction {
            start: c.start,
            end: c.end,
            score: c.score.to_f64_lossy(),
        });
        if let Some(te) = advance(c.start, &mut cursor) {
            heap.push(Candidate {
                score: start[c.start] + end[te],
                start: c.start,
                end: te,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(start: &[f64], end: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut all = Vec::new();
        for s in 0..start.len() {
            for e in s..end.len() {
                all.push((s, e, start[s] + end[e]));
            }
        }
        all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        all
    }

    fn row<'g>(g: &'g Graph<f64>, data: &[f64]) -> Var<'g, f64> {
        g.constant(Tensor::matrix(1, data.len(), data.to_vec()).unwrap())
    }

    #[test]
    fn decoding_examples() {
        let p = infer_boundaries(&[0.0], &[0.0]).unwrap();
        assert_eq!((p.start, p.end), (0, 0));
        let p = infer_boundaries(&[3.0, 0.0, 0.0], &[0.0, 0.0, 5.0]).unwrap();
        assert_eq!((p.start, p.end, p.score), (0, 2, 8.0));
        let p = infer_boundaries(&[0.0, 10.0, 0.0], &[9.0, 0.0, 0.0]).unwrap();
        assert_eq!((p.start, p.end, p.score), (1, 1, 10.0));
        assert!(infer_boundaries::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn top_k_of_flat_pair() {
        let got: Vec<_> = infer_top_k(&[0.0, 0.0], &[0.0, 0.0], 10)
            .unwrap()
            .iter()
            .map(|p| (p.start, p.end))
            .collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn top_k_matches_enumeration_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let t = rng.gen_range(1..25);
            let s: Vec<f64> = (0..t).map(|_| rng.gen_range(0..4) as f64).collect();
            let e: Vec<f64> = (0..t).map(|_| rng.gen_range(0..4) as f64).collect();
            let expected = brute_force(&s, &e);
            let k = rng.gen_range(1..8);
            let got = infer_top_k(&s, &e, k).unwrap();
            assert_eq!(got.len(), k.min(expected.len()));
            for (g, x) in got.iter().zip(&expected) {
                assert_eq!((g.start, g.end, g.score), *x);
            }
            let best = infer_boundaries(&s, &e).unwrap();
            assert_eq!((best.start, best.end), (expected[0].0, expected[0].1));
        }
    }

    #[test]
    fn uniform_boundary_loss_is_two_log_t() {
        let g = Graph::new();
        let z = row(&g, &[0.0; 10]);
        let l = boundary_loss(z, z, &[10], &[(3, 7)]).unwrap();
        assert!((l.value().data()[0] - 2.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn boundary_loss_by_hand() {
        let g = Graph::new();
        let s = row(&g, &[0.0, 0.0, 0.0]);
        let e = row(&g, &[0.0, 8f64.ln(), 0.0]);
        let l = boundary_loss(s, e, &[3], &[(0, 1)]).unwrap().value().data()[0];
        // -log(1/3) - log(8/10)
        assert!((l - (3f64.ln() + (10.0f64 / 8.0).ln())).abs() < 1e-12);
        assert!((l - 1.3218).abs() < 1e-4);
    }

    #[test]
    fn boundary_loss_rejects_bad_spans() {
        let g = Graph::new();
        let z = row(&g, &[0.0; 4]);
        assert!(boundary_loss(z, z, &[4], &[(2, 4)]).is_err());
        assert!(boundary_loss(z, z, &[4], &[(3, 2)]).is_err());
        assert!(boundary_loss(z, z, &[3], &[(0, 3)]).is_err());
    }

    #[test]
    fn internal_loss_closed_forms() {
        let g = Graph::new();
        let z = row(&g, &[0.0; 10]);
        let (l, n) = internal_loss(z, &[10], &[(2, 5)], false).unwrap();
        assert_eq!(n, 0);
        assert!((l.value().data()[0] - 4.0 * 10f64.ln() / 3.0).abs() < 1e-12);
        let (l, _) = internal_loss(z, &[10], &[(2, 5)], true).unwrap();
        assert!((l.value().data()[0] - 10f64.ln()).abs() < 1e-12);
        let (l, n) = internal_loss(z, &[10], &[(4, 4)], false).unwrap();
        assert_eq!(n, 1);
        assert!((l.value().data()[0] - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn total_is_weighted_sum() {
        let g = Graph::new();
        let (a, b) = (row(&g, &[4.60517]).sum().unwrap(), row(&g, &[3.07011]).sum().unwrap());
        let l = total_loss(a, b, 0.7).unwrap().value().data()[0];
        assert_eq!(l, 4.60517 + 0.7 * 3.07011);
        assert!((l - 6.75425).abs() < 1e-5);
        assert_eq!(total_loss(a, b, 0.0).unwrap().value().data()[0], 4.60517);
        assert!(total_loss(a, b, -1.0).is_err());
    }

    #[test]
    fn padded_frames_take_no_probability() {
        let g = Graph::new();
        // Item 1 has 2 valid frames of 4; its padded logits are huge.
        let z = g.constant(Tensor::matrix(2, 4, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 50.0, 50.0]).unwrap());
        let l = boundary_loss(z, z, &[4, 2], &[(0, 3), (0, 1)]).unwrap().value().data()[0];
        assert!((l - (4f64.ln() + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_heads_give_uniform_logits() {
        let pred = Predictor::new(4, 4, 3, false);
        let mut params = ParamSet::<f64>::new();
        pred.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, t) in params.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let g = Graph::new();
        let b = params.bind(&g);
        let cross = g.constant(Tensor::uniform(&[5, 4], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
        let out = pred.forward(&b, cross, &[5], None).unwrap();
        assert_eq!(out.start.shape(), vec![1, 5]);
        assert!(out.start.value().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tied_heads_share_one_lstm() {
        let pred = Predictor::new(4, 6, 3, true);
        let mut params = ParamSet::<f64>::new();
        pred.init(&mut params, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(params.names().filter(|n| n.ends_with("w_x")).count(), 2);
        assert_eq!(params.names().filter(|n| n.ends_with("w1")).count(), 3);
    }

    proptest! {
        #[test]
        fn argmax_ignores_per_head_shifts(
            s in prop::collection::vec(-3.0f64..3.0, 1..30),
            shift_s in -100.0f64..100.0,
            shift_e in -100.0f64..100.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Integer-valued logits so shifting is exact and ties survive.
            let s: Vec<f64> = s.iter().map(|x| x.round()).collect();
            let e: Vec<f64> = (0..s.len()).map(|_| rng.gen_range(-3..=3) as f64).collect();
            let a = infer_boundaries(&s, &e).unwrap();
            let (ks, ke) = (shift_s.round(), shift_e.round());
            let s2: Vec<f64> = s.iter().map(|x| x + ks).collect();
            let e2: Vec<f64> = e.iter().map(|x| x + ke).collect();
            let b = infer_boundaries(&s2, &e2).unwrap();
            prop_assert_eq!((a.start, a.end), (b.start, b.end));
        }

        #[test]
        fn moving_mass_to_the_target_lowers_boundary_loss(
            logits in prop::collection::vec(-2.0f64..2.0, 2..10), delta in 0.01f64..2.0, seed in any::<u64>()
        ) {
            let t = logits.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = rng.gen_range(0..t);
            let other = (gt + 1 + rng.gen_range(0..t - 1)) % t;
            let mut moved = logits.clone();
            moved[gt] += delta;
            moved[other] -= delta;
            let g = Graph::new();
            let flat = row(&g, &vec![0.0; t]);
            let before = boundary_loss(row(&g, &logits), flat, &[t], &[(gt, t - 1)]).unwrap().value().data()[0];
            let after = boundary_loss(row(&g, &moved), flat, &[t], &[(gt, t - 1)]).unwrap().value().data()[0];
            prop_assert!(after < before);
        }
    }
}
