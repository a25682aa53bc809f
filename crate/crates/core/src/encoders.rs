//! Bidirectional LSTM encoders for frame features and query words, plus the
//! frozen word-embedding table.
//!
//! Sequences are batched time-major: row `t * batch + b` holds step `t` of
//! item `b`. Items shorter than the batch maximum are padded; padded steps
//! carry the recurrent state through unchanged, so the backward direction of
//! a short item starts from a zero state at its own last valid step.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{concat_cols, concat_rows, sigmoid, Bound, Graph, ParamSet, Scalar, Tensor, Var};

/// Inverted-dropout settings for one training forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    /// Multiplies `x` by a fresh keep-mask scaled by `1 / (1 - rate)`.
    pub fn apply<'g, S: Scalar>(&mut self, x: Var<'g, S>) -> Result<Var<'g, S>> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = x.shape();
        let keep = S::of(1.0 / (1.0 - self.rate));
        let n = shape.iter().product();
        let mask: Vec<S> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < self.rate {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mask = x.graph().constant(Tensor::new(shape, mask)?);
        Ok(x.mul(mask)?)
    }
}

/// A batch of variable-length sequences, padded and laid out time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Padded<S> {
    pub rows: Tensor<S>,
    pub lens: Vec<usize>,
    pub max_len: usize,
}

impl<S: Scalar> Padded<S> {
    /// Packs `[len_b, dim]` matrices; padding rows are zero.
    pub fn pack(seqs: &[&Tensor<S>]) -> Result<Self> {
        let batch = seqs.len();
        if batch == 0 {
            return Err(Error::Data("cannot pack an empty batch".into()));
        }
        let dim = seqs[0].cols();
        let lens: Vec<usize> = seqs.iter().map(|s| s.rows()).collect();
        let max_len = *lens.iter().max().unwrap();
        if lens.contains(&0) {
            return Err(Error::Data("sequence of length 0".into()));
        }
        let mut data = vec![S::zero(); max_len * batch * dim];
        for (b, s) in seqs.iter().enumerate() {
            if s.cols() != dim {
                return Err(Error::Data(format!(
                    "sequence {b} has width {}, expected {dim}",
                    s.cols()
                )));
            }
            for t in 0..s.rows() {
                let r = t * batch + b;
                data[r * dim..(r + 1) * dim].copy_from_slice(s.row(t));
            }
        }
        Ok(Self {
            rows: Tensor::new(vec![max_len * batch, dim], data)?,
            lens,
            max_len,
        })
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn valid(&self, t: usize, b: usize) -> bool {
        t < self.lens[b]
    }

    /// Validity mask for a time-major tensor with `width` columns per row.
    pub fn row_mask(&self, width: usize) -> Vec<bool> {
        let batch = self.batch();
        let mut m = Vec::with_capacity(self.max_len * batch * width);
        for t in 0..self.max_len {
            for b in 0..batch {
                m.extend(std::iter::repeat_n(self.valid(t, b), width));
            }
        }
        m
    }
}

/// One direction of an LSTM, as plain tensors. Gate column order is
/// input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell<S> {
    pub w_x: Tensor<S>,
    pub w_h: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> LstmCell<S> {
    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }
}

/// Single LSTM update on unbatched vectors.
pub fn lstm_step<S: Scalar>(x: &[S], h: &[S], c: &[S], cell: &LstmCell<S>) -> Result<(Vec<S>, Vec<S>)> {
    let hid = cell.hidden();
    if x.len() != cell.w_x.rows() || h.len() != hid || c.len() != hid {
        return Err(crate::numerics::NumericsError::ShapeMismatch {
            op: "lstm_step",
            left: vec![x.len(), h.len(), c.len()],
            right: cell.w_x.shape().to_vec(),
        }
        .into());
    }
    let x = Tensor::new(vec![1, x.len()], x.to_vec())?;
    let hv = Tensor::new(vec![1, hid], h.to_vec())?;
    let z_x = x.matmul(&cell.w_x)?;
    let z_h = hv.matmul(&cell.w_h)?;
    let z: Vec<S> = z_x
        .data()
        .iter()
        .zip(z_h.data())
        .zip(cell.b.data())
        .map(|((&a, &b), &c)| a + b + c)
        .collect();
    let mut h_new = vec![S::zero(); hid];
    let mut c_new = vec![S::zero(); hid];
    for k in 0..hid {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[hid + k]);
        let g = z[2 * hid + k].tanh();
        let o = sigmoid(z[3 * hid + k]);
        c_new[k] = f * c[k] + i * g;
        h_new[k] = o * c_new[k].tanh();
    }
    Ok((h_new, c_new))
}

/// Layout of a bidirectional LSTM whose weights live in a [`ParamSet`]
/// under `<prefix>.fwd.*` and `<prefix>.bwd.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub prefix: String,
    pub input_dim: usize,
    /// Per-direction hidden size; the output width is twice this.
    pub hidden: usize,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

impl BiLstm {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    fn name(&self, dir: &str, part: &str) -> String {
        format!("{}.{dir}.{part}", self.prefix)
    }

    /// Uniform(-1/√h, 1/√h) weights, zero biases, forget-gate bias 1.
    pub fn init<S: Scalar>(&self, params: &mut ParamSet<S>, rng: &mut impl Rng) {
        let h = self.hidden;
        let bound = 1.0 / (h as f64).sqrt();
        for dir in DIRECTIONS {
            let mut uniform = |rows: usize| {
                let data = (0..rows * 4 * h).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
                Tensor::new(vec![rows, 4 * h], data).expect("shape matches data")
            };
            let w_x = uniform(self.input_dim);
            let w_h = uniform(h);
            let mut b = Tensor::zeros(&[4 * h]);
            b.data_mut()[h..2 * h].fill(S::one());
            params.insert(self.name(dir, "w_x"), w_x);
            params.insert(self.name(dir, "w_h"), w_h);
            params.insert(self.name(dir, "b"), b);
        }
    }

    /// Plain-tensor view of one direction (`"fwd"` or `"bwd"`).
    pub fn cell<S: Scalar>(&self, params: &ParamSet<S>, dir: &str) -> Result<LstmCell<S>> {
        let get = |part: &str| {
            params
                .get(&self.name(dir, part))
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing parameter {}", self.name(dir, part))))
        };
        Ok(LstmCell {
            w_x: get("w_x")?,
            w_h: get("w_h")?,
            b: get("b")?,
        })
    }

    /// Runs both directions over a padded time-major batch.
    ///
    /// `inputs` is `[max_len * batch, input_dim]`; the result is
    /// `[max_len * batch, 2 * hidden]` with row `[forward ; backward]`.
    pub fn forward<'g, S: Scalar>(
        &self,
        bound: &Bound<'g, S>,
        inputs: Var<'g, S>,
        lens: &[usize],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var<'g, S>> {
        let batch = lens.len();
        let shape = inputs.shape();
        if batch == 0 || shape.len() != 2 || shape[1] != self.input_dim || !shape[0].is_multiple_of(batch) {
            return Err(crate::numerics::NumericsError::ShapeMismatch {
                op: "bilstm",
                left: shape,
                right: vec![batch, self.input_dim],
            }
            .into());
        }
        let steps = shape[0] / batch;
        if steps == 0 {
            return Err(Error::Data("cannot encode an empty sequence".into()));
        }
        let x = match dropout {
            Some(d) => d.apply(inputs)?,
            None => inputs,
        };
        let mut halves = Vec::with_capacity(2);
        for (k, dir) in DIRECTIONS.iter().enumerate() {
            let w_x = bound.get(&self.name(dir, "w_x"))?;
            let w_h = bound.get(&self.name(dir, "w_h"))?;
            let b = bound.get(&self.name(dir, "b"))?;
            let projected = x.matmul(w_x)?.add(b)?;
            halves.push(self.run_direction(projected, w_h, lens, steps, k == 1)?);
        }
        Ok(concat_cols(&halves)?)
    }

    fn run_direction<'g, S: Scalar>(
        &self,
        projected: Var<'g, S>,
        w_h: Var<'g, S>,
        lens: &[usize],
        steps: usize,
        reverse: bool,
    ) -> Result<Var<'g, S>> {
        let g: &'g Graph<S> = projected.graph();
        let batch = lens.len();
        let hid = self.hidden;
        let zeros = g.constant(Tensor::zeros(&[batch, hid]));
        let (mut h, mut c) = (zeros, zeros);
        let mut outputs: Vec<Option<Var<'g, S>>> = vec![None; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let z = projected.slice_rows(t * batch, (t + 1) * batch)?.add(h.matmul(w_h)?)?;
            let gates = z.sigmoid()?;
            let i = gates.slice_cols(0, hid)?;
            let f = gates.slice_cols(hid, 2 * hid)?;
            let o = gates.slice_cols(3 * hid, 4 * hid)?;
            let cand = z.slice_cols(2 * hid, 3 * hid)?.tanh()?;
            let c_new = f.mul(c)?.add(i.mul(cand)?)?;
            let h_new = o.mul(c_new.tanh()?)?;
            if lens.iter().all(|&l| t < l) {
                h = h_new;
                c = c_new;
            } else {
                let mut keep = Vec::with_capacity(batch * hid);
                for &l in lens {
                    keep.extend(std::iter::repeat_n(if t < l { S::one() } else { S::zero() }, hid));
                }
                let hold: Vec<S> = keep.iter().map(|&k| S::one() - k).collect();
                let keep = g.constant(Tensor::new(vec![batch, hid], keep)?);
                let hold = g.constant(Tensor::new(vec![batch, hid], hold)?);
                h = keep.mul(h_new)?.add(hold.mul(h)?)?;
                c = keep.mul(c_new)?.add(hold.mul(c)?)?;
            }
            outputs[t] = Some(h);
        }
        let outputs: Vec<_> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(concat_rows(&outputs)?)
    }
}

/// Encodes padded frame features `[T*B, d_in]` into `[T*B, d]`.
pub fn encode_video<'g, S: Scalar>(
    bound: &Bound<'g, S>,
    lstm: &BiLstm,
    frames: &Padded<S>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var<'g, S>> {
    let x = bound.graph().constant(frames.rows.clone());
    lstm.forward(bound, x, &frames.lens, dropout)
}

/// Looks up each query's tokens in the frozen table and packs them.
pub fn embed_queries<S: Scalar>(queries: &[&[usize]], table: &EmbeddingTable) -> Result<Padded<S>> {
    let seqs = queries
        .iter()
        .map(|q| table.lookup::<S>(q))
        .collect::<Result<Vec<_>>>()?;
    Padded::pack(&seqs.iter().collect::<Vec<_>>())
}

/// Encodes token sequences into `[m*B, d]`; embeddings are constants and
/// never receive gradient.
pub fn encode_query<'g, S: Scalar>(
    bound: &Bound<'g, S>,
    lstm: &BiLstm,
    words: &Padded<S>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var<'g, S>> {
    encode_video(bound, lstm, words, dropout)
}

fn fill_missing(rows: &mut [f64], found: &[bool], dim: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, _) in found.iter().enumerate().filter(|(_, &f)| !f) {
        for x in &mut rows[i * dim..(i + 1) * dim] {
            *x = rng.gen_range(-0.1..0.1);
        }
    }
}

/// Frozen word vectors indexed by [`Vocabulary`] row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    rows: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if vocab.len() * dim != rows.len() {
            return Err(Error::Data(format!(
                "embedding matrix has {} values, expected {}x{dim}",
                rows.len(),
                vocab.len()
            )));
        }
        Ok(Self { vocab, dim, rows })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// The same table with every value rounded to 32-bit precision, as stored
    /// in checkpoints.
    pub fn quantized(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            dim: self.dim,
            rows: self.rows.iter().map(|&x| x as f32 as f64).collect(),
        }
    }

    /// `[m, dim]` matrix for a token sequence.
    pub fn lookup<S: Scalar>(&self, tokens: &[usize]) -> Result<Tensor<S>> {
        if tokens.is_empty() {
            return Err(Error::Data("empty query".into()));
        }
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for &t in tokens {
            if t >= self.vocab.len() {
                return Err(Error::Data(format!(
                    "token index {t} outside vocabulary of {}",
                    self.vocab.len()
                )));
            }
            data.extend(self.row(t).iter().map(|&x| S::of(x)));
        }
        Ok(Tensor::new(vec![tokens.len(), self.dim], data)?)
    }

    /// Reads a text embedding file (`word v1 ... v_dim` per line) for the
    /// words of `vocab`. Words the file lacks are drawn from U(-0.1, 0.1)
    /// with `seed`, in vocabulary order.
    pub fn load(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Data("cannot load embeddings for an empty vocabulary".into()));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = vec![0.0; vocab.len() * dim];
        let mut found = vec![false; vocab.len()];
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default();
            let values = parts
                .filter(|p| !p.is_empty())
                .map(|p| p.parse::<f64>().map_err(|e| parse_err(format!("bad value {p:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(parse_err(format!("expected {dim} values, found {}", values.len())));
            }
            if let Some(i) = vocab.get(word) {
                rows[i * dim..(i + 1) * dim].copy_from_slice(&values);
                found[i] = true;
            }
        }
        fill_missing(&mut rows, &found, dim, seed);
        Self::new(vocab.clone(), dim, rows)
    }

    /// A table with every row drawn from U(-0.1, 0.1), as if loaded from an
    /// empty file.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Data("cannot build embeddings for an empty vocabulary".into()));
        }
        let mut rows = vec![0.0; vocab.len() * dim];
        fill_missing(&mut rows, &vec![false; vocab.len()], dim, seed);
        Self::new(vocab.clone(), dim, rows)
    }

    /// Writes every row in the text format read by [`EmbeddingTable::load`].
    /// Values use the shortest representation that parses back exactly.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, word) in self.vocab.words().iter().enumerate() {
            let mut line = word.clone();
            for v in self.row(i) {
                line.push(' ');
                line.push_str(&format!("{v:?}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn encode_single(lstm: &BiLstm, params: &ParamSet<f64>, seq: &Tensor<f64>) -> Tensor<f64> {
        let g = Graph::new();
        let bound = params.bind(&g);
        let packed = Padded::pack(&[seq]).unwrap();
        let out = encode_video(&bound, lstm, &packed, None).unwrap();
        (*out.value()).clone()
    }

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor<f64> {
        Tensor::new(vec![t, d], (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_zero_state() {
        let cell = LstmCell::<f64> {
            w_x: Tensor::zeros(&[3, 8]),
            w_h: Tensor::zeros(&[2, 8]),
            b: Tensor::zeros(&[8]),
        };
        let (h, c) = lstm_step(&[0.3, -2.0, 5.0], &[0.0, 0.0], &[0.0, 0.0], &cell).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_input_weights_make_output_independent_of_input() {
        let mut r = rng();
        let mut cell = LstmCell::<f64> {
            w_x: Tensor::zeros(&[3, 8]),
            w_h: random_seq(&mut r, 2, 8),
            b: Tensor::vector((0..8).map(|i| i as f64 * 0.1).collect()),
        };
        cell.b.data_mut()[4] = 1.0;
        let a = lstm_step(&[1.0, 2.0, 3.0], &[0.1, 0.2], &[0.3, -0.1], &cell).unwrap();
        let b = lstm_step(&[-7.0, 0.0, 9.0], &[0.1, 0.2], &[0.3, -0.1], &cell).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graph_recurrence_matches_stepwise_reference() {
        let mut r = rng();
        let lstm = BiLstm::new("enc", 3, 4);
        let mut params = ParamSet::new();
        lstm.init(&mut params, &mut r);
        let seq = random_seq(&mut r, 5, 3);
        let out = encode_single(&lstm, &params, &seq);

        for (k, dir) in ["fwd", "bwd"].iter().enumerate() {
            let cell = lstm.cell(&params, dir).unwrap();
            let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
            let order: Vec<usize> = if k == 0 {
                (0..5).collect()
            } else {
                (0..5).rev().collect()
            };
            for t in order {
                (h, c) = lstm_step(seq.row(t), &h, &c, &cell).unwrap();
                for j in 0..4 {
                    assert!((out.at(t, k * 4 + j) - h[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_frame_output_shape() {
        let mut r = rng();
        let lstm = BiLstm::new("v", 4, 3);
        let mut params = ParamSet::new();
        lstm.init(&mut params, &mut r);
        let out = encode_single(&lstm, &params, &random_seq(&mut r, 1, 4));
        assert_eq!(out.shape(), &[1, 6]);
    }

    #[test]
    fn reversal_swaps_direction_halves() {
        let mut r = rng();
        let lstm = BiLstm::new("v", 3, 4);
        let mut params = ParamSet::new();
        lstm.init(&mut params, &mut r);
        // Make the two directions share weights so reversal is a pure symmetry.
        for part in ["w_x", "w_h", "b"] {
            let fwd = params.get(&format!("v.fwd.{part}")).unwrap().clone();
            params.insert(format!("v.bwd.{part}"), fwd);
        }
        let seq = random_seq(&mut r, 6, 3);
        let mut rev_data = Vec::new();
        for t in (0..6).rev() {
            rev_data.extend_from_slice(seq.row(t));
        }
        let rev = Tensor::new(vec![6, 3], rev_data).unwrap();
        let a = encode_single(&lstm, &params, &seq);
        let b = encode_single(&lstm, &params, &rev);
        for t in 0..6 {
            for j in 0..4 {
                assert_eq!(a.at(t, j), b.at(5 - t, 4 + j));
                assert_eq!(a.at(t, 4 + j), b.at(5 - t, j));
            }
        }
    }

    #[test]
    fn zero_dropout_training_equals_eval() {
        let mut r = rng();
        let lstm = BiLstm::new("v", 3, 2);
        let mut params = ParamSet::new();
        lstm.init(&mut params, &mut r);
        let seq = random_seq(&mut r, 4, 3);
        let eval = encode_single(&lstm, &params, &seq);
        let g = Graph::new();
        let bound = params.bind(&g);
        let mut drng = ChaCha8Rng::seed_from_u64(5);
        let mut d = Dropout {
            rate: 0.0,
            rng: &mut drng,
        };
        let packed = Padded::pack(&[&seq]).unwrap();
        let train = encode_video(&bound, &lstm, &packed, Some(&mut d)).unwrap();
        assert_eq!(*train.value(), eval);
    }

    #[test]
    fn padded_batch_rows_match_single_runs() {
        let mut r = rng();
        let lstm = BiLstm::new("v", 3, 4);
        let mut params = ParamSet::new();
        lstm.init(&mut params, &mut r);
        let seqs: Vec<Tensor<f64>> = [2, 5, 3].iter().map(|&t| random_seq(&mut r, t, 3)).collect();
        let packed = Padded::pack(&seqs.iter().collect::<Vec<_>>()).unwrap();
        let g = Graph::new();
        let bound = params.bind(&g);
        let batched = encode_video(&bound, &lstm, &packed, None).unwrap().value();
        for (b, seq) in seqs.iter().enumerate() {
            let single = encode_single(&lstm, &params, seq);
            for t in 0..seq.rows() {
                assert_eq!(batched.row(t * 3 + b), single.row(t));
            }
        }
    }

    #[test]
    fn shared_prefix_queries_differ_everywhere() {
        let mut r = rng();
        let lstm = BiLstm::new("q", 3, 3);
        let mut params = ParamSet::new();
        lstm.init(&mut params, &mut r);
        let a = random_seq(&mut r, 4, 3);
        let mut b = a.clone();
        b.row_mut(3).copy_from_slice(&[0.9, -0.9, 0.5]);
        let (ea, eb) = (encode_single(&lstm, &params, &a), encode_single(&lstm, &params, &b));
        for t in 0..4 {
            assert_ne!(ea.row(t), eb.row(t), "row {t}");
        }
    }

    #[test]
    fn embedding_load_fills_missing_words_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "cat 0.5 0.25\ndog -1 2\nbird 3 3\n").unwrap();
        let vocab = Vocabulary::from(vec!["cat".to_string(), "dog".to_string()]);
        let a = EmbeddingTable::load(&path, &vocab, 2, 9).unwrap();
        let b = EmbeddingTable::load(&path, &vocab, 2, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.row(1), &[0.5, 0.25]);
        assert_eq!(a.row(2), &[-1.0, 2.0]);
        assert!(a.row(0).iter().all(|x| x.abs() < 0.1));
    }

    #[test]
    fn embedding_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "cat 0.5 0.25\ndog 1\n").unwrap();
        let vocab = Vocabulary::from(vec!["cat".to_string()]);
        match EmbeddingTable::load(&path, &vocab, 2, 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "cat 0.5 x\n").unwrap();
        assert!(matches!(
            EmbeddingTable::load(&path, &vocab, 2, 0),
            Err(Error::Parse { line: 1, .. })
        ));
        let empty = Vocabulary::from(Vec::<String>::new());
        assert!(EmbeddingTable::load(&path, &empty, 2, 0).is_err());
    }

    #[test]
    fn unknown_token_uses_oov_row() {
        let vocab = Vocabulary::from(vec!["a".to_string()]);
        let table = EmbeddingTable::new(vocab.clone(), 2, vec![9.0, 9.0, 1.0, 2.0]).unwrap();
        let ids = vocab.encode(&["a".to_string(), "zzz".to_string()]);
        let m = table.lookup::<f64>(&ids).unwrap();
        assert_eq!(m.data(), &[1.0, 2.0, 9.0, 9.0]);
    }
}
