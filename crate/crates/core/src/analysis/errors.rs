//! In-context error counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::modmath::Modulus;
use crate::nncore::{ParamStore, Real};
use crate::taskgen::{BatchStream, CurriculumSpec, MismatchPolicy, Mode, SequencePack};

/// Sequences per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 128;

/// Something that predicts the `y` of every pair of a sequence.
pub trait Predictor {
    /// `out[s][k]` is the predicted `y` of pair `k` in `seqs[s]`.
    fn predict(&self, seqs: &[SequencePack]) -> Result<Vec<Vec<u32>>>;
}

/// Argmax of the model's next-token logits at each `x` position.
pub struct ModelPredictor<'a, T> {
    pub model: &'a Transformer,
    pub params: &'a ParamStore<T>,
}

impl<T: Real> Predictor for ModelPredictor<'_, T> {
    fn predict(&self, seqs: &[SequencePack]) -> Result<Vec<Vec<u32>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(EVAL_CHUNK) {
            let tokens: Vec<u32> = chunk.iter().flat_map(|s| s.tokens.iter().copied()).collect();
            let trace = self.model.trace(self.params, &tokens, chunk.len())?;
            for (b, s) in chunk.iter().enumerate() {
                out.push((0..s.pairs()).map(|k| trace.argmax_at(b, SequencePack::x_pos(k)) as u32).collect());
            }
        }
        Ok(out)
    }
}

/// Answers every pair correctly from the generating parameters.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, seqs: &[SequencePack]) -> Result<Vec<Vec<u32>>> {
        Ok(seqs.iter().map(|s| s.probe_targets.iter().map(|t| t.y as u32).collect()).collect())
    }
}

/// Per-shot error counts over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub counts: Vec<u64>,
    pub eval_size: u64,
    pub spec: CurriculumSpec,
    /// Pair indices where the second and third blocks start.
    pub block_starts: Vec<usize>,
}

impl ErrorProfile {
    pub fn accuracy(&self, shot: usize) -> f64 {
        1.0 - self.counts[shot] as f64 / self.eval_size as f64
    }

    /// Shots of the composite block (the last `n` pairs).
    pub fn composite_shots(&self) -> std::ops::Range<usize> {
        self.spec.composite_start()..self.spec.pairs
    }

    pub fn composite_counts(&self) -> &[u64] {
        &self.counts[self.composite_shots()]
    }

    pub fn block_of(&self, shot: usize) -> usize {
        self.block_starts.iter().filter(|&&s| shot >= s).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("shot,block,errors,eval_size,accuracy\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{k},{},{c},{},{:.6}\n", self.block_of(k), self.eval_size, self.accuracy(k)));
        }
        s
    }
}

fn block_starts(spec: &CurriculumSpec) -> Vec<usize> {
    vec![spec.m, 2 * spec.m]
}

fn check_eval(seqs: &[SequencePack]) -> Result<CurriculumSpec> {
    let first = seqs.first().ok_or(Error::EmptyEval)?;
    if seqs.iter().any(|s| s.spec != first.spec) {
        return Err(Error::config("eval", "sequences mix context layouts"));
    }
    Ok(first.spec)
}

/// Counts, for each shot, the sequences whose `y` was mispredicted.
pub fn per_shot_errors(predictor: &impl Predictor, seqs: &[SequencePack]) -> Result<ErrorProfile> {
    let spec = check_eval(seqs)?;
    let preds = predictor.predict(seqs)?;
    let mut counts = vec![0u64; spec.pairs];
    for (s, pred) in seqs.iter().zip(&preds) {
        for (k, t) in s.probe_targets.iter().enumerate() {
            if pred[k] as u64 != t.y {
                counts[k] += 1;
            }
        }
    }
    Ok(ErrorProfile { counts, eval_size: seqs.len() as u64, spec, block_starts: block_starts(&spec) })
}

/// Where in the composite block each sequence made its last mistake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastErrorHistogram {
    /// `bins[j]` counts sequences whose last error was composite shot `j`.
    pub bins: Vec<u64>,
    pub no_error: u64,
}

impl LastErrorHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.no_error
    }

    /// Mean composite-shot index of the last error, ignoring error-free
    /// sequences.
    pub fn mean_last_error(&self) -> Option<f64> {
        let n: u64 = self.bins.iter().sum();
        (n > 0).then(|| self.bins.iter().enumerate().map(|(j, c)| j as f64 * *c as f64).sum::<f64>() / n as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("last_error_shot,count\n");
        for (j, c) in self.bins.iter().enumerate() {
            s.push_str(&format!("{j},{c}\n"));
        }
        s.push_str(&format!("none,{}\n", self.no_error));
        s
    }
}

pub fn last_error_histogram(predictor: &impl Predictor, seqs: &[SequencePack]) -> Result<LastErrorHistogram> {
    let spec = check_eval(seqs)?;
    let preds = predictor.predict(seqs)?;
    let start = spec.composite_start();
    let mut hist = LastErrorHistogram { bins: vec![0; spec.n], no_error: 0 };
    for (s, pred) in seqs.iter().zip(&preds) {
        let last = (start..spec.pairs).rev().find(|&k| pred[k] as u64 != s.probe_targets[k].y);
        match last {
            Some(k) => hist.bins[k - start] += 1,
            None => hist.no_error += 1,
        }
    }
    Ok(hist)
}

/// Evaluation sequences from the given pairs in the given layout.
pub fn eval_sequences(
    p: Modulus,
    pairs: &[(u64, u64)],
    spec: CurriculumSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<SequencePack>> {
    if count == 0 {
        return Err(Error::EmptyEval);
    }
    BatchStream::new(p, pairs.to_vec(), spec, count, seed)?.take(count)
}

/// Error profile on sequences whose composite block uses a different
/// pair than the subtask blocks.
pub fn mismatch_eval(
    predictor: &impl Predictor,
    p: Modulus,
    pairs: &[(u64, u64)],
    spec: CurriculumSpec,
    policy: MismatchPolicy,
    count: usize,
    seed: u64,
) -> Result<ErrorProfile> {
    let spec = CurriculumSpec { mode: Mode::Mismatch, ..spec };
    let mut stream = BatchStream::new(p, pairs.to_vec(), spec, count.max(1), seed)?;
    stream.mismatch_policy = policy;
    let seqs = stream.take(count)?;
    per_shot_errors(predictor, &seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modmath::primitive_roots;

    fn pairs(p: u64) -> Vec<(u64, u64)> {
        let r = primitive_roots(Modulus::new(p).unwrap());
        r.iter().flat_map(|&a| r.iter().map(move |&b| (a, b))).collect()
    }

    struct Constant(u32);
    impl Predictor for Constant {
        fn predict(&self, seqs: &[SequencePack]) -> Result<Vec<Vec<u32>>> {
            Ok(seqs.iter().map(|s| vec![self.0; s.pairs()]).collect())
        }
    }

    #[test]
    fn oracle_makes_no_errors() {
        let p = Modulus::new(13).unwrap();
        let spec = CurriculumSpec::new(4, 4, Mode::Curriculum).unwrap();
        let seqs = eval_sequences(p, &pairs(13), spec, 50, 1).unwrap();
        let prof = per_shot_errors(&OraclePredictor, &seqs).unwrap();
        assert!(prof.counts.iter().all(|&c| c == 0));
        let h = last_error_histogram(&OraclePredictor, &seqs).unwrap();
        assert_eq!(h.no_error, 50);
        assert_eq!(h.total(), 50);
        let mm = mismatch_eval(&OraclePredictor, p, &pairs(13), spec, MismatchPolicy::BothDiffer, 40, 2).unwrap();
        assert!(mm.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn histogram_partitions_the_eval_set() {
        let p = Modulus::new(11).unwrap();
        let spec = CurriculumSpec::new(3, 4, Mode::Curriculum).unwrap();
        let seqs = eval_sequences(p, &pairs(11), spec, 300, 3).unwrap();
        let h = last_error_histogram(&Constant(1), &seqs).unwrap();
        assert_eq!(h.total(), 300);
        assert_eq!(h.bins.len(), 4);
        let prof = per_shot_errors(&Constant(1), &seqs).unwrap();
        assert!(prof.counts.iter().all(|&c| c <= 300));
        assert_eq!(prof.block_of(0), 0);
        assert_eq!(prof.block_of(3), 1);
        assert_eq!(prof.block_of(6), 2);
        assert!(prof.to_csv().starts_with("shot,block,errors,eval_size,accuracy\n0,0,"));
    }

    #[test]
    fn empty_eval_is_an_error() {
        assert!(matches!(per_shot_errors(&OraclePredictor, &[]), Err(Error::EmptyEval)));
    }
}
