//! Mean attention maps.

use serde::{Deserialize, Serialize};

use super::errors::EVAL_CHUNK;
use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::nncore::{ParamStore, Real};
use crate::taskgen::SequencePack;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Per layer and head, the mean `[seq, seq]` attention map over a set of
/// sequences and its block-to-block aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub layers: usize,
    pub heads: usize,
    pub seq: usize,
    pub count: usize,
    /// Token offsets where blocks start, beginning with 0.
    pub block_starts: Vec<usize>,
    /// `maps[l * heads + h]` is row-major `[seq, seq]`.
    pub maps: Vec<Vec<f64>>,
    /// `blocks[l * heads + h][i][j]`: mean over queries in block `i` of the
    /// attention mass placed on keys in block `j`.
    pub blocks: Vec<Vec<Vec<f64>>>,
}

impl AttentionSummary {
    pub fn map(&self, layer: usize, head: usize) -> &[f64] {
        &self.maps[layer * self.heads + head]
    }

    pub fn block(&self, layer: usize, head: usize) -> &[Vec<f64>] {
        &self.blocks[layer * self.heads + head]
    }

    /// Largest composite-to-subtask mass (last block onto all earlier
    /// blocks) over every head, with its location.
    pub fn max_composite_to_subtask(&self) -> (f64, usize, usize) {
        let last = self.block_starts.len() - 1;
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for l in 0..self.layers {
            for h in 0..self.heads {
                let row = &self.block(l, h)[last];
                let mass: f64 = row[..last].iter().sum();
                if mass > best.0 {
                    best = (mass, l, h);
                }
            }
        }
        best
    }

    pub fn map_csv(&self, layer: usize, head: usize) -> String {
        let m = self.map(layer, head);
        let mut s = String::from("query");
        for k in 0..self.seq {
            s.push_str(&format!(",key_{k:02}"));
        }
        s.push('\n');
        for q in 0..self.seq {
            s.push_str(&q.to_string());
            for k in 0..self.seq {
                s.push_str(&format!(",{}", m[q * self.seq + k]));
            }
            s.push('\n');
        }
        s
    }

    pub fn blocks_csv(&self) -> String {
        let nb = self.block_starts.len();
        let mut s = String::from("layer,head,query_block");
        for j in 0..nb {
            s.push_str(&format!(",key_block_{j}"));
        }
        s.push('\n');
        for l in 0..self.layers {
            for h in 0..self.heads {
                for (i, row) in self.block(l, h).iter().enumerate() {
                    s.push_str(&format!("{l},{h},{i}"));
                    for v in row {
                        s.push_str(&format!(",{v}"));
                    }
                    s.push('\n');
                }
            }
        }
        s
    }
}

/// Token offsets of the blocks of a context laid out by `spec`.
pub fn token_block_starts(seq: &SequencePack) -> Vec<usize> {
    let s = seq.spec;
    if s.m == 0 {
        vec![0]
    } else {
        vec![0, 2 * s.m, 4 * s.m]
    }
}

pub fn average_attention<T: Real>(
    model: &Transformer,
    params: &ParamStore<T>,
    seqs: &[SequencePack],
) -> Result<AttentionSummary> {
    let first = seqs.first().ok_or(Error::EmptyEval)?;
    let seq = first.tokens.len();
    let (layers, heads) = (model.config.layers, model.config.heads);
    let mut sums = vec![vec![Compensated::default(); seq * seq]; layers * heads];
    for chunk in seqs.chunks(EVAL_CHUNK) {
        if chunk.iter().any(|s| s.tokens.len() != seq) {
            return Err(Error::shape("average_attention", "sequences differ in length"));
        }
        let tokens: Vec<u32> = chunk.iter().flat_map(|s| s.tokens.iter().copied()).collect();
        let trace = model.trace(params, &tokens, chunk.len())?;
        for l in 0..layers {
            for h in 0..heads {
                let acc = &mut sums[l * heads + h];
                for b in 0..chunk.len() {
                    for q in 0..seq {
                        for (k, v) in trace.attention_row(l, h, b, q).iter().enumerate() {
                            acc[q * seq + k].add(v.to_f64());
                        }
                    }
                }
            }
        }
    }
    let count = seqs.len();
    let maps: Vec<Vec<f64>> =
        sums.iter().map(|m| m.iter().map(|c| c.value() / count as f64).collect()).collect();
    let block_starts = token_block_starts(first);
    let blocks = maps.iter().map(|m| block_aggregate(m, seq, &block_starts)).collect();
    Ok(AttentionSummary { layers, heads, seq, count, block_starts, maps, blocks })
}

fn block_aggregate(map: &[f64], seq: usize, starts: &[usize]) -> Vec<Vec<f64>> {
    let nb = starts.len();
    let end = |i: usize| if i + 1 < nb { starts[i + 1] } else { seq };
    let mut out = vec![vec![0.0; nb]; nb];
    for i in 0..nb {
        let queries = starts[i]..end(i);
        let nq = queries.len() as f64;
        for q in queries {
            for j in 0..nb {
                out[i][j] += map[q * seq + starts[j]..q * seq + end(j)].iter().sum::<f64>() / nq;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::modmath::Modulus;
    use crate::nncore::Dtype;
    use crate::taskgen::{CurriculumSpec, Mode};

    fn setup() -> (Transformer, ParamStore<f64>, Vec<SequencePack>) {
        let cfg = ModelConfig {
            layers: 2,
            d_model: 16,
            heads: 2,
            mlp_hidden: 32,
            pos_time_constant: 120.0,
            vocab: 13,
            max_seq: 24,
            precision: Dtype::F64,
            init_std: 0.3,
            embed_scale: 1.0,
        };
        let (m, p) = Transformer::init::<f64>(cfg, 4).unwrap();
        let spec = CurriculumSpec::new(4, 4, Mode::Curriculum).unwrap();
        let p13 = Modulus::new(13).unwrap();
        let seqs = super::super::errors::eval_sequences(p13, &[(2, 6), (7, 11), (6, 6)], spec, 40, 5).unwrap();
        (m, p, seqs)
    }

    #[test]
    fn rows_and_block_rows_sum_to_one() {
        let (m, p, seqs) = setup();
        let s = average_attention(&m, &p, &seqs).unwrap();
        assert_eq!(s.maps.len(), 4);
        assert_eq!(s.block_starts, vec![0, 8, 16]);
        for map in &s.maps {
            for q in 0..24 {
                let row: f64 = map[q * 24..(q + 1) * 24].iter().sum();
                assert!((row - 1.0).abs() < 1e-4);
                assert!(map[q * 24 + q + 1..(q + 1) * 24].iter().all(|&v| v == 0.0));
            }
        }
        for b in &s.blocks {
            for row in b {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn order_does_not_matter() {
        let (m, p, mut seqs) = setup();
        let a = average_attention(&m, &p, &seqs).unwrap();
        seqs.reverse();
        seqs.rotate_left(7);
        let b = average_attention(&m, &p, &seqs).unwrap();
        for (x, y) in a.maps.iter().flatten().zip(b.maps.iter().flatten()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = Compensated::default();
        let mut naive = 0.0;
        for v in [1e16, 1.0, -1e16, 1.0] {
            c.add(v);
            naive += v;
        }
        assert_eq!(c.value(), 2.0);
        assert_ne!(naive, 2.0);
    }
}
