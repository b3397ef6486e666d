//! Sequence construction for curriculum, vanilla and mismatch contexts.
//!
//! A sequence is `pairs` exemplars laid out as `x0 y0 x1 y1 ...`. Loss
//! weights are indexed by token position: `loss_weight[t]` is the weight of
//! predicting token `t` from the prefix ending at `t - 1`, so only `y`
//! positions carry weight unless x-position loss is switched on.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modmath::{
    double_exp_oracle, fermat_reduce, primitive_roots, single_exp_oracle, Modulus, TaskParams,
};

/// Number of redraws `split_pairs` attempts before giving up on coverage.
pub const SPLIT_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Curriculum,
    VanillaDouble,
    VanillaSingleA,
    VanillaSingleB,
    Mismatch,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Curriculum => "curriculum",
            Mode::VanillaDouble => "vanilla_double",
            Mode::VanillaSingleA => "vanilla_single_a",
            Mode::VanillaSingleB => "vanilla_single_b",
            Mode::Mismatch => "mismatch",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Some(match s {
            "curriculum" => Mode::Curriculum,
            "vanilla_double" => Mode::VanillaDouble,
            "vanilla_single_a" => Mode::VanillaSingleA,
            "vanilla_single_b" => Mode::VanillaSingleB,
            "mismatch" => Mode::Mismatch,
            _ => return None,
        })
    }

    /// Curriculum-shaped layouts (three blocks).
    pub fn is_blocked(self) -> bool {
        matches!(self, Mode::Curriculum | Mode::Mismatch)
    }
}

/// Which task a vanilla sequence draws its exemplars from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VanillaKind {
    Double,
    SingleA,
    SingleB,
}

impl VanillaKind {
    fn mode(self) -> Mode {
        match self {
            VanillaKind::Double => Mode::VanillaDouble,
            VanillaKind::SingleA => Mode::VanillaSingleA,
            VanillaKind::SingleB => Mode::VanillaSingleB,
        }
    }
}

/// Block layout of a context.
///
/// `m` and `n` describe the curriculum blocks. Vanilla modes keep them so
/// that the last `n` exemplars can be lined up against a curriculum
/// composite block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumSpec {
    pub m: usize,
    pub n: usize,
    pub mode: Mode,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Also train on predicting `x` tokens (weighted like their block).
    #[serde(default)]
    pub x_loss: bool,
}

fn default_pairs() -> usize {
    24
}

impl CurriculumSpec {
    pub fn new(m: usize, n: usize, mode: Mode) -> Result<Self> {
        Self::with_pairs(m, n, mode, 2 * m + n)
    }

    pub fn with_pairs(m: usize, n: usize, mode: Mode, pairs: usize) -> Result<Self> {
        let spec = CurriculumSpec { m, n, mode, pairs, x_loss: false };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            return Err(Error::config("spec.pairs", "must be positive"));
        }
        if 2 * self.m + self.n != self.pairs {
            return Err(Error::config(
                "spec",
                format!("2m + n = {} but pairs = {}", 2 * self.m + self.n, self.pairs),
            ));
        }
        if self.mode.is_blocked() && (self.m == 0 || self.n == 0) {
            return Err(Error::config("spec", "curriculum blocks need m >= 1 and n >= 1"));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        2 * self.pairs
    }

    /// Pair index of the first composite exemplar (curriculum layout).
    pub fn composite_start(&self) -> usize {
        2 * self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    TaskA,
    TaskB,
    Composite,
}

/// Per-pair quantities a probe may decode, all taken with respect to the
/// task parameters that generated the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTarget {
    pub x: u64,
    pub y: u64,
    /// `a^x mod (p - 1)`.
    pub inner: u64,
    pub base_b: u64,
    /// `a^x mod p`.
    pub task_a_output: u64,
    pub block: BlockKind,
    pub block_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePack {
    pub mode: Mode,
    pub spec: CurriculumSpec,
    pub tokens: Vec<u32>,
    pub loss_weight: Vec<f32>,
    pub block_bounds: Vec<usize>,
    pub params: TaskParams,
    pub mismatch_params: Option<TaskParams>,
    pub probe_targets: Vec<ProbeTarget>,
}

impl SequencePack {
    pub fn pairs(&self) -> usize {
        self.probe_targets.len()
    }

    /// Token index of the `y` of pair `k`.
    pub fn y_pos(k: usize) -> usize {
        2 * k + 1
    }

    /// Token index of the `x` of pair `k`; the model's prediction for `y_k`
    /// is read off here.
    pub fn x_pos(k: usize) -> usize {
        2 * k
    }
}

/// Builds one block of exemplars with distinct `x`.
struct Block {
    kind: BlockKind,
    len: usize,
    params: TaskParams,
    weight: f32,
}

fn sample_distinct<R: Rng + ?Sized>(rng: &mut R, p: Modulus, k: usize) -> Result<Vec<u64>> {
    if k > p.vocab() {
        return Err(Error::BlockTooLong { needed: k, p: p.get() });
    }
    Ok(index::sample(rng, p.vocab(), k).into_iter().map(|i| i as u64).collect())
}

fn label(kind: BlockKind, params: TaskParams, x: u64) -> u64 {
    match kind {
        BlockKind::TaskA => single_exp_oracle(params.a, x, params.p),
        BlockKind::TaskB => single_exp_oracle(params.b, x, params.p),
        BlockKind::Composite => double_exp_oracle(params, x),
    }
}

fn assemble<R: Rng + ?Sized>(
    rng: &mut R,
    mode: Mode,
    spec: CurriculumSpec,
    blocks: &[Block],
    params: TaskParams,
    mismatch_params: Option<TaskParams>,
) -> Result<SequencePack> {
    let total: usize = blocks.iter().map(|b| b.len).sum();
    let mut tokens = Vec::with_capacity(2 * total);
    let mut loss_weight = Vec::with_capacity(2 * total);
    let mut probe_targets = Vec::with_capacity(total);
    let mut block_bounds = Vec::new();
    for (id, block) in blocks.iter().enumerate() {
        if id > 0 {
            block_bounds.push(tokens.len());
        }
        let xs = sample_distinct(rng, block.params.p, block.len)?;
        let bp = block.params;
        for x in xs {
            let y = label(block.kind, bp, x);
            let x_weight = if spec.x_loss && !tokens.is_empty() { block.weight } else { 0.0 };
            tokens.push(x as u32);
            loss_weight.push(x_weight);
            tokens.push(y as u32);
            loss_weight.push(block.weight);
            probe_targets.push(ProbeTarget {
                x,
                y,
                inner: fermat_reduce(bp, x),
                base_b: bp.b,
                task_a_output: single_exp_oracle(bp.a, x, bp.p),
                block: block.kind,
                block_id: id,
            });
        }
    }
    Ok(SequencePack {
        mode,
        spec,
        tokens,
        loss_weight,
        block_bounds,
        params,
        mismatch_params,
        probe_targets,
    })
}

fn curriculum_blocks(spec: &CurriculumSpec, curr: TaskParams, comp: TaskParams) -> [Block; 3] {
    let w = spec.m as f32 / spec.n as f32;
    [
        Block { kind: BlockKind::TaskA, len: spec.m, params: curr, weight: 1.0 },
        Block { kind: BlockKind::TaskB, len: spec.m, params: curr, weight: 1.0 },
        Block { kind: BlockKind::Composite, len: spec.n, params: comp, weight: w },
    ]
}

/// `m` exemplars of `a^x`, `m` of `b^x`, then `n` of `b^(a^x)`, with the
/// composite block weighted `m / n` per target so it carries a third of the
/// sequence loss.
pub fn build_curriculum_sequence<R: Rng + ?Sized>(
    params: TaskParams,
    spec: &CurriculumSpec,
    rng: &mut R,
) -> Result<SequencePack> {
    if spec.mode != Mode::Curriculum {
        return Err(Error::config("spec.mode", "expected curriculum"));
    }
    spec.validate()?;
    let blocks = curriculum_blocks(spec, params, params);
    assemble(rng, Mode::Curriculum, *spec, &blocks, params, None)
}

/// `spec.pairs` exemplars of a single task with distinct `x` across the
/// whole sequence.
pub fn build_vanilla_sequence<R: Rng + ?Sized>(
    params: TaskParams,
    kind: VanillaKind,
    spec: &CurriculumSpec,
    rng: &mut R,
) -> Result<SequencePack> {
    let block_kind = match kind {
        VanillaKind::Double => BlockKind::Composite,
        VanillaKind::SingleA => BlockKind::TaskA,
        VanillaKind::SingleB => BlockKind::TaskB,
    };
    let blocks = [Block { kind: block_kind, len: spec.pairs, params, weight: 1.0 }];
    let mut seq_spec = *spec;
    seq_spec.mode = kind.mode();
    assemble(rng, kind.mode(), seq_spec, &blocks, params, None)
}

/// Curriculum blocks for `curr`, composite block labelled with `comp`.
pub fn build_mismatch_sequence<R: Rng + ?Sized>(
    curr: TaskParams,
    comp: TaskParams,
    spec: &CurriculumSpec,
    rng: &mut R,
) -> Result<SequencePack> {
    if curr == comp {
        return Err(Error::MismatchSameParams);
    }
    if curr.p != comp.p {
        return Err(Error::config("mismatch", "curriculum and composite moduli differ"));
    }
    let mut seq_spec = *spec;
    seq_spec.mode = Mode::Mismatch;
    seq_spec.validate()?;
    let blocks = curriculum_blocks(&seq_spec, curr, comp);
    assemble(rng, Mode::Mismatch, seq_spec, &blocks, curr, Some(comp))
}

/// Which composite parameters count as a mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchPolicy {
    /// `a' != a` and `b' != b`.
    #[default]
    BothDiffer,
    /// `(a', b') != (a, b)`.
    AnyDiffer,
}

impl MismatchPolicy {
    pub fn admits(self, curr: (u64, u64), comp: (u64, u64)) -> bool {
        match self {
            MismatchPolicy::BothDiffer => curr.0 != comp.0 && curr.1 != comp.1,
            MismatchPolicy::AnyDiffer => curr != comp,
        }
    }
}

/// Train/eval partition of the ordered primitive-root pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSplit {
    pub p: Modulus,
    pub train_pairs: Vec<(u64, u64)>,
    pub eval_pairs: Vec<(u64, u64)>,
    pub seed: u64,
}

impl PairSplit {
    pub fn params(&self, pair: (u64, u64)) -> TaskParams {
        TaskParams { p: self.p, a: pair.0, b: pair.1 }
    }

    pub fn all_pairs(&self) -> Vec<(u64, u64)> {
        let mut all: Vec<_> = self.train_pairs.iter().chain(&self.eval_pairs).copied().collect();
        all.sort_unstable();
        all
    }

    /// Checks the partition and coverage invariants against `p`.
    pub fn validate(&self) -> Result<()> {
        let roots = primitive_roots(self.p);
        let expected: Vec<(u64, u64)> =
            roots.iter().flat_map(|&a| roots.iter().map(move |&b| (a, b))).collect();
        if self.all_pairs() != expected {
            return Err(Error::config("split", "train and eval do not partition all root pairs"));
        }
        if !covers(&self.train_pairs, &roots) {
            return Err(Error::config("split", "train pairs miss an individual root"));
        }
        Ok(())
    }
}

fn covers(train: &[(u64, u64)], roots: &[u64]) -> bool {
    roots
        .iter()
        .all(|&g| train.iter().any(|&(a, _)| a == g) && train.iter().any(|&(_, b)| b == g))
}

/// Random partition of all ordered root pairs, redrawn until every root
/// appears as both an `a` and a `b` among the training pairs.
pub fn split_pairs(p: Modulus, train_fraction: f64, seed: u64) -> Result<PairSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("split.train_fraction", "must lie in (0, 1)"));
    }
    let roots = primitive_roots(p);
    let all: Vec<(u64, u64)> =
        roots.iter().flat_map(|&a| roots.iter().map(move |&b| (a, b))).collect();
    let n_train = (train_fraction * all.len() as f64 + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..SPLIT_RETRIES {
        let mut shuffled = all.clone();
        shuffled.shuffle(&mut rng);
        let (train, eval) = shuffled.split_at(n_train);
        if covers(train, &roots) {
            let mut train_pairs = train.to_vec();
            let mut eval_pairs = eval.to_vec();
            train_pairs.sort_unstable();
            eval_pairs.sort_unstable();
            return Ok(PairSplit { p, train_pairs, eval_pairs, seed });
        }
    }
    Err(Error::CoverageUnreachable { retries: SPLIT_RETRIES })
}

/// Serializable position of a stream's generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState { seed, word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Probability that a vanilla-regime sequence is single-task.
pub const VANILLA_SINGLE_FRACTION: f64 = 2.0 / 3.0;

/// Deterministic source of training or evaluation batches.
///
/// With `vanilla_mix` set and a vanilla mode, each sequence is single-task
/// with probability 2/3 (then `a` or `b` family uniformly) and double-task
/// otherwise. Mismatch streams draw the composite pair from `pairs` under
/// `mismatch_policy`.
#[derive(Debug, Clone)]
pub struct BatchStream {
    pub p: Modulus,
    pub pairs: Vec<(u64, u64)>,
    pub spec: CurriculumSpec,
    pub batch_size: usize,
    pub vanilla_mix: bool,
    pub mismatch_policy: MismatchPolicy,
    seed: u64,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(
        p: Modulus,
        pairs: Vec<(u64, u64)>,
        spec: CurriculumSpec,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if pairs.is_empty() {
            return Err(Error::config("pairs", "no task pairs to draw from"));
        }
        if batch_size == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        Ok(BatchStream {
            p,
            pairs,
            spec,
            batch_size,
            vanilla_mix: false,
            mismatch_policy: MismatchPolicy::default(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// The stream used for training: draws from the split's training pairs,
    /// mixing single- and double-task sequences when the mode is vanilla.
    pub fn training(split: &PairSplit, spec: CurriculumSpec, batch_size: usize, seed: u64) -> Result<Self> {
        let mut s = Self::new(split.p, split.train_pairs.clone(), spec, batch_size, seed)?;
        s.vanilla_mix = !spec.mode.is_blocked();
        Ok(s)
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(self.seed, &self.rng)
    }

    pub fn restore(&mut self, state: RngState) {
        self.seed = state.seed;
        self.rng = state.restore();
    }

    fn draw_pair(&mut self) -> (u64, u64) {
        self.pairs[self.rng.random_range(0..self.pairs.len())]
    }

    pub fn next_sequence(&mut self) -> Result<SequencePack> {
        let pair = self.draw_pair();
        let params = TaskParams { p: self.p, a: pair.0, b: pair.1 };
        let spec = self.spec;
        match spec.mode {
            Mode::Curriculum => build_curriculum_sequence(params, &spec, &mut self.rng),
            Mode::Mismatch => {
                let policy = self.mismatch_policy;
                let candidates: Vec<(u64, u64)> =
                    self.pairs.iter().copied().filter(|&c| policy.admits(pair, c)).collect();
                if candidates.is_empty() {
                    return Err(Error::config("mismatch", "no admissible composite pair"));
                }
                let comp = candidates[self.rng.random_range(0..candidates.len())];
                let comp = TaskParams { p: self.p, a: comp.0, b: comp.1 };
                build_mismatch_sequence(params, comp, &spec, &mut self.rng)
            }
            mode => {
                let kind = if self.vanilla_mix {
                    if self.rng.random_bool(VANILLA_SINGLE_FRACTION) {
                        if self.rng.random_bool(0.5) {
                            VanillaKind::SingleA
                        } else {
                            VanillaKind::SingleB
                        }
                    } else {
                        VanillaKind::Double
                    }
                } else {
                    match mode {
                        Mode::VanillaSingleA => VanillaKind::SingleA,
                        Mode::VanillaSingleB => VanillaKind::SingleB,
                        _ => VanillaKind::Double,
                    }
                };
                build_vanilla_sequence(params, kind, &spec, &mut self.rng)
            }
        }
    }

    pub fn next_batch(&mut self) -> Result<Vec<SequencePack>> {
        (0..self.batch_size).map(|_| self.next_sequence()).collect()
    }

    /// `count` sequences, ignoring `batch_size`.
    pub fn take(&mut self, count: usize) -> Result<Vec<SequencePack>> {
        (0..count).map(|_| self.next_sequence()).collect()
    }
}

/// One line of the tab-separated sequence dump.
///
/// Fields: `mode, p, a, b, a', b', m, n, tokens, weights`; `a'`/`b'` are
/// empty unless the sequence is a mismatch, tokens and weights are
/// comma-separated.
pub fn dump_line(seq: &SequencePack) -> String {
    let mut s = String::new();
    let (ap, bp) = match seq.mismatch_params {
        Some(c) => (c.a.to_string(), c.b.to_string()),
        None => (String::new(), String::new()),
    };
    let _ = write!(
        s,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t",
        seq.mode.as_str(),
        seq.params.p,
        seq.params.a,
        seq.params.b,
        ap,
        bp,
        seq.spec.m,
        seq.spec.n
    );
    let tokens: Vec<String> = seq.tokens.iter().map(|t| t.to_string()).collect();
    let weights: Vec<String> = seq.loss_weight.iter().map(|w| w.to_string()).collect();
    s.push_str(&tokens.join(","));
    s.push('\t');
    s.push_str(&weights.join(","));
    s
}

pub const DUMP_HEADER: &str = "mode\tp\ta\tb\ta'\tb'\tm\tn\ttokens\tweights";

/// Parsed dump record.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpRecord {
    pub mode: Mode,
    pub p: u64,
    pub a: u64,
    pub b: u64,
    pub mismatch: Option<(u64, u64)>,
    pub m: usize,
    pub n: usize,
    pub tokens: Vec<u32>,
    pub weights: Vec<f32>,
}

pub fn parse_dump_line(line: &str) -> Result<DumpRecord> {
    let bad = |what: &str| Error::config("dump", format!("malformed {what} in `{line}`"));
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 10 {
        return Err(bad("field count"));
    }
    let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| bad(what));
    let mismatch = match (f[4], f[5]) {
        ("", "") => None,
        (a, b) => Some((num(a, "a'")?, num(b, "b'")?)),
    };
    Ok(DumpRecord {
        mode: Mode::parse(f[0]).ok_or_else(|| bad("mode"))?,
        p: num(f[1], "p")?,
        a: num(f[2], "a")?,
        b: num(f[3], "b")?,
        mismatch,
        m: num(f[6], "m")? as usize,
        n: num(f[7], "n")? as usize,
        tokens: f[8].split(',').map(|t| t.parse().map_err(|_| bad("token"))).collect::<Result<_>>()?,
        weights: f[9].split(',').map(|t| t.parse().map_err(|_| bad("weight"))).collect::<Result<_>>()?,
    })
}
