//! The two decision processes built on Jacobi rotations.
//!
//! * The pivot game ([`MdpState`]): each decision zeroes one off-diagonal entry.
//!   Players race on private copies of the same matrix; the first to diagonalize wins.
//! * The sweep game ([`SmdpState`]): each decision runs a full cyclic sweep under one of
//!   the eight [`SweepOption`]s and costs `epsilon` per primitive rotation performed.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{num_pivots, PivotAction, SymmetricMatrix};
use crate::orderings::SweepOption;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Cost per primitive rotation in the sweep game.
    pub epsilon: f64,
    /// Outcome assigned to every player when all finish in the same round.
    pub tie_value: f64,
    pub discount: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            tie_value: 0.0,
            discount: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if !(self.tie_value > -1.0 && self.tie_value < 1.0) {
            return Err(Error::Config("tie_value must lie in (-1, 1)".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config("discount must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Pivot tolerance used inside a game: never larger than `threshold / n`, so a matrix
/// whose every pivot is negligible is also diagonalized.
pub fn game_tol<T: Scalar>(m: &SymmetricMatrix<T>, threshold: T) -> T {
    m.tol().min(threshold / T::lit(m.n() as f64))
}

/// Default depth budget per player for the pivot game: `8 · n(n-1)/2`.
pub fn default_max_depth(n: usize) -> usize {
    8 * num_pivots(n)
}

/// Default sweep budget for the sweep game: `3 · n`.
pub fn default_max_sweeps(n: usize) -> usize {
    3 * n
}

// ---------------------------------------------------------------------------
// Pivot game
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MdpState<T> {
    pub matrix: SymmetricMatrix<T>,
    pub step: usize,
    pub max_depth: usize,
    pub threshold: T,
}

impl<T: Scalar> MdpState<T> {
    pub fn new(matrix: SymmetricMatrix<T>, max_depth: usize, threshold: T) -> Self {
        let tol = game_tol(&matrix, threshold);
        Self {
            matrix: matrix.with_tol(tol),
            step: 0,
            max_depth,
            threshold,
        }
    }

    pub fn is_diagonalized(&self) -> bool {
        self.matrix.is_diagonalized(self.threshold)
    }

    /// Depth budget exhausted without diagonalizing. Diagonalization is checked first.
    pub fn is_cut_off(&self) -> bool {
        !self.is_diagonalized() && self.step >= self.max_depth
    }

    pub fn is_terminal(&self) -> bool {
        self.is_diagonalized() || self.step >= self.max_depth
    }
}

/// Legal pivots: every strict-upper entry above tolerance, or with `constrain` only the
/// (at most `n`) nonzero pivots closest to the diagonal by `q - p`, ties row-major.
pub fn mdp_legal_actions<T: Scalar>(s: &MdpState<T>, constrain: bool) -> Vec<PivotAction> {
    let mut legal = s.matrix.nonzero_pivots();
    if constrain {
        // stable sort keeps row-major order within a band
        legal.sort_by_key(|a| a.band());
        legal.truncate(s.matrix.n());
    }
    legal
}

pub fn mdp_step<T: Scalar>(s: &MdpState<T>, a: PivotAction) -> Result<MdpState<T>> {
    let n = s.matrix.n();
    if a.p >= a.q || a.q >= n || s.matrix.is_negligible(a) {
        return Err(Error::IllegalAction { p: a.p, q: a.q });
    }
    let mut next = s.clone();
    next.matrix.rotate_pivot(a)?;
    next.step += 1;
    Ok(next)
}

/// Per-player result of a race.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaceOutcome {
    Win,
    Loss,
    Tie,
    Fail,
}

impl RaceOutcome {
    pub fn value(self, rewards: &RewardConfig) -> f64 {
        match self {
            RaceOutcome::Win => 1.0,
            RaceOutcome::Loss | RaceOutcome::Fail => -1.0,
            RaceOutcome::Tie => rewards.tie_value,
        }
    }
}

/// Terminal value for one player. Errors when the player's board is still in play.
pub fn mdp_terminal_value<T: Scalar>(
    s: &MdpState<T>,
    outcome: RaceOutcome,
    rewards: &RewardConfig,
) -> Result<f64> {
    if !s.is_terminal() && outcome != RaceOutcome::Loss && outcome != RaceOutcome::Fail {
        return Err(Error::NotTerminal);
    }
    Ok(outcome.value(rewards))
}

/// Adjudicates a finished round. `won[i]` says whether player `i` has diagonalized.
/// Nobody finished: everyone fails. Everyone finished: tie. Otherwise finishers win.
pub fn adjudicate(won: &[bool]) -> Vec<RaceOutcome> {
    let finished = won.iter().filter(|&&w| w).count();
    if finished == 0 {
        vec![RaceOutcome::Fail; won.len()]
    } else if finished == won.len() {
        vec![RaceOutcome::Tie; won.len()]
    } else {
        won.iter()
            .map(|&w| {
                if w {
                    RaceOutcome::Win
                } else {
                    RaceOutcome::Loss
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Sweep game
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SmdpState<T> {
    pub matrix: SymmetricMatrix<T>,
    pub sweeps_taken: usize,
    pub primitive_rotations: usize,
    pub max_sweeps: usize,
    pub threshold: T,
    pub last_option: Option<SweepOption>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmdpStep<T> {
    pub state: SmdpState<T>,
    pub reward: f64,
    pub rotations: usize,
}

impl<T: Scalar> SmdpState<T> {
    pub fn new(matrix: SymmetricMatrix<T>, max_sweeps: usize, threshold: T) -> Self {
        let tol = game_tol(&matrix, threshold);
        Self {
            matrix: matrix.with_tol(tol),
            sweeps_taken: 0,
            primitive_rotations: 0,
            max_sweeps,
            threshold,
            last_option: None,
        }
    }

    pub fn is_diagonalized(&self) -> bool {
        self.matrix.is_diagonalized(self.threshold)
    }

    pub fn is_timed_out(&self) -> bool {
        !self.is_diagonalized() && self.sweeps_taken >= self.max_sweeps
    }

    pub fn is_terminal(&self) -> bool {
        self.is_diagonalized() || self.sweeps_taken >= self.max_sweeps
    }
}

/// Runs one sweep in place, skipping negligible pivots. Returns rotations performed.
pub fn run_sweep<T: Scalar>(m: &mut SymmetricMatrix<T>, opt: SweepOption) -> usize {
    let mut r = 0;
    for a in opt.pivot_sequence(m.n()) {
        if !m.is_negligible(a) {
            m.rotate_pivot(a).expect("pivot checked non-negligible");
            r += 1;
        }
    }
    r
}

/// One option: a full sweep of `opt` with reward `-epsilon · r`.
pub fn smdp_step<T: Scalar>(
    s: &SmdpState<T>,
    opt: SweepOption,
    rewards: &RewardConfig,
) -> Result<SmdpStep<T>> {
    if s.is_terminal() {
        return Err(Error::StepOnTerminal);
    }
    let mut next = s.clone();
    let r = run_sweep(&mut next.matrix, opt);
    next.sweeps_taken += 1;
    next.primitive_rotations += r;
    next.last_option = Some(opt);
    Ok(SmdpStep {
        state: next,
        reward: -rewards.epsilon * r as f64,
        rotations: r,
    })
}

/// `-Σ_{p<q} |m_pq|`, charged when the sweep budget runs out before diagonalization.
pub fn smdp_timeout_penalty<T: Scalar>(s: &SmdpState<T>) -> f64 {
    let m = &s.matrix;
    let mut acc = 0.0;
    for p in 0..m.n() {
        for q in p + 1..m.n() {
            acc += m.get(p, q).as_f64().abs();
        }
    }
    -acc
}

/// Discounted return of a reward sequence.
pub fn discounted_return(rewards: &[f64], discount: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |g, r| r + discount * g)
}

// ---------------------------------------------------------------------------
// State keys and decision logs
// ---------------------------------------------------------------------------

/// Canonical hashable state: strict-upper entries (row-major) then the diagonal, each
/// rounded to 6 decimal digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub Vec<i64>);

impl StateKey {
    /// Short stable hex digest for logs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.0 {
            h.update(v.to_le_bytes());
        }
        let out = h.finalize();
        let mut s = String::with_capacity(16);
        for b in &out[..8] {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

pub fn state_key<T: Scalar>(m: &SymmetricMatrix<T>) -> StateKey {
    let quant = |v: T| (v.as_f64() * 1e6).round() as i64;
    let n = m.n();
    let mut key = Vec::with_capacity(n * (n + 1) / 2);
    for p in 0..n {
        for q in p + 1..n {
            key.push(quant(m.get(p, q)));
        }
    }
    key.extend((0..n).map(|i| quant(m.get(i, i))));
    StateKey(key)
}

/// One line of the decision log (JSON lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub state_key: String,
    pub legal_actions: Vec<usize>,
    pub policy_target: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

pub fn write_jsonl<W: Write, R: Serialize>(mut w: W, records: &[R]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<B: BufRead, R: for<'de> Deserialize<'de>>(r: B) -> Result<Vec<R>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
