//! Self-play data generation, training rounds and champion gating.
//!
//! The pivot game is played as a race: every player gets an independent copy of the same
//! matrix and the players move in fixed round-robin order. After each complete round the
//! boards are adjudicated (see [`adjudicate`]). The sweep game is single-agent; its
//! episodes record option choices and discounted returns.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approximator::{
    evaluate_loss, forward, params_to_json, train_step, ModelParams, NetInput, NetworkEvaluator,
    PolicyHead, Sample,
};
use crate::env::{
    adjudicate, default_max_depth, default_max_sweeps, discounted_return, mdp_legal_actions,
    mdp_step, read_jsonl, smdp_step, smdp_timeout_penalty, state_key, write_jsonl, MdpState,
    RaceOutcome, RewardConfig, SmdpState,
};
use crate::error::{Error, Result};
use crate::matrix::{
    generate_random_symmetric, num_pivots, num_upper, strict_upper_index, strict_upper_pair,
    upper_index, PivotAction, SymmetricMatrix,
};
use crate::mcts::{
    heavy_rollout_window, search, Evaluator, HeavyWindow, MdpGame, RaceTarget, SearchConfig,
    SmdpGame,
};
use crate::orderings::{all_options, SweepOption, NUM_OPTIONS};

/// SplitMix64 mixing of a base seed and a stream index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn matrix_from_upper(n: usize, upper: &[f64]) -> Result<SymmetricMatrix<f64>> {
    if upper.len() != num_upper(n) {
        return Err(Error::DimensionMismatch {
            expected: num_upper(n),
            got: upper.len(),
        });
    }
    SymmetricMatrix::from_fn(n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        upper[upper_index(a, b, n).expect("in range")]
    })
}

// ---------------------------------------------------------------------------
// Game settings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameSettings {
    /// Convergence threshold as a multiple of `‖M⁰‖_F`.
    pub threshold_rel: f64,
    /// Pivot-game depth budget `D`; `None` uses `4 · n(n-1)/2`.
    pub max_depth: Option<usize>,
    /// Sweep-game budget; `None` uses `3n`.
    pub max_sweeps: Option<usize>,
    pub rewards: RewardConfig,
    pub heavy_rollout: bool,
    /// Largest matrix the policy vector must accommodate.
    pub n_max: usize,
}

impl Default for GameSettings {
    fn default() -> Self {
        Self {
            threshold_rel: 1e-8,
            max_depth: None,
            max_sweeps: None,
            rewards: RewardConfig::default(),
            heavy_rollout: false,
            n_max: 5,
        }
    }
}

impl GameSettings {
    pub fn threshold(&self, m: &SymmetricMatrix<f64>) -> f64 {
        self.threshold_rel * m.frobenius_norm()
    }

    pub fn depth(&self, n: usize) -> usize {
        self.max_depth.unwrap_or_else(|| default_max_depth(n))
    }

    pub fn sweeps(&self, n: usize) -> usize {
        self.max_sweeps.unwrap_or_else(|| default_max_sweeps(n))
    }

    pub fn mdp_state(&self, m: &SymmetricMatrix<f64>) -> MdpState<f64> {
        MdpState::new(m.clone(), self.depth(m.n()), self.threshold(m))
    }

    pub fn smdp_state(&self, m: &SymmetricMatrix<f64>) -> SmdpState<f64> {
        SmdpState::new(m.clone(), self.sweeps(m.n()), self.threshold(m))
    }
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameKind {
    Pivot,
    Sweep,
}

/// One decision: the state before acting, the search policy and the action taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub player: usize,
    /// Upper-triangle entries of the state, `upper_index` order.
    pub upper: Vec<f64>,
    pub state_key: String,
    /// Policy target over the policy slots (pivot slots or option ids).
    pub policy: Vec<f64>,
    /// Slot of the action taken.
    pub action: usize,
    /// Option of the previous sweep (sweep game only).
    pub last_option: Option<usize>,
    /// Value target for this record in `[-1, 1]`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub kind: GameKind,
    pub n: usize,
    pub initial: Vec<f64>,
    pub threshold: f64,
    pub records: Vec<EpisodeRecord>,
    /// Final value per player (pivot game) or the discounted return (sweep game).
    pub outcome: Vec<f64>,
    pub rotation_count: usize,
}

impl Episode {
    pub fn initial_matrix(&self) -> Result<SymmetricMatrix<f64>> {
        matrix_from_upper(self.n, &self.initial)
    }

    /// Records of `player` only.
    pub fn player_records(&self, player: usize) -> impl Iterator<Item = &EpisodeRecord> {
        self.records.iter().filter(move |r| r.player == player)
    }

    /// Option sequence of a sweep episode.
    pub fn options(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.action).collect()
    }

    /// Training samples for a model with the given head.
    pub fn samples(&self, params: &ModelParams) -> Result<Vec<Sample>> {
        let slots = params.config.policy_slots();
        self.records
            .iter()
            .map(|r| {
                let m = matrix_from_upper(self.n, &r.upper)?;
                let input = match params.config.head {
                    PolicyHead::Pivot => NetInput::pivot(&m),
                    PolicyHead::Sweep => {
                        NetInput::sweep(&m, r.last_option.map(SweepOption::from_id).transpose()?)
                    }
                };
                if r.policy.len() > slots {
                    return Err(Error::SizeExceedsMax {
                        n: self.n,
                        n_max: params.config.n_max,
                    });
                }
                let mut policy = r.policy.clone();
                policy.resize(slots, 0.0);
                Ok(Sample {
                    input,
                    policy,
                    value: r.value.clamp(-1.0, 1.0),
                })
            })
            .collect()
    }
}

/// Replays the recorded actions from the initial matrix and checks every recorded state
/// key. Returns the number of verified records.
pub fn replay_episode(ep: &Episode) -> Result<usize> {
    let m0 = ep.initial_matrix()?;
    let mismatch = |i: usize| Error::CorruptFile(format!("replay diverges at record {i}"));
    match ep.kind {
        GameKind::Pivot => {
            let players = ep
                .records
                .iter()
                .map(|r| r.player)
                .max()
                .map_or(0, |p| p + 1);
            let base = MdpState::new(m0, usize::MAX, ep.threshold);
            let mut boards = vec![base; players];
            for (i, r) in ep.records.iter().enumerate() {
                let b = &mut boards[r.player];
                if state_key(&b.matrix).digest() != r.state_key {
                    return Err(mismatch(i));
                }
                let a = strict_upper_pair(r.action, ep.n)?;
                *b = mdp_step(b, a)?;
            }
        }
        GameKind::Sweep => {
            let mut s = SmdpState::new(m0, usize::MAX, ep.threshold);
            for (i, r) in ep.records.iter().enumerate() {
                if state_key(&s.matrix).digest() != r.state_key {
                    return Err(mismatch(i));
                }
                s = smdp_step(
                    &s,
                    SweepOption::from_id(r.action)?,
                    &RewardConfig::default(),
                )?
                .state;
            }
        }
    }
    Ok(ep.records.len())
}

pub fn save_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), episodes)
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    read_jsonl(BufReader::new(File::open(path)?))
}

// ---------------------------------------------------------------------------
// Pivot-game players
// ---------------------------------------------------------------------------

/// Per-turn information shared with a player.
#[derive(Debug, Clone, Copy)]
pub struct TurnContext {
    pub n_max: usize,
    pub window: Option<HeavyWindow>,
    pub tie_value: f64,
}

pub trait MdpPlayer: Sync {
    /// Chooses a legal pivot. The returned policy covers `num_pivots(ctx.n_max)` slots.
    fn act(
        &self,
        state: &MdpState<f64>,
        ctx: &TurnContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PivotAction, Vec<f64>)>;
}

fn one_hot_pivot(a: PivotAction, n: usize, n_max: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0; num_pivots(n_max.max(n))];
    v[strict_upper_index(a, n)?] = 1.0;
    Ok(v)
}

/// Always rotates the largest off-diagonal entry.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxElemPlayer;

impl MdpPlayer for MaxElemPlayer {
    fn act(
        &self,
        state: &MdpState<f64>,
        ctx: &TurnContext,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(PivotAction, Vec<f64>)> {
        let a = state.matrix.max_pivot().ok_or(Error::NoLegalActions)?;
        Ok((a, one_hot_pivot(a, state.matrix.n(), ctx.n_max)?))
    }
}

/// Uniformly random legal pivot.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPlayer;

impl MdpPlayer for RandomPlayer {
    fn act(
        &self,
        state: &MdpState<f64>,
        ctx: &TurnContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PivotAction, Vec<f64>)> {
        let legal = mdp_legal_actions(state, false);
        if legal.is_empty() {
            return Err(Error::NoLegalActions);
        }
        let n = state.matrix.n();
        let mut policy = vec![0.0; num_pivots(ctx.n_max.max(n))];
        for &a in &legal {
            policy[strict_upper_index(a, n)?] = 1.0 / legal.len() as f64;
        }
        Ok((legal[rng.random_range(0..legal.len())], policy))
    }
}

/// Smallest number of further rotations that diagonalizes `s` within `budget`, with the
/// first move of one such schedule (lowest row-major pivot among optimal moves).
pub fn exhaustive_min_rotations(
    s: &MdpState<f64>,
    budget: usize,
) -> Option<(usize, Option<PivotAction>)> {
    fn solvable(s: &MdpState<f64>, depth: usize) -> bool {
        if s.is_diagonalized() {
            return true;
        }
        depth > 0
            && mdp_legal_actions(s, false)
                .into_iter()
                .any(|a| solvable(&mdp_step(s, a).expect("legal"), depth - 1))
    }
    if s.is_diagonalized() {
        return Some((0, None));
    }
    for depth in 1..=budget {
        for a in mdp_legal_actions(s, false) {
            if solvable(&mdp_step(s, a).expect("legal"), depth - 1) {
                return Some((depth, Some(a)));
            }
        }
    }
    None
}

/// Plays an exhaustively optimal schedule. Exponential in the remaining depth; meant for
/// `3 × 3` reference games.
#[derive(Debug, Clone, Copy)]
pub struct ExhaustivePlayer {
    pub max_depth: usize,
}

impl MdpPlayer for ExhaustivePlayer {
    fn act(
        &self,
        state: &MdpState<f64>,
        ctx: &TurnContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PivotAction, Vec<f64>)> {
        match exhaustive_min_rotations(state, self.max_depth) {
            Some((_, Some(a))) => Ok((a, one_hot_pivot(a, state.matrix.n(), ctx.n_max)?)),
            _ => MaxElemPlayer.act(state, ctx, rng),
        }
    }
}

/// MCTS player over the pivot game.
#[derive(Debug, Clone)]
pub struct SearchPlayer<E> {
    pub config: SearchConfig,
    pub evaluator: E,
    pub race: RaceTarget,
    pub constrain: bool,
}

impl<E> SearchPlayer<E> {
    pub fn new(config: SearchConfig, evaluator: E) -> Self {
        Self {
            config,
            evaluator,
            race: RaceTarget::Uniform,
            constrain: false,
        }
    }
}

impl<E: Evaluator<MdpGame> + Sync> MdpPlayer for SearchPlayer<E> {
    fn act(
        &self,
        state: &MdpState<f64>,
        ctx: &TurnContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PivotAction, Vec<f64>)> {
        let game = MdpGame::new(state.clone(), self.race)
            .with_n_max(ctx.n_max)
            .with_window(ctx.window)
            .with_constraint(self.constrain)
            .with_tie_value(ctx.tie_value);
        let res = search(&game, &self.config, &self.evaluator, rng)?;
        let a = if self.config.temperature > 0.0 {
            res.sample_action(rng)
        } else {
            res.best_action()
        };
        Ok((a, res.policy))
    }
}

/// Acts greedily on the network's policy head, without search.
#[derive(Debug, Clone)]
pub struct NetworkPolicy {
    pub params: ModelParams,
}

impl MdpPlayer for NetworkPolicy {
    fn act(
        &self,
        state: &MdpState<f64>,
        ctx: &TurnContext,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(PivotAction, Vec<f64>)> {
        let n = state.matrix.n();
        let pred = forward(&self.params, &NetInput::pivot(&state.matrix), None)?;
        let legal = mdp_legal_actions(state, false);
        let best = legal
            .iter()
            .copied()
            .map(|a| {
                (
                    a,
                    pred.policy.values[strict_upper_index(a, n).expect("legal")],
                )
            })
            .fold(None::<(PivotAction, f64)>, |acc, x| match acc {
                Some(b) if b.1 >= x.1 => Some(b),
                _ => Some(x),
            })
            .ok_or(Error::NoLegalActions)?;
        let mut policy = pred.policy.values;
        policy.resize(num_pivots(ctx.n_max.max(n)), 0.0);
        Ok((best.0, policy))
    }
}

/// Runs one race on independent copies of `matrix`. Returns one episode per player.
///
/// Players move in round-robin order. Once a round completes, the race ends if anyone
/// has diagonalized (all finished: tie; otherwise finishers win, the rest lose); if the
/// depth budget is spent with no finisher, everyone fails.
pub fn play_mdp_game(
    matrix: &SymmetricMatrix<f64>,
    players: &[&dyn MdpPlayer],
    settings: &GameSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Episode>> {
    let n = matrix.n();
    let start = settings.mdp_state(matrix);
    let depth = start.max_depth;
    let window = settings
        .heavy_rollout
        .then(|| heavy_rollout_window(depth, rng));
    let ctx = TurnContext {
        n_max: settings.n_max.max(n),
        window,
        tie_value: settings.rewards.tie_value,
    };
    let mut boards = vec![start.clone(); players.len()];
    let mut records: Vec<EpisodeRecord> = Vec::new();
    let mut rounds = 0;
    let outcomes = loop {
        let won: Vec<bool> = boards.iter().map(|b| b.is_diagonalized()).collect();
        if won.iter().any(|&w| w) {
            break adjudicate(&won);
        }
        if rounds >= depth {
            break vec![RaceOutcome::Fail; players.len()];
        }
        for (pi, player) in players.iter().enumerate() {
            let b = &boards[pi];
            let (a, policy) = player.act(b, &ctx, rng)?;
            records.push(EpisodeRecord {
                player: pi,
                upper: b.matrix.upper_entries(),
                state_key: state_key(&b.matrix).digest(),
                policy,
                action: strict_upper_index(a, n)?,
                last_option: None,
                value: 0.0,
            });
            boards[pi] = mdp_step(b, a)?;
        }
        rounds += 1;
    };
    let values: Vec<f64> = outcomes
        .iter()
        .map(|o| o.value(&settings.rewards))
        .collect();
    for r in &mut records {
        r.value = values[r.player];
    }
    Ok((0..players.len())
        .map(|pi| Episode {
            kind: GameKind::Pivot,
            n,
            initial: matrix.upper_entries(),
            threshold: start.threshold,
            records: records.iter().filter(|r| r.player == pi).cloned().collect(),
            outcome: values.clone(),
            rotation_count: boards[pi].step,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Sweep-game policies
// ---------------------------------------------------------------------------

pub trait SmdpPolicy: Sync {
    /// Chooses an option; the returned policy covers the 8 option slots.
    fn choose(
        &self,
        state: &SmdpState<f64>,
        rewards: &RewardConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(SweepOption, Vec<f64>)>;
}

fn one_hot_option(o: SweepOption) -> Vec<f64> {
    let mut v = vec![0.0; NUM_OPTIONS];
    v[o.id()] = 1.0;
    v
}

/// Takes the same option every sweep.
#[derive(Debug, Clone, Copy)]
pub struct FixedOption(pub SweepOption);

impl SmdpPolicy for FixedOption {
    fn choose(
        &self,
        _state: &SmdpState<f64>,
        _rewards: &RewardConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(SweepOption, Vec<f64>)> {
        Ok((self.0, one_hot_option(self.0)))
    }
}

/// MCTS over the sweep game.
#[derive(Debug, Clone)]
pub struct SearchSmdpPolicy<E> {
    pub config: SearchConfig,
    pub evaluator: E,
}

impl<E: Evaluator<SmdpGame> + Sync> SmdpPolicy for SearchSmdpPolicy<E> {
    fn choose(
        &self,
        state: &SmdpState<f64>,
        rewards: &RewardConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(SweepOption, Vec<f64>)> {
        let game = SmdpGame::new(state.clone(), *rewards);
        let res = search(&game, &self.config, &self.evaluator, rng)?;
        let o = if self.config.temperature > 0.0 {
            res.sample_action(rng)
        } else {
            res.best_action()
        };
        Ok((o, res.policy))
    }
}

impl SmdpPolicy for NetworkPolicy {
    fn choose(
        &self,
        state: &SmdpState<f64>,
        _rewards: &RewardConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(SweepOption, Vec<f64>)> {
        let pred = forward(
            &self.params,
            &NetInput::sweep(&state.matrix, state.last_option),
            None,
        )?;
        let p = pred.policy.values;
        let mut best = 0;
        for i in 1..p.len() {
            if p[i] > p[best] {
                best = i;
            }
        }
        Ok((SweepOption::from_id(best)?, p))
    }
}

/// Plays one sweep-game episode. Records carry the return-to-go, divided by the game's
/// value scale, as value targets.
pub fn play_smdp_episode(
    matrix: &SymmetricMatrix<f64>,
    policy: &dyn SmdpPolicy,
    settings: &GameSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let rewards = settings.rewards;
    let start = settings.smdp_state(matrix);
    let scale = SmdpGame::new(start.clone(), rewards).value_scale();
    let mut s = start.clone();
    let mut records = Vec::new();
    let mut step_rewards = Vec::new();
    while !s.is_terminal() {
        let (o, pol) = policy.choose(&s, &rewards, rng)?;
        records.push(EpisodeRecord {
            player: 0,
            upper: s.matrix.upper_entries(),
            state_key: state_key(&s.matrix).digest(),
            policy: pol,
            action: o.id(),
            last_option: s.last_option.map(SweepOption::id),
            value: 0.0,
        });
        let out = smdp_step(&s, o, &rewards)?;
        let mut r = out.reward;
        if out.state.is_timed_out() {
            r += smdp_timeout_penalty(&out.state);
        }
        step_rewards.push(r);
        s = out.state;
    }
    let mut g = 0.0;
    for (rec, r) in records.iter_mut().zip(&step_rewards).rev() {
        g = r + rewards.discount * g;
        rec.value = (g / scale).clamp(-1.0, 1.0);
    }
    Ok(Episode {
        kind: GameKind::Sweep,
        n: matrix.n(),
        initial: matrix.upper_entries(),
        threshold: start.threshold,
        records,
        outcome: vec![discounted_return(&step_rewards, rewards.discount)],
        rotation_count: s.primitive_rotations,
    })
}

// ---------------------------------------------------------------------------
// Synthetic demonstrations
// ---------------------------------------------------------------------------

/// MaxElem from `s` to the end. Returns the visited states with their actions.
fn maxelem_continuation(s: &MdpState<f64>) -> Vec<(MdpState<f64>, PivotAction)> {
    let mut out = Vec::new();
    let mut s = s.clone();
    while !s.is_diagonalized() && s.step < s.max_depth {
        let Some(a) = s.matrix.max_pivot() else { break };
        let next = mdp_step(&s, a).expect("max pivot is legal");
        out.push((s, a));
        s = next;
    }
    out
}

/// Pivot-game demonstrations on random `n × n` matrices.
///
/// Even-indexed episodes are pure MaxElem runs labelled `+1`. Odd-indexed episodes take a
/// random prefix of `1..=n(n-1)/2` uniform rotations and then continue with MaxElem;
/// their states carry MaxElem targets and the race value of that schedule against plain
/// MaxElem from the same start.
pub fn make_synthetic_demos(
    n: usize,
    count: usize,
    settings: &GameSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Episode>> {
    (0..count)
        .map(|k| {
            let m = generate_random_symmetric::<f64>(n, rng.random(), 1.0)?;
            let start = settings.mdp_state(&m);
            let n_max = settings.n_max.max(n);
            let baseline = maxelem_continuation(&start);
            let record = |s: &MdpState<f64>, a: PivotAction, value: f64| -> Result<EpisodeRecord> {
                Ok(EpisodeRecord {
                    player: 0,
                    upper: s.matrix.upper_entries(),
                    state_key: state_key(&s.matrix).digest(),
                    policy: one_hot_pivot(a, n, n_max)?,
                    action: strict_upper_index(a, n)?,
                    last_option: None,
                    value,
                })
            };
            let (records, outcome, count) = if k % 2 == 0 {
                let recs = baseline
                    .iter()
                    .map(|(s, a)| record(s, *a, 1.0))
                    .collect::<Result<Vec<_>>>()?;
                (recs, 1.0, baseline.len())
            } else {
                let prefix = rng.random_range(1..=num_pivots(n));
                let mut s = start.clone();
                let mut taken = Vec::new();
                for _ in 0..prefix {
                    let legal = mdp_legal_actions(&s, false);
                    if legal.is_empty() || s.step >= s.max_depth {
                        break;
                    }
                    let a = legal[rng.random_range(0..legal.len())];
                    taken.push(s.clone());
                    s = mdp_step(&s, a)?;
                }
                let tail = maxelem_continuation(&s);
                let end_step = tail.last().map_or(s.step, |(t, _)| t.step + 1);
                let finished = tail.last().map_or(s.is_diagonalized(), |(t, a)| {
                    mdp_step(t, *a)
                        .map(|x| x.is_diagonalized())
                        .unwrap_or(false)
                });
                let value = if !finished {
                    -1.0
                } else {
                    match end_step.cmp(&baseline.len()) {
                        std::cmp::Ordering::Less => 1.0,
                        std::cmp::Ordering::Equal => settings.rewards.tie_value,
                        std::cmp::Ordering::Greater => -1.0,
                    }
                };
                let mut recs = Vec::new();
                for st in &taken {
                    if let Some(a) = st.matrix.max_pivot() {
                        recs.push(record(st, a, value)?);
                    }
                }
                for (st, a) in &tail {
                    recs.push(record(st, *a, value)?);
                }
                (recs, value, end_step)
            };
            Ok(Episode {
                kind: GameKind::Pivot,
                n,
                initial: m.upper_entries(),
                threshold: start.threshold,
                records,
                outcome: vec![outcome],
                rotation_count: count,
            })
        })
        .collect()
}

/// Rotation count of repeating `opt` until convergence or the sweep budget.
pub fn fixed_option_rotations(s: &SmdpState<f64>, opt: SweepOption) -> (usize, bool) {
    let mut s = s.clone();
    let rewards = RewardConfig::default();
    while !s.is_terminal() {
        s = smdp_step(&s, opt, &rewards).expect("live state").state;
    }
    (s.primitive_rotations, s.is_diagonalized())
}

/// Sweep-game demonstrations: each random matrix is solved by repeating its cheapest
/// fixed option (lowest id on ties).
pub fn make_sweep_demos(
    n: usize,
    count: usize,
    settings: &GameSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Episode>> {
    (0..count)
        .map(|_| {
            let m = generate_random_symmetric::<f64>(n, rng.random(), 1.0)?;
            let start = settings.smdp_state(&m);
            let best = all_options()
                .into_iter()
                .min_by_key(|&o| {
                    let (r, ok) = fixed_option_rotations(&start, o);
                    (!ok, r)
                })
                .expect("eight options");
            play_smdp_episode(&m, &FixedOption(best), settings, rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Matrix pools
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MatrixPool {
    pub train: Vec<SymmetricMatrix<f64>>,
    pub eval: Vec<SymmetricMatrix<f64>>,
}

impl MatrixPool {
    /// `count` random `n × n` matrices with seeds `derive_seed(seed, i)`, shuffled and
    /// split with `train_fraction` going to training.
    pub fn generate(n: usize, count: usize, seed: u64, train_fraction: f64) -> Result<Self> {
        let mut all = (0..count)
            .map(|i| generate_random_symmetric::<f64>(n, derive_seed(seed, i as u64), 1.0))
            .collect::<Result<Vec<_>>>()?;
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (count as f64 * train_fraction).round() as usize;
        let eval = all.split_off(cut.min(count));
        let pool = Self { train: all, eval };
        pool.check_disjoint()?;
        Ok(pool)
    }

    /// Errors if any evaluation matrix also appears in the training set.
    pub fn check_disjoint(&self) -> Result<()> {
        let train: HashSet<_> = self.train.iter().map(state_key).collect();
        if self.eval.iter().any(|m| train.contains(&state_key(m))) {
            return Err(Error::Config(
                "evaluation matrices overlap the training set".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Training rounds and gating
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRoundConfig {
    pub games_per_round: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub synthetic_fraction: f64,
    pub gate_threshold: f64,
}

impl Default for TrainRoundConfig {
    fn default() -> Self {
        Self {
            games_per_round: 200,
            epochs: 15,
            batch_size: 256,
            lr: 0.001,
            synthetic_fraction: 0.5,
            gate_threshold: 0.55,
        }
    }
}

impl TrainRoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr >= 0.0) {
            return Err(Error::Config(
                "epochs and batch_size must be >= 1 and lr >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.synthetic_fraction) {
            return Err(Error::Config(
                "synthetic_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.gate_threshold > 0.5 && self.gate_threshold <= 1.0) {
            return Err(Error::Config("gate_threshold must lie in (0.5, 1]".into()));
        }
        Ok(())
    }

    /// Split of `games_per_round` into (self-play games, synthetic episodes).
    pub fn game_split(&self) -> (usize, usize) {
        let synthetic = (self.games_per_round as f64 * self.synthetic_fraction).round() as usize;
        (self.games_per_round - synthetic, synthetic)
    }
}

/// Who the learner plays against in pivot-game self-play.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Opponent {
    MaxElem,
    Champion,
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub candidate: ModelParams,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub num_samples: usize,
    pub episodes: Vec<Episode>,
}

/// Collects self-play and synthetic episodes, then trains a copy of `champion` on them.
#[allow(clippy::too_many_arguments)]
pub fn training_round(
    champion: &ModelParams,
    cfg: &TrainRoundConfig,
    search_cfg: &SearchConfig,
    settings: &GameSettings,
    opponent: Opponent,
    pool: &[SymmetricMatrix<f64>],
    seed: u64,
) -> Result<RoundOutput> {
    cfg.validate()?;
    let (games, synthetic) = cfg.game_split();
    if games + synthetic == 0 {
        return Err(Error::EmptyData);
    }
    if games > 0 && pool.is_empty() {
        return Err(Error::EmptyData);
    }
    let evaluator = NetworkEvaluator::new(champion.clone());
    let sizes: Vec<usize> = pool.iter().map(|m| m.n()).collect();

    let mut episodes: Vec<Episode> = match champion.config.head {
        PolicyHead::Pivot => {
            let learner = SearchPlayer::new(*search_cfg, evaluator.clone());
            let results: Vec<Result<Vec<Episode>>> = (0..games)
                .into_par_iter()
                .map(|g| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, g as u64));
                    let m = &pool[g % pool.len()];
                    let eps = match opponent {
                        Opponent::MaxElem => {
                            play_mdp_game(m, &[&learner, &MaxElemPlayer], settings, &mut rng)?
                        }
                        Opponent::Champion => {
                            play_mdp_game(m, &[&learner, &learner], settings, &mut rng)?
                        }
                    };
                    Ok(match opponent {
                        // MaxElem's moves are demonstrations only when it won
                        Opponent::MaxElem => eps
                            .into_iter()
                            .enumerate()
                            .filter(|(i, e)| *i == 0 || e.outcome[*i] > 0.0)
                            .map(|(_, e)| e)
                            .collect(),
                        Opponent::Champion => eps,
                    })
                })
                .collect();
            let mut out = Vec::new();
            for r in results {
                out.extend(r?);
            }
            out
        }
        PolicyHead::Sweep => {
            let learner = SearchSmdpPolicy {
                config: *search_cfg,
                evaluator: evaluator.clone(),
            };
            (0..games)
                .into_par_iter()
                .map(|g| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, g as u64));
                    play_smdp_episode(&pool[g % pool.len()], &learner, settings, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    for k in 0..synthetic {
        let n = if sizes.is_empty() {
            settings.n_max
        } else {
            sizes[k % sizes.len()]
        };
        let mut demos = match champion.config.head {
            PolicyHead::Pivot => make_synthetic_demos(n, 1, settings, &mut rng)?,
            PolicyHead::Sweep => make_sweep_demos(n, 1, settings, &mut rng)?,
        };
        episodes.append(&mut demos);
    }

    let mut samples = Vec::new();
    for e in &episodes {
        samples.extend(e.samples(champion)?);
    }
    if samples.is_empty() {
        return Err(Error::EmptyData);
    }

    let mut candidate = champion.clone();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let dropout = derive_seed(seed, (epoch * 1_000_003 + b) as u64);
            total += train_step(&mut candidate, &batch, cfg.lr, Some(dropout))?;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(RoundOutput {
        candidate,
        epoch_losses,
        num_samples: samples.len(),
        episodes,
    })
}

/// Mean loss of `params` on the samples of `episodes` (no dropout).
pub fn held_out_loss(params: &ModelParams, episodes: &[Episode]) -> Result<f64> {
    let mut samples = Vec::new();
    for e in episodes {
        samples.extend(e.samples(params)?);
    }
    evaluate_loss(params, &samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub accepted: bool,
    /// Pivot game: candidate score `(wins + ties/2 + both-fail/2) / games`.
    /// Sweep game: candidate mean rotations.
    pub candidate_score: f64,
    /// Sweep game only: champion mean rotations.
    pub champion_score: f64,
}

/// Head-to-head races on `eval`. Accepted when the candidate's score reaches
/// `threshold` (a draw-heavy match between equals scores 0.5).
pub fn gate_mdp(
    candidate: &dyn MdpPlayer,
    champion: &dyn MdpPlayer,
    eval: &[SymmetricMatrix<f64>],
    settings: &GameSettings,
    threshold: f64,
    seed: u64,
) -> Result<GateResult> {
    if eval.is_empty() {
        return Err(Error::EmptyData);
    }
    let scores: Vec<f64> = eval
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let eps = play_mdp_game(m, &[candidate, champion], settings, &mut rng)?;
            let (a, b) = (eps[0].outcome[0], eps[0].outcome[1]);
            Ok(if a > b {
                1.0
            } else if a < b {
                0.0
            } else {
                0.5
            })
        })
        .collect::<Result<_>>()?;
    let score = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(GateResult {
        accepted: score >= threshold,
        candidate_score: score,
        champion_score: 1.0 - score,
    })
}

/// Mean rotation counts on `eval`; accepted when the candidate is strictly cheaper.
pub fn gate_smdp(
    candidate: &dyn SmdpPolicy,
    champion: &dyn SmdpPolicy,
    eval: &[SymmetricMatrix<f64>],
    settings: &GameSettings,
    seed: u64,
) -> Result<GateResult> {
    if eval.is_empty() {
        return Err(Error::EmptyData);
    }
    let mean = |p: &dyn SmdpPolicy| -> Result<f64> {
        let counts: Vec<usize> = eval
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                Ok(play_smdp_episode(m, p, settings, &mut rng)?.rotation_count)
            })
            .collect::<Result<_>>()?;
        Ok(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
    };
    let c = mean(candidate)?;
    let h = mean(champion)?;
    Ok(GateResult {
        accepted: c < h,
        candidate_score: c,
        champion_score: h,
    })
}

/// Hex sha256 of a checkpoint's serialized form.
pub fn params_hash(params: &ModelParams) -> Result<String> {
    let digest = Sha256::digest(params_to_json(params)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub round: usize,
    pub seed: u64,
    pub opponent: Opponent,
    pub candidate_hash: String,
    pub champion_hash: String,
    pub accepted: bool,
    pub candidate_score: f64,
    pub champion_score: f64,
    pub final_loss: f64,
    pub num_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config: serde_json::Value,
    pub initial_hash: String,
    pub rounds: Vec<LineageEntry>,
}

/// Training loop state: champion, opponent schedule and lineage.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub champion: ModelParams,
    pub opponent: Opponent,
    pub round_cfg: TrainRoundConfig,
    pub search_cfg: SearchConfig,
    /// Search used by both sides when gating.
    pub gate_search: SearchConfig,
    pub settings: GameSettings,
    pub pool: MatrixPool,
    pub manifest: RunManifest,
}

impl Trainer {
    pub fn new(
        champion: ModelParams,
        round_cfg: TrainRoundConfig,
        search_cfg: SearchConfig,
        settings: GameSettings,
        pool: MatrixPool,
        seed: u64,
        config: serde_json::Value,
    ) -> Result<Self> {
        pool.check_disjoint()?;
        let initial_hash = params_hash(&champion)?;
        let opponent = match champion.config.head {
            PolicyHead::Pivot => Opponent::MaxElem,
            PolicyHead::Sweep => Opponent::Champion,
        };
        Ok(Self {
            champion,
            opponent,
            round_cfg,
            search_cfg,
            gate_search: SearchConfig {
                temperature: 0.0,
                ..search_cfg
            },
            settings,
            pool,
            manifest: RunManifest {
                seed,
                config,
                initial_hash,
                rounds: Vec::new(),
            },
        })
    }

    /// One round: generate, train, gate, and swap the champion on acceptance. The
    /// pivot-game opponent switches from MaxElem to the champion after the first pass.
    pub fn run_round(&mut self) -> Result<(RoundOutput, GateResult)> {
        let round = self.manifest.rounds.len();
        let seed = derive_seed(self.manifest.seed, round as u64);
        let out = training_round(
            &self.champion,
            &self.round_cfg,
            &self.search_cfg,
            &self.settings,
            self.opponent,
            &self.pool.train,
            seed,
        )?;
        let gate = self.gate(&out.candidate, derive_seed(seed, 1))?;
        let entry = LineageEntry {
            round,
            seed,
            opponent: self.opponent,
            candidate_hash: params_hash(&out.candidate)?,
            champion_hash: params_hash(&self.champion)?,
            accepted: gate.accepted,
            candidate_score: gate.candidate_score,
            champion_score: gate.champion_score,
            final_loss: out.epoch_losses.last().copied().unwrap_or(f64::NAN),
            num_samples: out.num_samples,
        };
        if gate.accepted {
            self.champion = out.candidate.clone();
            self.opponent = Opponent::Champion;
        }
        self.manifest.rounds.push(entry);
        Ok((out, gate))
    }

    fn gate(&self, candidate: &ModelParams, seed: u64) -> Result<GateResult> {
        match candidate.config.head {
            PolicyHead::Pivot => {
                let cand =
                    SearchPlayer::new(self.gate_search, NetworkEvaluator::new(candidate.clone()));
                let champion: Box<dyn MdpPlayer> = match self.opponent {
                    Opponent::MaxElem => Box::new(MaxElemPlayer),
                    Opponent::Champion => Box::new(SearchPlayer::new(
                        self.gate_search,
                        NetworkEvaluator::new(self.champion.clone()),
                    )),
                };
                gate_mdp(
                    &cand,
                    champion.as_ref(),
                    &self.pool.eval,
                    &self.settings,
                    self.round_cfg.gate_threshold,
                    seed,
                )
            }
            PolicyHead::Sweep => {
                let cand = SearchSmdpPolicy {
                    config: self.gate_search,
                    evaluator: NetworkEvaluator::new(candidate.clone()),
                };
                let champ = SearchSmdpPolicy {
                    config: self.gate_search,
                    evaluator: NetworkEvaluator::new(self.champion.clone()),
                };
                gate_smdp(&cand, &champ, &self.pool.eval, &self.settings, seed)
            }
        }
    }
}

pub fn save_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::ModelConfig;
    use crate::mcts::MaxElemRollout;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn two_by_two() -> SymmetricMatrix<f64> {
        SymmetricMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn two_by_two_race_ties() {
        let settings = GameSettings {
            n_max: 2,
            ..Default::default()
        };
        let eps = play_mdp_game(
            &two_by_two(),
            &[&MaxElemPlayer, &RandomPlayer],
            &settings,
            &mut rng(1),
        )
        .unwrap();
        assert_eq!(eps.len(), 2);
        for e in &eps {
            assert_eq!(e.outcome, vec![0.0, 0.0]);
            assert_eq!(e.rotation_count, 1);
            assert_eq!(e.records.len(), 1);
        }
    }

    #[test]
    fn zero_budget_fails_everyone() {
        let settings = GameSettings {
            max_depth: Some(0),
            ..Default::default()
        };
        let eps = play_mdp_game(
            &two_by_two(),
            &[&MaxElemPlayer, &MaxElemPlayer],
            &settings,
            &mut rng(1),
        )
        .unwrap();
        assert_eq!(eps[0].outcome, vec![-1.0, -1.0]);
        assert!(eps.iter().all(|e| e.records.is_empty()));
    }

    #[test]
    fn outcome_values_follow_adjudication() {
        let settings = GameSettings {
            rewards: RewardConfig {
                tie_value: 0.25,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = generate_random_symmetric::<f64>(3, 4, 1.0).unwrap();
        for seed in 0..20 {
            let eps = play_mdp_game(
                &m,
                &[&MaxElemPlayer, &RandomPlayer],
                &settings,
                &mut rng(seed),
            )
            .unwrap();
            let out = &eps[0].outcome;
            let finished: Vec<bool> = eps
                .iter()
                .map(|e| {
                    let mut b = settings.mdp_state(&m);
                    for r in &e.records {
                        b = mdp_step(&b, strict_upper_pair(r.action, 3).unwrap()).unwrap();
                    }
                    b.is_diagonalized()
                })
                .collect();
            let expect: Vec<f64> = adjudicate(&finished)
                .iter()
                .map(|o| o.value(&settings.rewards))
                .collect();
            assert_eq!(out, &expect);
            for e in &eps {
                for r in &e.records {
                    assert_eq!(r.value, out[r.player]);
                }
            }
        }
    }

    #[test]
    fn optimal_beats_random_on_three_by_three() {
        let settings = GameSettings::default();
        let oracle = ExhaustivePlayer { max_depth: 12 };
        let (mut a, mut b) = (0.0, 0.0);
        for seed in 0..50u64 {
            let m = generate_random_symmetric::<f64>(3, 300 + seed, 1.0).unwrap();
            let eps =
                play_mdp_game(&m, &[&oracle, &RandomPlayer], &settings, &mut rng(seed)).unwrap();
            a += eps[0].outcome[0];
            b += eps[0].outcome[1];
        }
        assert!(a > b, "{a} vs {b}");
    }

    #[test]
    fn exhaustive_minimum_is_minimal() {
        for seed in 0..10u64 {
            let m = generate_random_symmetric::<f64>(3, 40 + seed, 1.0).unwrap();
            let s = GameSettings::default().mdp_state(&m);
            let (k, first) = exhaustive_min_rotations(&s, 12).unwrap();
            assert!(first.is_some());
            let mut me = s.matrix.clone();
            let max_elem = crate::matrix::classical_jacobi(&mut me, s.threshold, 100).unwrap();
            assert!(k <= max_elem);
            assert!(exhaustive_min_rotations(&s, k - 1).is_none());
        }
    }

    #[test]
    fn smdp_episode_contracts() {
        let settings = GameSettings::default();
        let diag = SymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let e = play_smdp_episode(
            &diag,
            &FixedOption(SweepOption::Vertical),
            &settings,
            &mut rng(0),
        )
        .unwrap();
        assert!(e.records.is_empty());
        assert_eq!(e.outcome, vec![0.0]);

        let m = generate_random_symmetric::<f64>(6, 3, 1.0).unwrap();
        let e = play_smdp_episode(
            &m,
            &FixedOption(SweepOption::Horizontal),
            &settings,
            &mut rng(0),
        )
        .unwrap();
        let expect = -settings.rewards.epsilon * e.rotation_count as f64;
        assert!((e.outcome[0] - expect).abs() < 1e-12);
        assert_eq!(replay_episode(&e).unwrap(), e.records.len());

        let policy = SearchSmdpPolicy {
            config: SearchConfig {
                num_simulations: 20,
                ..Default::default()
            },
            evaluator: crate::mcts::RepeatOptionRollout::default(),
        };
        let a = play_smdp_episode(&m, &policy, &settings, &mut rng(9)).unwrap();
        let b = play_smdp_episode(&m, &policy, &settings, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn demos_are_onehot_and_finish() {
        let settings = GameSettings::default();
        let demos = make_synthetic_demos(4, 6, &settings, &mut rng(2)).unwrap();
        for (k, e) in demos.iter().enumerate() {
            for r in &e.records {
                assert_eq!(r.policy.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(r.policy.iter().sum::<f64>(), 1.0);
            }
            if k % 2 == 0 {
                let mut s = settings.mdp_state(&e.initial_matrix().unwrap());
                for r in &e.records {
                    s = mdp_step(&s, strict_upper_pair(r.action, 4).unwrap()).unwrap();
                }
                assert!(s.is_diagonalized());
                assert_eq!(e.outcome, vec![1.0]);
            }
        }
        let small = make_synthetic_demos(2, 1, &settings, &mut rng(2)).unwrap();
        assert_eq!(small[0].records.len(), 1);
    }

    #[test]
    fn episodes_persist_and_replay() {
        let settings = GameSettings::default();
        let m = generate_random_symmetric::<f64>(4, 8, 1.0).unwrap();
        let search = SearchPlayer::new(
            SearchConfig {
                num_simulations: 30,
                ..Default::default()
            },
            MaxElemRollout,
        );
        let eps = play_mdp_game(&m, &[&search, &MaxElemPlayer], &settings, &mut rng(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.jsonl");
        save_episodes(&path, &eps).unwrap();
        let back = load_episodes(&path).unwrap();
        assert_eq!(back, eps);
        for e in &back {
            assert_eq!(replay_episode(e).unwrap(), e.records.len());
        }
        let mut broken = back[0].clone();
        broken.records[0].state_key = "0000".into();
        assert!(replay_episode(&broken).is_err());
    }

    #[test]
    fn pool_split_is_disjoint() {
        let pool = MatrixPool::generate(4, 1000, 5, 0.75).unwrap();
        assert_eq!(pool.train.len(), 750);
        assert_eq!(pool.eval.len(), 250);
        pool.check_disjoint().unwrap();
        let mut leaky = pool.clone();
        leaky.eval.push(leaky.train[0].clone());
        assert!(leaky.check_disjoint().is_err());
    }

    #[test]
    fn gate_contracts() {
        let settings = GameSettings::default();
        let eval: Vec<_> = (0..20)
            .map(|i| generate_random_symmetric::<f64>(3, 900 + i, 1.0).unwrap())
            .collect();
        let same = gate_mdp(&MaxElemPlayer, &MaxElemPlayer, &eval, &settings, 0.55, 1).unwrap();
        assert!(!same.accepted);
        assert_eq!(same.candidate_score, 0.5);

        let oracle = ExhaustivePlayer { max_depth: 12 };
        let vs_random = gate_mdp(&oracle, &RandomPlayer, &eval, &settings, 0.55, 1).unwrap();
        assert!(vs_random.accepted, "{vs_random:?}");
        let strict = gate_mdp(&oracle, &RandomPlayer, &eval, &settings, 1.0, 1).unwrap();
        assert_eq!(strict.accepted, strict.candidate_score == 1.0);

        let fixed = |o| FixedOption(o);
        let a = gate_smdp(
            &fixed(SweepOption::Horizontal),
            &fixed(SweepOption::Horizontal),
            &eval,
            &settings,
            1,
        )
        .unwrap();
        assert!(!a.accepted);
    }

    #[test]
    fn empty_round_is_an_error() {
        let params = ModelParams::init(
            ModelConfig {
                num_layers: 1,
                hidden_dim: 4,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let cfg = TrainRoundConfig {
            games_per_round: 0,
            ..Default::default()
        };
        let pool = vec![generate_random_symmetric::<f64>(3, 1, 1.0).unwrap()];
        let r = training_round(
            &params,
            &cfg,
            &SearchConfig::default(),
            &GameSettings::default(),
            Opponent::MaxElem,
            &pool,
            0,
        );
        assert!(matches!(r, Err(Error::EmptyData)));
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
