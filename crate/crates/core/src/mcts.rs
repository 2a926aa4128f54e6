//! AlphaZero-style Monte Carlo tree search over the pivot and sweep games.
//!
//! Selection maximizes `Q(s,a) + c_puct · P(s,a) · √(Σ_b N(s,b)) / (1 + N(s,a))`.
//! With `c_puct = 0` the search reduces to following `Q(s,a)` alone. Unvisited actions
//! have `Q = 0`.
//!
//! Each tree belongs to one player and is searched over that player's own board, so
//! backed-up values are never negated. In the pivot game a diagonalized leaf is scored
//! by its expected race outcome against an opponent model ([`RaceTarget`]); a leaf that
//! exhausts the depth budget scores `-1`. In the sweep game rewards are scaled into
//! `[-1, 1]` by `epsilon · n(n-1)/2 · max_sweeps`.

use std::fmt::Debug;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::env::{
    mdp_legal_actions, mdp_step, smdp_step, smdp_timeout_penalty, state_key, MdpState,
    RewardConfig, SmdpState, StateKey,
};
use crate::error::{Error, Result};
use crate::matrix::{num_pivots, strict_upper_index, PivotAction};
use crate::orderings::{all_options, SweepOption, NUM_OPTIONS};

/// Prior mixing weight given to the MaxElem action inside a heavy-rollout window.
pub const HEAVY_ROLLOUT_LAMBDA: f64 = 0.75;

/// A single-agent search problem.
pub trait SearchProblem: Clone {
    type Action: Copy + PartialEq + Debug;

    fn legal_actions(&self) -> Vec<Self::Action>;

    /// `Some(value)` when the state is terminal. Rewards collected on the way are not
    /// included.
    fn terminal_value(&self) -> Option<f64>;

    /// Successor state and the (scaled) reward of the transition.
    fn step(&self, action: Self::Action) -> (Self, f64);

    /// Length of the policy vector the evaluator produces.
    fn policy_len(&self) -> usize;

    /// Slot of an action in the policy vector.
    fn action_slot(&self, action: Self::Action) -> usize;

    fn key(&self) -> StateKey;

    fn discount(&self) -> f64 {
        1.0
    }

    /// Hook for adjusting normalized priors over `actions` at expansion time.
    fn guide_priors(&self, _actions: &[Self::Action], _priors: &mut [f64]) {}
}

/// Policy/value oracle consulted at leaf expansion.
pub trait Evaluator<P: SearchProblem> {
    /// Returns a prior over all policy slots and a value estimate in `[-1, 1]`.
    fn evaluate(&self, state: &P) -> (Vec<f64>, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub c_puct: f64,
    pub num_simulations: usize,
    /// Depth budget `D` per player in the pivot game.
    pub max_depth: usize,
    /// Visit-count temperature; `0` selects the most visited action.
    pub temperature: f64,
    pub heavy_rollout: bool,
    /// Dirichlet root noise `(alpha, weight)`; off by default.
    pub dirichlet: Option<(f64, f64)>,
    pub trace: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_puct: std::f64::consts::SQRT_2,
            num_simulations: 30,
            max_depth: 0,
            temperature: 1.0,
            heavy_rollout: false,
            dirichlet: None,
            trace: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_simulations == 0 {
            return Err(Error::Config("num_simulations must be >= 1".into()));
        }
        if !(self.c_puct >= 0.0) || !(self.temperature >= 0.0) {
            return Err(Error::Config("c_puct and temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Root statistics after a search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchNode {
    pub key: String,
    pub visit_counts: Vec<u32>,
    pub total_values: Vec<f64>,
    pub priors: Vec<f64>,
    pub expanded: bool,
}

impl SearchNode {
    pub fn q(&self, i: usize) -> f64 {
        self.total_values[i] / f64::from(self.visit_counts[i].max(1))
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult<A> {
    /// Stochastic policy over all policy slots; zero outside the legal actions.
    pub policy: Vec<f64>,
    pub actions: Vec<A>,
    /// Policy restricted to `actions`, same order.
    pub action_probs: Vec<f64>,
    pub root: SearchNode,
    pub root_value: f64,
    /// Per simulation, the `(state digest, slot)` path taken from the root.
    pub trace: Option<Vec<Vec<(String, usize)>>>,
}

impl<A: Copy> SearchResult<A> {
    /// Most probable action; ties resolve to the lowest index.
    pub fn best_action(&self) -> A {
        self.actions[argmax(&self.action_probs)]
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> A {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &p) in self.actions.iter().zip(&self.action_probs) {
            acc += p;
            if u < acc {
                return *a;
            }
        }
        self.best_action()
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

struct Node<P: SearchProblem> {
    state: P,
    actions: Vec<P::Action>,
    priors: Vec<f64>,
    visits: Vec<u32>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    children: Vec<Option<usize>>,
    expanded: bool,
    terminal: Option<f64>,
}

impl<P: SearchProblem> Node<P> {
    fn new(state: P) -> Self {
        let terminal = state.terminal_value();
        Self {
            state,
            actions: Vec::new(),
            priors: Vec::new(),
            visits: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            children: Vec::new(),
            expanded: false,
            terminal,
        }
    }

    /// Expands the node and returns the evaluator's value.
    fn expand<E: Evaluator<P> + ?Sized>(&mut self, evaluator: &E) -> f64 {
        let actions = self.state.legal_actions();
        let (slot_priors, value) = evaluator.evaluate(&self.state);
        let mut priors: Vec<f64> = actions
            .iter()
            .map(|&a| {
                slot_priors
                    .get(self.state.action_slot(a))
                    .copied()
                    .unwrap_or(0.0)
                    .max(0.0)
            })
            .collect();
        normalize_or_uniform(&mut priors);
        self.state.guide_priors(&actions, &mut priors);
        let k = actions.len();
        self.actions = actions;
        self.priors = priors;
        self.visits = vec![0; k];
        self.values = vec![0.0; k];
        self.rewards = vec![0.0; k];
        self.children = vec![None; k];
        self.expanded = true;
        value.clamp(-1.0, 1.0)
    }

    fn select(&self, c_puct: f64) -> usize {
        let total: u32 = self.visits.iter().sum();
        let sqrt_total = f64::from(total).sqrt();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for i in 0..self.actions.len() {
            let n = f64::from(self.visits[i]);
            let q = if self.visits[i] == 0 {
                0.0
            } else {
                self.values[i] / n
            };
            let score = q + c_puct * self.priors[i] * sqrt_total / (1.0 + n);
            let better =
                score > best_score || (score == best_score && self.priors[i] > self.priors[best]);
            if better {
                best = i;
                best_score = score;
            }
        }
        best
    }
}

fn normalize_or_uniform(p: &mut [f64]) {
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|x| *x /= sum);
    } else if !p.is_empty() {
        let u = 1.0 / p.len() as f64;
        p.iter_mut().for_each(|x| *x = u);
    }
}

/// Runs `cfg.num_simulations` select–expand–evaluate–backup iterations from `root`.
pub fn search<P, E, R>(
    root: &P,
    cfg: &SearchConfig,
    evaluator: &E,
    rng: &mut R,
) -> Result<SearchResult<P::Action>>
where
    P: SearchProblem,
    E: Evaluator<P> + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if root.terminal_value().is_some() {
        return Err(Error::TerminalRoot);
    }
    let mut arena: Vec<Node<P>> = vec![Node::new(root.clone())];
    arena[0].expand(evaluator);
    if arena[0].actions.is_empty() {
        return Err(Error::NoLegalActions);
    }
    if let Some((alpha, weight)) = cfg.dirichlet {
        add_dirichlet_noise(&mut arena[0].priors, alpha, weight, rng);
    }
    let mut trace = cfg.trace.then(Vec::new);

    for _ in 0..cfg.num_simulations {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut node = 0;
        let leaf_value = loop {
            if let Some(v) = arena[node].terminal {
                break v;
            }
            if !arena[node].expanded {
                break arena[node].expand(evaluator);
            }
            if arena[node].actions.is_empty() {
                // stuck: no legal move but not terminal
                break -1.0;
            }
            let i = arena[node].select(cfg.c_puct);
            path.push((node, i));
            node = match arena[node].children[i] {
                Some(child) => child,
                None => {
                    let (next, reward) = arena[node].state.step(arena[node].actions[i]);
                    arena.push(Node::new(next));
                    let child = arena.len() - 1;
                    arena[node].children[i] = Some(child);
                    arena[node].rewards[i] = reward;
                    child
                }
            };
        };
        if let Some(t) = trace.as_mut() {
            t.push(
                path.iter()
                    .map(|&(n, i)| {
                        let s = &arena[n].state;
                        (s.key().digest(), s.action_slot(arena[n].actions[i]))
                    })
                    .collect(),
            );
        }
        let mut g = leaf_value;
        for &(n, i) in path.iter().rev() {
            let node = &mut arena[n];
            g = node.rewards[i] + node.state.discount() * g;
            node.visits[i] += 1;
            node.values[i] += g;
        }
    }

    let root_node = &arena[0];
    let action_probs = visit_policy(&root_node.visits, cfg.temperature);
    let mut policy = vec![0.0; root.policy_len()];
    for (&a, &p) in root_node.actions.iter().zip(&action_probs) {
        policy[root.action_slot(a)] = p;
    }
    let total: u32 = root_node.visits.iter().sum();
    let root_value = root_node.values.iter().sum::<f64>() / f64::from(total.max(1));
    Ok(SearchResult {
        policy,
        actions: root_node.actions.clone(),
        action_probs,
        root: SearchNode {
            key: root.key().digest(),
            visit_counts: root_node.visits.clone(),
            total_values: root_node.values.clone(),
            priors: root_node.priors.clone(),
            expanded: root_node.expanded,
        },
        root_value,
        trace,
    })
}

/// `π(a) ∝ N(a)^(1/τ)`, or one-hot at the most visited action (lowest index on ties)
/// when `τ = 0`.
pub fn visit_policy(visits: &[u32], temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; visits.len()];
    if visits.is_empty() {
        return out;
    }
    let max = visits.iter().copied().max().unwrap_or(0);
    if temperature == 0.0 || max == 0 {
        let best = visits.iter().position(|&v| v == max).unwrap_or(0);
        out[best] = 1.0;
        return out;
    }
    let inv = 1.0 / temperature;
    for (o, &v) in out.iter_mut().zip(visits) {
        *o = (f64::from(v) / f64::from(max)).powf(inv);
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

fn add_dirichlet_noise<R: Rng + ?Sized>(priors: &mut [f64], alpha: f64, weight: f64, rng: &mut R) {
    let Ok(gamma) = Gamma::new(alpha, 1.0) else {
        return;
    };
    let mut noise: Vec<f64> = priors.iter().map(|_| gamma.sample(rng)).collect();
    normalize_or_uniform(&mut noise);
    for (p, n) in priors.iter_mut().zip(noise) {
        *p = (1.0 - weight) * *p + weight * n;
    }
}

// ---------------------------------------------------------------------------
// Heavy rollouts
// ---------------------------------------------------------------------------

/// Timestep window `t_start < t < t_end` in which the search is steered toward MaxElem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeavyWindow {
    pub t_start: usize,
    pub t_end: usize,
}

impl HeavyWindow {
    pub fn is_empty(&self) -> bool {
        self.t_end <= self.t_start
    }

    pub fn contains(&self, t: usize) -> bool {
        self.t_start < t && t < self.t_end
    }
}

/// Draws `t_start, t_end ~ Uniform{1..=D}` independently.
pub fn heavy_rollout_window<R: Rng + ?Sized>(max_depth: usize, rng: &mut R) -> HeavyWindow {
    let d = max_depth.max(1);
    HeavyWindow {
        t_start: rng.random_range(1..=d),
        t_end: rng.random_range(1..=d),
    }
}

/// Mixes the prior toward the MaxElem action when `t` lies inside the window:
/// `P ← (1 - λ) P + λ · onehot(MaxElem)`. Outside the window priors are untouched.
pub fn guided_expand(
    priors: &mut [f64],
    t: usize,
    window: &HeavyWindow,
    state: &MdpState<f64>,
    actions: &[PivotAction],
) {
    if window.is_empty() || !window.contains(t) || actions.is_empty() {
        return;
    }
    let mut best = 0;
    for (i, a) in actions.iter().enumerate() {
        let v = state.matrix.get(a.p, a.q).abs();
        if v > state.matrix.get(actions[best].p, actions[best].q).abs() {
            best = i;
        }
    }
    for (i, p) in priors.iter_mut().enumerate() {
        let hot = if i == best { 1.0 } else { 0.0 };
        *p = (1.0 - HEAVY_ROLLOUT_LAMBDA) * *p + HEAVY_ROLLOUT_LAMBDA * hot;
    }
}

/// Step budget exhausted without diagonalizing: the search scores such leaves `-1`.
pub fn depth_cutoff_check(s: &MdpState<f64>, max_depth: usize) -> bool {
    s.step >= max_depth && !s.is_diagonalized()
}

// ---------------------------------------------------------------------------
// Pivot game as a search problem
// ---------------------------------------------------------------------------

/// Opponent model used to score a diagonalized leaf reached at own step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RaceTarget {
    /// The opponent finishes at exactly this step (e.g. a known MaxElem count):
    /// `+1` if `t` is earlier, `tie_value` if equal, `-1` if later.
    Opponent(usize),
    /// Opponent finish step uniform on `1..=D`: expected race outcome
    /// `(D - 2t + 1 + tie_value) / D`.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct MdpGame {
    pub state: MdpState<f64>,
    pub constrain: bool,
    pub race: RaceTarget,
    pub tie_value: f64,
    pub window: Option<HeavyWindow>,
    /// Policy vector capacity; slots follow the nested strict-upper scheme.
    pub n_max: usize,
}

impl MdpGame {
    pub fn new(state: MdpState<f64>, race: RaceTarget) -> Self {
        let n = state.matrix.n();
        Self {
            state,
            constrain: false,
            race,
            tie_value: 0.0,
            window: None,
            n_max: n,
        }
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max.max(self.state.matrix.n());
        self
    }

    pub fn with_window(mut self, window: Option<HeavyWindow>) -> Self {
        self.window = window;
        self
    }

    pub fn with_constraint(mut self, constrain: bool) -> Self {
        self.constrain = constrain;
        self
    }

    pub fn with_tie_value(mut self, tie_value: f64) -> Self {
        self.tie_value = tie_value;
        self
    }

    /// Race value of finishing at own step `t`.
    pub fn finish_value(&self, t: usize) -> f64 {
        match self.race {
            RaceTarget::Opponent(m) => match t.cmp(&m) {
                std::cmp::Ordering::Less => 1.0,
                std::cmp::Ordering::Equal => self.tie_value,
                std::cmp::Ordering::Greater => -1.0,
            },
            RaceTarget::Uniform => {
                let d = self.state.max_depth.max(1) as f64;
                ((d - 2.0 * t as f64 + 1.0 + self.tie_value) / d).clamp(-1.0, 1.0)
            }
        }
    }
}

impl SearchProblem for MdpGame {
    type Action = PivotAction;

    fn legal_actions(&self) -> Vec<PivotAction> {
        mdp_legal_actions(&self.state, self.constrain)
    }

    fn terminal_value(&self) -> Option<f64> {
        if self.state.is_diagonalized() {
            Some(self.finish_value(self.state.step))
        } else if depth_cutoff_check(&self.state, self.state.max_depth) {
            Some(-1.0)
        } else {
            None
        }
    }

    fn step(&self, action: PivotAction) -> (Self, f64) {
        let mut next = self.clone();
        next.state = mdp_step(&self.state, action).expect("search only steps legal actions");
        (next, 0.0)
    }

    fn policy_len(&self) -> usize {
        num_pivots(self.n_max)
    }

    fn action_slot(&self, action: PivotAction) -> usize {
        strict_upper_index(action, self.state.matrix.n()).expect("legal pivot")
    }

    fn key(&self) -> StateKey {
        state_key(&self.state.matrix)
    }

    fn guide_priors(&self, actions: &[PivotAction], priors: &mut [f64]) {
        if let Some(w) = &self.window {
            guided_expand(priors, self.state.step, w, &self.state, actions);
        }
    }
}

/// Scores a leaf by finishing the game with MaxElem. Priors are uniform.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxElemRollout;

impl Evaluator<MdpGame> for MaxElemRollout {
    fn evaluate(&self, game: &MdpGame) -> (Vec<f64>, f64) {
        let priors = vec![1.0; game.policy_len()];
        let mut s = game.state.clone();
        loop {
            if s.is_diagonalized() {
                return (priors, game.finish_value(s.step));
            }
            if s.step >= s.max_depth {
                return (priors, -1.0);
            }
            let Some(a) = s.matrix.max_pivot() else {
                return (priors, -1.0);
            };
            s = mdp_step(&s, a).expect("max pivot is legal");
        }
    }
}

/// Uniform priors and a neutral value.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformEvaluator;

impl<P: SearchProblem> Evaluator<P> for UniformEvaluator {
    fn evaluate(&self, state: &P) -> (Vec<f64>, f64) {
        (vec![1.0; state.policy_len()], 0.0)
    }
}

/// Plays a game to the end, searching afresh before every move and taking the
/// highest-probability action. Returns the actions played.
pub fn greedy_playout<P, E>(
    start: &P,
    cfg: &SearchConfig,
    evaluator: &E,
    rng: &mut impl Rng,
) -> Result<(Vec<P::Action>, P)>
where
    P: SearchProblem,
    E: Evaluator<P> + ?Sized,
{
    let mut state = start.clone();
    let mut played = Vec::new();
    while state.terminal_value().is_none() {
        let res = search(&state, cfg, evaluator, rng)?;
        let a = res.best_action();
        played.push(a);
        state = state.step(a).0;
    }
    Ok((played, state))
}

// ---------------------------------------------------------------------------
// Sweep game as a search problem
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SmdpGame {
    pub state: SmdpState<f64>,
    pub rewards: RewardConfig,
}

impl SmdpGame {
    pub fn new(state: SmdpState<f64>, rewards: RewardConfig) -> Self {
        Self { state, rewards }
    }

    /// Divisor mapping raw returns into `[-1, 1]`.
    pub fn value_scale(&self) -> f64 {
        let n = self.state.matrix.n();
        (self.rewards.epsilon * num_pivots(n) as f64 * self.state.max_sweeps as f64)
            .max(f64::MIN_POSITIVE)
    }

    /// Raw reward of taking `opt`, timeout penalty included, and the successor.
    pub fn raw_step(&self, opt: SweepOption) -> (Self, f64) {
        let out =
            smdp_step(&self.state, opt, &self.rewards).expect("search only steps live states");
        let mut reward = out.reward;
        if out.state.is_timed_out() {
            reward += smdp_timeout_penalty(&out.state);
        }
        (
            Self {
                state: out.state,
                rewards: self.rewards,
            },
            reward,
        )
    }
}

impl SearchProblem for SmdpGame {
    type Action = SweepOption;

    fn legal_actions(&self) -> Vec<SweepOption> {
        if self.state.is_terminal() {
            Vec::new()
        } else {
            all_options().to_vec()
        }
    }

    fn terminal_value(&self) -> Option<f64> {
        self.state.is_terminal().then_some(0.0)
    }

    fn step(&self, action: SweepOption) -> (Self, f64) {
        let scale = self.value_scale();
        let (next, r) = self.raw_step(action);
        (next, r / scale)
    }

    fn policy_len(&self) -> usize {
        NUM_OPTIONS
    }

    fn action_slot(&self, action: SweepOption) -> usize {
        action.id()
    }

    fn key(&self) -> StateKey {
        state_key(&self.state.matrix)
    }

    fn discount(&self) -> f64 {
        self.rewards.discount
    }
}

/// Scores a leaf by repeating one option to the end: the last option taken, or
/// `fallback` at the root.
#[derive(Debug, Clone, Copy)]
pub struct RepeatOptionRollout {
    pub fallback: SweepOption,
}

impl Default for RepeatOptionRollout {
    fn default() -> Self {
        Self {
            fallback: SweepOption::Horizontal,
        }
    }
}

impl Evaluator<SmdpGame> for RepeatOptionRollout {
    fn evaluate(&self, game: &SmdpGame) -> (Vec<f64>, f64) {
        let opt = game.state.last_option.unwrap_or(self.fallback);
        let scale = game.value_scale();
        let mut g = game.clone();
        let mut rewards = Vec::new();
        while !g.state.is_terminal() {
            let (next, r) = g.raw_step(opt);
            rewards.push(r / scale);
            g = next;
        }
        let value = crate::env::discounted_return(&rewards, game.rewards.discount);
        (vec![1.0; NUM_OPTIONS], value.clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{generate_random_symmetric, SymmetricMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One-shot bandit: each arm ends the game with a fixed value.
    #[derive(Clone, Debug)]
    struct Bandit {
        arms: Vec<f64>,
        pulled: Option<usize>,
    }

    impl SearchProblem for Bandit {
        type Action = usize;
        fn legal_actions(&self) -> Vec<usize> {
            (0..self.arms.len()).collect()
        }
        fn terminal_value(&self) -> Option<f64> {
            self.pulled.map(|i| self.arms[i])
        }
        fn step(&self, a: usize) -> (Self, f64) {
            (
                Self {
                    arms: self.arms.clone(),
                    pulled: Some(a),
                },
                0.0,
            )
        }
        fn policy_len(&self) -> usize {
            self.arms.len()
        }
        fn action_slot(&self, a: usize) -> usize {
            a
        }
        fn key(&self) -> StateKey {
            StateKey(vec![self.pulled.map_or(-1, |p| p as i64)])
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn single_action_root() {
        let b = Bandit {
            arms: vec![0.3],
            pulled: None,
        };
        let res = search(&b, &SearchConfig::default(), &UniformEvaluator, &mut rng()).unwrap();
        assert_eq!(res.policy, vec![1.0]);
    }

    #[test]
    fn q_only_concentrates_on_best_arm() {
        let b = Bandit {
            arms: vec![-0.5, 0.5, 0.2],
            pulled: None,
        };
        let cfg = SearchConfig {
            c_puct: 0.0,
            num_simulations: 200,
            ..Default::default()
        };
        let res = search(&b, &cfg, &UniformEvaluator, &mut rng()).unwrap();
        assert!(res.policy[1] > 0.95, "{:?}", res.policy);
        assert_eq!(res.best_action(), 1);
    }

    #[test]
    fn visit_conservation_and_masking() {
        let m = generate_random_symmetric::<f64>(4, 3, 1.0).unwrap();
        let thr = 1e-8 * m.frobenius_norm();
        let mut s = MdpState::new(m, 24, thr);
        s = mdp_step(&s, PivotAction { p: 0, q: 2 }).unwrap();
        let game = MdpGame::new(s, RaceTarget::Uniform).with_n_max(6);
        let cfg = SearchConfig {
            num_simulations: 77,
            ..Default::default()
        };
        let res = search(&game, &cfg, &MaxElemRollout, &mut rng()).unwrap();
        assert_eq!(res.root.visit_counts.iter().sum::<u32>(), 77);
        assert_eq!(res.policy.len(), 15);
        let zeroed = strict_upper_index(PivotAction { p: 0, q: 2 }, 4).unwrap();
        assert_eq!(res.policy[zeroed], 0.0);
        for slot in 6..15 {
            assert_eq!(res.policy[slot], 0.0);
        }
        assert!((res.policy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((res.root.priors.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..res.actions.len() {
            assert!(res.root.q(i).abs() <= 1.0);
        }
    }

    #[test]
    fn search_is_deterministic() {
        let m = generate_random_symmetric::<f64>(4, 8, 1.0).unwrap();
        let thr = 1e-8 * m.frobenius_norm();
        let game = MdpGame::new(MdpState::new(m, 24, thr), RaceTarget::Uniform);
        let cfg = SearchConfig {
            num_simulations: 50,
            dirichlet: Some((0.3, 0.25)),
            ..Default::default()
        };
        let a = search(&game, &cfg, &MaxElemRollout, &mut rng()).unwrap();
        let b = search(&game, &cfg, &MaxElemRollout, &mut rng()).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.root, b.root);
    }

    #[test]
    fn errors_on_terminal_root() {
        let d = SymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        let game = MdpGame::new(MdpState::new(d, 9, 1e-8), RaceTarget::Uniform);
        assert!(matches!(
            search(
                &game,
                &SearchConfig::default(),
                &UniformEvaluator,
                &mut rng()
            ),
            Err(Error::TerminalRoot)
        ));
    }

    #[test]
    fn temperature_policy() {
        assert_eq!(visit_policy(&[3, 5, 5], 0.0), vec![0.0, 1.0, 0.0]);
        let p = visit_policy(&[1, 3], 1.0);
        assert!((p[0] - 0.25).abs() < 1e-15);
        let sharp = visit_policy(&[9, 10], 0.01);
        assert!(sharp[1] > 0.99);
    }

    #[test]
    fn heavy_window_draws() {
        let mut r = rng();
        assert_eq!(
            heavy_rollout_window(1, &mut r),
            HeavyWindow {
                t_start: 1,
                t_end: 1
            }
        );
        assert!(heavy_rollout_window(1, &mut r).is_empty());
        let a = heavy_rollout_window(10, &mut ChaCha8Rng::seed_from_u64(5));
        let b = heavy_rollout_window(10, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn heavy_window_frequencies_within_three_sigma() {
        let mut r = rng();
        let draws = 10_000;
        let mut counts = [0usize; 11];
        for _ in 0..draws {
            let w = heavy_rollout_window(10, &mut r);
            counts[w.t_start] += 1;
        }
        let p: f64 = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(counts[0], 0);
        for c in &counts[1..] {
            assert!(
                (*c as f64 - draws as f64 * p).abs() < 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn guided_priors() {
        let m = SymmetricMatrix::from_rows(&[
            vec![1.0, 0.1, 0.9],
            vec![0.1, 2.0, 0.3],
            vec![0.9, 0.3, 3.0],
        ])
        .unwrap();
        let s = MdpState::new(m, 9, 1e-8);
        let actions = mdp_legal_actions(&s, false);
        let base = vec![0.5, 0.3, 0.2];
        let w = HeavyWindow {
            t_start: 1,
            t_end: 5,
        };

        let mut inside = base.clone();
        guided_expand(&mut inside, 2, &w, &s, &actions);
        assert_eq!(argmax(&inside), 1, "(0,2) is the largest entry");
        assert!(inside[1] > inside[0] && inside[1] > inside[2]);

        let mut outside = base.clone();
        guided_expand(&mut outside, 1, &w, &s, &actions);
        assert_eq!(outside, base);

        let empty = HeavyWindow {
            t_start: 4,
            t_end: 2,
        };
        for t in 0..9 {
            let mut p = base.clone();
            guided_expand(&mut p, t, &empty, &s, &actions);
            assert_eq!(p, base);
        }
    }

    #[test]
    fn depth_cutoff_rules() {
        let m = generate_random_symmetric::<f64>(3, 1, 1.0).unwrap();
        let thr = 1e-8 * m.frobenius_norm();
        let mut s = MdpState::new(m, 2, thr);
        s = mdp_step(&s, s.matrix.max_pivot().unwrap()).unwrap();
        assert!(!depth_cutoff_check(&s, 2));
        s = mdp_step(&s, s.matrix.max_pivot().unwrap()).unwrap();
        assert!(depth_cutoff_check(&s, 2));
        assert_eq!(
            MdpGame::new(s, RaceTarget::Uniform).terminal_value(),
            Some(-1.0)
        );

        let two = SymmetricMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let s = MdpState::new(two, 1, 1e-8);
        let s = mdp_step(&s, PivotAction { p: 0, q: 1 }).unwrap();
        assert!(!depth_cutoff_check(&s, 1));
        let g = MdpGame::new(s, RaceTarget::Opponent(2));
        assert_eq!(g.terminal_value(), Some(1.0));
    }

    #[test]
    fn race_values() {
        let m = generate_random_symmetric::<f64>(3, 1, 1.0).unwrap();
        let g =
            MdpGame::new(MdpState::new(m, 9, 1e-8), RaceTarget::Opponent(5)).with_tie_value(0.1);
        assert_eq!(g.finish_value(4), 1.0);
        assert_eq!(g.finish_value(5), 0.1);
        assert_eq!(g.finish_value(6), -1.0);
        let u = MdpGame {
            race: RaceTarget::Uniform,
            tie_value: 0.0,
            ..g
        };
        // brute-force expectation over F ~ U{1..9}
        for t in 1..=9usize {
            let e: f64 = (1..=9usize)
                .map(|f| match t.cmp(&f) {
                    std::cmp::Ordering::Less => 1.0,
                    std::cmp::Ordering::Equal => 0.0,
                    std::cmp::Ordering::Greater => -1.0,
                })
                .sum::<f64>()
                / 9.0;
            assert!((u.finish_value(t) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_search_runs() {
        let m = generate_random_symmetric::<f64>(5, 4, 1.0).unwrap();
        let thr = 1e-8 * m.frobenius_norm();
        let game = SmdpGame::new(SmdpState::new(m, 15, thr), RewardConfig::default());
        let cfg = SearchConfig {
            c_puct: 0.0,
            num_simulations: 64,
            temperature: 0.0,
            trace: true,
            ..Default::default()
        };
        let res = search(&game, &cfg, &RepeatOptionRollout::default(), &mut rng()).unwrap();
        assert_eq!(res.policy.len(), 8);
        assert_eq!(res.root.visit_counts.iter().sum::<u32>(), 64);
        assert_eq!(res.trace.as_ref().unwrap().len(), 64);
        assert!(res.root_value < 0.0 && res.root_value > -1.0);
    }
}
