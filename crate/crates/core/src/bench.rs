//! Rotation-count benchmarks, sweep-transition statistics and the chi-squared test.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::env::{default_max_sweeps, smdp_step, RewardConfig, SmdpState};
use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;
use crate::orderings::{all_options, SweepOption, NUM_OPTIONS};
use crate::scalar::Scalar;
use crate::selfplay::{derive_seed, play_smdp_episode, Episode, GameSettings, SmdpPolicy};

/// Rotations needed by repeating `opt` on `m` until `off_norm < threshold`.
pub fn baseline_rotations<T: Scalar>(
    m: &SymmetricMatrix<T>,
    opt: SweepOption,
    threshold: T,
    max_sweeps: usize,
) -> Result<usize> {
    let mut s = SmdpState::new(m.clone(), max_sweeps, threshold);
    let rewards = RewardConfig::default();
    while !s.is_terminal() {
        s = smdp_step(&s, opt, &rewards)?.state;
    }
    if !s.is_diagonalized() {
        return Err(Error::NonConvergence {
            sweeps: s.sweeps_taken,
            rotations: s.primitive_rotations,
            off_norm: s.matrix.off_norm().as_f64(),
        });
    }
    Ok(s.primitive_rotations)
}

/// Per-matrix rotation counts of a fixed-option policy. The threshold is
/// `threshold_rel · ‖M⁰‖_F`; `max_sweeps` of `None` uses `3n`.
pub fn run_baseline<T: Scalar>(
    opt: SweepOption,
    matrices: &[SymmetricMatrix<T>],
    threshold_rel: f64,
    max_sweeps: Option<usize>,
) -> Result<Vec<usize>> {
    matrices
        .par_iter()
        .map(|m| {
            let thr = T::lit(threshold_rel) * m.frobenius_norm();
            baseline_rotations(
                m,
                opt,
                thr,
                max_sweeps.unwrap_or_else(|| default_max_sweeps(m.n())),
            )
        })
        .collect()
}

/// Per-matrix rotation counts of an arbitrary sweep policy. Matrix `i` uses the random
/// stream `derive_seed(seed, i)`. Non-converged episodes are reported as errors.
pub fn run_agent(
    policy: &dyn SmdpPolicy,
    matrices: &[SymmetricMatrix<f64>],
    settings: &GameSettings,
    seed: u64,
) -> Result<Vec<usize>> {
    Ok(run_agent_episodes(policy, matrices, settings, seed)?
        .iter()
        .map(|e| e.rotation_count)
        .collect())
}

/// Like [`run_agent`] but returns the full episodes.
pub fn run_agent_episodes(
    policy: &dyn SmdpPolicy,
    matrices: &[SymmetricMatrix<f64>],
    settings: &GameSettings,
    seed: u64,
) -> Result<Vec<Episode>> {
    matrices
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let ep = play_smdp_episode(m, policy, settings, &mut rng)?;
            let mut end = settings.smdp_state(m);
            for r in &ep.records {
                end = smdp_step(&end, SweepOption::from_id(r.action)?, &settings.rewards)?.state;
            }
            if !end.is_diagonalized() {
                return Err(Error::NonConvergence {
                    sweeps: end.sweeps_taken,
                    rotations: end.primitive_rotations,
                    off_norm: end.matrix.off_norm(),
                });
            }
            Ok(ep)
        })
        .collect()
}

/// Samples each sweep's option from a recorded per-stage distribution. Stages past the
/// last populated row reuse the last populated row.
#[derive(Debug, Clone)]
pub struct DistributionReplay {
    pub rows: Vec<[f64; NUM_OPTIONS]>,
}

impl DistributionReplay {
    pub fn from_stats(stats: &TransitionStats) -> Result<Self> {
        let rows: Vec<[f64; NUM_OPTIONS]> =
            stats.stage_probabilities().into_iter().flatten().collect();
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(Self { rows })
    }
}

impl SmdpPolicy for DistributionReplay {
    fn choose(
        &self,
        state: &SmdpState<f64>,
        _rewards: &RewardConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(SweepOption, Vec<f64>)> {
        let row = &self.rows[state.sweeps_taken.min(self.rows.len() - 1)];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = NUM_OPTIONS - 1;
        for (i, &p) in row.iter().enumerate() {
            acc += p;
            if p > 0.0 && u < acc {
                pick = i;
                break;
            }
        }
        while row[pick] == 0.0 && pick > 0 {
            pick -= 1;
        }
        Ok((SweepOption::from_id(pick)?, row.to_vec()))
    }
}

// ---------------------------------------------------------------------------
// Transition statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    /// `stage_counts[k][o]`: how often option `o` was chosen for sweep `k`.
    pub stage_counts: Vec<[u64; NUM_OPTIONS]>,
    /// `transitions[a][b]`: how often option `b` directly followed option `a`.
    pub transitions: [[u64; NUM_OPTIONS]; NUM_OPTIONS],
}

impl TransitionStats {
    /// Row-normalized stage table; stages without data are `None`.
    pub fn stage_probabilities(&self) -> Vec<Option<[f64; NUM_OPTIONS]>> {
        self.stage_counts.iter().map(normalize).collect()
    }

    /// Row-normalized option-to-option table; options never followed are `None`.
    pub fn transition_probabilities(&self) -> Vec<Option<[f64; NUM_OPTIONS]>> {
        self.transitions.iter().map(normalize).collect()
    }
}

fn normalize(row: &[u64; NUM_OPTIONS]) -> Option<[f64; NUM_OPTIONS]> {
    let total: u64 = row.iter().sum();
    (total > 0).then(|| {
        let mut p = [0.0; NUM_OPTIONS];
        for (o, &c) in p.iter_mut().zip(row) {
            *o = c as f64 / total as f64;
        }
        p
    })
}

/// Counts option choices per sweep stage and consecutive-option transitions.
pub fn collect_transitions(sequences: &[Vec<usize>]) -> Result<TransitionStats> {
    let mut stats = TransitionStats::default();
    for seq in sequences {
        for (k, &o) in seq.iter().enumerate() {
            if o >= NUM_OPTIONS {
                return Err(Error::Config(format!(
                    "option id {o} not in 0..{NUM_OPTIONS}"
                )));
            }
            if stats.stage_counts.len() <= k {
                stats.stage_counts.resize(k + 1, [0; NUM_OPTIONS]);
            }
            stats.stage_counts[k][o] += 1;
            if k > 0 {
                stats.transitions[seq[k - 1]][o] += 1;
            }
        }
    }
    Ok(stats)
}

pub fn collect_episode_transitions(episodes: &[Episode]) -> Result<TransitionStats> {
    let seqs: Vec<Vec<usize>> = episodes.iter().map(Episode::options).collect();
    collect_transitions(&seqs)
}

// ---------------------------------------------------------------------------
// Chi-squared test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquared {
    pub statistic: f64,
    pub dof: usize,
    /// Upper-tail probability, clamped below at `1e-300`.
    pub p_value: f64,
    pub log10_p: f64,
    /// Some expected count is below 5.
    pub low_expected: bool,
}

/// Natural log of the regularized upper incomplete gamma function `Q(a, x)`.
pub fn ln_gamma_q(a: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;
    if x <= 0.0 {
        return 0.0;
    }
    let prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // series for P(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        let p = (prefix + sum.ln()).exp();
        (-p).ln_1p()
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = f64::MIN_POSITIVE / EPS;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        prefix + h.ln()
    }
}

/// Pearson test of independence on a contingency table of counts.
pub fn chi_squared(table: &[Vec<f64>]) -> Result<ChiSquared> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(Error::DegenerateTable(format!(
            "need a rectangular table of at least 2 x 2, got {rows} rows"
        )));
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let total: f64 = row_sums.iter().sum();
    if let Some(i) = row_sums.iter().position(|&s| s <= 0.0) {
        return Err(Error::DegenerateTable(format!("row {i} has zero total")));
    }
    if let Some(j) = col_sums.iter().position(|&s| s <= 0.0) {
        return Err(Error::DegenerateTable(format!("column {j} has zero total")));
    }
    let mut statistic = 0.0;
    let mut low_expected = false;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / total;
            low_expected |= e < 5.0;
            statistic += (o - e) * (o - e) / e;
        }
    }
    let dof = (rows - 1) * (cols - 1);
    let ln_p = ln_gamma_q(dof as f64 / 2.0, statistic / 2.0);
    let log10_p = ln_p / std::f64::consts::LN_10;
    Ok(ChiSquared {
        statistic,
        dof,
        p_value: ln_p.exp().max(1e-300),
        log10_p,
        low_expected,
    })
}

/// Chi-squared test on the populated stage rows of `stats`, dropping options never
/// chosen at any stage.
pub fn stage_chi_squared(stats: &TransitionStats) -> Result<ChiSquared> {
    let used: Vec<usize> = (0..NUM_OPTIONS)
        .filter(|&o| stats.stage_counts.iter().any(|r| r[o] > 0))
        .collect();
    let table: Vec<Vec<f64>> = stats
        .stage_counts
        .iter()
        .filter(|r| r.iter().any(|&c| c > 0))
        .map(|r| used.iter().map(|&o| r[o] as f64).collect())
        .collect();
    chi_squared(&table)
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

/// Option-transition graph in DOT. Edge labels are probabilities to 3 decimals.
pub fn transition_dot(stats: &TransitionStats) -> String {
    let mut out = String::from("digraph sweep_transitions {\n  node [shape=circle];\n");
    for o in all_options() {
        let _ = writeln!(out, "  {} [label=\"{}\"];", o.id(), o.name());
    }
    for (a, row) in stats.transition_probabilities().iter().enumerate() {
        let Some(row) = row else { continue };
        for (b, &p) in row.iter().enumerate() {
            if p > 0.0 {
                let _ = writeln!(out, "  {a} -> {b} [label=\"{p:.3}\", weight={p:.3}];");
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Stage-by-option probability table: a `stage` column plus one column per option.
pub fn stage_csv(stats: &TransitionStats) -> String {
    let mut out = String::from("stage");
    for o in all_options() {
        out.push(',');
        out.push_str(o.name());
    }
    out.push('\n');
    for (k, row) in stats.stage_probabilities().iter().enumerate() {
        if let Some(row) = row {
            let _ = write!(out, "{k}");
            for p in row {
                let _ = write!(out, ",{p}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn export_transition_graph(stats: &TransitionStats, dot: &Path, csv: &Path) -> Result<()> {
    std::fs::write(dot, transition_dot(stats))?;
    std::fs::write(csv, stage_csv(stats))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub name: String,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl PolicyStats {
    pub fn from_counts(name: &str, counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(Self {
            name: name.to_string(),
            mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
            min: *counts.iter().min().expect("nonempty"),
            max: *counts.iter().max().expect("nonempty"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub matrix_size: usize,
    pub num_instances: usize,
    pub threshold_rel: f64,
    pub seed: u64,
    pub config_hash: String,
    pub baselines: Vec<PolicyStats>,
    /// Mean over the fixed-option baselines.
    pub baseline_mean: f64,
    pub agent: Option<PolicyStats>,
    pub savings_percent: Option<f64>,
}

pub fn savings_percent(baseline_mean: f64, agent_mean: f64) -> f64 {
    100.0 * (baseline_mean - agent_mean) / baseline_mean
}

/// Short sha256 of any serializable configuration.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_string(config)?.as_bytes());
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// Builds one report row from per-option baseline counts and optional agent counts on
/// the same matrices.
pub fn bench_report(
    matrix_size: usize,
    baselines: &[(SweepOption, Vec<usize>)],
    agent: Option<&[usize]>,
    threshold_rel: f64,
    seed: u64,
    config_hash: String,
) -> Result<BenchReport> {
    if baselines.is_empty() {
        return Err(Error::EmptyData);
    }
    let num_instances = baselines[0].1.len();
    let stats = baselines
        .iter()
        .map(|(o, c)| PolicyStats::from_counts(o.name(), c))
        .collect::<Result<Vec<_>>>()?;
    let baseline_mean = stats.iter().map(|s| s.mean).sum::<f64>() / stats.len() as f64;
    let agent = agent
        .map(|c| PolicyStats::from_counts("Agent", c))
        .transpose()?;
    let savings = agent
        .as_ref()
        .map(|a| savings_percent(baseline_mean, a.mean));
    Ok(BenchReport {
        matrix_size,
        num_instances,
        threshold_rel,
        seed,
        config_hash,
        baselines: stats,
        baseline_mean,
        agent,
        savings_percent: savings,
    })
}

/// Savings table as CSV: per-option means, the baseline mean and, when any report has
/// agent data, the agent mean and savings.
pub fn savings_table(reports: &[BenchReport]) -> String {
    let with_agent = reports.iter().any(|r| r.agent.is_some());
    let mut out = String::from("Matrix Size");
    if let Some(first) = reports.first() {
        for b in &first.baselines {
            out.push(',');
            out.push_str(&b.name);
        }
    }
    out.push_str(",Baseline");
    if with_agent {
        out.push_str(",Alpha Zero,Savings (%)");
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{}", r.matrix_size);
        for b in &r.baselines {
            let _ = write!(out, ",{:.2}", b.mean);
        }
        let _ = write!(out, ",{:.2}", r.baseline_mean);
        if with_agent {
            match (&r.agent, r.savings_percent) {
                (Some(a), Some(s)) => {
                    let _ = write!(out, ",{:.2},{:.2}", a.mean, s);
                }
                _ => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}
