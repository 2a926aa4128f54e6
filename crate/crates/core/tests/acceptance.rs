//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see them.

use jacobi_core::approximator::{
    evaluate_loss, forward, loss_and_grad, map_policy, ModelConfig, ModelParams, NetInput,
    PolicyHead, Sample, NODE_FEATURES,
};
use jacobi_core::bench::{chi_squared, ln_gamma_q, run_agent, run_baseline};
use jacobi_core::env::{
    adjudicate, default_max_sweeps, mdp_legal_actions, mdp_step, smdp_step, MdpState, RaceOutcome,
    RewardConfig, SmdpState,
};
use jacobi_core::matrix::{
    classical_jacobi, generate_random_symmetric, num_pivots, num_upper, pivots, strict_upper_index,
    strict_upper_pair, upper_index, upper_pair,
};
use jacobi_core::mcts::{
    greedy_playout, MaxElemRollout, MdpGame, RaceTarget, RepeatOptionRollout, SearchConfig,
};
use jacobi_core::orderings::all_options;
use jacobi_core::selfplay::{
    gate_mdp, play_mdp_game, play_smdp_episode, ExhaustivePlayer, GameSettings, MatrixPool,
    MaxElemPlayer, MdpPlayer, NetworkPolicy, SearchSmdpPolicy, SmdpPolicy, TrainRoundConfig,
    Trainer,
};
use jacobi_core::Matrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: &str, ok: bool, detail: String) {
    println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id}: {detail}");
}

/// Cyclic Jacobi on plain arrays, iterated until the off-diagonal norm drops below
/// `1e-12 · ‖A‖_F`. Returns the sorted diagonal.
fn reference_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.n();
    let mut a = m.rows();
    let fro = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &Vec<Vec<f64>>| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i][j] * a[i][j];
                }
            }
        }
        s.sqrt()
    };
    while off(&a) > 1e-12 * fro {
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum().max(0.0) * 2.0 - 1.0;
                let t = t / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    d.sort_by(f64::total_cmp);
    d
}

fn sorted_diagonal(m: &Matrix) -> Vec<f64> {
    let mut d = m.diagonal();
    d.sort_by(f64::total_cmp);
    d
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn small_sweep_agent() -> ModelParams {
    let cfg = ModelConfig {
        n_max: 5,
        num_layers: 2,
        hidden_dim: 16,
        dropout_rate: 0.0,
        head: PolicyHead::Sweep,
        ..Default::default()
    };
    let params = ModelParams::init(cfg, 17).unwrap();
    let round = TrainRoundConfig {
        games_per_round: 8,
        epochs: 3,
        batch_size: 16,
        lr: 0.01,
        ..Default::default()
    };
    let search = SearchConfig {
        num_simulations: 16,
        ..Default::default()
    };
    let settings = GameSettings::default();
    let pool = MatrixPool::generate(5, 16, 17, 0.5).unwrap();
    let mut trainer = Trainer::new(
        params,
        round,
        search,
        settings,
        pool,
        17,
        serde_json::json!({}),
    )
    .unwrap();
    trainer.run_round().unwrap();
    trainer.champion
}

#[test]
fn c01_every_policy_diagonalizes_correctly() {
    let settings = GameSettings::default();
    let agent = NetworkPolicy {
        params: small_sweep_agent(),
    };
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let mut runs = 0;
    for n in 3..=12 {
        for i in 0..100u64 {
            let m = generate_random_symmetric::<f64>(n, 10_000 * n as u64 + i, 1.0).unwrap();
            let thr = 1e-8 * m.frobenius_norm();
            let oracle = reference_eigenvalues(&m);
            let mut finals: Vec<(String, Matrix)> = Vec::new();

            let mut me = m.clone();
            classical_jacobi(&mut me, thr, 100 * num_pivots(n)).unwrap();
            finals.push(("maxelem".into(), me));

            for o in all_options() {
                let mut s = SmdpState::new(m.clone(), default_max_sweeps(n), thr);
                while !s.is_terminal() {
                    s = smdp_step(&s, o, &RewardConfig::default()).unwrap().state;
                }
                finals.push((o.name().into(), s.matrix));
            }

            let ep = play_smdp_episode(&m, &agent, &settings, &mut ChaCha8Rng::seed_from_u64(i))
                .unwrap();
            let mut s = settings.smdp_state(&m);
            for k in ep.options() {
                s = smdp_step(&s, all_options()[k], &settings.rewards)
                    .unwrap()
                    .state;
            }
            finals.push(("agent".into(), s.matrix));

            for (name, f) in finals {
                runs += 1;
                let gap = max_gap(&sorted_diagonal(&f), &oracle);
                worst = worst.max(gap);
                if f.off_norm() >= thr || gap > 1e-8 {
                    failures.push(format!(
                        "{name} n={n} i={i} off={:.2e} gap={gap:.2e}",
                        f.off_norm()
                    ));
                }
            }
        }
    }
    report(
        "C01 diagonalization correctness",
        failures.is_empty(),
        format!(
            "{runs} runs over N=3..12, max eigenvalue gap {worst:.2e}, failures {:?}",
            &failures[..failures.len().min(5)]
        ),
    );
}

#[test]
fn c02_off_norm_reduction_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=12);
        let m = generate_random_symmetric::<f64>(n, rng.random(), 1.0).unwrap();
        let a = strict_upper_pair(rng.random_range(0..num_pivots(n)), n).unwrap();
        let before = m.off_norm().powi(2);
        let pivot = m.get(a.p, a.q);
        let after = m
            .apply_rotation(&m.compute_givens(a).unwrap())
            .unwrap()
            .off_norm()
            .powi(2);
        worst = worst.max((after - (before - 2.0 * pivot * pivot)).abs() / before);
    }
    report(
        "C02 off-norm reduction identity",
        worst <= 1e-10,
        format!("10000 pairs, max relative error {worst:.2e}"),
    );
}

#[test]
fn c03_index_bijections() {
    let mut ok = true;
    for n in 2..=30 {
        let mut seen = vec![false; num_upper(n)];
        for i in 0..n {
            for j in i..n {
                let k = upper_index(i, j, n).unwrap();
                ok &= !seen[k] && upper_pair(k, n).unwrap() == (i, j);
                seen[k] = true;
            }
        }
        ok &= seen.iter().all(|&s| s);
        let mut count = 0;
        for (k, a) in pivots(n).enumerate() {
            ok &= strict_upper_index(a, n).unwrap() == k && strict_upper_pair(k, n).unwrap() == a;
            count += 1;
        }
        ok &= count == num_pivots(n);
    }
    report("C03 index bijections", ok, "n = 2..30 exhaustive".into());
}

#[test]
fn c04_cyclic_orderings_converge() {
    let mut failures = Vec::new();
    let mut worst_sweeps = 0;
    for n in [10, 15, 20] {
        for i in 0..50u64 {
            let m = generate_random_symmetric::<f64>(n, 40_000 + 100 * n as u64 + i, 1.0).unwrap();
            let thr = 1e-8 * m.frobenius_norm();
            for o in all_options() {
                let mut s = SmdpState::new(m.clone(), default_max_sweeps(n), thr);
                while !s.is_terminal() {
                    s = smdp_step(&s, o, &RewardConfig::default()).unwrap().state;
                }
                worst_sweeps = worst_sweeps.max(s.sweeps_taken);
                if !s.is_diagonalized() {
                    failures.push(format!("{o} n={n} i={i}"));
                }
            }
        }
    }
    report(
        "C04 cyclic convergence",
        failures.is_empty(),
        format!("8 options x 50 matrices at N=10,15,20, most sweeps {worst_sweeps}, failures {failures:?}"),
    );
}

#[test]
fn c05_baseline_rotation_bracket() {
    let mut lines = Vec::new();
    let mut ok = true;
    for (n, reference) in [(10usize, 200.0), (15, 522.0)] {
        let pool: Vec<Matrix> = (0..50u64)
            .map(|i| generate_random_symmetric::<f64>(n, 50_000 + 100 * n as u64 + i, 1.0).unwrap())
            .collect();
        let mut total = 0.0;
        for o in all_options() {
            let counts = run_baseline(o, &pool, 1e-8, None).unwrap();
            total += counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        }
        let mean = total / 8.0;
        let rel = (mean - reference) / reference;
        ok &= rel.abs() <= 0.35;
        lines.push(format!(
            "N={n} mean {mean:.1} vs {reference} ({:+.1}%)",
            100.0 * rel
        ));
    }
    report("C05 baseline bracket", ok, lines.join(", "));
}

#[test]
fn c06_sweep_search_beats_fixed_orderings() {
    let n = 10;
    let settings = GameSettings::default();
    let pool = MatrixPool::generate(n, 200, 6, 0.75).unwrap();
    let eval = &pool.eval;
    let mut means = Vec::new();
    for o in all_options() {
        let counts = run_baseline(o, eval, settings.threshold_rel, None).unwrap();
        means.push(counts.iter().sum::<usize>() as f64 / counts.len() as f64);
    }
    let baseline = means.iter().sum::<f64>() / 8.0;
    let best = means.iter().copied().fold(f64::INFINITY, f64::min);
    let agent = SearchSmdpPolicy {
        config: SearchConfig {
            c_puct: 0.0,
            num_simulations: 2000,
            temperature: 0.0,
            ..Default::default()
        },
        evaluator: RepeatOptionRollout::default(),
    };
    let policy: &dyn SmdpPolicy = &agent;
    let counts = run_agent(policy, eval, &settings, 6).unwrap();
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let savings = 100.0 * (baseline - mean) / baseline;
    report(
        "C06 sweep-game search improvement",
        mean <= best && savings >= 2.0,
        format!(
            "N=10, {} matrices: agent {mean:.2}, best option {best:.2}, 8-option mean {baseline:.2}, savings {savings:.2}%",
            eval.len()
        ),
    );
}

/// Fewest rotations that diagonalize `s`, by iterative deepening.
fn brute_force_minimum(s: &MdpState<f64>, limit: usize) -> Option<usize> {
    fn reachable(s: &MdpState<f64>, budget: usize) -> bool {
        if s.is_diagonalized() {
            return true;
        }
        budget > 0
            && mdp_legal_actions(s, false)
                .into_iter()
                .any(|a| reachable(&mdp_step(s, a).unwrap(), budget - 1))
    }
    (0..=limit).find(|&d| reachable(s, d))
}

#[test]
fn c07_pivot_search_matches_oracles() {
    let settings = GameSettings::default();
    let cfg = SearchConfig {
        num_simulations: 2000,
        temperature: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut matched = 0;
    for i in 0..100u64 {
        let m = generate_random_symmetric::<f64>(3, 70_000 + i, 1.0).unwrap();
        let s = settings.mdp_state(&m);
        let best = brute_force_minimum(&s, 12).expect("3x3 solvable within 12 rotations");
        let (acts, end) = greedy_playout(
            &MdpGame::new(s, RaceTarget::Uniform),
            &cfg,
            &MaxElemRollout,
            &mut rng,
        )
        .unwrap();
        if end.state.is_diagonalized() && acts.len() == best {
            matched += 1;
        }
    }

    let mut no_worse = 0;
    for i in 0..100u64 {
        let m = generate_random_symmetric::<f64>(4, 71_000 + i, 1.0).unwrap();
        let s = settings.mdp_state(&m);
        let mut me = m.clone();
        let maxelem = classical_jacobi(&mut me, s.threshold, s.max_depth).unwrap();
        let (acts, end) = greedy_playout(
            &MdpGame::new(s, RaceTarget::Uniform),
            &cfg,
            &MaxElemRollout,
            &mut rng,
        )
        .unwrap();
        if end.state.is_diagonalized() && acts.len() <= maxelem {
            no_worse += 1;
        }
    }
    report(
        "C07 pivot-game search vs oracles",
        matched >= 95 && no_worse >= 80,
        format!("3x3 matches brute-force minimum {matched}/100, 4x4 <= MaxElem {no_worse}/100"),
    );
}

fn random_samples(
    head: PolicyHead,
    n_max: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=n_max);
            let m = generate_random_symmetric::<f64>(n, rng.random(), 1.0).unwrap();
            let (input, slots) = match head {
                PolicyHead::Pivot => (NetInput::pivot(&m), num_pivots(n)),
                PolicyHead::Sweep => (
                    NetInput::sweep(&m, Some(all_options()[rng.random_range(0..8)])),
                    8,
                ),
            };
            let width = match head {
                PolicyHead::Pivot => num_pivots(n_max),
                PolicyHead::Sweep => 8,
            };
            let mut policy = vec![0.0; width];
            for p in policy.iter_mut().take(slots) {
                *p = rng.random::<f64>();
            }
            let total: f64 = policy.iter().sum();
            policy.iter_mut().for_each(|p| *p /= total);
            Sample {
                input,
                policy,
                value: rng.random_range(-1.0..1.0),
            }
        })
        .collect()
}

/// Weights that receive no gradient: the GIN epsilons when they are not learned.
fn frozen_slots(params: &ModelParams) -> Vec<usize> {
    if params.config.learn_eps {
        return Vec::new();
    }
    // the epsilon sits right after each layer's second bias
    let (f, h) = (NODE_FEATURES, params.config.hidden_dim);
    let mut slots = Vec::new();
    let mut off = 0;
    for k in 0..params.config.num_layers {
        let d_in = if k == 0 { f } else { h };
        off += h * d_in + h + h * h + h;
        slots.push(off);
        off += 1;
    }
    slots
}

#[test]
fn c08_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for (head, learn_eps) in [
        (PolicyHead::Pivot, true),
        (PolicyHead::Sweep, true),
        (PolicyHead::Pivot, false),
    ] {
        let cfg = ModelConfig {
            n_max: 4,
            num_layers: 2,
            hidden_dim: 3,
            dropout_rate: 0.0,
            learn_eps,
            head,
            ..Default::default()
        };
        let mut params = ModelParams::init(cfg, rng.random()).unwrap();
        // zero-initialized biases put some ReLUs exactly at their kink; probe a generic point
        for w in params.weights.iter_mut() {
            *w += rng.random_range(-0.1..0.1);
        }
        let frozen = frozen_slots(&params);
        let batch = random_samples(head, 4, 4, &mut rng);
        let (_, grad) = loss_and_grad(&params, &batch, None).unwrap();
        let h = 1e-6;
        // every weight of a tiny network, so every layer and head is covered
        for i in (0..params.num_weights()).filter(|i| !frozen.contains(i)) {
            let mut plus = params.clone();
            plus.weights[i] += h;
            let mut minus = params.clone();
            minus.weights[i] -= h;
            let numeric = (evaluate_loss(&plus, &batch).unwrap()
                - evaluate_loss(&minus, &batch).unwrap())
                / (2.0 * h);
            let err = (grad[i] - numeric).abs() / (grad[i].abs().max(numeric.abs()) + 1e-4);
            worst = worst.max(err);
            probed += 1;
        }
    }
    report(
        "C08 gradient check",
        worst <= 1e-4,
        format!("{probed} weights across both heads, max relative error {worst:.2e}"),
    );
}

#[test]
fn c09_policy_mapping() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ok = true;
    let mut cases = 0;
    for n_max in 2..=12 {
        for n in 2..=n_max {
            let logits: Vec<f64> = (0..num_pivots(n_max))
                .map(|_| rng.random_range(-30.0..30.0))
                .collect();
            let p = map_policy(&logits, n, n_max).unwrap();
            ok &= p.values.len() == num_pivots(n_max);
            ok &= p.values[num_pivots(n)..].iter().all(|&x| x == 0.0);
            ok &= (p.values[..num_pivots(n)].iter().sum::<f64>() - 1.0).abs() <= 1e-9;
            cases += 1;
        }
    }
    let params = ModelParams::init(
        ModelConfig {
            n_max: 6,
            num_layers: 2,
            hidden_dim: 8,
            ..Default::default()
        },
        9,
    )
    .unwrap();
    for n in 2..=6 {
        let m = generate_random_symmetric::<f64>(n, n as u64, 1.0).unwrap();
        let p = forward(&params, &NetInput::pivot(&m), None).unwrap().policy;
        ok &= p.values[num_pivots(n)..].iter().all(|&x| x == 0.0);
        ok &= (p.values.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        cases += 1;
    }
    report(
        "C09 policy mapping",
        ok,
        format!("{cases} (n, n_max) cases"),
    );
}

struct Slow;

impl MdpPlayer for Slow {
    fn act(
        &self,
        state: &MdpState<f64>,
        ctx: &jacobi_core::selfplay::TurnContext,
        rng: &mut ChaCha8Rng,
    ) -> jacobi_core::Result<(jacobi_core::PivotAction, Vec<f64>)> {
        // the smallest nonzero pivot: legal, but a poor choice
        let a = mdp_legal_actions(state, false)
            .into_iter()
            .min_by(|a, b| {
                state
                    .matrix
                    .get(a.p, a.q)
                    .abs()
                    .total_cmp(&state.matrix.get(b.p, b.q).abs())
            })
            .unwrap();
        let (_, policy) = MaxElemPlayer.act(state, ctx, rng)?;
        Ok((a, policy))
    }
}

#[test]
fn c10_race_branches() {
    let mut runner = TestRunner::new(Config::with_cases(256));
    let property = runner.run(
        &(any::<bool>(), any::<bool>(), -0.99f64..0.99),
        |(a, b, tie)| {
            let rewards = RewardConfig {
                tie_value: tie,
                ..Default::default()
            };
            let values: Vec<f64> = adjudicate(&[a, b])
                .iter()
                .map(|o| o.value(&rewards))
                .collect();
            let expect = match (a, b) {
                (false, false) => [-1.0, -1.0],
                (true, true) => [tie, tie],
                (true, false) => [1.0, -1.0],
                (false, true) => [-1.0, 1.0],
            };
            prop_assert_eq!(values, expect.to_vec());
            Ok(())
        },
    );

    let tie = 0.25;
    let m = generate_random_symmetric::<f64>(4, 10, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rewards = RewardConfig {
        tie_value: tie,
        ..Default::default()
    };
    let base = GameSettings {
        n_max: 4,
        rewards,
        ..Default::default()
    };
    let fail = play_mdp_game(
        &m,
        &[&MaxElemPlayer, &MaxElemPlayer],
        &GameSettings {
            max_depth: Some(1),
            ..base
        },
        &mut rng,
    )
    .unwrap();
    let draw = play_mdp_game(&m, &[&MaxElemPlayer, &MaxElemPlayer], &base, &mut rng).unwrap();
    let win = play_mdp_game(
        &m,
        &[&ExhaustivePlayer { max_depth: 30 }, &Slow],
        &base,
        &mut rng,
    )
    .unwrap();
    let games_ok = fail[0].outcome == [-1.0, -1.0]
        && draw[0].outcome == [tie, tie]
        && win[0].outcome == [1.0, -1.0];
    let gate = gate_mdp(
        &MaxElemPlayer,
        &MaxElemPlayer,
        std::slice::from_ref(&m),
        &base,
        0.55,
        0,
    )
    .unwrap();
    let ok = property.is_ok()
        && games_ok
        && !gate.accepted
        && adjudicate(&[false, false]) == vec![RaceOutcome::Fail; 2];
    report(
        "C10 race outcome branches",
        ok,
        format!(
            "property {:?}; games fail {:?} tie {:?} win {:?}",
            property.err(),
            fail[0].outcome,
            draw[0].outcome,
            win[0].outcome
        ),
    );
}

#[test]
fn c11_chi_squared() {
    let proportional = vec![
        vec![10.0, 20.0, 30.0],
        vec![20.0, 40.0, 60.0],
        vec![5.0, 10.0, 15.0],
    ];
    let zero = chi_squared(&proportional).unwrap().statistic;
    // expected counts are all 15, so the statistic is 4 * 5^2 / 15
    let two_by_two = chi_squared(&[vec![10.0, 20.0], vec![20.0, 10.0]]).unwrap();
    let hand = 20.0 / 3.0;
    let mut monotone = true;
    let mut finite = true;
    for dof in [50usize, 64, 100, 200] {
        let mut last = f64::INFINITY;
        for k in 0..=120 {
            let stat = 800.0 + 10.0 * k as f64;
            let lq = ln_gamma_q(dof as f64 / 2.0, stat / 2.0);
            finite &= lq.is_finite();
            monotone &= lq < last;
            last = lq;
        }
    }
    let ok = zero.abs() < 1e-12
        && (two_by_two.statistic - hand).abs() <= 1e-9
        && two_by_two.dof == 1
        && finite
        && monotone;
    report(
        "C11 chi-squared",
        ok,
        format!(
            "proportional {zero:.1e}, 2x2 {:.9} vs {hand:.9}, tail finite {finite} monotone {monotone}",
            two_by_two.statistic
        ),
    );
}
