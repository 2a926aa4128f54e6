use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use jacobi_core::approximator::{
    load_params, save_params, ModelParams, NetworkEvaluator, PolicyHead,
};
use jacobi_core::bench::{
    bench_report, collect_episode_transitions, config_hash, run_agent_episodes, run_baseline,
    stage_chi_squared, stage_csv, transition_dot, BenchReport, ChiSquared,
};
use jacobi_core::env::{mdp_step, smdp_step};
use jacobi_core::io::{read_matrix, write_matrix};
use jacobi_core::matrix::{generate_random_symmetric, num_pivots};
use jacobi_core::mcts::{RepeatOptionRollout, SearchConfig};
use jacobi_core::orderings::{all_options, SweepOption};
use jacobi_core::selfplay::{
    derive_seed, load_episodes, load_manifest, save_episodes, save_manifest, FixedOption,
    GameSettings, MatrixPool, MdpPlayer, NetworkPolicy, Opponent, SearchSmdpPolicy, SmdpPolicy,
    Trainer, TurnContext,
};
use jacobi_core::{Error, Matrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ConfigError, Mode, RunConfig};
use crate::{BenchArgs, DiagArgs, ExportArgs, GenArgs, TrainArgs};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(Error::from)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", dir.display()))
}

fn parse_split(spec: &str) -> Result<(usize, usize)> {
    let bad = || ConfigError(format!("split must look like 750:250, got {spec:?}"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn gen(cfg: &RunConfig, a: &GenArgs) -> Result<()> {
    if a.n < 2 {
        return Err(ConfigError(format!("n must be >= 2, got {}", a.n)).into());
    }
    let split = a.split.as_deref().map(parse_split).transpose()?;
    if let Some((tr, ev)) = split {
        if tr + ev != a.count {
            return Err(ConfigError(format!(
                "split {tr}:{ev} does not add up to count {}",
                a.count
            ))
            .into());
        }
    }
    create_dir(&a.out)?;
    let mut names = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let m: Matrix = generate_random_symmetric(a.n, derive_seed(cfg.seed, i as u64), a.scale)?;
        let name = format!("matrix_{i:04}.txt");
        write_matrix(&a.out.join(&name), &m)?;
        names.push(name);
    }
    if let Some((tr, _)) = split {
        names.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let (train, eval) = names.split_at(tr);
        let mut t = train.to_vec();
        let mut e = eval.to_vec();
        t.sort();
        e.sort();
        fs::write(a.out.join("train.txt"), t.join("\n") + "\n").map_err(Error::from)?;
        fs::write(a.out.join("eval.txt"), e.join("\n") + "\n").map_err(Error::from)?;
    }
    write_json(
        &a.out.join("gen_config.json"),
        &serde_json::json!({
            "n": a.n, "count": a.count, "seed": cfg.seed, "scale": a.scale, "split": a.split,
        }),
    )?;
    println!(
        "wrote {} matrices of size {} to {}",
        a.count,
        a.n,
        a.out.display()
    );
    Ok(())
}

enum DiagPolicy {
    MaxElem,
    Option(SweepOption),
    Checkpoint(std::path::PathBuf),
}

fn parse_policy(s: &str) -> Result<DiagPolicy> {
    if s == "maxelem" {
        return Ok(DiagPolicy::MaxElem);
    }
    if let Some(id) = s.strip_prefix("option:") {
        let id: usize = id
            .parse()
            .map_err(|_| ConfigError(format!("bad option id in {s:?}")))?;
        return Ok(DiagPolicy::Option(SweepOption::from_id(id)?));
    }
    if let Some(p) = s.strip_prefix("checkpoint:") {
        return Ok(DiagPolicy::Checkpoint(p.into()));
    }
    Err(ConfigError(format!(
        "unknown policy {s:?}; use maxelem, option:<0-7> or checkpoint:<path>"
    ))
    .into())
}

pub fn diag(cfg: &RunConfig, a: &DiagArgs) -> Result<()> {
    let policy = parse_policy(&a.policy)?;
    let m: Matrix = read_matrix(&a.matrix, a.symmetrize)
        .with_context(|| format!("reading {}", a.matrix.display()))?;
    let settings = GameSettings {
        threshold_rel: a.threshold_rel.unwrap_or(cfg.threshold_rel),
        max_sweeps: a.max_sweeps.or(cfg.max_sweeps),
        ..cfg.settings()
    };
    let n = m.n();
    let mut trace = String::new();
    let (rotations, off_norm) = match policy {
        DiagPolicy::MaxElem => {
            let budget = 100 * num_pivots(n).max(1);
            let mut s = settings.mdp_state(&m);
            s.max_depth = budget;
            while !s.is_diagonalized() {
                let Some(p) = s.matrix.max_pivot() else { break };
                if s.step >= budget {
                    break;
                }
                let _ = writeln!(trace, "{} {}", p.p, p.q);
                s = mdp_step(&s, p)?;
            }
            if !s.is_diagonalized() {
                return Err(Error::NonConvergence {
                    sweeps: 0,
                    rotations: s.step,
                    off_norm: s.matrix.off_norm(),
                }
                .into());
            }
            (s.step, s.matrix.off_norm())
        }
        DiagPolicy::Option(o) => {
            run_sweep_policy(&m, &FixedOption(o), &settings, cfg.seed, &mut trace)?
        }
        DiagPolicy::Checkpoint(path) => {
            let params = load_params(&path)?;
            match params.config.head {
                PolicyHead::Sweep => run_sweep_policy(
                    &m,
                    &NetworkPolicy { params },
                    &settings,
                    cfg.seed,
                    &mut trace,
                )?,
                PolicyHead::Pivot => {
                    let player = NetworkPolicy {
                        params: params.clone(),
                    };
                    let ctx = TurnContext {
                        n_max: params.config.n_max,
                        window: None,
                        tie_value: settings.rewards.tie_value,
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    let mut s = settings.mdp_state(&m);
                    while !s.is_terminal() {
                        let (p, _) = player.act(&s, &ctx, &mut rng)?;
                        let _ = writeln!(trace, "{} {}", p.p, p.q);
                        s = mdp_step(&s, p)?;
                    }
                    if !s.is_diagonalized() {
                        return Err(Error::NonConvergence {
                            sweeps: 0,
                            rotations: s.step,
                            off_norm: s.matrix.off_norm(),
                        }
                        .into());
                    }
                    (s.step, s.matrix.off_norm())
                }
            }
        }
    };
    if let Some(path) = &a.trace {
        fs::write(path, &trace).map_err(Error::from)?;
    }
    println!("rotations: {rotations}");
    println!("off_norm: {off_norm:e}");
    Ok(())
}

fn run_sweep_policy(
    m: &Matrix,
    policy: &dyn SmdpPolicy,
    settings: &GameSettings,
    seed: u64,
    trace: &mut String,
) -> Result<(usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = settings.smdp_state(m);
    while !s.is_terminal() {
        let (o, _) = policy.choose(&s, &settings.rewards, &mut rng)?;
        let _ = writeln!(trace, "{}", o.id());
        s = smdp_step(&s, o, &settings.rewards)?.state;
    }
    if !s.is_diagonalized() {
        return Err(Error::NonConvergence {
            sweeps: s.sweeps_taken,
            rotations: s.primitive_rotations,
            off_norm: s.matrix.off_norm(),
        }
        .into());
    }
    Ok((s.primitive_rotations, s.matrix.off_norm()))
}

fn pool_for(cfg: &RunConfig) -> Result<MatrixPool> {
    let mut pool = MatrixPool {
        train: Vec::new(),
        eval: Vec::new(),
    };
    for &n in &cfg.sizes {
        let p = MatrixPool::generate(
            n,
            cfg.count,
            derive_seed(cfg.seed, n as u64),
            cfg.train_fraction,
        )?;
        pool.train.extend(p.train);
        pool.eval.extend(p.eval);
    }
    Ok(pool)
}

fn metrics_csv(trainer: &Trainer) -> String {
    let mut out = String::from(
        "round,opponent,num_samples,final_loss,accepted,candidate_score,champion_score\n",
    );
    for r in &trainer.manifest.rounds {
        let _ = writeln!(
            out,
            "{},{:?},{},{},{},{},{}",
            r.round,
            r.opponent,
            r.num_samples,
            r.final_loss,
            r.accepted,
            r.candidate_score,
            r.champion_score
        );
    }
    out
}

pub fn train(mut cfg: RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(o) = &a.out {
        cfg.paths.out_dir = o.clone();
    }
    if let Some(r) = a.rounds {
        cfg.rounds = r;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(s) = &a.sizes {
        cfg.sizes = s.clone();
    }
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(g) = a.games {
        cfg.training.games_per_round = g;
    }
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(s) = a.simulations {
        cfg.search.num_simulations = s;
    }
    cfg.validate()?;
    let out = cfg.paths.out_dir.clone();
    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;

    let champion_path = out.join("champion.json");
    let manifest_path = out.join("manifest.json");
    let pool = pool_for(&cfg)?;
    let config_value = serde_json::to_value(&cfg)?;
    let resumed = manifest_path.exists() && champion_path.exists();
    let champion = if resumed {
        load_params(&champion_path)?
    } else {
        ModelParams::init(cfg.model_config(), cfg.seed)?
    };
    let mut trainer = Trainer::new(
        champion,
        cfg.training,
        cfg.search,
        cfg.settings(),
        pool,
        cfg.seed,
        config_value,
    )?;
    if resumed {
        trainer.manifest = load_manifest(&manifest_path)?;
        if trainer.manifest.rounds.iter().any(|r| r.accepted) {
            trainer.opponent = Opponent::Champion;
        }
        println!("resuming after round {}", trainer.manifest.rounds.len());
    } else {
        save_params(&trainer.champion, &champion_path)?;
        save_manifest(&manifest_path, &trainer.manifest)?;
    }

    while trainer.manifest.rounds.len() < cfg.rounds {
        let round = trainer.manifest.rounds.len();
        let (output, gate) = trainer.run_round()?;
        save_params(
            &output.candidate,
            &out.join(format!("candidate_{round:03}.json")),
        )?;
        save_episodes(
            &out.join(format!("episodes_{round:03}.jsonl")),
            &output.episodes,
        )?;
        save_params(&trainer.champion, &champion_path)?;
        save_manifest(&manifest_path, &trainer.manifest)?;
        fs::write(out.join("metrics.csv"), metrics_csv(&trainer)).map_err(Error::from)?;
        println!(
            "round {round}: loss {:.4} -> {:.4}, candidate {:.3} vs champion {:.3}, {}",
            output.epoch_losses.first().copied().unwrap_or(f64::NAN),
            output.epoch_losses.last().copied().unwrap_or(f64::NAN),
            gate.candidate_score,
            gate.champion_score,
            if gate.accepted {
                "accepted"
            } else {
                "rejected"
            }
        );
    }
    fs::write(out.join("metrics.csv"), metrics_csv(&trainer)).map_err(Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct ChiSummary {
    matrix_size: usize,
    statistic: Option<f64>,
    dof: Option<usize>,
    p_value: Option<f64>,
    log10_p: Option<f64>,
    low_expected: Option<bool>,
    error: Option<String>,
}

impl ChiSummary {
    fn new(matrix_size: usize, r: jacobi_core::Result<ChiSquared>) -> Self {
        match r {
            Ok(c) => Self {
                matrix_size,
                statistic: Some(c.statistic),
                dof: Some(c.dof),
                p_value: Some(c.p_value),
                log10_p: Some(c.log10_p),
                low_expected: Some(c.low_expected),
                error: None,
            },
            Err(e) => Self {
                matrix_size,
                statistic: None,
                dof: None,
                p_value: None,
                log10_p: None,
                low_expected: None,
                error: Some(e.to_string()),
            },
        }
    }
}

pub fn bench(mut cfg: RunConfig, a: &BenchArgs) -> Result<()> {
    if let Some(o) = &a.out {
        cfg.paths.out_dir = o.clone();
    }
    if let Some(s) = &a.sizes {
        cfg.sizes = s.clone();
    }
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(t) = a.threshold_rel {
        cfg.threshold_rel = t;
    }
    if let Some(c) = &a.checkpoint {
        cfg.paths.checkpoint = Some(c.clone());
    }
    if a.search_only {
        cfg.agent.search_only = true;
    }
    if let Some(s) = a.simulations {
        cfg.agent.search.num_simulations = s;
        cfg.search.num_simulations = s;
    }
    cfg.mode = Mode::Smdp;
    cfg.validate()?;
    let out = cfg.paths.out_dir.clone();
    create_dir(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    // output locations do not change results
    let hash = config_hash(&RunConfig {
        paths: Default::default(),
        ..cfg.clone()
    })?;
    let settings = cfg.settings();

    let network = match &cfg.paths.checkpoint {
        Some(path) => match load_params(path) {
            Ok(p) if p.config.head == PolicyHead::Sweep => Some(p),
            Ok(_) => bail!(ConfigError("bench needs a sweep-head checkpoint".into())),
            Err(Error::MissingCheckpoint(p)) => {
                eprintln!(
                    "warning: checkpoint {} not found; agent rows omitted",
                    p.display()
                );
                None
            }
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    let agent: Option<Box<dyn SmdpPolicy>> = match network {
        Some(params) => Some(Box::new(SearchSmdpPolicy {
            config: SearchConfig {
                temperature: 0.0,
                ..cfg.search
            },
            evaluator: NetworkEvaluator::new(params),
        })),
        None if cfg.agent.search_only => Some(Box::new(SearchSmdpPolicy {
            config: cfg.agent.search,
            evaluator: RepeatOptionRollout::default(),
        })),
        None => None,
    };

    let mut reports: Vec<BenchReport> = Vec::new();
    let mut chi = Vec::new();
    for &n in &cfg.sizes {
        let pool = MatrixPool::generate(
            n,
            cfg.count,
            derive_seed(cfg.seed, n as u64),
            cfg.train_fraction,
        )?;
        let eval = if pool.eval.is_empty() {
            pool.train
        } else {
            pool.eval
        };
        let baselines = all_options()
            .into_iter()
            .map(|o| {
                Ok((
                    o,
                    run_baseline(o, &eval, cfg.threshold_rel, cfg.max_sweeps)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let agent_counts = match &agent {
            Some(policy) => {
                let episodes = run_agent_episodes(
                    policy.as_ref(),
                    &eval,
                    &settings,
                    derive_seed(cfg.seed, 1 << 32 | n as u64),
                )?;
                let stats = collect_episode_transitions(&episodes)?;
                fs::write(out.join(format!("transitions_{n}.csv")), stage_csv(&stats))
                    .map_err(Error::from)?;
                fs::write(
                    out.join(format!("transitions_{n}.dot")),
                    transition_dot(&stats),
                )
                .map_err(Error::from)?;
                chi.push(ChiSummary::new(n, stage_chi_squared(&stats)));
                Some(
                    episodes
                        .iter()
                        .map(|e| e.rotation_count)
                        .collect::<Vec<_>>(),
                )
            }
            None => None,
        };
        let report = bench_report(
            n,
            &baselines,
            agent_counts.as_deref(),
            cfg.threshold_rel,
            cfg.seed,
            hash.clone(),
        )?;
        match report.savings_percent {
            Some(s) => println!(
                "n={n}: baseline {:.2}, agent {:.2}, savings {s:.2}%",
                report.baseline_mean,
                report.agent.as_ref().map_or(f64::NAN, |a| a.mean)
            ),
            None => println!("n={n}: baseline {:.2}", report.baseline_mean),
        }
        reports.push(report);
    }
    fs::write(
        out.join("savings.csv"),
        jacobi_core::bench::savings_table(&reports),
    )
    .map_err(Error::from)?;
    write_json(&out.join("report.json"), &reports)?;
    if agent.is_some() {
        write_json(&out.join("chi_squared.json"), &chi)?;
    }
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<()> {
    let episodes =
        load_episodes(&a.episodes).with_context(|| format!("reading {}", a.episodes.display()))?;
    create_dir(&a.out)?;
    let stats = collect_episode_transitions(&episodes)?;
    fs::write(a.out.join("transitions.csv"), stage_csv(&stats)).map_err(Error::from)?;
    fs::write(a.out.join("transitions.dot"), transition_dot(&stats)).map_err(Error::from)?;
    let n = episodes.first().map_or(0, |e| e.n);
    write_json(
        &a.out.join("chi_squared.json"),
        &ChiSummary::new(n, stage_chi_squared(&stats)),
    )?;
    println!(
        "exported {} episodes to {}",
        episodes.len(),
        a.out.display()
    );
    Ok(())
}
