use jacobi_core::approximator::{ModelConfig, ModelParams, PolicyHead};
use jacobi_core::mcts::SearchConfig;
use jacobi_core::selfplay::{
    held_out_loss, load_manifest, make_sweep_demos, save_manifest, training_round, GameSettings,
    MatrixPool, Opponent, TrainRoundConfig, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model(n_max: usize, head: PolicyHead, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        n_max,
        num_layers: 2,
        hidden_dim: 16,
        dropout_rate: 0.0,
        head,
        ..Default::default()
    };
    ModelParams::init(cfg, seed).unwrap()
}

fn settings(n_max: usize) -> GameSettings {
    GameSettings {
        n_max,
        ..Default::default()
    }
}

#[test]
fn one_round_lowers_held_out_loss_on_most_seeds() {
    let s = settings(4);
    let round = TrainRoundConfig {
        games_per_round: 48,
        epochs: 10,
        batch_size: 32,
        lr: 0.01,
        synthetic_fraction: 0.75,
        gate_threshold: 0.55,
    };
    let search = SearchConfig {
        num_simulations: 20,
        ..Default::default()
    };
    let mut improved = 0;
    for seed in 0..10u64 {
        let params = small_model(4, PolicyHead::Pivot, seed);
        let pool = MatrixPool::generate(4, 16, seed, 0.75).unwrap();
        // same generator as the round, on unseen matrices and a fresh seed
        let frozen = TrainRoundConfig {
            lr: 0.0,
            epochs: 1,
            ..round
        };
        let held = training_round(
            &params,
            &frozen,
            &search,
            &s,
            Opponent::MaxElem,
            &pool.eval,
            1000 + seed,
        )
        .unwrap()
        .episodes;
        let before = held_out_loss(&params, &held).unwrap();
        let out = training_round(
            &params,
            &round,
            &search,
            &s,
            Opponent::MaxElem,
            &pool.train,
            seed,
        )
        .unwrap();
        let after = held_out_loss(&out.candidate, &held).unwrap();
        if after <= before {
            improved += 1;
        }
    }
    assert!(improved >= 7, "improved on {improved}/10 seeds");
}

#[test]
fn opponent_switches_to_champion_after_first_acceptance() {
    let params = small_model(3, PolicyHead::Pivot, 7);
    let round = TrainRoundConfig {
        games_per_round: 12,
        epochs: 4,
        batch_size: 32,
        lr: 0.01,
        synthetic_fraction: 0.5,
        gate_threshold: 0.55,
    };
    let search = SearchConfig {
        num_simulations: 30,
        ..Default::default()
    };
    let pool = MatrixPool::generate(3, 40, 11, 0.5).unwrap();
    let mut trainer = Trainer::new(
        params,
        round,
        search,
        settings(3),
        pool,
        11,
        serde_json::json!({}),
    )
    .unwrap();
    trainer.gate_search.num_simulations = 400;
    assert_eq!(trainer.opponent, Opponent::MaxElem);
    let mut first = None;
    for r in 0..3 {
        let (_, gate) = trainer.run_round().unwrap();
        let entry = trainer.manifest.rounds.last().unwrap();
        assert_eq!(entry.accepted, gate.accepted);
        if first.is_none() {
            assert_eq!(entry.opponent, Opponent::MaxElem);
        } else {
            assert_eq!(entry.opponent, Opponent::Champion);
        }
        if gate.accepted && first.is_none() {
            first = Some(r);
        }
        let expected = if first.is_some() {
            Opponent::Champion
        } else {
            Opponent::MaxElem
        };
        assert_eq!(trainer.opponent, expected);
    }
    assert!(
        first.is_some(),
        "no candidate passed the gate: {:?}",
        trainer.manifest.rounds
    );
}

#[test]
fn sweep_champion_never_gets_worse_and_manifest_round_trips() {
    let params = small_model(6, PolicyHead::Sweep, 3);
    let round = TrainRoundConfig {
        games_per_round: 8,
        epochs: 4,
        batch_size: 16,
        lr: 0.01,
        synthetic_fraction: 0.5,
        gate_threshold: 0.55,
    };
    let search = SearchConfig {
        num_simulations: 16,
        ..Default::default()
    };
    let pool = MatrixPool::generate(6, 16, 5, 0.5).unwrap();
    let mut trainer = Trainer::new(
        params,
        round,
        search,
        settings(6),
        pool,
        5,
        serde_json::json!({"n": 6}),
    )
    .unwrap();
    assert_eq!(trainer.opponent, Opponent::Champion);
    let mut best = f64::INFINITY;
    for _ in 0..2 {
        let (_, gate) = trainer.run_round().unwrap();
        assert_eq!(gate.accepted, gate.candidate_score < gate.champion_score);
        let champ_score = if gate.accepted {
            gate.candidate_score
        } else {
            gate.champion_score
        };
        if best.is_finite() {
            assert!(champ_score <= best + 1e-9, "{champ_score} > {best}");
        }
        best = best.min(champ_score);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    save_manifest(&path, &trainer.manifest).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), trainer.manifest);

    let demos =
        make_sweep_demos(6, 3, &trainer.settings, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert!(held_out_loss(&trainer.champion, &demos)
        .unwrap()
        .is_finite());
}
