use std::time::Instant;

use fedrot::alignment::{apply_alignment, procrustes_rotation, select_reference, soft_rotation, AlignmentTarget};
use fedrot::federation::{local_train, prepare_report, InitSpec};
use fedrot::lora::init_adapter;
use fedrot::{
    run_federation, run_sweep, server_step, Error, FederationConfig, GlobalModel, LoraAdapter, Matrix, ReferenceMode,
    Strategy, SweepGrid, TaskSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn regression(strategy: Strategy, lambda: f64, rounds: usize) -> FederationConfig {
    FederationConfig {
        strategy,
        n_clients: 3,
        rank: 2,
        rounds,
        local_steps: 5,
        learning_rate: 0.1,
        lambda,
        reference_mode: ReferenceMode::PrevGlobal,
        schedule_ablation: Default::default(),
        task: TaskSpec::LowRankRegression {
            d_out: 8,
            d_in: 6,
            true_rank: 2,
            heterogeneity: 0.5,
        },
        dirichlet_alpha: 0.5,
        seed: 4,
        align_from_round: 2,
        init: InitSpec::Random,
        batch_size: None,
        record_timing: false,
    }
}

fn logistic(strategy: Strategy) -> FederationConfig {
    FederationConfig {
        task: TaskSpec::LogisticClassification {
            n_features: 5,
            n_classes: 3,
            n_samples: 120,
            separation: 3.0,
        },
        batch_size: Some(8),
        ..regression(strategy, 0.5, 6)
    }
}

#[test]
fn runs_are_bit_reproducible() {
    for cfg in [regression(Strategy::FedRot, 0.7, 8), logistic(Strategy::FedRot)] {
        let a = run_federation(&cfg).unwrap();
        let b = run_federation(&cfg).unwrap();
        assert_eq!(a, b);
    }
    let mut other = regression(Strategy::FedRot, 0.7, 8);
    other.seed = 5;
    assert_ne!(
        run_federation(&other).unwrap().rounds,
        run_federation(&regression(Strategy::FedRot, 0.7, 8)).unwrap().rounds
    );
}

/// Replays the protocol with the public building blocks and checks the
/// engine lands on the same model bit for bit.
#[test]
fn engine_matches_manual_replay() {
    let cfg = regression(Strategy::FedRot, 0.8, 6);
    let task = cfg.build_task().unwrap();
    let mut history = vec![GlobalModel::new(task.w0().clone(), cfg.initial_adapter().unwrap()).unwrap()];
    for t in 1..=cfg.rounds {
        let broadcast = history.last().unwrap().adapter().clone();
        let locals: Vec<_> = (0..3)
            .map(|c| local_train(c, &broadcast, &task, &cfg, t).unwrap())
            .collect();
        let snaps: Vec<_> = locals.iter().map(|l| l.adapter.clone()).collect();
        let reference = select_reference(&history, cfg.reference_mode, t, &snaps, cfg.seed).unwrap();
        let reports: Vec<_> = locals
            .into_iter()
            .enumerate()
            .map(|(c, l)| prepare_report(c, l, &reference, &cfg, t).unwrap())
            .collect();
        let out = server_step(cfg.strategy, &reports, t, &cfg, &history).unwrap();
        history.push(out.model);
    }
    let run = run_federation(&cfg).unwrap();
    assert_eq!(&run.final_model, history.last().unwrap());
}

#[test]
fn alignment_never_changes_client_products() {
    let mut cfg = regression(Strategy::FedRot, 1.0, 10);
    cfg.rank = 3;
    let task = cfg.build_task().unwrap();
    let mut history = vec![GlobalModel::new(task.w0().clone(), cfg.initial_adapter().unwrap()).unwrap()];
    for t in 1..=cfg.rounds {
        let broadcast = history.last().unwrap().adapter().clone();
        let mut reports = Vec::new();
        for c in 0..3 {
            let local = local_train(c, &broadcast, &task, &cfg, t).unwrap();
            let raw = local.adapter.semantic_update();
            let rep = prepare_report(c, local, &broadcast, &cfg, t).unwrap();
            let drift = rep.adapter.semantic_update().sub(&raw).unwrap().frobenius_norm();
            assert!(
                drift <= 1e-12 * raw.frobenius_norm().max(1.0),
                "round {t} client {c}: {drift}"
            );
            assert!(rep.diagnostics.semantic_drift <= 1e-12 * raw.frobenius_norm().max(1.0));
            reports.push(rep);
        }
        history.push(server_step(cfg.strategy, &reports, t, &cfg, &history).unwrap().model);
    }
}

#[test]
fn single_client_has_zero_error() {
    let mut cfg = regression(Strategy::FedRot, 1.0, 5);
    cfg.n_clients = 1;
    let run = run_federation(&cfg).unwrap();
    assert!(run.rounds.iter().all(|r| r.agg_error == 0.0));
}

#[test]
fn ffa_never_moves_a() {
    let cfg = regression(Strategy::FfaLora, 0.0, 6);
    let init = cfg.initial_adapter().unwrap();
    let run = run_federation(&cfg).unwrap();
    assert_eq!(run.final_model.adapter().a(), init.a());
    assert_ne!(run.final_model.adapter().b(), init.b());
}

#[test]
fn rolora_moves_one_factor_per_round() {
    let cfg = regression(Strategy::RoLora, 0.0, 1);
    let mut prev = cfg.initial_adapter().unwrap();
    for rounds in 1..=4 {
        let run = run_federation(&FederationConfig { rounds, ..cfg.clone() }).unwrap();
        let now = run.final_model.adapter().clone();
        let moved_b = now.b() != prev.b();
        let moved_a = now.a() != prev.a();
        assert!(moved_b ^ moved_a, "round {rounds}");
        prev = now;
    }
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    for s in [Strategy::FedIT, Strategy::FedRot, Strategy::FfaLora, Strategy::RoLora] {
        let mut cfg = regression(s, 1.0, 3);
        cfg.learning_rate = 0.0;
        let run = run_federation(&cfg).unwrap();
        let (got, init) = (run.final_model.adapter(), cfg.initial_adapter().unwrap());
        // Averaging identical copies may round in the last bit.
        assert!(got.b().max_abs_diff(init.b()).unwrap() <= 1e-15, "{s}");
        assert!(got.a().max_abs_diff(init.a()).unwrap() <= 1e-15, "{s}");
    }
}

#[test]
fn optimum_is_a_fixed_point() {
    let mut cfg = FederationConfig::scalar_toy(Strategy::FedRot, 1.0, 3);
    cfg.task = TaskSpec::ScalarToy { targets: vec![1.0; 3] };
    cfg.init = InitSpec::Constant { b: 1.0, a: 1.0 };
    let run = run_federation(&cfg).unwrap();
    assert_eq!(run.final_model.adapter(), &cfg.initial_adapter().unwrap());
    assert!(run.rounds.iter().all(|r| r.loss == 0.0));
}

#[test]
fn scalar_toy_local_loss_never_increases() {
    let cfg = FederationConfig::scalar_toy(Strategy::FedIT, 0.0, 1);
    let task = cfg.build_task().unwrap();
    let start = cfg.initial_adapter().unwrap();
    for c in 0..3 {
        let out = local_train(c, &start, &task, &cfg, 1).unwrap();
        assert_eq!(out.step_losses.len(), 30);
        let mut all = out.step_losses.clone();
        all.push(out.final_loss);
        assert!(all.windows(2).all(|w| w[1] <= w[0]), "client {c}: {all:?}");
    }
}

#[test]
fn first_round_is_never_transformed() {
    for s in [Strategy::FedRot, Strategy::RandomRotation, Strategy::ScalarRescale] {
        let run = run_federation(&regression(s, 1.0, 3)).unwrap();
        assert_eq!(run.rounds[0].rotation_deviation, 0.0);
        assert_eq!(run.rounds[0].alignment_gain, None);
        assert!(run.rounds[0].clients.iter().all(|c| c.spread_aligned == c.spread_raw));
    }
    let run = run_federation(&regression(Strategy::FedRot, 1.0, 3)).unwrap();
    assert!(run.rounds[1].rotation_deviation > 0.0);
}

#[test]
fn zero_lambda_matches_fedit_exactly() {
    let fedit = run_federation(&regression(Strategy::FedIT, 0.0, 8)).unwrap();
    let rot = run_federation(&regression(Strategy::FedRot, 0.0, 8)).unwrap();
    assert_eq!(fedit.final_model, rot.final_model);
    for (a, b) in fedit.rounds.iter().zip(&rot.rounds) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.agg_error.to_bits(), b.agg_error.to_bits());
        assert_eq!(b.rotation_deviation, 0.0);
    }
}

#[test]
fn communication_is_accounted() {
    let cfg = regression(Strategy::FedRot, 1.0, 3);
    let size = 8 * 2 + 2 * 6;
    let run = run_federation(&cfg).unwrap();
    assert!(run
        .rounds
        .iter()
        .all(|r| r.upload_scalars == size && r.download_scalars == size));
    let rc = run_federation(&FederationConfig {
        reference_mode: ReferenceMode::RandomClient,
        ..cfg.clone()
    })
    .unwrap();
    assert!(rc
        .rounds
        .iter()
        .all(|r| r.upload_scalars == size && r.download_scalars == 2 * size));
    let lagged = run_federation(&FederationConfig {
        reference_mode: ReferenceMode::OlderGlobal { lag: 3 },
        ..cfg
    })
    .unwrap();
    assert!(lagged.rounds.iter().all(|r| r.download_scalars == size));
}

#[test]
fn reference_modes_change_trajectories() {
    let base = run_federation(&regression(Strategy::FedRot, 1.0, 6)).unwrap();
    for mode in [ReferenceMode::RandomClient, ReferenceMode::OlderGlobal { lag: 2 }] {
        let other = run_federation(&FederationConfig {
            reference_mode: mode,
            ..regression(Strategy::FedRot, 1.0, 6)
        })
        .unwrap();
        assert_ne!(base.final_model, other.final_model, "{mode:?}");
    }
}

#[test]
fn sweep_runs_every_cell_in_order() {
    let grid = SweepGrid {
        lambda: Some(vec![0.0, 0.5, 1.0]),
        ..Default::default()
    };
    let cells = run_sweep(&regression(Strategy::FedRot, 0.0, 4), &grid).unwrap();
    assert_eq!(cells.len(), 3);
    for (cell, lambda) in cells.iter().zip([0.0, 0.5, 1.0]) {
        assert_eq!(cell.config.lambda, lambda);
        let direct = run_federation(&cell.config).unwrap();
        assert_eq!(cell.result.as_ref().unwrap(), &direct);
    }
    assert_eq!(cells[1].label(), "lambda=0.5_seed=4");
    let seeded = SweepGrid {
        seeds: Some(vec![0, 1]),
        ..grid.clone()
    };
    assert_eq!(seeded.expand(&regression(Strategy::FedRot, 0.0, 4)).unwrap().len(), 6);
    assert!(SweepGrid::default()
        .expand(&regression(Strategy::FedRot, 0.0, 4))
        .is_err());
    let seeds_only = SweepGrid {
        seeds: Some(vec![5, 6]),
        ..SweepGrid::default()
    };
    let cells = seeds_only.expand(&regression(Strategy::FedRot, 0.0, 4)).unwrap();
    assert_eq!(
        cells.iter().map(|(p, s, c)| (p.len(), *s, c.seed)).collect::<Vec<_>>(),
        [(0, 5, 5), (0, 6, 6)]
    );
    let empty = SweepGrid {
        lambda: Some(vec![]),
        ..Default::default()
    };
    assert!(empty.expand(&regression(Strategy::FedRot, 0.0, 4)).is_err());
}

#[test]
fn divergence_keeps_partial_trajectory() {
    let mut cfg = regression(Strategy::FedIT, 0.0, 20);
    cfg.learning_rate = 5.0;
    cfg.init = InitSpec::Constant { b: 1.0, a: 1.0 };
    let run = run_federation(&cfg).unwrap();
    assert!(!run.is_complete());
    assert!(matches!(run.failure, Some(Error::Divergence { .. })));
    assert!(run.rounds.len() < 20);
    assert!(run.rounds.iter().all(|r| r.loss.is_finite()));
    assert!(run.into_complete().is_err());
}

#[test]
fn invalid_configs_name_the_field() {
    let cases: Vec<(&str, FederationConfig)> = vec![
        (
            "lambda",
            FederationConfig {
                lambda: 1.5,
                ..regression(Strategy::FedRot, 0.0, 2)
            },
        ),
        (
            "rank",
            FederationConfig {
                rank: 7,
                ..regression(Strategy::FedRot, 0.0, 2)
            },
        ),
        ("strategy", regression(Strategy::Ideal, 0.0, 2)),
        (
            "n_clients",
            FederationConfig {
                n_clients: 0,
                ..regression(Strategy::FedRot, 0.0, 2)
            },
        ),
        (
            "reference_mode",
            FederationConfig {
                reference_mode: ReferenceMode::OlderGlobal { lag: 1 },
                ..regression(Strategy::FedRot, 0.0, 2)
            },
        ),
    ];
    for (field, cfg) in cases {
        let msg = run_federation(&cfg).unwrap_err().to_string();
        assert!(msg.contains(field), "{msg}");
    }
}

#[test]
fn minibatch_logistic_run_reports_accuracy() {
    let run = run_federation(&logistic(Strategy::FedRot)).unwrap();
    assert!(run
        .rounds
        .iter()
        .all(|r| r.accuracy.is_some_and(|a| (0.0..=1.0).contains(&a))));
    assert!(run.rounds.last().unwrap().loss < run.rounds[0].loss);
}

#[test]
fn f32_and_f64_adapters_agree_loosely() {
    let ad = init_adapter::<f64>(6, 5, 2, 3).unwrap();
    let back: LoraAdapter<f64> = ad.cast::<f32>().cast();
    assert!(back.a().max_abs_diff(ad.a()).unwrap() < 1e-6);
}

/// Best-of-several wall time of one client-side alignment at width `d`.
fn alignment_time(d: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
    let r = 8;
    let local = LoraAdapter::new(
        Matrix::random_normal(d, r, 1.0, &mut rng),
        Matrix::random_normal(r, d, 1.0, &mut rng),
    )
    .unwrap();
    let reference = Matrix::<f64>::random_normal(r, d, 1.0, &mut rng);
    let reps = 40_000 / d;
    (0..7)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                let hard = procrustes_rotation(local.a(), &reference, AlignmentTarget::FactorA).unwrap();
                let soft = soft_rotation(&hard, 0.5).unwrap();
                std::hint::black_box(apply_alignment(&local, &soft).unwrap());
            }
            t.elapsed().as_secs_f64() / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn alignment_cost_is_linear_in_width() {
    let t: Vec<f64> = [64, 256, 1024].iter().map(|&d| alignment_time(d)).collect();
    // 16× the width should cost at most 32× the time.
    assert!(t[2] / t[0] <= 2.0 * 16.0, "times {t:?}");
    assert!(t[1] / t[0] <= 2.0 * 4.0, "times {t:?}");
}
