use peagnn::hin::Hin;
use peagnn::par::ExecMode;
use peagnn::synthetic::{planted_hin, PlantedConfig};
use peagnn::train::{fit, TrainConfig, TrainingData};

fn planted(users: usize, per_user: usize) -> Hin {
    planted_hin(
        PlantedConfig {
            users,
            items: 100,
            genres: 10,
            per_user,
        },
        9,
    )
    .unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.01,
        batch_size: 1024,
        metapaths: ["U-M-U", "G-M-U", "M-U-M", "M-G-M"]
            .map(String::from)
            .to_vec(),
        n_candidates: 50,
        seed: 5,
        dims: peagnn::model::ModelDims {
            embed: 16,
            repr: 8,
            hidden: 16,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn four_thousand_triples_make_four_batches() {
    // 200 users × 5 training interactions × 4 negatives
    let data = TrainingData::prepare(planted(200, 7), 1, 50).unwrap();
    assert_eq!(data.split.train.len(), 1000);
    let fit = fit(&data, &config(1), ExecMode::Sequential).unwrap();
    assert_eq!(fit.history[0].batches, 4);
}

#[test]
fn zero_lambda_reports_no_entity_loss() {
    let data = TrainingData::prepare(planted(60, 6), 1, 50).unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        ..config(2)
    };
    let fit = fit(&data, &cfg, ExecMode::Sequential).unwrap();
    assert!(fit
        .history
        .iter()
        .all(|h| h.loss_entity == 0.0 && h.entity_skipped == 0));
}

#[test]
fn same_seed_same_trace_and_parameters() {
    let data = TrainingData::prepare(planted(60, 6), 1, 50).unwrap();
    let a = fit(&data, &config(3), ExecMode::Sequential).unwrap();
    let b = fit(&data, &config(3), ExecMode::Sequential).unwrap();
    let trace = |f: &peagnn::train::FitResult| {
        f.history
            .iter()
            .map(|h| {
                (
                    h.loss_cf.to_bits(),
                    h.loss_entity.to_bits(),
                    h.val_hr10.to_bits(),
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(trace(&a), trace(&b));
    assert_eq!(a.best, b.best);
    // the parallel kernels reduce every row in the same order
    let c = fit(&data, &config(3), ExecMode::Parallel).unwrap();
    assert_eq!(trace(&a), trace(&c));
    assert_eq!(a.best, c.best);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let data = TrainingData::prepare(planted(200, 6), 2, 50).unwrap();
    let cfg = TrainConfig {
        patience: 5,
        ..config(60)
    };
    let fit = fit(&data, &cfg, ExecMode::Sequential).unwrap();
    let best = fit.history[fit.best_epoch - 1].val_hr10;
    assert!(fit.history.iter().all(|h| h.val_hr10 <= best));
    assert!(fit.history[..fit.best_epoch - 1]
        .iter()
        .all(|h| h.val_hr10 < best));
    if fit.stopped.is_some() {
        assert_eq!(fit.history.len(), fit.best_epoch + 5);
    } else {
        assert_eq!(fit.history.len(), 60);
    }
}

#[test]
fn loss_halves_on_a_two_hundred_interaction_network() {
    let hin = planted(40, 5);
    assert_eq!(hin.interactions().len(), 200);
    let data = TrainingData::prepare(hin, 3, 50).unwrap();
    let cfg = TrainConfig {
        patience: 50,
        ..config(50)
    };
    let fit = fit(&data, &cfg, ExecMode::Sequential).unwrap();
    let first = fit.history[0].loss_cf;
    let min = fit
        .history
        .iter()
        .map(|h| h.loss_cf)
        .fold(f64::INFINITY, f64::min);
    assert!(min <= 0.5 * first, "first {first}, best {min}");
    assert!(fit
        .history
        .iter()
        .all(|h| h.loss_cf.is_finite() && h.loss_entity.is_finite()));
    assert!(fit
        .history
        .iter()
        .all(|h| h.fusion_simplex_error < 1e-6 && h.fusion_shift_error < 1e-6));
}

#[test]
fn entity_regularizer_widens_the_contrast_gap() {
    let data = TrainingData::prepare(planted(100, 6), 4, 50).unwrap();
    let cfg = TrainConfig {
        lambda: 1.0,
        ..config(8)
    };
    let fit = fit(&data, &cfg, ExecMode::Sequential).unwrap();
    let best = &fit.history[fit.best_epoch - 1];
    assert!(
        best.entity_gap > fit.initial_entity_gap,
        "{} vs {}",
        best.entity_gap,
        fit.initial_entity_gap
    );
}

#[test]
fn divergence_aborts_with_the_last_good_parameters() {
    let data = TrainingData::prepare(planted(60, 6), 1, 50).unwrap();
    let cfg = TrainConfig {
        lr: 1e36,
        ..config(20)
    };
    let fit = fit(&data, &cfg, ExecMode::Sequential).unwrap();
    assert!(fit.aborted.is_some(), "{:?}", fit.history);
    assert!(fit.best.is_finite());
    assert!(fit.history.len() < 20);
}
