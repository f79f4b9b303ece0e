//! Whole-model forward, ranking evaluation and one training epoch,
//! sequential versus parallel.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use peagnn::eval::evaluate_leave_one_out;
use peagnn::layers::LayerKind;
use peagnn::model::{forward_all, ModelGraph, ModelParams};
use peagnn::par::ExecMode;
use peagnn::synthetic::{planted_hin, PlantedConfig};
use peagnn::train::{train_epoch, AdamState, TrainConfig, TrainingData};

const MODES: [(&str, ExecMode); 2] = [
    ("sequential", ExecMode::Sequential),
    ("parallel", ExecMode::Parallel),
];

struct Setup {
    data: TrainingData,
    config: TrainConfig,
    graph: ModelGraph,
    params: ModelParams,
}

fn setup(kind: LayerKind) -> Setup {
    let hin = planted_hin(
        PlantedConfig {
            users: 1_500,
            items: 600,
            genres: 20,
            per_user: 12,
        },
        0,
    )
    .unwrap();
    let config = TrainConfig {
        layer: kind,
        metapaths: ["U-M-U", "G-M-U", "M-U-M", "M-G-M"]
            .map(String::from)
            .to_vec(),
        ..TrainConfig::default()
    };
    let data = TrainingData::prepare(hin, 0, config.n_candidates).unwrap();
    let mps = config.resolve_metapaths(&data.hin).unwrap();
    let graph = ModelGraph::build(&data.train_hin, &mps, kind).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = ModelParams::init(data.hin.num_nodes(), kind, mps, config.dims, &mut rng).unwrap();
    Setup {
        data,
        config,
        graph,
        params,
    }
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_all");
    for kind in [LayerKind::Gcn, LayerKind::Gat, LayerKind::Sage] {
        let s = setup(kind);
        for (name, mode) in MODES {
            group.bench_function(format!("{kind:?}/{name}"), |b| {
                b.iter(|| forward_all(&s.params, &s.graph, mode).unwrap())
            });
        }
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluation");
    let s = setup(LayerKind::Sage);
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                evaluate_leave_one_out(&s.params, &s.graph, &s.data.test, None, 0, mode).unwrap()
            })
        });
    }
    group.finish();
}

fn epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    let s = setup(LayerKind::Sage);
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut params = s.params.clone();
                let mut adam = AdamState::for_model(&params);
                train_epoch(
                    &mut params,
                    &mut adam,
                    &s.graph,
                    &s.data,
                    &s.config,
                    7,
                    mode,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward, evaluation, epoch);
criterion_main!(benches);
