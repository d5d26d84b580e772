use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simrod_core::data::{corrupt_dataset, generate_shapes_dataset, CorruptionKind, ShapesConfig};
use simrod_core::detector::{detect_all, nms, InputBatch, EVAL_CONF, NMS_IOU};
use simrod_core::domainmix::domain_mix_batch;
use simrod_core::eval::ap50;
use simrod_core::{BoundingBox, Dataset, Detector, DetectorConfig, MixConfig, PseudoLabelSet};

fn shapes(n: usize, seed: u64) -> Dataset {
    generate_shapes_dataset(&ShapesConfig {
        n_images: n,
        rng_seed: seed,
        ..ShapesConfig::default()
    })
    .unwrap()
}

fn random_boxes(n: usize, rng: &mut ChaCha8Rng) -> Vec<BoundingBox> {
    (0..n)
        .map(|_| {
            let mut b = BoundingBox::new(
                rng.random_range(0..3),
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
            );
            b.confidence = Some(rng.random());
            b
        })
        .collect()
}

fn bench_nms(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let boxes = random_boxes(500, &mut rng);
    c.bench_function("nms/500", |b| b.iter(|| nms(black_box(&boxes), NMS_IOU)));
}

fn bench_ap50(c: &mut Criterion) {
    let truth = shapes(200, 2);
    let det = Detector::new(DetectorConfig::small(3)).unwrap();
    let preds = detect_all(&det, truth.items.iter().map(|it| (it.id.as_str(), &it.image)), EVAL_CONF, NMS_IOU).unwrap();
    c.bench_function("ap50/200-images", |b| b.iter(|| ap50(black_box(&preds), &truth).unwrap()));
}

fn bench_forward(c: &mut Criterion) {
    let ds = shapes(16, 3);
    let det = Detector::new(DetectorConfig::small(3)).unwrap();
    let x = InputBatch::from_images(ds.items.iter().map(|it| &it.image), det.input_size());
    c.bench_function("forward/batch-16", |b| b.iter(|| det.forward(black_box(&x)).unwrap()));
    c.bench_function("forward-backward/batch-16", |b| {
        b.iter(|| {
            let (out, tape) = det.forward_train(&x).unwrap();
            det.backward(&tape, &out)
        })
    });
}

fn bench_domainmix(c: &mut Criterion) {
    let source = shapes(64, 4);
    let target = corrupt_dataset(&shapes(64, 5), &CorruptionKind::ALL, 3, 6).unwrap();
    let labels: BTreeMap<_, _> = target.items.iter().map(|it| (it.id.clone(), it.boxes.clone())).collect();
    let pseudo = PseudoLabelSet::new(labels, "bench", 0.4).unwrap();
    let cfg = MixConfig::new(96);
    let batch: Vec<_> = source.items.iter().take(16).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    c.bench_function("domain_mix_batch/16", |b| {
        b.iter(|| domain_mix_batch(&batch, &source, &target, &pseudo, &cfg, &mut rng).unwrap())
    });
}

criterion_group!(benches, bench_nms, bench_ap50, bench_forward, bench_domainmix);
criterion_main!(benches);
