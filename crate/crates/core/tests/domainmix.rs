use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simrod_core::data::{corrupt_dataset, generate_shapes_dataset, CorruptionKind};
use simrod_core::domainmix::{balanced_sample, compose, domain_mix_batch, remap_boxes, CropRect, Rect};
use simrod_core::{BoundingBox, Dataset, Domain, MixConfig, PseudoLabelSet, ShapesConfig};

fn shapes(n: usize, seed: u64, prefix: &str) -> Dataset {
    generate_shapes_dataset(&ShapesConfig {
        n_images: n,
        image_size: 48,
        rng_seed: seed,
        id_prefix: prefix.into(),
        ..ShapesConfig::default()
    })
    .unwrap()
}

fn target(n: usize) -> Dataset {
    corrupt_dataset(&shapes(n, 2, "tgt"), &CorruptionKind::ALL, 3, 1).unwrap().without_labels()
}

/// Pseudo-labels equal to each target image's first ground-truth box.
fn pseudo_for(tgt: &Dataset) -> PseudoLabelSet {
    let truth = shapes(tgt.len(), 2, "tgt");
    let labels: BTreeMap<String, Vec<BoundingBox>> = truth
        .items
        .iter()
        .map(|it| (it.id.clone(), it.boxes.iter().take(1).map(|b| b.with_confidence(0.9)).collect()))
        .collect();
    PseudoLabelSet::new(labels, "fixture", 0.4).unwrap()
}

#[test]
fn balanced_sampler_is_fair() {
    let src = shapes(20, 1, "src");
    let tgt = target(20);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = balanced_sample(&src, &tgt, 10_000, &mut rng).unwrap();
    let frac = draws.iter().filter(|d| d.1 == Domain::Source).count() as f64 / 1e4;
    assert!((0.45..=0.55).contains(&frac), "{frac}");
}

#[test]
fn singleton_source_always_drawn() {
    let src = shapes(1, 1, "src");
    let tgt = target(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (id, d) in balanced_sample(&src, &tgt, 200, &mut rng).unwrap() {
        if d == Domain::Source {
            assert_eq!(id, src.items[0].id);
        }
    }
}

#[test]
fn empty_domain_falls_back() {
    let src = shapes(3, 1, "src");
    let empty = src.empty_like().with_domain(Domain::Target);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws = balanced_sample(&src, &empty, 50, &mut rng).unwrap();
    assert!(draws.iter().all(|d| d.1 == Domain::Source));
    assert!(balanced_sample(&src, &empty, 0, &mut rng).is_err());
}

/// Rasterizes a box on a pixel lattice and refits its extent.
fn raster_fit(b: &BoundingBox, w: usize, h: usize) -> Vec<(usize, usize)> {
    let [x1, y1, x2, y2] = b.corners();
    let mut px = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            if cx >= x1 && cx < x2 && cy >= y1 && cy < y2 {
                px.push((x, y));
            }
        }
    }
    px
}

#[test]
fn quadrant_map_matches_rasterized_mask() {
    let b = BoundingBox::new(0, 0.5, 0.5, 0.5, 0.5);
    let out = remap_boxes(&[b], (100, 100), CropRect::full(100, 100), Rect { x0: 0, y0: 0, x1: 100, y1: 100 }, 200, 0.25)
        .unwrap()[0];
    assert!((out.cx - 0.25).abs() < 1e-12 && (out.w - 0.25).abs() < 1e-12);
    // Every source pixel of the mask maps (x -> x / 2 on the canvas scale)
    // inside the remapped box, and the refit canvas mask has the same extent.
    let src_px = raster_fit(&b, 100, 100);
    let dst_px = raster_fit(&out, 200, 200);
    let (sx0, sx1) = (src_px.iter().map(|p| p.0).min().unwrap(), src_px.iter().map(|p| p.0).max().unwrap());
    let (dx0, dx1) = (dst_px.iter().map(|p| p.0).min().unwrap(), dst_px.iter().map(|p| p.0).max().unwrap());
    assert_eq!((dx0, dx1 + 1), (sx0, sx1 + 1));
    assert_eq!(src_px.len(), dst_px.len());
}

#[test]
fn no_clip_configuration_conserves_boxes() {
    let src = shapes(30, 1, "src");
    let empty = src.empty_like().with_domain(Domain::Target);
    let pseudo = PseudoLabelSet::empty_for(&empty, "none");
    let cfg = MixConfig {
        fixed_center: true,
        full_crops: true,
        min_visible: 1.0,
        ..MixConfig::new(64)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<_> = src.items.iter().take(8).collect();
    for m in domain_mix_batch(&batch, &src, &empty, &pseudo, &cfg, &mut rng).unwrap() {
        let expected: usize = m.plan.members.iter().map(|mm| src.get(&mm.image_id).unwrap().boxes.len()).sum();
        assert_eq!(m.boxes.len(), expected);
    }
}

#[test]
fn first_member_labels_survive() {
    let src = shapes(10, 1, "src");
    let tgt = target(10);
    let pseudo = pseudo_for(&tgt);
    let cfg = MixConfig {
        min_visible: 1e-9,
        ..MixConfig::new(64)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch: Vec<_> = src.items.iter().collect();
    for (item, m) in batch.iter().zip(domain_mix_batch(&batch, &src, &tgt, &pseudo, &cfg, &mut rng).unwrap()) {
        assert_eq!(m.plan.members[0].image_id, item.id);
        assert_eq!(m.plan.members[0].domain, Domain::Source);
        let tl = m.plan.members[0].placement;
        let s = cfg.canvas as f64;
        let inside = m
            .boxes
            .iter()
            .filter(|b| b.cx * s <= tl.x1 as f64 && b.cy * s <= tl.y1 as f64 && b.confidence.is_none())
            .count();
        let visible = remap_boxes(&item.boxes, (48, 48), m.plan.members[0].crop, tl, cfg.canvas, 1e-9).unwrap();
        assert_eq!(inside, visible.len());
    }
}

#[test]
fn missing_pseudo_entry_is_contract_violation() {
    let src = shapes(4, 1, "src");
    let tgt = target(4);
    let pseudo = PseudoLabelSet::empty_for(&tgt.empty_like(), "none");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch: Vec<_> = src.items.iter().collect();
    let r = (0..20).map(|_| domain_mix_batch(&batch, &src, &tgt, &pseudo, &MixConfig::new(48), &mut rng)).find(|r| r.is_err());
    assert!(matches!(r, Some(Err(simrod_core::Error::Contract(_)))));
}

#[test]
fn thousand_samples_statistics_and_invariants() {
    let src = shapes(40, 1, "src");
    let tgt = target(40);
    let pseudo = pseudo_for(&tgt);
    let cfg = MixConfig::new(48);
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for chunk in 0..125 {
            let batch: Vec<_> = (0..8).map(|j| &src.items[(chunk * 8 + j) % src.len()]).collect();
            out.extend(domain_mix_batch(&batch, &src, &tgt, &pseudo, &cfg, &mut rng).unwrap());
        }
        out
    };
    let samples = run(21);
    assert_eq!(samples.len(), 1000);
    let mut target_members = 0;
    for m in &samples {
        assert!(m.plan.tiles_canvas());
        let (cx, cy) = m.plan.center;
        for c in [cx, cy] {
            assert!((12..=36).contains(&c), "{c}");
        }
        for b in &m.boxes {
            let [x1, y1, x2, y2] = b.corners();
            assert!(x1 >= -1e-12 && y1 >= -1e-12 && x2 <= 1.0 + 1e-12 && y2 <= 1.0 + 1e-12);
            assert!(b.w > 0.0 && b.h > 0.0);
        }
        target_members += m.target_members();
    }
    let frac = target_members as f64 / 4000.0;
    assert!((frac - 0.375).abs() <= 0.02, "{frac}");
    assert_eq!(run(21), samples);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn remapped_boxes_stay_in_placement(
        cx in 0.05f64..0.95, cy in 0.05f64..0.95, w in 0.02f64..0.6, h in 0.02f64..0.6,
        ox in 0.0f64..30.0, oy in 0.0f64..30.0, px in 1usize..40, py in 1usize..40,
        vis in 0.01f64..1.0,
    ) {
        let b = BoundingBox::new(0, cx, cy, w, h);
        let crop = CropRect { x0: ox, y0: oy, x1: ox + 30.0, y1: oy + 30.0 };
        let place = Rect { x0: 40 - px, y0: 40 - py, x1: 40, y1: 40 };
        for o in remap_boxes(&[b], (60, 60), crop, place, 40, vis).unwrap() {
            let [x1, y1, x2, y2] = o.corners();
            prop_assert!(x1 * 40.0 >= place.x0 as f64 - 1e-9 && x2 * 40.0 <= 40.0 + 1e-9);
            prop_assert!(y1 * 40.0 >= place.y0 as f64 - 1e-9 && y2 * 40.0 <= 40.0 + 1e-9);
        }
    }

    #[test]
    fn compose_tiles_for_any_seed(seed in any::<u64>()) {
        let src = shapes(4, 1, "src");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let it = &src.items;
        let m = compose([(&it[0], &it[0].boxes[..]), (&it[1], &it[1].boxes[..]), (&it[2], &it[2].boxes[..]), (&it[3], &it[3].boxes[..])], &MixConfig::new(40), &mut rng).unwrap();
        prop_assert!(m.plan.tiles_canvas());
        for y in 0..40 {
            for x in 0..40 {
                prop_assert!(m.plan.owner(x, y).is_some());
            }
        }
    }
}
