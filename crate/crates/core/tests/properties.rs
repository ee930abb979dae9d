mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relscope::annotations::{
    self, compute_agreement, consistency_filter, AnnotatorRecord, BBox, LabelMark, PairAgreement, Person, PersonPair,
};
use relscope::eval::{self, EvalMode, Task};
use relscope::featstore::{
    self, AttributeKind, FeatureManifest, FeatureStore, FeatureTable, Fuser, KindEntry, ProximityTensor, Standardizer,
};
use relscope::pairgeom::{body_from_head, clamp_box, geom_feature, GeomThresholds};
use relscope::splits::{SplitKind, SplitManifest};
use relscope::svm::{self, BinaryFit, SvmConfig};
use relscope::taxonomy::{RelationId, Taxonomy};

fn label_sets() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0usize..5, 0..=3), 1..=5)
        .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
}

fn records(pair: &str, sets: &[Vec<usize>]) -> Vec<AnnotatorRecord> {
    sets.iter()
        .enumerate()
        .map(|(i, s)| {
            let labels = s.iter().map(|&r| LabelMark::sure(RelationId(r))).collect();
            AnnotatorRecord::new(format!("a{i}"), pair, labels).unwrap()
        })
        .collect()
}

fn agr(recs: &[AnnotatorRecord]) -> Option<usize> {
    compute_agreement(recs).unwrap().rated().map(|r| r.agr)
}

proptest! {
    #[test]
    fn agreement_ignores_order(sets in label_sets(), rot in 0usize..5) {
        let base = records("p", &sets);
        let mut shuffled: Vec<Vec<usize>> = sets.iter().map(|s| s.iter().rev().copied().collect()).collect();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let mut moved = records("p", &shuffled);
        moved.rotate_right(k);
        prop_assert_eq!(agr(&base), agr(&moved));
        prop_assert_eq!(agr(&base), common::brute_agr(&base));
    }

    #[test]
    fn groups_partition_the_raters(sets in label_sets()) {
        let recs = records("p", &sets);
        if let PairAgreement::Rated(r) = compute_agreement(&recs).unwrap() {
            let total: usize = r.groups.iter().map(|g| g.size()).sum();
            prop_assert_eq!(total, r.n_annotators);
            // with five raters at most one set reaches three
            prop_assert!(r.groups.iter().filter(|g| g.size() >= 3).count() <= 1);
        }
    }

    #[test]
    fn consistency_filter_is_monotone(tables in prop::collection::vec(label_sets(), 1..30)) {
        let tax = Taxonomy::builtin();
        let agreements: Vec<PairAgreement> = tables
            .iter()
            .enumerate()
            .map(|(i, t)| compute_agreement(&records(&format!("p{i}"), t)).unwrap())
            .collect();
        let mut prev: Option<BTreeSet<String>> = None;
        for t in 1..=5 {
            let kept: BTreeSet<String> = consistency_filter(&agreements, t, &tax).into_iter().map(|g| g.pair_id).collect();
            if let Some(p) = &prev {
                prop_assert!(kept.is_subset(p));
            }
            prev = Some(kept);
        }
    }
}

// ---------------------------------------------------------------------------
// geometry

fn head_in(w: f64, h: f64) -> impl Strategy<Value = BBox> {
    (0.0..w * 0.9, 0.0..h * 0.9, 1.0..w * 0.1, 1.0..h * 0.1).prop_map(|(x, y, bw, bh)| BBox { x, y, w: bw, h: bh })
}

fn person_pair() -> impl Strategy<Value = PersonPair> {
    (200.0..2000.0f64, 200.0..2000.0f64).prop_flat_map(|(w, h)| {
        (head_in(w, h), head_in(w, h)).prop_map(move |(a, b)| PersonPair {
            pair_id: "p".into(),
            photo_id: "ph".into(),
            person_a: Person { identity_id: "a".into(), head: a },
            person_b: Person { identity_id: "b".into(), head: b },
            image_w: w,
            image_h: h,
        })
    })
}

fn scaled(p: &PersonPair, k: f64) -> PersonPair {
    let s = |b: BBox| BBox { x: b.x * k, y: b.y * k, w: b.w * k, h: b.h * k };
    let mut q = p.clone();
    q.person_a.head = s(p.person_a.head);
    q.person_b.head = s(p.person_b.head);
    q.image_w *= k;
    q.image_h *= k;
    q
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn geometry_is_scale_invariant(p in person_pair(), k in 0.1..10.0f64) {
        let th = GeomThresholds::default();
        let g = geom_feature(&p, &th).unwrap();
        let h = geom_feature(&scaled(&p, k), &th).unwrap();
        for (r, s) in [(g.head, h.head), (g.body, h.body)] {
            for (x, y) in r.a.iter().chain(&r.b).zip(s.a.iter().chain(&s.b)) {
                prop_assert!(close(*x, *y));
            }
            prop_assert!(close(r.distance, s.distance));
            prop_assert!(close(r.size_ratio, s.size_ratio));
            if !close(r.distance, th.far_distance) {
                prop_assert_eq!(r.far, s.far);
            }
            if !close(r.size_ratio, th.large_ratio) {
                prop_assert_eq!(r.large, s.large);
            }
        }
    }

    #[test]
    fn geometry_is_swap_invariant(p in person_pair()) {
        let th = GeomThresholds::default();
        let mut q = p.clone();
        std::mem::swap(&mut q.person_a, &mut q.person_b);
        let (g, h) = (geom_feature(&p, &th).unwrap(), geom_feature(&q, &th).unwrap());
        prop_assert!(close(g.head.distance, h.head.distance));
        prop_assert!(close(g.head.size_ratio, h.head.size_ratio));
        prop_assert!(g.head.size_ratio >= 1.0 && g.head.distance >= 0.0);
    }

    #[test]
    fn body_area_and_clamp(head in head_in(1e6, 1e6), w in 50.0..500.0f64, h in 50.0..500.0f64) {
        // far from the borders: never clamped
        let big = body_from_head(&BBox { x: head.x + 1e6, y: head.y, ..head }, 1e7, 1e7).unwrap();
        prop_assert!(!big.clamped);
        prop_assert!(close(big.bbox.area(), 18.0 * head.area()));

        let small_head = BBox { x: head.x % w, y: head.y % h, w: head.w.min(w / 4.0), h: head.h.min(h / 4.0) };
        if let Ok(once) = body_from_head(&small_head, w, h) {
            let twice = clamp_box(&once.bbox, w, h);
            prop_assert_eq!(twice.bbox, once.bbox);
            prop_assert!(!twice.clamped);
        }
    }

    #[test]
    fn pooling_dominates_every_channel(
        (c, hw, data) in (1usize..5, 1usize..5).prop_flat_map(|(c, hw)| {
            (Just(c), Just(hw), prop::collection::vec(-1e3f32..1e3, c * hw * hw))
        })
    ) {
        let t = ProximityTensor::new(c, hw, hw, data).unwrap();
        let out = featstore::max_over_channels(&t);
        for i in 0..hw {
            for j in 0..hw {
                let cells: Vec<f64> = (0..c).map(|ch| t.at(ch, i, j) as f64).collect();
                prop_assert!(cells.iter().all(|&v| out[i * hw + j] >= v));
                prop_assert!(cells.contains(&out[i * hw + j]));
            }
        }
        prop_assert_eq!(ProximityTensor::from_bytes(&t.to_bytes()).unwrap(), t);
    }
}

// ---------------------------------------------------------------------------
// fusion

fn toy_store(n: usize, dims: &[(AttributeKind, usize)], seed: u64) -> FeatureStore {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = BTreeMap::new();
    let mut kinds = Vec::new();
    for &(k, d) in dims {
        let t: FeatureTable = (0..n)
            .map(|i| (format!("p{i:03}"), (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()))
            .collect();
        tables.insert(k, t);
        kinds.push(KindEntry { name: k, dim: d, source: "synthetic".into(), file: format!("{k}.tsv") });
    }
    FeatureStore::new(FeatureManifest { kinds }, tables).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fused_slices_round_trip(seed in any::<u64>(), n in 3usize..20, picks in prop::sample::subsequence(AttributeKind::ALL.to_vec(), 1..6)) {
        let dims: Vec<(AttributeKind, usize)> = picks.iter().enumerate().map(|(i, &k)| (k, 1 + i % 4)).collect();
        let store = toy_store(n, &dims, seed);
        let ids: Vec<String> = (0..n).map(|i| format!("p{i:03}")).collect();
        let fuser = Fuser::new(&store.registry, &picks).unwrap().fit(&store, &ids).unwrap();
        let std = fuser.standardizer().unwrap();
        for id in &ids {
            let f = fuser.fuse(&store, id).unwrap();
            prop_assert_eq!(&f, &fuser.fuse(&store, id).unwrap());
            for (k, start, d) in fuser.layout() {
                let mut want = store.block(id, k).unwrap().to_vec();
                for (j, v) in want.iter_mut().enumerate() {
                    *v = (*v - std.mean[start + j]) / std.scale[start + j];
                }
                prop_assert_eq!(fuser.slice(&f, k).unwrap(), &want[..]);
                prop_assert_eq!(d, want.len());
            }
        }
    }

    #[test]
    fn standardized_train_rows_are_unit(rows in prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 3), 2..40)) {
        let s = Standardizer::fit(rows.iter().map(Vec::as_slice), 3).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| { let mut v = r.clone(); s.apply(&mut v); v }).collect();
        let n = z.len() as f64;
        for j in 0..3 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = z.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            if s.scale[j] != 1.0 {
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// svm

fn blobs(seed: u64, n_classes: usize, per: usize, d: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_classes).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            x.push(center.iter().map(|m| m + rng.random_range(-1.0..1.0)).collect());
            y.push(c);
        }
    }
    (x, y)
}

fn cfg(seed: u64) -> SvmConfig {
    SvmConfig { lambda: 0.05, epochs: 40, seed, ..SvmConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn input_scaling_keeps_predictions(seed in any::<u64>(), k in 0.1..10.0f64) {
        let (x, y) = blobs(seed, 3, 10, 4);
        let model = svm::train(&x, &y, &cfg(seed)).unwrap();
        let mut scaled = model.clone();
        for f in &mut scaled.fits {
            for w in &mut f.weights {
                *w /= k;
            }
        }
        for row in &x {
            let big: Vec<f64> = row.iter().map(|v| v * k).collect();
            prop_assert_eq!(model.predict(row).unwrap().label, scaled.predict(&big).unwrap().label);
        }
    }

    #[test]
    fn dominated_class_changes_nothing(seed in any::<u64>()) {
        let (x, y) = blobs(seed, 3, 8, 3);
        let model = svm::train(&x, &y, &cfg(seed)).unwrap();
        let mut extended = model.clone();
        let floor = x
            .iter()
            .flat_map(|r| model.decisions(r).unwrap())
            .fold(f64::INFINITY, f64::min);
        extended.classes.push(99);
        extended.fits.push(BinaryFit {
            weights: vec![0.0; 3],
            bias: floor - 1.0,
            objective_trace: vec![0.0],
            checkpoint_trace: vec![0.0],
            converged: true,
        });
        for r in &x {
            prop_assert_eq!(model.predict(r).unwrap().label, extended.predict(r).unwrap().label);
        }
    }

    #[test]
    fn two_class_ovr_mirrors_binary(seed in any::<u64>()) {
        let (x, y) = blobs(seed, 2, 10, 3);
        let c = cfg(seed);
        let model = svm::train(&x, &y, &c).unwrap();
        let positive: Vec<bool> = y.iter().map(|&l| l == 0).collect();
        let fit = svm::train_binary(&x, &positive, &c).unwrap();
        for r in &x {
            let d = model.decisions(r).unwrap();
            prop_assert!(close(d[0], -d[1]));
            prop_assert!(close(d[0], fit.decision(r)));
        }
        prop_assert_eq!(model.clone(), svm::train(&x, &y, &c).unwrap());
    }
}

#[test]
fn seeds_agree_within_two_points() {
    let (x, y) = blobs(11, 4, 60, 6);
    let (tx, ty) = blobs(11, 4, 60, 6);
    let accs: Vec<f64> = (0..5)
        .map(|s| {
            let m = svm::train(&x, &y, &cfg(s)).unwrap();
            svm::accuracy(&m, &tx, &ty).unwrap()
        })
        .collect();
    let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.02, "{accs:?}");
}

// ---------------------------------------------------------------------------
// eval

fn random_gt(n: usize, seed: u64, tax: &Taxonomy) -> Vec<annotations::GroundTruth> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut rels: Vec<RelationId> = (0..rng.random_range(1..=2)).map(|_| RelationId(rng.random_range(0..16))).collect();
            rels.sort();
            rels.dedup();
            annotations::GroundTruth {
                pair_id: format!("p{i:03}"),
                primary: rels[0],
                domain: tax.domain_of(rels[0]),
                cross_domain: rels.iter().any(|&r| tax.domain_of(r) != tax.domain_of(rels[0])),
                relations: rels,
                agr: 3,
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn accuracy_ignores_test_order(seed in any::<u64>(), preds in prop::collection::vec(0usize..16, 40), strict in any::<bool>()) {
        let tax = Taxonomy::builtin();
        let gt = random_gt(40, seed, &tax);
        let mode = if strict { EvalMode::Strict } else { EvalMode::AnyOfSet };
        let p: BTreeMap<String, usize> = gt.iter().zip(&preds).map(|(g, &r)| (g.pair_id.clone(), r)).collect();
        let ids: Vec<String> = gt.iter().map(|g| g.pair_id.clone()).collect();
        let mut rev = ids.clone();
        rev.reverse();
        let a = eval::accuracy(&p, &gt, &ids, Task::Relation, mode, &tax).unwrap();
        let b = eval::accuracy(&p, &gt, &rev, Task::Relation, mode, &tax).unwrap();
        prop_assert_eq!(&a, &b);
        let trace: usize = (0..a.confusion.len()).map(|i| a.confusion[i][i]).sum();
        prop_assert_eq!(trace, a.n_correct);

        let coarse = eval::accuracy(&eval::coarsen(&p, &tax).unwrap(), &gt, &ids, Task::Domain, mode, &tax).unwrap();
        prop_assert!(coarse.accuracy >= a.accuracy);
    }
}

// ---------------------------------------------------------------------------
// file round trips

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, -1.0..1.0f64, Just(0.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_table_round_trip(rows in prop::collection::btree_map("[a-z][a-z0-9_]{0,6}", prop::collection::vec(finite(), 3), 0..10)) {
        let text = featstore::write_feature_table(&rows, 3);
        prop_assert_eq!(featstore::parse_feature_table(&text, 3, "t.tsv").unwrap(), rows);
    }

    #[test]
    fn groundtruth_and_annotation_round_trip(tables in prop::collection::vec(label_sets(), 1..8), maybe in any::<bool>()) {
        let tax = Taxonomy::builtin();
        let mut recs = Vec::new();
        for (i, t) in tables.iter().enumerate() {
            for (a, s) in t.iter().enumerate() {
                let labels = s.iter().map(|&r| LabelMark { relation: RelationId(r), maybe: maybe && a % 2 == 0 }).collect();
                recs.push(AnnotatorRecord::new(format!("ann{a}"), format!("p{i}"), labels).unwrap());
            }
        }
        let text = annotations::write_annotations(&recs, &tax);
        prop_assert_eq!(&annotations::parse_annotations(&text, &tax, None).unwrap(), &recs);

        let gt = consistency_filter(&annotations::agree_all(&recs).unwrap(), 1, &tax);
        let text = annotations::write_groundtruth(&gt, &tax);
        prop_assert_eq!(annotations::parse_groundtruth(&text, &tax).unwrap(), gt);
    }

    #[test]
    fn pairs_round_trip(p in person_pair()) {
        let text = annotations::write_pairs(std::slice::from_ref(&p));
        prop_assert_eq!(annotations::parse_pairs(&text).unwrap(), vec![p]);
    }

    #[test]
    fn manifest_round_trip(ids in prop::collection::btree_set("[a-z0-9]{1,5}", 0..30), seed in any::<u64>()) {
        let ids: Vec<String> = ids.into_iter().collect();
        let third = ids.len() / 3;
        let m = SplitManifest {
            name: "sr-friends".into(),
            kind: SplitKind::SR,
            held_out: Some("friends".into()),
            seed,
            train: ids[..third].to_vec(),
            val: ids[third..2 * third].to_vec(),
            test: ids[2 * third..].to_vec(),
        };
        prop_assert_eq!(SplitManifest::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn svm_model_round_trip(seed in any::<u64>()) {
        let (x, y) = blobs(seed, 3, 5, 2);
        let m = svm::train(&x, &y, &SvmConfig { epochs: 3, ..cfg(seed) }).unwrap();
        prop_assert_eq!(svm::SvmModel::from_json(&m.to_json()).unwrap(), m);
    }
}

// ---------------------------------------------------------------------------
// synthetic generator

#[test]
fn more_noise_retains_fewer_pairs() {
    let tax = Taxonomy::builtin();
    let retained = |noise: f64| -> f64 {
        (0..3u64)
            .map(|seed| {
                let spec = relscope::synthgen::SynthSpec { seed, noise, n_pairs: 400, ..Default::default() };
                let c = relscope::synthgen::generate(&spec, &tax).unwrap();
                annotations::label_statistics(&c.records, &tax).unwrap().retained_fraction(3)
            })
            .sum::<f64>()
            / 3.0
    };
    let r: Vec<f64> = [0.0, 0.15, 0.3, 0.45].iter().map(|&e| retained(e)).collect();
    assert_eq!(r[0], 1.0);
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
}
