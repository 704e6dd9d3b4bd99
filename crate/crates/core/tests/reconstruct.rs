mod common;

use std::collections::{BTreeMap, BTreeSet};

use cellseg_core::grid::{Class, Grid, LabelMap, TertiaryMap};
use cellseg_core::reconstruct::{
    argmax_classes, fill_holes, instance_areas, label_instances, reclaim_boundary, reconstruct, remove_small, Connectivity,
    PostParams, ScoreMap,
};
use cellseg_core::rng::{stream_id, stream_rng};
use cellseg_core::targetgen::{build_tertiary, MorphParams};
use proptest::prelude::*;
use rand::Rng;

fn random_scores(seed: u64, h: usize, w: usize) -> ScoreMap {
    let mut rng = stream_rng(seed, stream_id("scores"));
    // Coarse values so ties occur.
    Grid::from_fn(h, w, |_, _| [0, 1, 2].map(|_| rng.gen_range(0..4) as f64 / 4.0))
}

fn random_tertiary(seed: u64, h: usize, w: usize) -> TertiaryMap {
    let mut rng = stream_rng(seed, stream_id("tertiary"));
    Grid::from_fn(h, w, |_, _| Class::ALL[rng.gen_range(0..3)])
}

/// Stack-based flood fill that assigns ids by scanning for the next
/// unlabelled seed; neighbours are enumerated by explicit distance tests.
fn components_oracle(t: &TertiaryMap, eight: bool) -> LabelMap {
    let (h, w) = t.shape();
    let mut out = LabelMap::new(h, w);
    let mut next = 0;
    for r0 in 0..h {
        for c0 in 0..w {
            if *t.get(r0, c0) != Class::Cell || *out.get(r0, c0) != 0 {
                continue;
            }
            next += 1;
            out.set(r0, c0, next);
            let mut stack = vec![(r0, c0)];
            while let Some((r, c)) = stack.pop() {
                for nr in 0..h {
                    for nc in 0..w {
                        let (dr, dc) = (nr.abs_diff(r), nc.abs_diff(c));
                        let adjacent = if eight { dr.max(dc) == 1 } else { dr + dc == 1 };
                        if adjacent && *t.get(nr, nc) == Class::Cell && *out.get(nr, nc) == 0 {
                            out.set(nr, nc, next);
                            stack.push((nr, nc));
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn argmax_matches_first_maximum() {
    for seed in 0..20 {
        let s = random_scores(seed, 9, 11);
        let t = argmax_classes(&s);
        for (v, &class) in s.iter().zip(t.iter()) {
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let first = v.iter().position(|&x| x == max).unwrap();
            assert_eq!(class, Class::ALL[first]);
        }
    }
}

#[test]
fn labelling_matches_flood_fill_oracle() {
    for seed in 0..50 {
        let t = random_tertiary(seed, 12, 13);
        assert_eq!(label_instances(&t, Connectivity::Four), components_oracle(&t, false));
        assert_eq!(label_instances(&t, Connectivity::Eight), components_oracle(&t, true));
    }
}

#[test]
fn remove_small_matches_histogram_oracle() {
    let mut rng = stream_rng(4, stream_id("remove-small"));
    for _ in 0..50 {
        let m = common::random_label_map(&mut rng, 24, 24, 8);
        let min_area = rng.gen_range(0..60);
        let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
        for &v in m.iter() {
            *hist.entry(v).or_default() += 1;
        }
        let out = remove_small(&m, min_area);
        for (&a, &b) in m.iter().zip(out.iter()) {
            let keep = a != 0 && hist[&a] >= min_area;
            assert_eq!(b, if keep { a } else { 0 });
        }
    }
}

#[test]
fn hole_filling_examples() {
    let ring = common::grid_from_rows(&[
        &[0, 0, 0, 0, 0, 0],
        &[0, 3, 3, 3, 3, 0],
        &[0, 3, 0, 0, 3, 0],
        &[0, 3, 3, 3, 3, 0],
        &[0, 0, 0, 0, 0, 0],
    ]);
    let filled = fill_holes(&ring, 2);
    assert_eq!(*filled.get(2, 2), 3);
    assert_eq!(*filled.get(2, 3), 3);
    assert_eq!(fill_holes(&ring, 1), ring);
    // Background touching the border is never a hole.
    let open = common::grid_from_rows(&[&[3, 3, 3], &[3, 0, 0], &[3, 3, 3]]);
    assert_eq!(fill_holes(&open, 10), open);
}

#[test]
fn reclaim_examples() {
    let t = Grid::from_fn(3, 7, |_, c| match c {
        0 | 1 => Class::Cell,
        2 | 3 => Class::Boundary,
        _ => Class::Cell,
    });
    let m = label_instances(&t, Connectivity::Four);
    let one = reclaim_boundary(&m, &t, 1);
    // Column 2 touches only the left cell; column 3 touches only the right.
    assert!((0..3).all(|r| *one.get(r, 2) == 1 && *one.get(r, 3) == 2));
    let t = Grid::from_fn(3, 5, |_, c| if c == 2 { Class::Boundary } else { Class::Cell });
    let m = label_instances(&t, Connectivity::Four);
    assert_eq!(reclaim_boundary(&m, &t, 4), m);
}

#[test]
fn well_separated_instances_survive_the_round_trip() {
    let params = MorphParams::default();
    let mut rng = stream_rng(5, stream_id("round-trip"));
    let mut failures = 0;
    for _ in 0..100 {
        let (labels, count) = common::separated_rectangles(&mut rng, 64, 64, 8, 5, params.contact_distance + 1);
        let rebuilt = label_instances(&build_tertiary(&labels, &params), Connectivity::Four);
        let areas = instance_areas(&rebuilt);
        let subset_of_one = areas.keys().all(|&id| {
            let origins: BTreeSet<u32> = rebuilt.iter().zip(labels.iter()).filter(|(&r, _)| r == id).map(|(_, &o)| o).collect();
            origins.len() == 1 && !origins.contains(&0)
        });
        if areas.len() != count as usize || !subset_of_one {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn pipeline_on_a_clean_score_map() {
    let truth = Grid::from_fn(20, 20, |r, c| if (3..9).contains(&r) && (3..9).contains(&c) { Class::Cell } else { Class::Background });
    let scores = truth.map(|&class| {
        let mut s = [0.1; 3];
        s[class.code() as usize] = 0.8;
        s
    });
    let m = reconstruct(&scores, &PostParams::default());
    assert_eq!(instance_areas(&m).into_iter().collect::<Vec<_>>(), vec![(1, 36)]);
    let m = reconstruct(&scores, &PostParams { min_area: 37, ..PostParams::default() });
    assert!(m.iter().all(|&v| v == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn argmax_of_one_hot_recovers_the_classes(seed in any::<u64>()) {
        let t = random_tertiary(seed, 10, 10);
        let scores = t.map(|&class| {
            let mut s = [0.0; 3];
            s[class.code() as usize] = 1.0;
            s
        });
        prop_assert_eq!(argmax_classes(&scores), t);
    }

    #[test]
    fn components_are_connected_cell_pixels(seed in any::<u64>()) {
        let t = random_tertiary(seed, 10, 10);
        let m = label_instances(&t, Connectivity::Four);
        for (a, b) in m.iter().zip(t.iter()) {
            prop_assert_eq!(*a != 0, *b == Class::Cell);
        }
        let ids: BTreeSet<u32> = m.iter().copied().filter(|&v| v != 0).collect();
        prop_assert_eq!(ids, (1..=instance_areas(&m).len() as u32).collect::<BTreeSet<_>>());
    }

    #[test]
    fn hole_filling_only_adds_pixels_and_keeps_instances(seed in any::<u64>(), max_hole in 0usize..30) {
        let mut rng = stream_rng(seed, stream_id("holes"));
        let m = common::random_label_map(&mut rng, 20, 20, 6);
        let out = fill_holes(&m, max_hole);
        for (&a, &b) in m.iter().zip(out.iter()) {
            prop_assert!(a == 0 || a == b);
        }
        prop_assert_eq!(instance_areas(&m).len(), instance_areas(&out).len());
    }

    #[test]
    fn remove_small_is_idempotent(seed in any::<u64>(), min_area in 0usize..50) {
        let mut rng = stream_rng(seed, stream_id("idem"));
        let m = common::random_label_map(&mut rng, 20, 20, 6);
        let once = remove_small(&m, min_area);
        prop_assert_eq!(remove_small(&once, min_area), once);
    }
}
