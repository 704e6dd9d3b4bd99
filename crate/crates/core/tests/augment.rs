use std::collections::BTreeSet;

use cellseg_core::augment::{
    apply_flip_rot, mirror_index, random_crop, reflect_pad, FlipRot, Loader, LoaderConfig, Provenance, SamplePair,
};
use cellseg_core::grid::{Class, Grid};
use cellseg_core::rng::{stream_id, stream_rng};
use proptest::prelude::*;
use rand::Rng;

/// A pair whose image encodes the target class, so any transform that
/// treats the two differently shows up as a mismatch.
fn coupled_pair(seed: u64, h: usize, w: usize, frame: usize) -> SamplePair {
    let mut rng = stream_rng(seed, stream_id("coupled"));
    let target = Grid::from_fn(h, w, |_, _| Class::ALL[rng.gen_range(0..3)]);
    let image = Grid::from_fn(h, w, |r, c| target.get(r, c).code() as f64 + (r * w + c) as f64 * 10.0);
    SamplePair::new(image, target, Provenance { dataset: "d".into(), sequence: "01".into(), frame, crop_origin: (0, 0) }).unwrap()
}

fn coupled(p: &SamplePair) -> bool {
    p.image.iter().zip(p.target.iter()).all(|(&v, &t)| (v as u64 % 10) as u8 == t.code())
}

/// Reflection by walking back and forth across the range.
fn mirror_oracle(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let (mut pos, mut dir) = (0isize, i.signum());
    for _ in 0..i.unsigned_abs() {
        if pos + dir < 0 || pos + dir >= n as isize {
            dir = -dir;
        }
        pos += dir;
    }
    pos as usize
}

#[test]
fn mirror_index_matches_walking_oracle() {
    for n in 1..8 {
        for i in -40..40 {
            assert_eq!(mirror_index(i, n), mirror_oracle(i, n), "i={i} n={n}");
        }
    }
}

#[test]
fn flips_and_turns_form_eight_distinct_transforms() {
    let p = coupled_pair(1, 5, 5, 0);
    let mut seen = BTreeSet::new();
    for horizontal in [false, true] {
        for vertical in [false, true] {
            for quarter_turns in 0..4 {
                let out = apply_flip_rot(&p, FlipRot { horizontal, vertical, quarter_turns }).unwrap();
                assert!(coupled(&out));
                let mut sorted: Vec<u64> = out.image.iter().map(|&v| v as u64).collect();
                sorted.sort_unstable();
                let mut orig: Vec<u64> = p.image.iter().map(|&v| v as u64).collect();
                orig.sort_unstable();
                assert_eq!(sorted, orig);
                seen.insert(out.image.iter().map(|&v| v as u64).collect::<Vec<_>>());
            }
        }
    }
    assert_eq!(seen.len(), 8);
    let turn = FlipRot { quarter_turns: 1, ..FlipRot::default() };
    let mut g = p.clone();
    for _ in 0..4 {
        g = apply_flip_rot(&g, turn).unwrap();
    }
    assert_eq!(g, p);
    // A quarter turn counterclockwise moves the top-right corner to the top-left.
    assert_eq!(turn.apply(&p.image).get(0, 0), p.image.get(0, 4));
    assert!(apply_flip_rot(&coupled_pair(1, 4, 5, 0), turn).is_err());
}

#[test]
fn crops_are_windows_of_the_source() {
    let mut rng = stream_rng(2, stream_id("crops"));
    let p = coupled_pair(2, 20, 30, 0);
    let mut origins = BTreeSet::new();
    for _ in 0..200 {
        let c = random_crop(&p, 8, &mut rng).unwrap();
        let (r0, c0) = c.provenance.crop_origin;
        origins.insert((r0, c0));
        assert!(r0 <= 12 && c0 <= 22);
        assert_eq!(c.image, Grid::from_fn(8, 8, |r, cc| *p.image.get(r0 + r, c0 + cc)));
        assert!(coupled(&c));
    }
    assert!(origins.len() > 100);
    // Sources smaller than the crop are mirrored up to size.
    let small = coupled_pair(3, 5, 6, 0);
    let c = random_crop(&small, 9, &mut rng).unwrap();
    assert_eq!(c.shape(), (9, 9));
    assert!(coupled(&c));
}

#[test]
fn padding_mirrors_both_image_and_target() {
    let p = coupled_pair(4, 6, 6, 0);
    let padded = reflect_pad(&p, 3).unwrap();
    assert_eq!(padded.shape(), (12, 12));
    assert!(coupled(&padded));
    assert_eq!(padded.image.get(0, 0), p.image.get(3, 3));
    assert!(reflect_pad(&p, 6).is_err());
}

#[test]
fn loader_visits_every_sample_once_per_epoch() {
    let samples: Vec<SamplePair> = (0..7).map(|i| coupled_pair(i as u64, 12, 12, i)).collect();
    let cfg = LoaderConfig { crop_size: 8, batch_size: 1, pad: 2 };
    let mut loader = Loader::new("d", samples.clone(), cfg, 9).unwrap();
    for _ in 0..3 {
        let frames: BTreeSet<usize> = (0..7).map(|_| loader.next_minibatch().unwrap()[0].provenance.frame).collect();
        assert_eq!(frames.len(), 7);
    }
    let mut a = Loader::new("d", samples.clone(), LoaderConfig { batch_size: 3, ..cfg }, 9).unwrap();
    let mut b = Loader::new("d", samples.clone(), LoaderConfig { batch_size: 3, ..cfg }, 9).unwrap();
    let mut other = Loader::new("e", samples, LoaderConfig { batch_size: 3, ..cfg }, 9).unwrap();
    let mut differs = false;
    for _ in 0..5 {
        let batch = a.next_minibatch().unwrap();
        assert_eq!(batch, b.next_minibatch().unwrap());
        differs |= batch != other.next_minibatch().unwrap();
        assert!(batch.iter().all(|s| s.shape() == (12, 12) && coupled(s)));
    }
    assert!(differs);
    assert!(Loader::new("d", Vec::new(), cfg, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_keeps_image_and_target_aligned(seed in any::<u64>(), h in 4usize..20, w in 4usize..20, size in 1usize..16, pad in 0usize..4) {
        let p = coupled_pair(seed, h, w, 0);
        let mut rng = stream_rng(seed, stream_id("aug-prop"));
        let c = random_crop(&p, size, &mut rng).unwrap();
        let t = apply_flip_rot(&c, FlipRot::draw(&mut rng)).unwrap();
        prop_assert!(coupled(&t));
        if pad < size {
            let padded = reflect_pad(&t, pad).unwrap();
            prop_assert_eq!(padded.shape(), (size + 2 * pad, size + 2 * pad));
            prop_assert!(coupled(&padded));
        }
    }
}
