use cellseg_core::nnkit::{ParamSet, Tensor};
use cellseg_core::optim::{AdamW, AdamWParams, GradBuffer, LrSchedule};
use cellseg_core::rng::{stream_id, stream_rng};
use proptest::prelude::*;
use rand::Rng;

fn random_params<R: Rng>(rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("conv.weight", Tensor::from_vec(&[2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    p.insert("conv.bias", Tensor::from_vec(&[2], (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    p
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.flatten().into_iter().map(f64::to_bits).collect()
}

#[test]
fn accumulating_thirteen_batches_equals_one_step_on_their_sum() {
    let mut rng = stream_rng(8, stream_id("accumulation"));
    let start = random_params(&mut rng);
    let grads: Vec<ParamSet> = (0..13).map(|_| random_params(&mut rng)).collect();

    let mut a = start.clone();
    let mut opt_a = AdamW::new(&a, AdamWParams::default());
    let mut buf = GradBuffer::zeros_like(&a);
    for g in &grads {
        buf.accumulate(g).unwrap();
    }
    opt_a.step(&mut a, &mut buf, 1e-3).unwrap();

    let mut sum = start.zeros_like();
    for g in &grads {
        for (name, t) in g.iter() {
            sum.accumulate(name, t).unwrap();
        }
    }
    let mut b = start.clone();
    let mut opt_b = AdamW::new(&b, AdamWParams::default());
    let mut single = GradBuffer::zeros_like(&b);
    single.accumulate(&sum).unwrap();
    opt_b.step(&mut b, &mut single, 1e-3).unwrap();

    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&opt_a.m), bits(&opt_b.m));
    assert_eq!(bits(&opt_a.v), bits(&opt_b.v));
    assert!(buf.grads.flatten().iter().all(|&g| g == 0.0));
}

#[test]
fn adamw_follows_a_hand_computed_trace() {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::filled(&[1], 1.0));
    let hyper = AdamWParams::default();
    let mut opt = AdamW::new(&p, hyper);
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (t, g) in [0.5, -0.25, 2.0, 0.0].into_iter().enumerate() {
        let mut buf = GradBuffer::zeros_like(&p);
        let mut gs = ParamSet::new();
        gs.insert("w", Tensor::filled(&[1], g));
        buf.accumulate(&gs).unwrap();
        opt.step(&mut p, &mut buf, 0.1).unwrap();

        let k = t as i32 + 1;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let update = (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        w -= 0.1 * (update + 0.01 * w);
        assert!((p.get("w").unwrap().data()[0] - w).abs() < 1e-15, "step {k}");
    }
    // First step moves by about lr regardless of gradient scale.
    let mut q = ParamSet::new();
    q.insert("w", Tensor::filled(&[1], 0.0));
    let mut opt = AdamW::new(&q, AdamWParams { weight_decay: 0.0, ..hyper });
    let mut buf = GradBuffer::zeros_like(&q);
    let mut g = ParamSet::new();
    g.insert("w", Tensor::filled(&[1], 1e6));
    buf.accumulate(&g).unwrap();
    opt.step(&mut q, &mut buf, 0.1).unwrap();
    assert!((q.get("w").unwrap().data()[0] + 0.1).abs() < 1e-12);
}

#[test]
fn step_without_gradients_is_rejected() {
    let p = random_params(&mut stream_rng(0, 0));
    let mut q = p.clone();
    let mut opt = AdamW::new(&p, AdamWParams::default());
    assert!(opt.step(&mut q, &mut GradBuffer::zeros_like(&p), 1e-3).is_err());
}

#[test]
fn warm_restart_schedule_values() {
    let s = LrSchedule::warm_restarts(2e-4, 1e-6, 1000, vec![100, 300, 700]);
    s.validate().unwrap();
    assert_eq!(s.lr_at(0).unwrap(), 2e-4);
    for r in [100, 300, 700] {
        assert_eq!(s.lr_at(r).unwrap(), 2e-4);
    }
    assert_eq!(s.lr_at(1000).unwrap(), 1e-6);
    let single = LrSchedule::cosine(2e-4, 1e-6, 1000);
    assert!((single.lr_at(500).unwrap() - 1.005e-4).abs() <= 1e-12);
    // Midpoint of the second segment, 100..300.
    assert!((s.lr_at(200).unwrap() - 1.005e-4).abs() <= 1e-12);
    assert!(s.lr_at(1001).is_err());
    assert_eq!(LrSchedule::constant(3e-4, 10).lr_at(7).unwrap(), 3e-4);
}

#[test]
fn invalid_schedules_are_rejected() {
    assert!(LrSchedule::cosine(1e-4, 2e-4, 10).validate().is_err());
    assert!(LrSchedule::cosine(1e-4, 0.0, 0).validate().is_err());
    assert!(LrSchedule::warm_restarts(1e-4, 0.0, 100, vec![50, 20]).validate().is_err());
    assert!(LrSchedule::warm_restarts(1e-4, 0.0, 100, vec![100]).validate().is_err());
    assert!(LrSchedule::warm_restarts(1e-4, 0.0, 100, vec![0]).validate().is_err());
}

proptest! {
    #[test]
    fn rates_stay_within_bounds_and_decay_inside_segments(
        lr_max in 1e-6f64..1e-1,
        frac in 0.0f64..1.0,
        total in 2usize..400,
        cut in 0.1f64..0.9,
    ) {
        let lr_min = lr_max * frac;
        let restart = ((total as f64 * cut) as usize).clamp(1, total - 1);
        let s = LrSchedule::warm_restarts(lr_max, lr_min, total, vec![restart]);
        s.validate().unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = s.lr_at(step).unwrap();
            prop_assert!(lr >= lr_min - 1e-18 && lr <= lr_max + 1e-18);
            if step != restart {
                prop_assert!(lr <= prev + 1e-18);
            }
            prev = lr;
        }
    }

    #[test]
    fn accumulation_order_matches_a_running_sum(values in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[1]));
        let mut buf = GradBuffer::zeros_like(&p);
        let mut sum = 0.0;
        for &x in &values {
            let mut g = ParamSet::new();
            g.insert("w", Tensor::filled(&[1], x));
            buf.accumulate(&g).unwrap();
            sum += x;
        }
        prop_assert_eq!(buf.grads.get("w").unwrap().data()[0].to_bits(), sum.to_bits());
        prop_assert_eq!(buf.batches_absorbed, values.len());
    }
}
