mod common;

use common::*;
use convdyn::init::*;
use convdyn::model::make_target_a;
use convdyn::rng::stream;
use convdyn::{StudentParams, TeacherParams};

fn teacher(p: usize, k: usize, ratio: f64, seed: u64) -> TeacherParams {
    let mut rng = stream(seed, &[]);
    let a = make_target_a(k, ratio, 1.0, &mut rng).unwrap();
    TeacherParams::new(gaussian_vec(&mut rng, p), a).unwrap()
}

#[test]
fn draws_respect_sphere_and_ball() {
    let t = teacher(7, 9, 3.0, 1);
    let r = init_radius(&t, 1.0);
    let mut rng = stream(2, &[]);
    for _ in 0..2000 {
        let s = sample_init(7, 9, &t, 1.0, &mut rng);
        assert!((norm(s.v()) - 1.0).abs() <= 1e-15);
        assert!(norm(s.a()) <= r * (1.0 + 1e-15));
        let k = 9f64.sqrt();
        assert!(sum(s.a()).abs() <= k * norm(s.a()) * (1.0 + 1e-12));
        assert!(k * norm(s.a()) <= t.sum_a_star().abs() * t.w_star_norm() * (1.0 + 1e-12));
    }
}

#[test]
fn zero_sum_teacher_uses_fallback_radius() {
    let t = teacher(3, 4, 0.0, 5);
    assert!((init_radius(&t, 1.0) - t.a_star_norm() * t.w_star_norm() / 2.0).abs() < 1e-15);
    assert!((init_radius(&t, 0.5) - 0.25 * t.a_star_norm() * t.w_star_norm()).abs() < 1e-15);
}

#[test]
fn ball_radius_law() {
    // E‖a‖/r = k/(k+1) for the uniform law on the ball
    let k = 6;
    let t = teacher(3, k, 2.0, 9);
    let r = init_radius(&t, 1.0);
    let mut rng = stream(10, &[]);
    let n = 100_000;
    let mean = (0..n)
        .map(|_| norm(sample_init(3, k, &t, 1.0, &mut rng).a()) / r)
        .sum::<f64>()
        / n as f64;
    assert!((mean - k as f64 / (k as f64 + 1.0)).abs() < 0.01);
}

#[test]
fn variants_order_and_involution() {
    let s = StudentParams::new(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
    let sv = sign_variants(&s);
    assert_eq!(sv.variants[0], s);
    let signs: Vec<f64> = sv.variants.iter().map(|x| x.a()[0] / 0.5).collect();
    assert_eq!(signs, vec![1.0, -1.0, 1.0, -1.0]);
    for x in &sv.variants {
        assert_eq!(norm(x.v()), norm(s.v()));
        assert_eq!(norm(x.a()), norm(s.a()));
    }
    let again = sign_variants(&sv.variants[3]);
    let mut a: Vec<_> = sv.variants.iter().map(|x| format!("{x:?}")).collect();
    let mut b: Vec<_> = again.variants.iter().map(|x| format!("{x:?}")).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    assert_eq!(again.variants[3], s);
}

#[test]
fn good_variant_flips_both_signs_when_needed() {
    let t = TeacherParams::new(vec![1.0, 0.0], vec![1.0, 1.0]).unwrap();
    let s = StudentParams::new(vec![-1.0, 0.3], vec![-0.2, -0.1]).unwrap();
    let g = select_good_variant(&sign_variants(&s), &t).unwrap();
    assert_eq!(g.v(), &[1.0, -0.3]);
    assert_eq!(g.a(), &[0.2, 0.1]);

    let s = StudentParams::new(vec![1.0, 0.3], vec![0.2, 0.1]).unwrap();
    assert_eq!(select_good_variant(&sign_variants(&s), &t).unwrap(), s);
}

#[test]
fn ties_have_no_good_variant() {
    let t = TeacherParams::new(vec![1.0, 0.0], vec![1.0, -1.0]).unwrap();
    let s = StudentParams::new(vec![1.0, 0.3], vec![0.5, 0.5]).unwrap();
    assert!(select_good_variant(&sign_variants(&s), &t).is_none());
    let s = StudentParams::new(vec![0.0, 1.0], vec![0.5, -0.5]).unwrap();
    assert!(select_good_variant(&sign_variants(&s), &t).is_none());
}

#[test]
fn exactly_one_variant_per_basin_sign_pattern() {
    let t = teacher(5, 6, 1.0, 3);
    let mut rng = stream(4, &[]);
    for _ in 0..500 {
        let s = sample_init(5, 6, &t, 1.0, &mut rng);
        let sv = sign_variants(&s);
        let count = |want: f64| {
            sv.variants
                .iter()
                .filter(|x| {
                    dot(x.v(), t.w_star()).signum() == want
                        && dot(x.a(), t.a_star()).signum() == want
                })
                .count()
        };
        assert_eq!(count(1.0), 1);
        assert_eq!(count(-1.0), 1);
    }
}

#[test]
fn zero_ratio_bad_variant_has_obtuse_filter() {
    let t = teacher(4, 5, 0.0, 6);
    let mut rng = stream(7, &[]);
    for _ in 0..200 {
        let s = sample_init(4, 5, &t, 1.0, &mut rng);
        let b = select_bad_variant(&sign_variants(&s), &t).unwrap();
        assert!(dot(b.v(), t.w_star()) < 0.0);
        assert!(dot(b.a(), t.a_star()) < 0.0);
    }
}

#[test]
fn constant_teacher_has_no_bad_variant() {
    let t = teacher(4, 16, 16.0, 8);
    let mut rng = stream(9, &[]);
    for _ in 0..200 {
        let s = sample_init(4, 16, &t, 1.0, &mut rng);
        assert!(select_bad_variant(&sign_variants(&s), &t).is_none());
    }
}

#[test]
fn raw_cosine_concentrates_at_inverse_sqrt_p() {
    let p = 64;
    let t = teacher(p, 3, 1.0, 12);
    let mut rng = stream(13, &[]);
    let mut cos: Vec<f64> = (0..10_000)
        .map(|_| {
            let s = sample_init(p, 3, &t, 1.0, &mut rng);
            (dot(s.v(), t.w_star()) / t.w_star_norm()).abs()
        })
        .collect();
    cos.sort_by(f64::total_cmp);
    let median = cos[cos.len() / 2];
    let root = (p as f64).sqrt();
    assert!(median >= 0.5 / root && median <= 2.0 / root, "median {median}");
}
