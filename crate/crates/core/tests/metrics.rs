mod oracles;

use flowlab::io::FlowField;
use flowlab::metrics::{
    aepe, binned_aepe, boundary_distance, evaluate_pair, fl_all, outlier_count, wauc, MetricAccumulator,
    MetricError, DISTANCE_EDGES, SPEED_EDGES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn identical_fields_are_perfect() {
    let gt = FlowField::constant(5, 4, 3.0, -2.0);
    let r = evaluate_pair(&gt, &gt).unwrap();
    assert_eq!((r.aepe, r.fl_all, r.wauc), (0.0, 0.0, 100.0));
}

#[test]
fn constant_offset_gives_five() {
    let gt = FlowField::constant(6, 3, 1.0, 1.0);
    let pred = FlowField::constant(6, 3, 4.0, 5.0);
    assert_eq!(aepe(&pred, &gt).unwrap(), 5.0);
}

#[test]
fn all_outliers_and_quarter_outliers() {
    let gt = FlowField::constant(4, 4, 1.0, 0.0);
    assert_eq!(fl_all(&FlowField::constant(4, 4, 11.0, 0.0), &gt).unwrap(), 100.0);
    let mut pred = gt.clone();
    for i in 0..4 {
        pred.u_mut()[i * 4] += 10.0;
    }
    assert_eq!(fl_all(&pred, &gt).unwrap(), 25.0);
    // 4 px error against a 100 px GT is within 5%.
    let fast = FlowField::constant(4, 4, 100.0, 0.0);
    assert_eq!(fl_all(&FlowField::constant(4, 4, 104.0, 0.0), &fast).unwrap(), 0.0);
}

#[test]
fn wauc_extremes_and_half() {
    let gt = FlowField::zeros(4, 2);
    assert_eq!(wauc(&FlowField::constant(4, 2, 6.0, 0.0), &gt).unwrap(), 0.0);
    let mut pred = gt.clone();
    for i in 0..4 {
        pred.u_mut()[i] = 7.0;
    }
    assert!((wauc(&pred, &gt).unwrap() - 50.0).abs() < 0.5);
}

#[test]
fn no_valid_pixels_is_rejected() {
    let mut gt = FlowField::zeros(2, 2);
    gt.set_valid(Some(vec![false; 4])).unwrap();
    assert_eq!(aepe(&gt, &gt), Err(MetricError::NoValidPixels));
    assert_eq!(fl_all(&gt, &gt), Err(MetricError::NoValidPixels));
    assert!(matches!(
        aepe(&FlowField::zeros(3, 2), &FlowField::zeros(2, 3)),
        Err(MetricError::Dimensions { .. })
    ));
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let (pred, gt) = oracles::random_pair(&mut rng);
        let px = oracles::pixels(&pred, &gt);
        assert!(close(aepe(&pred, &gt).unwrap(), oracles::aepe(&px), 1e-9));
        assert_eq!(outlier_count(&pred, &gt).unwrap().0, oracles::outliers(&px));
        assert!(close(wauc(&pred, &gt).unwrap(), oracles::wauc(&px), 1e-9));
    }
}

#[test]
fn bins_partition_and_match_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let (pred, gt) = oracles::random_pair(&mut rng);
        let dist: Vec<f64> = (0..gt.len()).map(|_| rng.gen_range(0.0..200.0)).collect();
        let r = binned_aepe(&pred, &gt, &SPEED_EDGES, &DISTANCE_EDGES, Some(&dist)).unwrap();
        let px = oracles::pixels(&pred, &gt);
        let mags: Vec<f64> = px.iter().map(|p| p.gt_mag).collect();
        let dkeys = oracles::valid_keys(&gt, &dist);
        for (bins, edges, keys) in [(&r.speed_bins, &SPEED_EDGES[..], &mags), (&r.distance_bins, &DISTANCE_EDGES[..], &dkeys)] {
            let mut total = 0;
            let mut weighted = 0.0;
            for (k, b) in bins.iter().enumerate() {
                let hi = edges.get(k + 1).copied().unwrap_or(f64::INFINITY);
                let (n, mean) = oracles::masked(&px, keys, edges[k], hi);
                assert_eq!(b.pixels, n);
                match (b.aepe, mean) {
                    (Some(a), Some(m)) => assert!(close(a, m, 1e-9)),
                    (None, None) => {}
                    other => panic!("{other:?}"),
                }
                total += b.pixels;
                weighted += b.aepe.unwrap_or(0.0) * b.pixels as f64;
            }
            assert_eq!(total, r.valid_pixels);
            assert!(close(weighted / total as f64, r.aepe, 1e-9));
        }
    }
}

#[test]
fn uniform_speed_five_lands_in_first_bin() {
    let gt = FlowField::constant(5, 5, 3.0, 4.0);
    let r = evaluate_pair(&FlowField::zeros(5, 5), &gt).unwrap();
    assert_eq!(r.bin("s0-10").unwrap().pixels, 25);
    assert_eq!(r.bin("s10-40").unwrap().pixels, 0);
    // No discontinuities: everything is far from any boundary.
    assert_eq!(r.bin("d140+").unwrap().pixels, 25);
}

#[test]
fn boundary_distance_from_step_edge() {
    let (w, h) = (20, 3);
    let u: Vec<f32> = (0..w * h).map(|i| if i % w < 10 { 0.0 } else { 5.0 }).collect();
    let gt = FlowField::from_parts(w, h, u, vec![0.0; w * h], None).unwrap();
    let d = boundary_distance(&gt);
    assert_eq!(d[9], 0.0);
    assert_eq!(d[10], 1.0);
    assert_eq!(d[19], 10.0);
    assert_eq!(d[0], 9.0);
}

#[test]
fn accumulator_is_pixel_weighted() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut acc = MetricAccumulator::default();
    let (mut sum, mut n) = (0.0, 0u64);
    for _ in 0..10 {
        let (pred, gt) = oracles::random_pair(&mut rng);
        let a = aepe(&pred, &gt).unwrap();
        let k = gt.valid_count() as u64;
        sum += a * k as f64;
        n += k;
        acc.add(&pred, &gt, None).unwrap();
    }
    let r = acc.report().unwrap();
    assert_eq!(r.valid_pixels, n);
    assert!(close(r.aepe, sum / n as f64, 1e-9));
}

#[test]
fn error_is_translation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (pred, gt) = oracles::random_pair(&mut rng);
    let shift = |f: &FlowField| {
        let mut g = f.clone();
        g.u_mut().iter_mut().for_each(|x| *x += 0.5);
        g.v_mut().iter_mut().for_each(|x| *x -= 0.25);
        g
    };
    assert!(close(aepe(&shift(&pred), &shift(&gt)).unwrap(), aepe(&pred, &gt).unwrap(), 1e-6));
}

#[test]
fn invalid_pixel_only_removes_its_contribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let (pred, mut gt) = oracles::random_pair(&mut rng);
    gt.set_valid(None).unwrap();
    let px = oracles::pixels(&pred, &gt);
    let total: f64 = px.iter().map(|p| p.epe).sum();
    let mut mask = vec![true; gt.len()];
    mask[1] = false;
    gt.set_valid(Some(mask)).unwrap();
    let expected = (total - px[1].epe) / (px.len() - 1) as f64;
    assert!(close(aepe(&pred, &gt).unwrap(), expected, 1e-9));
}
