use famreg::orientation::{
    deviation_from_horizontal, min_rect_direction, normalize_horizontal, principal_direction_exhaustive,
};
use famreg::raster::BinaryMask;
use famreg::synthgen::{generate_forearm, ForearmParams};
use proptest::prelude::*;

fn blob_strategy() -> impl Strategy<Value = (BinaryMask, usize, usize)> {
    (2usize..20, 2usize..20).prop_flat_map(|(w, h)| {
        (
            proptest::collection::vec(any::<bool>(), w * h),
            0usize..30,
            0usize..30,
        )
            .prop_filter_map("empty blob", move |(d, dx, dy)| {
                d.iter().any(|&b| b).then(|| (BinaryMask::new(w, h, d).unwrap(), dx, dy))
            })
    })
}

fn place(blob: &BinaryMask, dx: usize, dy: usize) -> BinaryMask {
    BinaryMask::from_fn(50, 50, |x, y| {
        x >= dx && y >= dy && x - dx < blob.width() && y - dy < blob.height() && blob.get(x - dx, y - dy)
    })
}

fn angular_gap(a: f64, b: f64) -> f64 {
    deviation_from_horizontal(a - b)
}

#[test]
fn methods_agree_on_elongated_arms() {
    for k in 0..12 {
        let params = ForearmParams {
            in_plane_angle: k as f64 * 15.0,
            axial_angle: (k * 7 % 90) as f64,
            ..ForearmParams::default()
        };
        let mask = generate_forearm(&params).unwrap().mask;
        let fast = min_rect_direction(&mask).unwrap();
        let full = principal_direction_exhaustive(&mask, 1.0).unwrap();
        assert!(
            angular_gap(fast.angle, full.angle) <= 10.0,
            "in-plane {}: {} vs {}",
            params.in_plane_angle,
            fast.angle,
            full.angle
        );
        assert!(angular_gap(fast.angle, params.in_plane_angle) <= 2.0);
    }
}

#[test]
fn normalization_is_idempotent() {
    for angle in [0.0, 25.0, 40.0, 95.0, 170.0] {
        let params = ForearmParams {
            in_plane_angle: angle,
            ..ForearmParams::default()
        };
        let mask = generate_forearm(&params).unwrap().mask;
        let once = normalize_horizontal(&mask, &min_rect_direction(&mask).unwrap());
        let first = min_rect_direction(&once).unwrap();
        assert!(deviation_from_horizontal(first.angle) <= 2.0, "{angle}: {}", first.angle);
        let twice = normalize_horizontal(&once, &first);
        let second = min_rect_direction(&twice).unwrap();
        assert!(deviation_from_horizontal(second.angle) <= 2.0);
        assert!(angular_gap(first.angle, second.angle) <= 2.0);
    }
}

proptest! {
    #[test]
    fn exhaustive_extent_ignores_translation(
        (blob, dx, dy) in blob_strategy(),
        (dx2, dy2) in (0usize..30, 0usize..30),
    ) {
        let a = principal_direction_exhaustive(&place(&blob, dx, dy), 5.0).unwrap();
        let b = principal_direction_exhaustive(&place(&blob, dx2, dy2), 5.0).unwrap();
        prop_assert!((a.extent - b.extent).abs() <= 1.0, "{} vs {}", a.extent, b.extent);
    }

    #[test]
    fn angles_stay_in_range((blob, dx, dy) in blob_strategy()) {
        let mask = place(&blob, dx, dy);
        let d = principal_direction_exhaustive(&mask, 3.0).unwrap();
        prop_assert!((0.0..180.0).contains(&d.angle));
        prop_assert!(d.extent > 0.0 || mask.count() == 1);
        if let Ok(r) = min_rect_direction(&mask) {
            prop_assert!((0.0..180.0).contains(&r.angle));
            prop_assert!(r.extent > 0.0);
        }
    }
}
