use nailforce_core::alignment::{align, AlignmentConfig, DisplacementField};
use nailforce_core::frame::{ImageFrame, BLUE};
use nailforce_core::imaging::Mask;
use nailforce_core::synth::{random_warp, NailStyle, RenderMaps};
use nailforce_core::TargetVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: usize = 111;
const W: usize = 105;

fn blue_frame(maps: &RenderMaps) -> ImageFrame {
    let planes = maps.planes(&TargetVector::default());
    ImageFrame::from_planes(maps.height, maps.width, &[planes[BLUE].clone()], 0.0).unwrap()
}

/// Mean distance between two fields over a mask.
fn endpoint_error(a: &DisplacementField, b: &DisplacementField, mask: &Mask) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..a.dy.len() {
        if mask.data[k] {
            sum += (a.dy[k] - b.dy[k]).hypot(a.dx[k] - b.dx[k]);
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn recovers_smooth_warps_of_a_nail_template() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let style = NailStyle::sample(&mut rng);
        let reference_maps = RenderMaps::new(&style, H, W, None);
        let truth = random_warp(&mut rng, H, W, 5.0).field();
        let moving_maps = RenderMaps::new(&style, H, W, Some(&truth));
        let reference = blue_frame(&reference_maps);
        let moving = blue_frame(&moving_maps);
        let start = std::time::Instant::now();
        let result = align(&reference, &moving, &AlignmentConfig::default()).unwrap();
        let recovered = result.transform.field();
        // moving = reference(p + d(p)), so the registration field is d⁻¹
        let oracle = truth.inverse(60);
        let err = endpoint_error(&recovered, &oracle, &reference_maps.mask);
        let before = endpoint_error(&DisplacementField::zeros(H, W), &oracle, &reference_maps.mask);
        eprintln!("endpoint error {err:.3} px (was {before:.3}) in {:?}", start.elapsed());
        assert!(err < 0.5 && err < before, "endpoint error {err}");
        assert!(result.trace.windows(2).all(|p| p[1] <= p[0]));
    }
}

/// Integer shift `(dy, dx)` minimising the SSD of `moving(p + s)` against `reference(p)`.
fn exhaustive_shift(reference: &[f64], moving: &[f64], radius: isize) -> (isize, isize) {
    let mut best = (f64::INFINITY, (0, 0));
    for sy in -radius..=radius {
        for sx in -radius..=radius {
            let mut ssd = 0.0;
            for r in radius..H as isize - radius {
                for c in radius..W as isize - radius {
                    let a = reference[(r * W as isize + c) as usize];
                    let b = moving[((r + sy) * W as isize + c + sx) as usize];
                    ssd += (a - b) * (a - b);
                }
            }
            if ssd < best.0 {
                best = (ssd, (sy, sx));
            }
        }
    }
    best.1
}

#[test]
fn recovers_a_two_pixel_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let style = NailStyle::sample(&mut rng);
    let reference_maps = RenderMaps::new(&style, H, W, None);
    let mut shift = DisplacementField::zeros(H, W);
    shift.dy.iter_mut().for_each(|v| *v = -2.0);
    let moving_maps = RenderMaps::new(&style, H, W, Some(&shift));
    let reference = blue_frame(&reference_maps);
    let moving = blue_frame(&moving_maps);
    assert_eq!(exhaustive_shift(&reference.plane(0), &moving.plane(0), 4), (2, 0));

    let result = align(&reference, &moving, &AlignmentConfig::default()).unwrap();
    let field = result.transform.field();
    let mask = &reference_maps.mask;
    let n = mask.count() as f64;
    let mean_dy: f64 = (0..field.dy.len()).filter(|&k| mask.data[k]).map(|k| field.dy[k]).sum::<f64>() / n;
    let mean_dx: f64 = (0..field.dx.len()).filter(|&k| mask.data[k]).map(|k| field.dx[k]).sum::<f64>() / n;
    assert!((mean_dy - 2.0).abs() < 0.25 && mean_dx.abs() < 0.25, "({mean_dy}, {mean_dx})");
}

#[test]
fn approximate_inverse_undoes_a_small_warp() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let style = NailStyle::sample(&mut rng);
    let maps = RenderMaps::new(&style, H, W, None);
    let image = blue_frame(&maps);
    let field = random_warp(&mut rng, H, W, 1.5).field();
    let warped = nailforce_core::alignment::warp_by_field(&image, &field).unwrap();
    let back = nailforce_core::alignment::warp_by_field(&warped, &field.inverse(40)).unwrap();
    let err: f64 = back.data().iter().zip(image.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / image.data().len() as f64;
    assert!(err < 0.01, "{err}");
}
