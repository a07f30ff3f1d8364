mod reference;

use flowlab::io::{
    decode_png8, flow_to_color, read_flo, read_kitti_png, write_flo, write_kitti_png, write_png8, FlowField,
    FlowIoError, RgbImage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(rng: &mut ChaCha8Rng, grid: bool) -> FlowField {
    let (w, h) = (rng.gen_range(1..24), rng.gen_range(1..24));
    let draw = |rng: &mut ChaCha8Rng| {
        if grid {
            rng.gen_range(-32000i32..32000) as f32 / 64.0
        } else {
            rng.gen_range(-300.0f32..300.0)
        }
    };
    let n = w * h;
    let u: Vec<f32> = (0..n).map(|_| draw(rng)).collect();
    let v: Vec<f32> = (0..n).map(|_| draw(rng)).collect();
    let valid = rng
        .gen_bool(0.5)
        .then(|| (0..n).map(|_| rng.gen_bool(0.8)).collect::<Vec<_>>());
    FlowField::from_parts(w, h, u, v, valid).unwrap()
}

fn bit_equal(a: &FlowField, b: &FlowField) -> bool {
    a.width() == b.width()
        && a.height() == b.height()
        && (0..a.len()).all(|i| {
            a.is_valid(i) == b.is_valid(i)
                && (!a.is_valid(i) || (a.u()[i].to_bits() == b.u()[i].to_bits() && a.v()[i].to_bits() == b.v()[i].to_bits()))
        })
}

#[test]
fn flo_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let f = random_field(&mut rng, false);
        let bytes = write_flo(&f).unwrap();
        assert_eq!(bytes.len(), 12 + 8 * f.len());
        let back = read_flo(&bytes).unwrap();
        assert!(bit_equal(&f, &back));
        assert_eq!(write_flo(&back).unwrap(), bytes);
    }
}

#[test]
fn flo_matches_reference_writer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let f = random_field(&mut rng, false);
        let uv: Vec<(f32, f32)> = (0..f.len())
            .map(|i| if f.is_valid(i) { (f.u()[i], f.v()[i]) } else { (1e10, 1e10) })
            .collect();
        let reference = reference::flo_bytes(f.width() as u32, f.height() as u32, &uv);
        assert_eq!(write_flo(&f).unwrap(), reference);
        assert!(bit_equal(&read_flo(&reference).unwrap(), &f));
    }
}

#[test]
fn one_by_one_flo_is_twenty_bytes() {
    assert_eq!(write_flo(&FlowField::zeros(1, 1)).unwrap().len(), 20);
}

#[test]
fn flo_rejects_non_finite_valid_pixels() {
    let f = FlowField::from_parts(1, 1, vec![f32::NAN], vec![0.0], None);
    match f {
        Err(FlowIoError::NonFinite { .. }) => {}
        Ok(f) => assert!(write_flo(&f).is_err()),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn kitti_round_trip_on_grid_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let f = random_field(&mut rng, true);
        let bytes = write_kitti_png(&f).unwrap();
        let back = read_kitti_png(&bytes).unwrap();
        assert!(bit_equal(&f, &back));
    }
}

#[test]
fn kitti_reads_reference_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let f = random_field(&mut rng, true);
        let px: Vec<(f64, f64, bool)> =
            (0..f.len()).map(|i| (f.u()[i] as f64, f.v()[i] as f64, f.is_valid(i))).collect();
        let bytes = reference::kitti_png(f.width() as u32, f.height() as u32, &px);
        assert!(bit_equal(&read_kitti_png(&bytes).unwrap(), &f));
    }
}

#[test]
fn kitti_stored_values() {
    let rows = |f: &FlowField| {
        let bytes = write_kitti_png(f).unwrap();
        let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
        dec.set_transformations(png::Transformations::IDENTITY);
        let mut r = dec.read_info().unwrap();
        let mut buf = vec![0; r.output_buffer_size().unwrap()];
        r.next_frame(&mut buf).unwrap();
        buf.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect::<Vec<_>>()
    };
    assert_eq!(rows(&FlowField::zeros(1, 1)), vec![32768, 32768, 1]);
    assert_eq!(rows(&FlowField::constant(1, 1, 1.0, 0.0))[0], 32832);
    assert!(matches!(
        write_kitti_png(&FlowField::constant(1, 1, 600.0, 0.0)),
        Err(FlowIoError::OutOfRange { .. })
    ));
}

#[test]
fn png8_reads_reference_encoder() {
    let rows = vec![vec![1, 2, 3, 4, 5, 6], vec![7, 8, 9, 10, 11, 12]];
    let img = decode_png8(&reference::png_rgb(2, 2, 8, &rows)).unwrap();
    assert_eq!(img.get(1, 1), [10, 11, 12]);
    assert_eq!(decode_png8(&write_png8(&img).unwrap()).unwrap(), img);
}

#[test]
fn zero_flow_renders_white() {
    let img = flow_to_color(&FlowField::zeros(4, 3), None);
    assert!(img.data().iter().all(|&b| b == 255));
}

#[test]
fn unit_rightward_flow_is_saturated_red() {
    let img = flow_to_color(&FlowField::constant(1, 1, 5.0, 0.0), Some(5.0));
    assert_eq!(img.get(0, 0), [255, 0, 0]);
}

#[test]
fn radial_flow_matches_constructed_wheel() {
    let wheel = reference::reference_wheel();
    let size = 151;
    let c = (size / 2) as f32;
    let mut u = Vec::new();
    let mut v = Vec::new();
    for y in 0..size {
        for x in 0..size {
            u.push(x as f32 - c);
            v.push(y as f32 - c);
        }
    }
    let f = FlowField::from_parts(size, size, u, v, None).unwrap();
    let img: RgbImage = flow_to_color(&f, Some(c as f64));
    let mut worst = 0.0f64;
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let want = reference::reference_color(&wheel, f.u()[i] as f64 / c as f64, f.v()[i] as f64 / c as f64);
            let got = img.get(x, y);
            for k in 0..3 {
                worst = worst.max((got[k] as f64 - want[k].floor()).abs());
            }
        }
    }
    assert!(worst <= 1.0, "max deviation {worst}");
}
