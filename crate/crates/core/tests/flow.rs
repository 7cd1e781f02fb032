mod common;

use mbnet::flow::flo::{read_flo, write_flo};
use mbnet::flow::*;

const SIZE: usize = 64;

fn translated_pair(seed: u64, dx: f32, dy: f32) -> (GrayImage, GrayImage) {
    common::translated_pair(SIZE, seed, dx, dy)
}

fn interior_mean(values: &[f32]) -> f32 {
    let (x0, x1) = central_window(SIZE, 0.8);
    let mut sum = 0.0;
    for y in x0..x1 {
        for x in x0..x1 {
            sum += values[y * SIZE + x];
        }
    }
    sum / ((x1 - x0) * (x1 - x0)) as f32
}

#[test]
fn identical_frames_give_zero_flow() {
    let (a, _) = translated_pair(1, 0.0, 0.0);
    for params in [TvL1Params::default(), TvL1Params { lambda: 0.05, warps_per_level: 2, ..Default::default() }] {
        let f = estimate_flow(&a, &a, &params).unwrap();
        let mag: f32 = f.u().iter().chain(f.v()).map(|x| x.abs()).sum::<f32>() / (2 * SIZE * SIZE) as f32;
        assert!(mag <= 0.05, "{mag}");
    }
}

#[test]
fn horizontal_translation() {
    let (a, b) = translated_pair(2, 3.0, 0.0);
    let f = estimate_flow(&a, &b, &TvL1Params::default()).unwrap();
    let (mu, mv) = (interior_mean(f.u()), interior_mean(f.v()));
    assert!((2.75..=3.25).contains(&mu), "mean u {mu}");
    assert!((-0.25..=0.25).contains(&mv), "mean v {mv}");
}

#[test]
fn diagonal_pan() {
    let (a, b) = translated_pair(3, 2.0, 1.0);
    let f = estimate_flow(&a, &b, &TvL1Params::default()).unwrap();
    let (frac, _) = f.endpoint_error_stats(&FlowField::constant(SIZE, SIZE, 2.0, 1.0), 0.8, 0.5);
    assert!(frac >= 0.9, "{frac}");
}

#[test]
fn reversed_pair_is_antisymmetric() {
    let (a, b) = translated_pair(4, -2.5, 1.5);
    let params = TvL1Params::default();
    let fwd = estimate_flow(&a, &b, &params).unwrap();
    let bwd = estimate_flow(&b, &a, &params).unwrap();
    let sum_u: Vec<f32> = fwd.u().iter().zip(bwd.u()).map(|(p, q)| (p + q).abs()).collect();
    let sum_v: Vec<f32> = fwd.v().iter().zip(bwd.v()).map(|(p, q)| (p + q).abs()).collect();
    let discrepancy = interior_mean(&sum_u) + interior_mean(&sum_v);
    assert!(discrepancy <= 0.5, "{discrepancy}");
}

#[test]
fn finest_energy_never_increases() {
    for (seed, d) in [(5, (3.0, 0.0)), (6, (-3.7, 2.2)), (7, (1.2, -0.4))] {
        let (a, b) = translated_pair(seed, d.0, d.1);
        let (flow, log) = estimate_flow_logged(&a, &b, &TvL1Params::default()).unwrap();
        assert!(!log.finest_energies.is_empty());
        for w in log.finest_energies.windows(2) {
            assert!(w[1] <= w[0], "{:?}", log.finest_energies);
        }
        let last = *log.finest_energies.last().unwrap();
        let recomputed = tvl1_energy(&a, &b, &flow, TvL1Params::default().lambda);
        assert!((recomputed - last).abs() <= 1e-6 * last.max(1.0), "{recomputed} vs {last}");
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let (a, b) = translated_pair(8, 1.5, -2.0);
    let params = TvL1Params::default();
    assert_eq!(estimate_flow(&a, &b, &params).unwrap(), estimate_flow(&a, &b, &params).unwrap());
}

#[test]
fn non_finite_pixels_rejected() {
    let a = GrayImage::from_fn(8, 8, |_, _| 0.5);
    let mut data = a.data().to_vec();
    data[3] = f32::NAN;
    assert!(GrayImage::new(8, 8, data).is_err());
}

#[test]
fn estimated_flow_survives_flo_round_trip() {
    let (a, b) = translated_pair(9, 1.0, 1.0);
    let f = estimate_flow(&a, &b, &TvL1Params::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.flo");
    write_flo(&path, &f).unwrap();
    assert_eq!(read_flo(&path).unwrap(), f);
}
