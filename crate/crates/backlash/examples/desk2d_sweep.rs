// dev scratch: tube-check excess vs step size on DESK-2D (one period)
use backlash::convex_sets::unit_directions;
use backlash::linear_subsystem::{linearized_response, PeriodicInput, PlantModel};
use backlash::localization::{build_tube, tube_check};
use backlash::sweeping_sim::{simulate, SimConfig};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

fn main() {
    let model = PlantModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, -0.5]),
    )
    .unwrap();
    let theta = backlash::convex_sets::ConvexCompact::ball(DVector::zeros(1), 0.2).unwrap();
    let period = 2.0 * std::f64::consts::PI;
    let input = PeriodicInput::new(
        period,
        DVector::zeros(1),
        vec![(DVector::zeros(1), DVector::from_vec(vec![100.0]))],
    )
    .unwrap();

    let count = 256;
    let times: Vec<f64> = (1..=count)
        .map(|k| period * k as f64 / count as f64)
        .collect();
    let tube = build_tube(&model, &theta, &times).unwrap();
    let xis = linearized_response(&model, &input, &DVector::zeros(2), &times).unwrap();
    let dirs = unit_directions(2, 512);

    for steps in [4096usize, 16384, 65536, 262144, 1048576] {
        let t0 = Instant::now();
        let cfg = SimConfig::new(steps, 1, DVector::zeros(2), DVector::zeros(1));
        let traj = simulate(&model, &theta, &input, &cfg).unwrap();
        let sim_t = t0.elapsed();
        let xs: Vec<DVector<f64>> = (1..=count)
            .map(|k| traj.x()[k * steps / count].clone())
            .collect();
        let t0 = Instant::now();
        let report = tube_check(&tube, &xs, &xis, &dirs, 1e-6).unwrap();
        println!(
            "steps/period {steps:>8}: max excess {:+.6e}, violations {}, sim {:?}, check {:?}",
            report.max_violation, report.violation_count, sim_t, t0.elapsed()
        );
    }
}
