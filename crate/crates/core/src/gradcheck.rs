//! Gradient verification: finite-difference sweeps against the replay
//! gradient, and dot-product tests for hand-written adjoints.
//!
//! The sweep holds the random draws and the log-compression level fixed,
//! so central differences and the replay gradient differentiate exactly
//! the same deterministic function. The relative error over step sizes
//! traces the usual U shape: floating-point cancellation dominates small
//! steps, truncation and discrete-decision flips dominate large ones.

use crate::imaging::{das_adjoint, das_forward, BeamformGrid, Normalization};
use crate::objective::{evaluate, fd_loss, simulate_angle, Problem};
use crate::optimize::params::ParamTarget;
use crate::rng::{u01, Stream};
use crate::transducer::TransducerArray;
use crate::transport::{ChannelData, TransportError};

/// Step sizes 1e-7 .. 1e-1, four per decade.
pub fn eps_grid() -> Vec<f64> {
    (0..=24).map(|k| 10f64.powf(-7.0 + k as f64 / 4.0)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct SweepPoint {
    pub eps: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub name: String,
    pub target: ParamTarget,
    /// Replay (dual-number) gradient at the base point.
    pub ad: f64,
    pub points: Vec<SweepPoint>,
    /// Smallest relative error across the sweep.
    pub best_rel_err: f64,
}

impl SweepResult {
    /// True when the error-vs-step curve is not monotone: it improves and
    /// then degrades again somewhere, the signature of the two opposing
    /// error regimes.
    pub fn error_curve_is_nonmonotone(&self) -> bool {
        let e: Vec<f64> = self.points.iter().map(|p| p.rel_err).collect();
        let dec = e.windows(2).any(|w| w[1] < w[0]);
        let inc_after_dec = {
            let mut seen_dec = false;
            let mut found = false;
            for w in e.windows(2) {
                if w[1] < w[0] {
                    seen_dec = true;
                } else if seen_dec && w[1] > w[0] {
                    found = true;
                }
            }
            found
        };
        dec && inc_after_dec
    }
}

fn rel_err(fd: f64, ad: f64) -> f64 {
    (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-300)
}

/// Peak envelope amplitude over all angles at the current parameters; used
/// to pin the log-compression level for a whole sweep.
pub fn peak_envelope(p: &Problem) -> f64 {
    let mut peak = 0.0f64;
    for a in 0..p.angles.len() {
        let sim = simulate_angle(p, a);
        let rf = das_forward(
            &sim.channel,
            &p.array,
            &p.grid,
            p.c0(),
            p.angles[a],
        );
        let env = crate::imaging::envelope(&rf, &p.grid, p.f_c, p.c0());
        peak = env.env.iter().cloned().fold(peak, f64::max);
    }
    peak.max(1e-300)
}

/// Sweep finite-difference steps for each target and compare against the
/// replay gradient of the same frozen-sample objective.
pub fn run_sweep(
    base: &Problem,
    targets: &[(String, ParamTarget)],
    references: &[Vec<f64>],
) -> Result<Vec<SweepResult>, TransportError> {
    // Freeze the normalization at the base point so every evaluation in
    // the sweep shares one compression level.
    let mut p = base.clone();
    p.normalization = Normalization::Fixed(peak_envelope(base));

    let target_list: Vec<ParamTarget> = targets.iter().map(|(_, t)| *t).collect();
    let out = evaluate(&p, &target_list, references)?;

    let mut results = Vec::new();
    for (i, (name, target)) in targets.iter().enumerate() {
        let ad = out.grad[i];
        let scale = p.read(*target).abs().max(1.0);
        let mut points = Vec::new();
        let mut best = f64::INFINITY;
        for eps in eps_grid() {
            let fd = fd_loss(&p, *target, references, eps * scale);
            let r = rel_err(fd, ad);
            best = best.min(r);
            points.push(SweepPoint {
                eps: eps * scale,
                fd,
                rel_err: r,
            });
        }
        results.push(SweepResult {
            name: name.clone(),
            target: *target,
            ad,
            points,
            best_rel_err: best,
        });
    }
    Ok(results)
}

/// Randomized dot-product identity check <A x, y> = <x, A' y> for the
/// delay-and-sum pair over `n_pairs` random vector pairs and a mix of
/// steering angles. Returns the worst relative mismatch.
pub fn das_dot_product_test(seed: u64, n_pairs: usize) -> f64 {
    let array = TransducerArray::new(32, 0.3, 20f64.to_radians(), 60f64.to_radians());
    let grid = BeamformGrid::new(-4.0, 4.0, 2.0, 28.0, 33, 65);
    let mut worst = 0.0f64;
    for pair in 0..n_pairs {
        let angle = (u01(seed, pair as u64, 0, Stream::EmitJitter) - 0.5) * 0.4;
        let mut ch = ChannelData::zeros(32, 2048, 40e6);
        for (i, v) in ch.values.iter_mut().enumerate() {
            *v = u01(seed ^ 0xA5A5, (pair * 100_000 + i) as u64, 1, Stream::Branch) * 2.0 - 1.0;
        }
        let y: Vec<f64> = (0..grid.len())
            .map(|i| u01(seed ^ 0x5A5A, (pair * 100_000 + i) as u64, 2, Stream::Branch) * 2.0 - 1.0)
            .collect();
        let ax = das_forward(&ch, &array, &grid, 1480.0, angle);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        das_adjoint(&y, &mut ch, &array, &grid, 1480.0, angle);
        let rhs: f64 = ch
            .values
            .iter()
            .zip(&ch.adjoint)
            .map(|(a, b)| a * b)
            .sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::pixel_delay;

    #[test]
    fn epsilon_grid_spans_six_decades() {
        let g = eps_grid();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-7).abs() < 1e-20);
        assert!((g[24] - 1e-1).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn dot_product_identity_holds_for_correct_adjoint() {
        assert!(das_dot_product_test(7, 10) <= 1e-12);
    }

    #[test]
    fn dot_product_test_catches_swapped_interpolation_weights() {
        // Same scatter as the real adjoint but with the two tap weights
        // exchanged: a classic transposition bug the identity must flag.
        let buggy_adjoint = |adj_rf: &[f64],
                             ch: &mut ChannelData,
                             array: &TransducerArray<f64>,
                             grid: &BeamformGrid,
                             c0: f64,
                             angle: f64| {
            for iz in 0..grid.nz {
                for ix in 0..grid.nx {
                    let a = adj_rf[iz * grid.nx + ix];
                    for e in 0..ch.n_elements {
                        let s = pixel_delay(array, angle, c0, grid.x(ix), grid.z(iz), e) * ch.fs;
                        let k = s.floor();
                        if k < 0.0 || k as usize + 1 >= ch.n_samples {
                            continue;
                        }
                        let k = k as usize;
                        let frac = s - k as f64;
                        let base = e * ch.n_samples + k;
                        ch.adjoint[base] += frac * a;
                        ch.adjoint[base + 1] += (1.0 - frac) * a;
                    }
                }
            }
        };
        let array = TransducerArray::new(16, 0.3, 20f64.to_radians(), 60f64.to_radians());
        let grid = BeamformGrid::new(-3.0, 3.0, 2.0, 20.0, 17, 33);
        let mut ch = ChannelData::zeros(16, 1024, 40e6);
        for (i, v) in ch.values.iter_mut().enumerate() {
            *v = u01(1, i as u64, 0, Stream::Branch) * 2.0 - 1.0;
        }
        let y: Vec<f64> = (0..grid.len())
            .map(|i| u01(2, i as u64, 0, Stream::Branch) * 2.0 - 1.0)
            .collect();
        let ax = das_forward(&ch, &array, &grid, 1480.0, 0.07);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        buggy_adjoint(&y, &mut ch, &array, &grid, 1480.0, 0.07);
        let rhs: f64 = ch
            .values
            .iter()
            .zip(&ch.adjoint)
            .map(|(a, b)| a * b)
            .sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        assert!(rel > 1e-6, "seeded bug evaded the identity: rel {rel}");
    }

    #[test]
    fn nonmonotone_detector() {
        let mk = |errs: &[f64]| SweepResult {
            name: "x".into(),
            target: ParamTarget::Pitch,
            ad: 1.0,
            points: errs
                .iter()
                .map(|&e| SweepPoint {
                    eps: 1.0,
                    fd: 1.0,
                    rel_err: e,
                })
                .collect(),
            best_rel_err: 0.0,
        };
        assert!(mk(&[1.0, 0.1, 0.01, 0.1, 1.0]).error_curve_is_nonmonotone());
        assert!(!mk(&[1.0, 0.1, 0.01]).error_curve_is_nonmonotone());
        assert!(!mk(&[0.01, 0.1, 1.0]).error_curve_is_nonmonotone());
    }
}
