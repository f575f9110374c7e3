//! Parameter handling and optimization: box-constrained parameterization,
//! the weighted image loss, Adam with per-parameter learning rates, global
//! gradient-norm clipping, and the deterministic micro-batch partition.

use crate::math::MAX_GRAD;

/// Binding of optimizable quantities inside a transport setup, and the
/// lifting of a scalar setup into dual numbers with one gradient slot per
/// bound parameter.
pub mod params {
    use crate::math::{Dual, Vec3, MAX_GRAD};
    use crate::scene::{lift_scene, Shape};
    use crate::transducer::{make_event, TransducerArray};
    use crate::transport::{Pulse, TraceParams};

    /// A differentiable quantity inside the simulation.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum ParamTarget {
        /// Impedance of medium `i`, MRayl.
        MediumImpedance(usize),
        /// Attenuation of medium `i`, Np/m.
        MediumAttenuation(usize),
        /// GGX roughness of surface `i`.
        SurfaceRoughness(usize),
        /// Radius of the circular surface `i`, mm.
        SurfaceRadius(usize),
        /// Element pitch, mm.
        Pitch,
        /// Pulse center frequency, Hz.
        CenterFrequency,
    }

    /// Read the current physical value of a target out of a setup.
    pub fn read_target(p: &TraceParams<f64>, f_c: f64, t: ParamTarget) -> f64 {
        match t {
            ParamTarget::MediumImpedance(i) => p.scene.media[i].impedance,
            ParamTarget::MediumAttenuation(i) => p.scene.media[i].attenuation,
            ParamTarget::SurfaceRoughness(i) => p.scene.surfaces[i].roughness,
            ParamTarget::SurfaceRadius(i) => match &p.scene.surfaces[i].shape {
                Shape::Cylinder { radius, .. } => *radius,
                other => panic!("surface {i} has no radius: {other:?}"),
            },
            ParamTarget::Pitch => p.array.pitch,
            ParamTarget::CenterFrequency => f_c,
        }
    }

    /// Write a physical value into a setup (finite differencing and
    /// optimizer updates share this path).
    pub fn write_target(p: &mut TraceParams<f64>, f_c: &mut f64, t: ParamTarget, v: f64) {
        match t {
            ParamTarget::MediumImpedance(i) => p.scene.media[i].impedance = v,
            ParamTarget::MediumAttenuation(i) => p.scene.media[i].attenuation = v,
            ParamTarget::SurfaceRoughness(i) => p.scene.surfaces[i].roughness = v,
            ParamTarget::SurfaceRadius(i) => match &mut p.scene.surfaces[i].shape {
                Shape::Cylinder { radius, .. } => *radius = v,
                other => panic!("surface {i} has no radius: {other:?}"),
            },
            ParamTarget::Pitch => {
                p.array.pitch = v;
                // Delays depend on the pitch; rebuild the event.
                let c0 = p.scene.media[p.scene.background].sound_speed;
                p.event = make_event(&p.array, p.event.angle, c0, p.event.rays_per_element);
            }
            ParamTarget::CenterFrequency => *f_c = v,
        }
    }

    /// Dual-number view of a setup with each target seeded into its own
    /// gradient slot, in order.
    pub struct Lifted {
        pub trace: TraceParams<Dual>,
        pub pulse: Pulse<Dual>,
        pub n_active: usize,
    }

    pub fn lift_params(
        base: &TraceParams<f64>,
        f_c: f64,
        n_cycles: f64,
        targets: &[ParamTarget],
    ) -> Lifted {
        assert!(
            targets.len() <= MAX_GRAD,
            "at most {MAX_GRAD} simultaneous parameters"
        );
        let mut scene = lift_scene::<Dual>(&base.scene);
        let mut pitch = Dual::constant(base.array.pitch);
        let mut fc = Dual::constant(f_c);
        for (slot, t) in targets.iter().enumerate() {
            let v = read_target(base, f_c, *t);
            let var = Dual::variable(v, slot);
            match t {
                ParamTarget::MediumImpedance(i) => scene.media[*i].impedance = var,
                ParamTarget::MediumAttenuation(i) => scene.media[*i].attenuation = var,
                ParamTarget::SurfaceRoughness(i) => scene.surfaces[*i].roughness = var,
                ParamTarget::SurfaceRadius(i) => match &mut scene.surfaces[*i].shape {
                    Shape::Cylinder { radius, .. } => *radius = var,
                    other => panic!("surface {i} has no radius: {other:?}"),
                },
                ParamTarget::Pitch => pitch = var,
                ParamTarget::CenterFrequency => fc = var,
            }
        }
        let array = TransducerArray {
            n_elements: base.array.n_elements,
            pitch,
            normal: Vec3::splat_const(0.0, 0.0, 1.0),
            main_lobe: base.array.main_lobe,
            cutoff: base.array.cutoff,
        };
        let c0 = scene.media[scene.background].sound_speed;
        let event = make_event(&array, base.event.angle, c0, base.event.rays_per_element);
        Lifted {
            trace: TraceParams {
                scene,
                array,
                event,
                seed: base.seed,
                max_bounces: base.max_bounces,
                n_paths: base.n_paths,
                spreading: base.spreading,
            },
            pulse: Pulse::from_cycles(fc, n_cycles),
            n_active: targets.len(),
        }
    }
}

/// Clip to [0, 1]. Returns the value and the pass-through factor for the
/// backward pass: 1 strictly inside the box, 0 at or beyond either bound,
/// so a saturated parameter stops receiving gradient.
pub fn clip01(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x >= 1.0 {
        (1.0, 0.0)
    } else {
        (x, 1.0)
    }
}

/// One optimizable scalar with its box constraint. The raw value `theta`
/// is unconstrained; the physical value is
/// `min + clip01(theta) * (max - min)`.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub target: params::ParamTarget,
    pub min: f64,
    pub max: f64,
    pub theta: f64,
    /// Learning rate for this parameter's group.
    pub lr: f64,
}

impl ParamSpec {
    /// Start from a physical value; the raw coordinate is its normalized
    /// position in the box.
    pub fn from_physical(
        name: &str,
        target: params::ParamTarget,
        min: f64,
        max: f64,
        value: f64,
        lr: f64,
    ) -> Self {
        assert!(max > min, "empty parameter range for {name}");
        ParamSpec {
            name: name.to_string(),
            target,
            min,
            max,
            theta: (value - min) / (max - min),
            lr,
        }
    }

    pub fn physical(&self) -> f64 {
        let (c, _) = clip01(self.theta);
        self.min + c * (self.max - self.min)
    }

    /// Chain a gradient w.r.t. the physical value back to `theta`.
    pub fn backward(&self, d_physical: f64) -> f64 {
        let (_, pass) = clip01(self.theta);
        d_physical * (self.max - self.min) * pass
    }
}

/// Mean of a weighted sum of absolute and squared pixel errors,
/// L = (w1 * sum|I - R| + w2 * sum (I - R)^2) / N.
/// Returns the loss and dL/dI; the derivative of |.| at zero is taken as 0.
pub fn image_loss(img: &[f64], reference: &[f64], w1: f64, w2: f64) -> (f64, Vec<f64>) {
    assert_eq!(img.len(), reference.len());
    let n = img.len() as f64;
    let mut loss = 0.0;
    let mut adj = vec![0.0; img.len()];
    for i in 0..img.len() {
        let d = img[i] - reference[i];
        loss += w1 * d.abs() + w2 * d * d;
        adj[i] = (w1 * sign0(d) + 2.0 * w2 * d) / n;
    }
    (loss / n, adj)
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Scale the gradient vector so its Euclidean norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Adam with bias correction; learning rates are supplied per parameter so
/// parameter groups reduce to a rate vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, thetas: &mut [f64], grads: &[f64], lrs: &[f64]) {
        assert_eq!(thetas.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        assert_eq!(lrs.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..thetas.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            thetas[i] -= lrs[i] * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One micro-batch: a transmit-angle index and a contiguous ray range of
/// that angle's paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicroBatch {
    pub angle_index: usize,
    pub rays: std::ops::Range<u64>,
}

/// Exact deterministic partition of the work (all angles, all rays) into
/// `ray_batches` contiguous ray ranges per angle. Every path index appears
/// exactly once regardless of the batch count, so batched and unbatched
/// runs accumulate identical sums.
pub fn microbatch_plan(n_angles: usize, n_paths: u64, ray_batches: usize) -> Vec<MicroBatch> {
    assert!(ray_batches >= 1);
    let b = (ray_batches as u64).min(n_paths.max(1));
    let mut plan = Vec::new();
    for angle_index in 0..n_angles {
        let mut start = 0u64;
        for k in 0..b {
            // Even split with remainder spread over the leading batches.
            let len = n_paths / b + u64::from(k < n_paths % b);
            plan.push(MicroBatch {
                angle_index,
                rays: start..start + len,
            });
            start += len;
        }
        debug_assert_eq!(start, n_paths);
    }
    plan
}

/// Per-iteration record written to the optimization history.
#[derive(Clone, Debug)]
pub struct IterationLog {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub physical: Vec<f64>,
}

/// Gradient slots sanity guard shared by callers.
pub fn check_slots(n: usize) {
    assert!(n <= MAX_GRAD, "at most {MAX_GRAD} simultaneous parameters");
}

/// Adam loop over the frozen-sample objective. The seed stays fixed for
/// the whole run (common random numbers), so with a reference rendered
/// under the same seed the loss can reach zero at the true parameters.
///
/// Each [`IterationLog`] carries the loss and gradient norm evaluated at
/// the pre-update parameters and the physical values after the update.
pub fn run_optimization(
    problem: &mut crate::objective::Problem,
    specs: &mut [ParamSpec],
    references: &[Vec<f64>],
    iterations: usize,
    max_grad_norm: f64,
    mut on_iter: impl FnMut(&IterationLog),
) -> Result<Vec<IterationLog>, crate::transport::TransportError> {
    check_slots(specs.len());
    let targets: Vec<params::ParamTarget> = specs.iter().map(|s| s.target).collect();
    let lrs: Vec<f64> = specs.iter().map(|s| s.lr).collect();
    let mut adam = Adam::new(specs.len());
    let mut history = Vec::with_capacity(iterations);
    for iteration in 0..iterations {
        for s in specs.iter() {
            problem.write(s.target, s.physical());
        }
        let out = crate::objective::evaluate(problem, &targets, references)?;
        let mut grads: Vec<f64> = specs
            .iter()
            .zip(&out.grad)
            .map(|(s, g)| s.backward(*g))
            .collect();
        let grad_norm = clip_global_norm(&mut grads, max_grad_norm);
        let mut thetas: Vec<f64> = specs.iter().map(|s| s.theta).collect();
        adam.step(&mut thetas, &grads, &lrs);
        for (s, t) in specs.iter_mut().zip(&thetas) {
            s.theta = *t;
        }
        let log = IterationLog {
            iteration,
            loss: out.loss,
            grad_norm,
            physical: specs.iter().map(|s| s.physical()).collect(),
        };
        on_iter(&log);
        history.push(log);
    }
    for s in specs.iter() {
        problem.write(s.target, s.physical());
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_interior_boundary_and_outside() {
        assert_eq!(clip01(0.5), (0.5, 1.0));
        assert_eq!(clip01(0.0), (0.0, 0.0));
        assert_eq!(clip01(1.0), (1.0, 0.0));
        assert_eq!(clip01(-0.3), (0.0, 0.0));
        assert_eq!(clip01(1.7), (1.0, 0.0));
        assert_eq!(clip01(1e-12), (1e-12, 1.0));
    }

    #[test]
    fn spec_maps_between_raw_and_physical() {
        let s = ParamSpec::from_physical(
            "z",
            params::ParamTarget::MediumImpedance(0),
            1.0,
            3.0,
            1.5,
            0.1,
        );
        assert!((s.theta - 0.25).abs() < 1e-15);
        assert!((s.physical() - 1.5).abs() < 1e-15);
        // Interior: dphys/dtheta = max - min.
        assert!((s.backward(1.0) - 2.0).abs() < 1e-15);
        // Saturated: no gradient flows.
        let mut hi = s.clone();
        hi.theta = 1.2;
        assert_eq!(hi.physical(), 3.0);
        assert_eq!(hi.backward(5.0), 0.0);
        let mut lo = s;
        lo.theta = -0.1;
        assert_eq!(lo.physical(), 1.0);
        assert_eq!(lo.backward(5.0), 0.0);
    }

    #[test]
    fn image_loss_matches_finite_differences() {
        let img = vec![0.2, 0.9, 0.4, 0.0];
        let rf = vec![0.1, 0.9, 0.8, 0.3];
        let (l0, adj) = image_loss(&img, &rf, 0.7, 1.3);
        // Pixel 1 has zero error; sign(0) = 0.
        assert_eq!(adj[1], 0.0);
        let eps = 1e-7;
        for i in [0usize, 2, 3] {
            let mut up = img.clone();
            up[i] += eps;
            let mut dn = img.clone();
            dn[i] -= eps;
            let fd = (image_loss(&up, &rf, 0.7, 1.3).0 - image_loss(&dn, &rf, 0.7, 1.3).0)
                / (2.0 * eps);
            assert!((fd - adj[i]).abs() < 1e-6, "pixel {i}: fd {fd}, adj {}", adj[i]);
        }
        // Normalization by pixel count.
        let manual: f64 = img
            .iter()
            .zip(&rf)
            .map(|(a, b)| 0.7 * (a - b).abs() + 1.3 * (a - b) * (a - b))
            .sum::<f64>()
            / 4.0;
        assert!((l0 - manual).abs() < 1e-15);
    }

    #[test]
    fn global_norm_clipping() {
        let mut g = vec![3.0, 4.0];
        let n = clip_global_norm(&mut g, 10.0);
        assert_eq!(n, 5.0);
        assert_eq!(g, vec![3.0, 4.0]);
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_scalar_reference() {
        // Independent per-coordinate reference implementation.
        let grads = [
            [0.3, -1.0],
            [0.25, -0.8],
            [0.1, 0.4],
            [-0.2, 0.9],
            [0.05, -0.3],
        ];
        let lrs = [0.01, 0.002];
        let mut theta = [1.0, -2.0];
        let mut opt = Adam::new(2);
        for g in grads {
            opt.step(&mut theta, &g, &lrs);
        }
        for c in 0..2 {
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            let (mut m, mut v, mut x) = (0.0f64, 0.0f64, [1.0, -2.0][c]);
            for (t, g) in grads.iter().enumerate() {
                let g = g[c];
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mh = m / (1.0 - b1.powi(t as i32 + 1));
                let vh = v / (1.0 - b2.powi(t as i32 + 1));
                x -= lrs[c] * mh / (vh.sqrt() + eps);
            }
            assert!(
                (theta[c] - x).abs() < 1e-15,
                "coord {c}: {} vs {x}",
                theta[c]
            );
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut theta = [0.0];
        let mut opt = Adam::new(1);
        opt.step(&mut theta, &[0.5], &[0.01]);
        assert!((theta[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn microbatch_partition_is_exact() {
        for (angles, paths, batches) in
            [(1usize, 100u64, 1usize), (3, 100, 4), (2, 7, 4), (1, 3, 8)]
        {
            let plan = microbatch_plan(angles, paths, batches);
            for a in 0..angles {
                let mut covered = vec![false; paths as usize];
                for mb in plan.iter().filter(|m| m.angle_index == a) {
                    for i in mb.rays.clone() {
                        assert!(!covered[i as usize], "path {i} covered twice");
                        covered[i as usize] = true;
                    }
                }
                assert!(covered.iter().all(|&c| c), "incomplete cover");
            }
        }
    }

    #[test]
    fn read_write_targets_round_trip() {
        use params::{read_target, write_target, ParamTarget};
        use crate::scene::{Medium, Scene, Shape, Surface};
        use crate::transducer::{make_event, TransducerArray};
        use crate::transport::TraceParams;
        use crate::math::Vec3;
        let scene = Scene {
            media: vec![Medium {
                impedance: 1.48,
                sound_speed: 1480.0,
                attenuation: 2.0,
            }],
            medium_names: vec!["water".into()],
            surfaces: vec![Surface {
                name: "c".into(),
                shape: Shape::Cylinder {
                    center: Vec3::new(0.0, 0.0, 20.0),
                    radius: 5.0,
                },
                roughness: 0.3,
                inside: 0,
                outside: 0,
            }],
            background: 0,
        };
        let array = TransducerArray::new(8, 0.3, 0.3, 1.0);
        let event = make_event(&array, 0.1, 1480.0, 4);
        let mut p = TraceParams {
            scene,
            array,
            event,
            seed: 0,
            max_bounces: 2,
            n_paths: 32,
            spreading: false,
        };
        let mut fc = 5e6;
        for (t, v) in [
            (ParamTarget::MediumImpedance(0), 1.7),
            (ParamTarget::MediumAttenuation(0), 3.5),
            (ParamTarget::SurfaceRoughness(0), 0.45),
            (ParamTarget::SurfaceRadius(0), 4.25),
            (ParamTarget::Pitch, 0.25),
            (ParamTarget::CenterFrequency, 6e6),
        ] {
            write_target(&mut p, &mut fc, t, v);
            assert_eq!(read_target(&p, fc, t), v);
        }
        // Writing the pitch rebuilds the steering delays.
        let span = p.array.element_position(7).x - p.array.element_position(0).x;
        assert!((span - 7.0 * 0.25).abs() < 1e-12);
        assert!(p.event.delays.iter().any(|&d| d > 0.0));
    }

    #[test]
    fn lifted_setup_seeds_requested_slots() {
        use params::{lift_params, ParamTarget};
        let scene = crate::scene::Scene {
            media: vec![crate::scene::Medium {
                impedance: 1.48,
                sound_speed: 1480.0,
                attenuation: 0.0,
            }],
            medium_names: vec!["water".into()],
            surfaces: vec![],
            background: 0,
        };
        let array = TransducerArrayF::new(8, 0.3, 0.3, 1.0);
        let event = crate::transducer::make_event(&array, 0.0, 1480.0, 4);
        let p = crate::transport::TraceParams {
            scene,
            array,
            event,
            seed: 0,
            max_bounces: 2,
            n_paths: 32,
            spreading: false,
        };
        let lifted = lift_params(
            &p,
            5e6,
            3.0,
            &[ParamTarget::Pitch, ParamTarget::CenterFrequency],
        );
        assert_eq!(lifted.n_active, 2);
        assert_eq!(lifted.trace.array.pitch.v, 0.3);
        assert_eq!(lifted.trace.array.pitch.d[0], 1.0);
        assert_eq!(lifted.trace.array.pitch.d[1], 0.0);
        assert_eq!(lifted.pulse.f_c.v, 5e6);
        assert_eq!(lifted.pulse.f_c.d[1], 1.0);
        // sigma = (n/2fc)^2 depends on fc, so its slot-1 derivative is live.
        assert!(lifted.pulse.sigma.d[1] != 0.0);
    }

    type TransducerArrayF = crate::transducer::TransducerArray<f64>;
}
