//! End-to-end objective: scene and acquisition parameters to B-mode
//! images to a scalar image loss, with the matching gradient.
//!
//! The random draws are frozen by the seed, so repeated evaluations at
//! different parameter values differ only through the deterministic
//! computation. That makes the estimator a fixed differentiable function
//! of the parameters: gradients come from replaying the recorded paths
//! with dual numbers, and finite differences of the same function agree
//! with them.

use crate::imaging::{bmode_forward, bmode_vjp, BeamformGrid, BmodeSettings, Normalization};
use crate::optimize::params::{lift_params, ParamTarget};
use crate::optimize::{image_loss, microbatch_plan};
use crate::scene::{Scene, Shape};
use crate::transducer::{make_event, TransducerArray};
use crate::transport::{
    deposit_arrivals, trace_range, transport_vjp, ChannelData, PathRecord, Pulse, TraceParams,
    TransportError,
};

/// Full description of one simulation/optimization setup.
#[derive(Clone)]
pub struct Problem {
    pub scene: Scene<f64>,
    pub array: TransducerArray<f64>,
    /// Plane-wave steering angles, rad. Each angle is simulated and scored
    /// independently.
    pub angles: Vec<f64>,
    pub rays_per_element: usize,
    pub max_bounces: u32,
    pub seed: u64,
    /// Pulse center frequency, Hz.
    pub f_c: f64,
    pub n_cycles: f64,
    /// Channel sampling rate, Hz.
    pub fs: f64,
    pub n_samples: usize,
    pub grid: BeamformGrid,
    pub dynamic_range_db: f64,
    pub normalization: Normalization,
    pub w_l1: f64,
    pub w_l2: f64,
    /// Ray micro-batches per angle; any value yields the same sums.
    pub ray_batches: usize,
    pub spreading: bool,
}

impl Problem {
    pub fn n_paths(&self) -> u64 {
        (self.array.n_elements * self.rays_per_element) as u64
    }

    pub fn c0(&self) -> f64 {
        self.scene.media[self.scene.background].sound_speed
    }

    /// Per-angle seed, decorrelated across angles.
    fn angle_seed(&self, angle_index: usize) -> u64 {
        self.seed
            .wrapping_add((angle_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn trace_params(&self, angle_index: usize) -> TraceParams<f64> {
        TraceParams {
            scene: self.scene.clone(),
            array: self.array.clone(),
            event: make_event(
                &self.array,
                self.angles[angle_index],
                self.c0(),
                self.rays_per_element,
            ),
            seed: self.angle_seed(angle_index),
            max_bounces: self.max_bounces,
            n_paths: self.n_paths(),
            spreading: self.spreading,
        }
    }

    fn bmode_settings(&self, angle_index: usize) -> BmodeSettings {
        BmodeSettings {
            c0: self.c0(),
            angle: self.angles[angle_index],
            f_c: self.f_c,
            dynamic_range_db: self.dynamic_range_db,
            normalization: self.normalization,
        }
    }

    pub fn read(&self, t: ParamTarget) -> f64 {
        match t {
            ParamTarget::MediumImpedance(i) => self.scene.media[i].impedance,
            ParamTarget::MediumAttenuation(i) => self.scene.media[i].attenuation,
            ParamTarget::SurfaceRoughness(i) => self.scene.surfaces[i].roughness,
            ParamTarget::SurfaceRadius(i) => match &self.scene.surfaces[i].shape {
                Shape::Cylinder { radius, .. } => *radius,
                other => panic!("surface {i} has no radius: {other:?}"),
            },
            ParamTarget::Pitch => self.array.pitch,
            ParamTarget::CenterFrequency => self.f_c,
        }
    }

    pub fn write(&mut self, t: ParamTarget, v: f64) {
        match t {
            ParamTarget::MediumImpedance(i) => self.scene.media[i].impedance = v,
            ParamTarget::MediumAttenuation(i) => self.scene.media[i].attenuation = v,
            ParamTarget::SurfaceRoughness(i) => self.scene.surfaces[i].roughness = v,
            ParamTarget::SurfaceRadius(i) => match &mut self.scene.surfaces[i].shape {
                Shape::Cylinder { radius, .. } => *radius = v,
                other => panic!("surface {i} has no radius: {other:?}"),
            },
            ParamTarget::Pitch => self.array.pitch = v,
            ParamTarget::CenterFrequency => self.f_c = v,
        }
    }
}

/// One simulated angle: the accumulated channel data and the path records
/// of every ray batch.
pub struct AngleSim {
    pub channel: ChannelData,
    pub batches: Vec<Vec<PathRecord>>,
    pub dropped: usize,
}

/// Trace all ray batches of one angle and accumulate them onto a single
/// channel-data grid. The batch boundaries never change the sums: the
/// batches partition the path indices exactly.
pub fn simulate_angle(p: &Problem, angle_index: usize) -> AngleSim {
    let tp = p.trace_params(angle_index);
    let pulse = Pulse::from_cycles(p.f_c, p.n_cycles);
    let mut channel = ChannelData::zeros(p.array.n_elements, p.n_samples, p.fs);
    let mut batches = Vec::new();
    let mut dropped = 0;
    for mb in microbatch_plan(1, p.n_paths(), p.ray_batches) {
        let (arrivals, records) = trace_range(&tp, mb.rays);
        dropped += deposit_arrivals(&arrivals, &pulse, &mut channel);
        batches.push(records);
    }
    AngleSim {
        channel,
        batches,
        dropped,
    }
}

/// Forward rendering output.
pub struct Rendered {
    /// One B-mode image per angle, stored on the problem grid.
    pub per_angle: Vec<Vec<f64>>,
    /// Pixel-wise mean over angles.
    pub compound: Vec<f64>,
    pub dropped: usize,
}

pub fn render(p: &Problem) -> Rendered {
    let mut per_angle = Vec::with_capacity(p.angles.len());
    let mut dropped = 0;
    for a in 0..p.angles.len() {
        let sim = simulate_angle(p, a);
        dropped += sim.dropped;
        let state = bmode_forward(&sim.channel, &p.array, &p.grid, &p.bmode_settings(a));
        per_angle.push(state.compressed.img);
    }
    let n = p.grid.len();
    let mut compound = vec![0.0; n];
    for img in &per_angle {
        for k in 0..n {
            compound[k] += img[k] / p.angles.len() as f64;
        }
    }
    Rendered {
        per_angle,
        compound,
        dropped,
    }
}

/// Loss and gradient of one full evaluation.
pub struct EvalOutput {
    /// Sum of per-angle losses.
    pub loss: f64,
    /// d loss / d physical value, ordered like `targets`.
    pub grad: Vec<f64>,
    pub per_angle_loss: Vec<f64>,
}

/// Evaluate the image loss against per-angle references. With an empty
/// target list this is a forward-only evaluation.
pub fn evaluate(
    p: &Problem,
    targets: &[ParamTarget],
    references: &[Vec<f64>],
) -> Result<EvalOutput, TransportError> {
    assert_eq!(references.len(), p.angles.len(), "one reference per angle");
    let mut loss = 0.0;
    let mut grad = vec![0.0; targets.len()];
    let mut per_angle_loss = Vec::with_capacity(p.angles.len());
    for a in 0..p.angles.len() {
        let mut sim = simulate_angle(p, a);
        let settings = p.bmode_settings(a);
        let state = bmode_forward(&sim.channel, &p.array, &p.grid, &settings);
        let (l, adj_img) = image_loss(&state.compressed.img, &references[a], p.w_l1, p.w_l2);
        loss += l;
        per_angle_loss.push(l);
        if targets.is_empty() {
            continue;
        }
        bmode_vjp(&state, &adj_img, &mut sim.channel, &p.array, &p.grid, &settings);
        let tp = p.trace_params(a);
        let lifted = lift_params(&tp, p.f_c, p.n_cycles, targets);
        for records in &sim.batches {
            let g = transport_vjp(&lifted.trace, records, &lifted.pulse, &sim.channel)?;
            for (s, gi) in grad.iter_mut().enumerate() {
                *gi += g[s];
            }
        }
    }
    Ok(EvalOutput {
        loss,
        grad,
        per_angle_loss,
    })
}

pub fn loss_only(p: &Problem, references: &[Vec<f64>]) -> f64 {
    evaluate(p, &[], references)
        .expect("forward-only evaluation cannot replay stale records")
        .loss
}

/// Central finite difference of the frozen-sample loss w.r.t. one target.
pub fn fd_loss(p: &Problem, target: ParamTarget, references: &[Vec<f64>], eps: f64) -> f64 {
    let v0 = p.read(target);
    let mut up = p.clone();
    up.write(target, v0 + eps);
    let mut dn = p.clone();
    dn.write(target, v0 - eps);
    (loss_only(&up, references) - loss_only(&dn, references)) / (2.0 * eps)
}
