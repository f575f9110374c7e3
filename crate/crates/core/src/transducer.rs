//! Linear array geometry, plane-wave transmit events, directivity weights,
//! and ray-emission sampling.
//!
//! The array lies along x at z = 0 with aperture normal +z. Element
//! positions derive from the pitch, so the pitch is a differentiable
//! acquisition parameter.

use crate::math::{orthonormal_basis, Real, Vec3};
use crate::rng::{self, Stream};

#[derive(Clone, Debug)]
pub struct TransducerArray<S> {
    pub n_elements: usize,
    /// Center-to-center element spacing, mm.
    pub pitch: S,
    pub normal: Vec3<S>,
    /// Receive main-lobe angle, rad.
    pub main_lobe: f64,
    /// Receive cutoff angle, rad.
    pub cutoff: f64,
}

impl<S: Real> TransducerArray<S> {
    pub fn new(n_elements: usize, pitch: S, main_lobe: f64, cutoff: f64) -> Self {
        assert!(n_elements >= 2, "need at least two elements");
        assert!(pitch.value() > 0.0, "pitch must be positive");
        assert!(
            0.0 < main_lobe && main_lobe < cutoff && cutoff <= std::f64::consts::FRAC_PI_2,
            "need 0 < main_lobe < cutoff <= pi/2"
        );
        TransducerArray {
            n_elements,
            pitch,
            normal: Vec3::splat_const(0.0, 0.0, 1.0),
            main_lobe,
            cutoff,
        }
    }

    /// x_e = (e - (N-1)/2) * pitch along the array axis.
    pub fn element_position(&self, e: usize) -> Vec3<S> {
        assert!(e < self.n_elements, "element index out of range");
        let off = e as f64 - (self.n_elements as f64 - 1.0) / 2.0;
        Vec3::new(
            self.pitch * S::constant(off),
            S::constant(0.0),
            S::constant(0.0),
        )
    }

    /// Aperture width W = (N-1) * pitch, mm.
    pub fn aperture_width(&self) -> S {
        self.pitch * S::constant(self.n_elements as f64 - 1.0)
    }
}

/// One plane-wave transmit event.
#[derive(Clone, Debug)]
pub struct TxEvent<S> {
    /// Steering angle, rad.
    pub angle: f64,
    /// Per-element transmit delays, seconds, shifted so the minimum is 0.
    pub delays: Vec<S>,
    pub rays_per_element: usize,
}

/// Plane-wave steering delays tau(x_e) = x_e sin(angle) / c0, shifted so the
/// earliest element fires at t = 0.
pub fn steering_delays<S: Real>(array: &TransducerArray<S>, angle: f64, c0: S) -> Vec<S> {
    assert!(angle.abs() < std::f64::consts::FRAC_PI_2);
    let raw: Vec<S> = (0..array.n_elements)
        .map(|e| array.element_position(e).x * S::constant(angle.sin() * 1e-3) / c0)
        .collect();
    let min = raw
        .iter()
        .map(|d| d.value())
        .fold(f64::INFINITY, f64::min);
    // Shift by the minimum as a frozen constant; for a linear array it is
    // attained at an end element, so the shift is itself one of the delays.
    let shift = raw
        .iter()
        .find(|d| d.value() == min)
        .copied()
        .expect("nonempty");
    raw.into_iter().map(|d| d - shift).collect()
}

pub fn make_event<S: Real>(
    array: &TransducerArray<S>,
    angle: f64,
    c0: S,
    rays_per_element: usize,
) -> TxEvent<S> {
    TxEvent {
        angle,
        delays: steering_delays(array, angle, c0),
        rays_per_element,
    }
}

/// Transmit directivity max(0, n . w).
pub fn tx_directivity<S: Real>(w: Vec3<S>, n: Vec3<S>) -> S {
    n.dot(w).max(S::constant(0.0))
}

/// Receive directivity: 1 inside the main lobe, linear ramp to 0 at the
/// cutoff, 0 beyond. `cos_in` is n . w_i for the incoming direction.
pub fn rx_directivity<S: Real>(cos_in: S, main_lobe: f64, cutoff: f64) -> S {
    let a = cos_in.min(S::constant(1.0)).max(S::constant(-1.0)).acos();
    if a.value() <= main_lobe {
        S::constant(1.0)
    } else if a.value() <= cutoff {
        (S::constant(cutoff) - a) * S::constant(1.0 / (cutoff - main_lobe))
    } else {
        S::constant(0.0)
    }
}

/// One emitted ray: stratified element choice, uniform jitter across the
/// element width, cosine-weighted direction about the aperture normal.
#[derive(Clone, Debug)]
pub struct Emission<S> {
    pub element: usize,
    pub origin: Vec3<S>,
    pub direction: Vec3<S>,
    pub tx_delay: S,
    /// Directivity weight over sampling pdf; cosine sampling cancels the
    /// cosine directivity, leaving the constant pi.
    pub weight: S,
}

/// Draws used by one emission, kept for deterministic replay.
#[derive(Clone, Copy, Debug)]
pub struct EmissionDraws {
    pub jitter: f64,
    pub dir_u1: f64,
    pub dir_u2: f64,
}

pub fn emission_draws(seed: u64, path: u64) -> EmissionDraws {
    EmissionDraws {
        jitter: rng::u01(seed, path, 0, Stream::EmitJitter),
        dir_u1: rng::u01(seed, path, 0, Stream::EmitDirU1),
        dir_u2: rng::u01(seed, path, 0, Stream::EmitDirU2),
    }
}

pub fn sample_emission<S: Real>(
    array: &TransducerArray<S>,
    event: &TxEvent<S>,
    path: u64,
    draws: EmissionDraws,
) -> Emission<S> {
    let element = (path % array.n_elements as u64) as usize;
    let center = array.element_position(element);
    let origin = Vec3::new(
        center.x + array.pitch * S::constant(draws.jitter - 0.5),
        S::constant(0.0),
        S::constant(0.0),
    );
    // Cosine-weighted hemisphere: cos(theta) = sqrt(1 - u1), pdf = cos/pi.
    let cos_t = S::constant((1.0 - draws.dir_u1).sqrt());
    let sin_t = (S::constant(1.0) - cos_t * cos_t).max(S::constant(0.0)).sqrt();
    let phi = 2.0 * std::f64::consts::PI * draws.dir_u2;
    let (t, b) = orthonormal_basis(array.normal);
    let direction = t
        .scale(sin_t * S::constant(phi.cos()))
        .add(b.scale(sin_t * S::constant(phi.sin())))
        .add(array.normal.scale(cos_t));
    Emission {
        element,
        origin,
        direction,
        tx_delay: event.delays[element],
        weight: S::constant(std::f64::consts::PI),
    }
}
