//! Full-path Monte Carlo acoustic transport.
//!
//! Paths are emitted from the transducer, bounce through the scene with a
//! probabilistic reflect/transmit split, and after every surface interaction
//! cast one receiver-guided secondary ray to a uniformly chosen element.
//! Arrivals are splatted onto the channel-data grid with an analytically
//! evaluated Gaussian-tapered pulse, which keeps geometry parameters
//! differentiable through time-of-flight.
//!
//! The tracer is generic over the scalar type. The forward pass runs in f64
//! and freezes every random draw and discrete decision into a
//! [`PathRecord`]; the vector-Jacobian product replays those records with
//! dual numbers and contracts the resulting arrivals against the channel
//! adjoint buffer.

use rayon::prelude::*;
use thiserror::Error;

use crate::math::{Dual, Real, Vec3, MAX_GRAD};
use crate::rng::{self, Stream};
use crate::scene::{
    fresnel_reflectance, ggx_density, ggx_sample_normal, intersect, snell_refract,
    specular_reflect, Interaction, Scene, EPS_GEOM,
};
use crate::transducer::{
    emission_draws, rx_directivity, sample_emission, EmissionDraws, TransducerArray, TxEvent,
};

/// Paths per work unit; fixed so results do not depend on the worker count.
const CHUNK: u64 = 512;

/// Secondary rays give up after this many boundary crossings.
const MAX_PASSTHROUGH: usize = 8;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("stale path record: path {path} diverged from its recorded event sequence at bounce {bounce} ({what})")]
    StalePathRecord { path: u64, bounce: usize, what: &'static str },
}

/// Sinusoid tapered by a Gaussian envelope,
/// s(t) = sin(2 pi f_c t) exp(-t^2 / sigma).
#[derive(Clone, Debug)]
pub struct Pulse<S> {
    /// Center frequency, Hz.
    pub f_c: S,
    /// Envelope width parameter, s^2.
    pub sigma: S,
}

impl<S: Real> Pulse<S> {
    /// Width from the number of emitted cycles: the 1/e envelope half-width
    /// spans half the burst, sigma = (n_cycles / (2 f_c))^2.
    pub fn from_cycles(f_c: S, n_cycles: f64) -> Self {
        let half = S::constant(n_cycles * 0.5) / f_c;
        Pulse {
            f_c,
            sigma: half * half,
        }
    }

    pub fn eval(&self, t: S) -> S {
        let phase = S::constant(2.0 * std::f64::consts::PI) * self.f_c * t;
        phase.sin() * (-(t * t) / self.sigma).exp()
    }

    /// Half-width of the truncation window: where the envelope falls to
    /// 1e-6 of its peak.
    pub fn window_halfwidth(&self) -> f64 {
        (self.sigma.value() * (1e6f64).ln()).sqrt()
    }
}

/// Element-by-time pressure grid with an attached adjoint buffer.
#[derive(Clone, Debug)]
pub struct ChannelData {
    pub n_elements: usize,
    pub n_samples: usize,
    /// Sampling rate, Hz.
    pub fs: f64,
    /// Row-major [element][sample].
    pub values: Vec<f64>,
    /// Gradient buffer of identical shape.
    pub adjoint: Vec<f64>,
}

impl ChannelData {
    pub fn zeros(n_elements: usize, n_samples: usize, fs: f64) -> Self {
        ChannelData {
            n_elements,
            n_samples,
            fs,
            values: vec![0.0; n_elements * n_samples],
            adjoint: vec![0.0; n_elements * n_samples],
        }
    }

    #[inline]
    pub fn idx(&self, e: usize, k: usize) -> usize {
        e * self.n_samples + k
    }
}

/// One path-to-element contribution.
#[derive(Clone, Copy, Debug)]
pub struct Arrival<S> {
    pub element: usize,
    /// Time of flight including the transmit delay, seconds.
    pub time: S,
    /// Signed pressure weight.
    pub amplitude: S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Reflect,
    Transmit,
    /// Forced reflection on total internal reflection (unit weight).
    TirReflect,
    /// Path ended at this interaction (grazing microfacet or below-horizon
    /// continuation).
    Stop,
}

#[derive(Clone, Debug)]
pub struct BounceRecord {
    pub surface: usize,
    pub ggx_u1: f64,
    pub ggx_u2: f64,
    pub branch_u: f64,
    pub kind: EventKind,
    pub connect_element: usize,
    /// Surfaces crossed by the receiver-connect ray, in order.
    pub passthrough: Vec<usize>,
    /// False when the connection was on the wrong side, occluded by total
    /// internal reflection, or exceeded the crossing limit.
    pub connect_ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Escaped,
    MaxBounces,
    Absorbed,
}

/// Frozen realization of one transport path: the random draws and every
/// discrete decision, enough to replay the identical geometry.
#[derive(Clone, Debug)]
pub struct PathRecord {
    pub path: u64,
    pub element: usize,
    pub draws: EmissionDraws,
    pub bounces: Vec<BounceRecord>,
    pub termination: Termination,
}

/// Everything the tracer needs for one transmit event.
#[derive(Clone)]
pub struct TraceParams<S> {
    pub scene: Scene<S>,
    pub array: TransducerArray<S>,
    pub event: TxEvent<S>,
    pub seed: u64,
    pub max_bounces: u32,
    /// Total emitted rays for this event (estimator normalization 1/N).
    pub n_paths: u64,
    /// Optional 1/r amplitude spreading per segment; off by default (the
    /// transport model carries attenuation only).
    pub spreading: bool,
}

impl<S: Real> TraceParams<S> {
    fn medium_speed(&self, m: usize) -> S {
        self.scene.media[m].sound_speed
    }
    fn medium_atten(&self, m: usize) -> S {
        self.scene.media[m].attenuation
    }
}

enum Mode<'a> {
    Forward,
    Replay(&'a PathRecord),
}

/// Trace one path. In forward mode the record is built from fresh draws;
/// in replay mode draws and decisions come from the record and any
/// geometric divergence is a hard error.
fn trace_path<S: Real>(
    p: &TraceParams<S>,
    path: u64,
    mode: &Mode,
    arrivals: &mut Vec<Arrival<S>>,
) -> Result<PathRecord, TransportError> {
    let stale = |bounce: usize, what: &'static str| TransportError::StalePathRecord { path, bounce, what };

    let draws = match mode {
        Mode::Forward => emission_draws(p.seed, path),
        Mode::Replay(rec) => rec.draws,
    };
    let em = sample_emission(&p.array, &p.event, path, draws);
    let mut dir = em.direction;
    let mut pos = em.origin;
    let mut amp = em.weight * S::constant(1.0 / p.n_paths as f64);
    let mut time = em.tx_delay;
    let mut medium = p.scene.background;

    let mut bounces: Vec<BounceRecord> = Vec::new();
    let mut termination = Termination::Escaped;

    for bounce in 0..p.max_bounces as usize {
        let hit = match intersect(pos, dir, &p.scene) {
            Some(h) => h,
            None => {
                termination = Termination::Escaped;
                break;
            }
        };
        let replay_bounce = match mode {
            Mode::Replay(rec) => {
                let rb = rec.bounces.get(bounce).ok_or_else(|| stale(bounce, "extra bounce"))?;
                if rb.surface != hit.surface {
                    return Err(stale(bounce, "surface"));
                }
                Some(rb)
            }
            Mode::Forward => None,
        };

        let seg_m = hit.t * S::constant(1e-3);
        time = time + seg_m / p.medium_speed(medium);
        amp = amp * (-(p.medium_atten(medium) * seg_m)).exp();
        if p.spreading {
            amp = amp / hit.t.max(S::constant(1.0));
        }

        // Receiver-guided secondary ray toward a uniformly chosen element.
        let connect_element = match replay_bounce {
            Some(rb) => rb.connect_element,
            None => rng::uint(
                p.seed,
                path,
                bounce as u32,
                Stream::ConnectElement,
                p.array.n_elements,
            ),
        };
        let conn = connect(p, &hit, dir, medium, amp, time, connect_element);
        if let Some(rb) = replay_bounce {
            if rb.passthrough != conn.passthrough || rb.connect_ok != conn.ok {
                return Err(stale(bounce, "connection"));
            }
        }
        if let Some(arrival) = conn.arrival {
            arrivals.push(arrival);
        }

        // Continue the primary path through the sampled microfacet.
        let (u1, u2, branch_u) = match replay_bounce {
            Some(rb) => (rb.ggx_u1, rb.ggx_u2, rb.branch_u),
            None => (
                rng::u01(p.seed, path, bounce as u32, Stream::GgxU1),
                rng::u01(p.seed, path, bounce as u32, Stream::GgxU2),
                rng::u01(p.seed, path, bounce as u32, Stream::Branch),
            ),
        };
        let surf = &p.scene.surfaces[hit.surface];
        let h = ggx_sample_normal(hit.normal, surf.roughness, u1, u2);
        let cos_ih = h.dot(dir.neg());

        let mut kind = EventKind::Stop;
        let mut next_dir = dir;
        let mut next_medium = medium;
        if cos_ih.value() > 1e-9 {
            let sin2_t = hit.eta * hit.eta * (S::constant(1.0) - cos_ih * cos_ih);
            if sin2_t.value() > 1.0 {
                // Total internal reflection: forced specular, weight 1.
                kind = EventKind::TirReflect;
                next_dir = specular_reflect(dir, h);
            } else {
                let cos_t = (S::constant(1.0) - sin2_t).sqrt();
                let (m1, m2) = incident_media(surf, hit.entering);
                let a_r = fresnel_reflectance(
                    p.scene.media[m1].impedance,
                    p.scene.media[m2].impedance,
                    cos_ih,
                    cos_t,
                );
                // Replay recomputes the branch from the frozen draw; the
                // primal values are identical, so the decision is too, and
                // the recorded kind check below catches any divergence.
                let reflect = branch_u < a_r.value() * a_r.value();
                if reflect {
                    kind = EventKind::Reflect;
                    next_dir = specular_reflect(dir, h);
                    // Energy-proportional branch choice; the surviving
                    // reflection carries unit magnitude with the Fresnel sign
                    // so phase inversions reach the pulse stage.
                    amp = amp * S::constant(a_r.value().signum());
                } else {
                    kind = EventKind::Transmit;
                    next_dir = snell_refract(dir, h, hit.eta).expect("checked sin2_t <= 1");
                    amp = amp * (S::constant(1.0) + a_r);
                    next_medium = m2;
                }
            }
            // The continuation must leave on the correct side of the
            // macroscopic surface; microfacet continuations below the
            // horizon are absorbed.
            let side = next_dir.dot(hit.normal).value();
            let wrong = match kind {
                EventKind::Transmit => side >= 0.0,
                _ => side <= 0.0,
            };
            if wrong {
                kind = EventKind::Stop;
            }
        }
        if let Some(rb) = replay_bounce {
            if rb.kind != kind {
                return Err(stale(bounce, "branch kind"));
            }
        }

        bounces.push(BounceRecord {
            surface: hit.surface,
            ggx_u1: u1,
            ggx_u2: u2,
            branch_u,
            kind,
            connect_element,
            passthrough: conn.passthrough,
            connect_ok: conn.ok,
        });

        if kind == EventKind::Stop {
            termination = Termination::Absorbed;
            break;
        }
        let out_normal = if kind == EventKind::Transmit {
            hit.normal.neg()
        } else {
            hit.normal
        };
        pos = hit.position.add(out_normal.scale(S::constant(EPS_GEOM)));
        dir = next_dir;
        medium = next_medium;
        if bounce + 1 == p.max_bounces as usize {
            termination = Termination::MaxBounces;
        }
    }

    if let Mode::Replay(rec) = mode {
        if rec.bounces.len() != bounces.len() {
            return Err(stale(bounces.len(), "missing bounce"));
        }
    }

    Ok(PathRecord {
        path,
        element: em.element,
        draws,
        bounces,
        termination,
    })
}

fn incident_media<S>(surf: &crate::scene::Surface<S>, entering: bool) -> (usize, usize) {
    if entering {
        (surf.outside, surf.inside)
    } else {
        (surf.inside, surf.outside)
    }
}

struct Connection<S> {
    arrival: Option<Arrival<S>>,
    passthrough: Vec<usize>,
    ok: bool,
}

/// Deterministic next-event connection from an interaction point to the
/// center of `element`. The weight carries the microfacet BSDF toward the
/// connection direction, the inverse selection probability converted to
/// the receiver-area measure (N_e A_e cos/d^2), per-medium attenuation, and
/// the receive directivity. Boundaries crossed on the way multiply in their
/// transmission amplitude along a straight line.
fn connect<S: Real>(
    p: &TraceParams<S>,
    hit: &Interaction<S>,
    dir: Vec3<S>,
    medium: usize,
    amp: S,
    time: S,
    element: usize,
) -> Connection<S> {
    let none = |passthrough: Vec<usize>, ok: bool| Connection {
        arrival: None,
        passthrough,
        ok,
    };

    let target = p.array.element_position(element);
    let to = target.sub(hit.position);
    let dist = to.norm();
    if dist.value() < 10.0 * EPS_GEOM {
        return none(Vec::new(), false);
    }
    let w_o = to.scale(S::constant(1.0) / dist);
    let cos_o = w_o.dot(hit.normal);
    let cos_i = dir.neg().dot(hit.normal);
    // Only the reflection lobe connects; an element on the transmission
    // side of this interface contributes nothing.
    if cos_o.value() <= 1e-9 || cos_i.value() <= 1e-9 {
        return none(Vec::new(), false);
    }

    let h = dir.neg().add(w_o).normalized();
    let cos_rh = dir.neg().dot(h);
    if cos_rh.value() <= 1e-9 {
        return none(Vec::new(), false);
    }
    let surf = &p.scene.surfaces[hit.surface];
    let sin2_t = hit.eta * hit.eta * (S::constant(1.0) - cos_rh * cos_rh);
    let a_r = if sin2_t.value() > 1.0 {
        S::constant(1.0)
    } else {
        let cos_t = (S::constant(1.0) - sin2_t).sqrt();
        let (m1, m2) = incident_media(surf, hit.entering);
        fresnel_reflectance(
            p.scene.media[m1].impedance,
            p.scene.media[m2].impedance,
            cos_rh,
            cos_t,
        )
    };
    let d_h = ggx_density(h, hit.normal, surf.roughness);
    let f_s = a_r * d_h / (S::constant(4.0) * cos_i * cos_o);

    let mut weight = amp * f_s * cos_o;
    let mut t_arr = time;
    let mut m = medium;
    let mut origin = hit.position.add(hit.normal.scale(S::constant(EPS_GEOM)));
    let mut remaining = dist - S::constant(EPS_GEOM);
    let mut passthrough = Vec::new();

    // March the secondary ray, crossing boundaries in a straight line.
    loop {
        let next = intersect(origin, w_o, &p.scene);
        let crossing = match next {
            Some(h2) if h2.t.value() < remaining.value() - 10.0 * EPS_GEOM => h2,
            _ => break,
        };
        if passthrough.len() >= MAX_PASSTHROUGH {
            return none(passthrough, false);
        }
        let seg_m = crossing.t * S::constant(1e-3);
        t_arr = t_arr + seg_m / p.medium_speed(m);
        weight = weight * (-(p.medium_atten(m) * seg_m)).exp();

        let cos_c = crossing.normal.dot(w_o.neg());
        let sin2 = crossing.eta * crossing.eta * (S::constant(1.0) - cos_c * cos_c);
        if sin2.value() > 1.0 {
            // Total internal reflection blocks the connection.
            passthrough.push(crossing.surface);
            return none(passthrough, false);
        }
        let cos_t = (S::constant(1.0) - sin2).sqrt();
        let csurf = &p.scene.surfaces[crossing.surface];
        let (m1, m2) = incident_media(csurf, crossing.entering);
        let a_cross = fresnel_reflectance(
            p.scene.media[m1].impedance,
            p.scene.media[m2].impedance,
            cos_c,
            cos_t,
        );
        weight = weight * (S::constant(1.0) + a_cross);
        passthrough.push(crossing.surface);
        m = m2;
        remaining = remaining - crossing.t;
        origin = crossing
            .position
            .add(crossing.normal.neg().scale(S::constant(EPS_GEOM)));
        remaining = remaining - S::constant(EPS_GEOM);
    }

    let seg_m = remaining * S::constant(1e-3);
    t_arr = t_arr + seg_m / p.medium_speed(m);
    weight = weight * (-(p.medium_atten(m) * seg_m)).exp();

    // Receive directivity and area-measure conversion at the element.
    let cos_e = (-w_o.z).max(S::constant(0.0));
    let f_rx = rx_directivity(cos_e, p.array.main_lobe, p.array.cutoff);
    if f_rx.value() == 0.0 {
        return none(passthrough, true);
    }
    let area = p.array.pitch * S::constant(p.array.n_elements as f64);
    weight = weight * f_rx * cos_e / (dist * dist) * area;

    Connection {
        arrival: Some(Arrival {
            element,
            time: t_arr,
            amplitude: weight,
        }),
        passthrough,
        ok: true,
    }
}

/// Trace a full transmit event in parallel over fixed path chunks; the
/// chunked merge order makes the output independent of the worker count.
pub fn trace_event(p: &TraceParams<f64>) -> (Vec<Arrival<f64>>, Vec<PathRecord>) {
    trace_range(p, 0..p.n_paths)
}

/// Trace a contiguous path-index range (micro-batching over rays).
pub fn trace_range(
    p: &TraceParams<f64>,
    range: std::ops::Range<u64>,
) -> (Vec<Arrival<f64>>, Vec<PathRecord>) {
    let chunks: Vec<(u64, u64)> = {
        let mut v = Vec::new();
        let mut s = range.start;
        while s < range.end {
            v.push((s, (s + CHUNK).min(range.end)));
            s += CHUNK;
        }
        v
    };
    let parts: Vec<(Vec<Arrival<f64>>, Vec<PathRecord>)> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut arrivals = Vec::new();
            let mut records = Vec::with_capacity((b - a) as usize);
            for path in a..b {
                let rec = trace_path(p, path, &Mode::Forward, &mut arrivals)
                    .expect("forward tracing cannot go stale");
                records.push(rec);
            }
            (arrivals, records)
        })
        .collect();
    let mut arrivals = Vec::new();
    let mut records = Vec::new();
    for (a, r) in parts {
        arrivals.extend(a);
        records.extend(r);
    }
    (arrivals, records)
}

/// Splat arrivals onto the channel grid with the analytic pulse. Returns
/// the number of arrivals dropped past the record length.
pub fn deposit_arrivals(
    arrivals: &[Arrival<f64>],
    pulse: &Pulse<f64>,
    channel: &mut ChannelData,
) -> usize {
    let w = pulse.window_halfwidth();
    let t_max = (channel.n_samples - 1) as f64 / channel.fs;
    let mut dropped = 0usize;
    for a in arrivals {
        if a.time - w > t_max {
            dropped += 1;
            continue;
        }
        let k0 = (((a.time - w) * channel.fs).ceil() as i64).max(0) as usize;
        let k1 = (((a.time + w) * channel.fs).floor() as i64).min(channel.n_samples as i64 - 1);
        if k1 < k0 as i64 {
            continue;
        }
        for k in k0..=(k1 as usize) {
            let t = k as f64 / channel.fs - a.time;
            let idx = a.element * channel.n_samples + k;
            channel.values[idx] += a.amplitude * pulse.eval(t);
        }
    }
    dropped
}

/// Replay recorded paths with dual numbers and contract the differentiated
/// deposit against the channel adjoint buffer. Returns the gradient over
/// the active parameter slots.
pub fn transport_vjp(
    p: &TraceParams<Dual>,
    records: &[PathRecord],
    pulse: &Pulse<Dual>,
    channel: &ChannelData,
) -> Result<[f64; MAX_GRAD], TransportError> {
    let w = pulse.window_halfwidth();
    let parts: Vec<Result<[f64; MAX_GRAD], TransportError>> = records
        .par_chunks(CHUNK as usize)
        .map(|chunk| {
            let mut grad = [0.0; MAX_GRAD];
            let mut arrivals: Vec<Arrival<Dual>> = Vec::new();
            for rec in chunk {
                arrivals.clear();
                trace_path(p, rec.path, &Mode::Replay(rec), &mut arrivals)?;
                for a in &arrivals {
                    let t_max = (channel.n_samples - 1) as f64 / channel.fs;
                    if a.time.v - w > t_max {
                        continue;
                    }
                    let k0 = (((a.time.v - w) * channel.fs).ceil() as i64).max(0) as usize;
                    let k1 =
                        (((a.time.v + w) * channel.fs).floor() as i64).min(channel.n_samples as i64 - 1);
                    if k1 < k0 as i64 {
                        continue;
                    }
                    for k in k0..=(k1 as usize) {
                        let adj = channel.adjoint[a.element * channel.n_samples + k];
                        if adj == 0.0 {
                            continue;
                        }
                        let t = Dual::constant(k as f64 / channel.fs) - a.time;
                        let contrib = a.amplitude * pulse.eval(t);
                        for s in 0..MAX_GRAD {
                            grad[s] += adj * contrib.d[s];
                        }
                    }
                }
            }
            Ok(grad)
        })
        .collect();
    let mut total = [0.0; MAX_GRAD];
    for part in parts {
        let g = part?;
        for s in 0..MAX_GRAD {
            total[s] += g[s];
        }
    }
    Ok(total)
}
