//! Scene geometry, acoustic materials, intersection, and the local
//! scattering model (acoustic Fresnel split, Snell refraction, GGX
//! microfacet distribution).
//!
//! Everything is generic over the scalar type so the same code serves the
//! f64 forward pass and the dual-number gradient replay. Geometry lives in
//! millimetres; the imaging plane is (x, z) with y out of plane, and
//! cylinders are circular interfaces extruded along y.

use crate::math::{orthonormal_basis, Real, Vec3};

/// Self-intersection guard, in mm.
pub const EPS_GEOM: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Medium<S> {
    /// Acoustic impedance, MRayl.
    pub impedance: S,
    /// Sound speed, m/s.
    pub sound_speed: S,
    /// Amplitude attenuation, Np/m.
    pub attenuation: S,
}

#[derive(Clone, Debug)]
pub enum Shape<S> {
    /// Circular interface extruded along y; `center` is (x, z) with y ignored.
    Cylinder { center: Vec3<S>, radius: S },
    Plane { point: Vec3<S>, normal: Vec3<S> },
    TriangleMesh {
        vertices: Vec<Vec3<S>>,
        faces: Vec<[usize; 3]>,
    },
}

#[derive(Clone, Debug)]
pub struct Surface<S> {
    pub name: String,
    pub shape: Shape<S>,
    /// GGX roughness, in (0, 1].
    pub roughness: S,
    /// Medium index on the side the geometric normal points away from.
    pub inside: usize,
    /// Medium index on the side the geometric normal points into.
    pub outside: usize,
}

#[derive(Clone, Debug)]
pub struct Scene<S> {
    pub media: Vec<Medium<S>>,
    pub medium_names: Vec<String>,
    pub surfaces: Vec<Surface<S>>,
    /// Medium the transducer sits in.
    pub background: usize,
}

impl<S: Real> Scene<S> {
    pub fn medium_index(&self, name: &str) -> Option<usize> {
        self.medium_names.iter().position(|n| n == name)
    }

    pub fn surface_index(&self, name: &str) -> Option<usize> {
        self.surfaces.iter().position(|s| s.name == name)
    }
}

/// One ray-surface interaction. `normal` is oriented against the incident
/// ray; `eta` is the impedance ratio Z1/Z2 seen from the incident side.
#[derive(Clone, Debug)]
pub struct Interaction<S> {
    pub position: Vec3<S>,
    pub normal: Vec3<S>,
    pub incident: Vec3<S>,
    pub surface: usize,
    pub eta: S,
    pub t: S,
    /// True when the ray arrives from the outside medium.
    pub entering: bool,
}

/// Nearest hit along `dir` from `origin`, or none. Hits closer than
/// `EPS_GEOM` are rejected so restarted rays do not re-hit their own
/// surface.
pub fn intersect<S: Real>(
    origin: Vec3<S>,
    dir: Vec3<S>,
    scene: &Scene<S>,
) -> Option<Interaction<S>> {
    let mut best: Option<(S, usize, Vec3<S>)> = None;
    for (si, surf) in scene.surfaces.iter().enumerate() {
        if let Some((t, n_geom)) = intersect_shape(origin, dir, &surf.shape) {
            let closer = match &best {
                Some((bt, _, _)) => t.value() < bt.value(),
                None => true,
            };
            if closer {
                best = Some((t, si, n_geom));
            }
        }
    }
    let (t, si, n_geom) = best?;
    let surf = &scene.surfaces[si];
    let entering = dir.dot(n_geom).value() < 0.0;
    let (m1, m2) = if entering {
        (surf.outside, surf.inside)
    } else {
        (surf.inside, surf.outside)
    };
    let eta = scene.media[m1].impedance / scene.media[m2].impedance;
    let normal = if entering { n_geom } else { n_geom.neg() };
    Some(Interaction {
        position: origin.add(dir.scale(t)),
        normal,
        incident: dir,
        surface: si,
        eta,
        t,
        entering,
    })
}

/// Hit distance and *geometric* (outward, inside-to-outside) unit normal.
fn intersect_shape<S: Real>(origin: Vec3<S>, dir: Vec3<S>, shape: &Shape<S>) -> Option<(S, Vec3<S>)> {
    match shape {
        Shape::Cylinder { center, radius } => {
            // 2-D circle test in the (x, z) plane; the hit parameter t is
            // along the full 3-D direction.
            let ox = origin.x - center.x;
            let oz = origin.z - center.z;
            let a = dir.x * dir.x + dir.z * dir.z;
            if a.value() < 1e-18 {
                return None;
            }
            let b = dir.x * ox + dir.z * oz;
            let c = ox * ox + oz * oz - *radius * *radius;
            let disc = b * b - a * c;
            if disc.value() <= 0.0 {
                return None;
            }
            let sd = disc.sqrt();
            let t0 = (-b - sd) / a;
            let t1 = (-b + sd) / a;
            let t = if t0.value() > EPS_GEOM {
                t0
            } else if t1.value() > EPS_GEOM {
                t1
            } else {
                return None;
            };
            let hit = origin.add(dir.scale(t));
            let n = Vec3::new(hit.x - center.x, S::constant(0.0), hit.z - center.z).normalized();
            Some((t, n))
        }
        Shape::Plane { point, normal } => {
            let denom = dir.dot(*normal);
            if denom.value().abs() < 1e-15 {
                return None;
            }
            let t = point.sub(origin).dot(*normal) / denom;
            if t.value() <= EPS_GEOM {
                return None;
            }
            Some((t, *normal))
        }
        Shape::TriangleMesh { vertices, faces } => {
            let mut best: Option<(S, Vec3<S>)> = None;
            for f in faces {
                if let Some((t, n)) =
                    intersect_triangle(origin, dir, vertices[f[0]], vertices[f[1]], vertices[f[2]])
                {
                    let closer = match &best {
                        Some((bt, _)) => t.value() < bt.value(),
                        None => true,
                    };
                    if closer {
                        best = Some((t, n));
                    }
                }
            }
            best
        }
    }
}

/// Moller-Trumbore; normal follows the face winding (right-hand rule).
pub fn intersect_triangle<S: Real>(
    origin: Vec3<S>,
    dir: Vec3<S>,
    v0: Vec3<S>,
    v1: Vec3<S>,
    v2: Vec3<S>,
) -> Option<(S, Vec3<S>)> {
    let e1 = v1.sub(v0);
    let e2 = v2.sub(v0);
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.value().abs() < 1e-14 {
        return None;
    }
    let inv = S::constant(1.0) / det;
    let s = origin.sub(v0);
    let u = s.dot(p) * inv;
    if u.value() < 0.0 || u.value() > 1.0 {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v.value() < 0.0 || (u + v).value() > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    if t.value() <= EPS_GEOM {
        return None;
    }
    Some((t, e1.cross(e2).normalized()))
}

/// Acoustic Fresnel amplitude reflection coefficient,
/// A_r = (Z1 cos th_r - Z2 cos th_t) / (Z1 cos th_r + Z2 cos th_t).
/// The squared magnitude is the reflected intensity fraction.
pub fn fresnel_reflectance<S: Real>(z1: S, z2: S, cos_r: S, cos_t: S) -> S {
    (z1 * cos_r - z2 * cos_t) / (z1 * cos_r + z2 * cos_t)
}

/// Mirror reflection of the propagation direction about `n` (which opposes
/// the incident direction).
pub fn specular_reflect<S: Real>(w_i: Vec3<S>, n: Vec3<S>) -> Vec3<S> {
    let c = n.dot(w_i.neg());
    w_i.add(n.scale(c + c))
}

/// Refracted propagation direction by Snell's law with ratio `eta`
/// (sin th_t = eta sin th_i). Returns none on total internal reflection.
/// `n` opposes the incident direction.
pub fn snell_refract<S: Real>(w_i: Vec3<S>, n: Vec3<S>, eta: S) -> Option<Vec3<S>> {
    let cos_i = n.dot(w_i.neg());
    let sin2_t = eta * eta * (S::constant(1.0) - cos_i * cos_i);
    if sin2_t.value() > 1.0 {
        return None;
    }
    let cos_t = (S::constant(1.0) - sin2_t).sqrt();
    Some(w_i.scale(eta).add(n.scale(eta * cos_i - cos_t)).normalized())
}

/// GGX microfacet normal distribution,
/// D(h) = alpha^2 / (pi ((n.h)^2 (alpha^2 - 1) + 1)^2).
pub fn ggx_density<S: Real>(h: Vec3<S>, n: Vec3<S>, alpha: S) -> S {
    let nh = n.dot(h);
    let a2 = alpha * alpha;
    let k = nh * nh * (a2 - S::constant(1.0)) + S::constant(1.0);
    a2 / (S::constant(std::f64::consts::PI) * k * k)
}

/// Inverse-CDF sample of the GGX distribution about `n`; the sample density
/// over the hemisphere equals D(h) (n.h). The random draws are frozen
/// inputs, so the sampled direction is differentiable in `alpha`.
pub fn ggx_sample_normal<S: Real>(n: Vec3<S>, alpha: S, u1: f64, u2: f64) -> Vec3<S> {
    let a2 = alpha * alpha;
    let u = S::constant(u1);
    let cos2 = (S::constant(1.0) - u) / (u * (a2 - S::constant(1.0)) + S::constant(1.0));
    let cos_t = cos2.sqrt().min(S::constant(1.0));
    let sin_t = (S::constant(1.0) - cos_t * cos_t).max(S::constant(0.0)).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    let (tb, bb) = orthonormal_basis(n);
    tb.scale(sin_t * S::constant(phi.cos()))
        .add(bb.scale(sin_t * S::constant(phi.sin())))
        .add(n.scale(cos_t))
}

/// Minimal OBJ loader: `v` and `f` records only, 1-based indices,
/// polygon faces fan-triangulated.
pub fn load_obj(text: &str) -> Result<(Vec<Vec3<f64>>, Vec<[usize; 3]>), String> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0f64; 3];
                for v in c.iter_mut() {
                    *v = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| format!("line {}: malformed vertex", ln + 1))?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Result<Vec<usize>, String> = it
                    .map(|tok| {
                        tok.split('/')
                            .next()
                            .and_then(|s| s.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| format!("line {}: malformed face index", ln + 1))
                    })
                    .collect();
                let idx = idx?;
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs 3+ vertices", ln + 1));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    for f in &faces {
        if f.iter().any(|&i| i >= vertices.len()) {
            return Err("face index out of range".into());
        }
    }
    Ok((vertices, faces))
}

/// Lift an f64 scene into another scalar type as constants. Parameter
/// bindings overwrite individual entries with seeded variables afterwards.
pub fn lift_scene<S: Real>(scene: &Scene<f64>) -> Scene<S> {
    Scene {
        media: scene
            .media
            .iter()
            .map(|m| Medium {
                impedance: S::constant(m.impedance),
                sound_speed: S::constant(m.sound_speed),
                attenuation: S::constant(m.attenuation),
            })
            .collect(),
        medium_names: scene.medium_names.clone(),
        surfaces: scene
            .surfaces
            .iter()
            .map(|s| Surface {
                name: s.name.clone(),
                shape: lift_shape(&s.shape),
                roughness: S::constant(s.roughness),
                inside: s.inside,
                outside: s.outside,
            })
            .collect(),
        background: scene.background,
    }
}

fn lift_shape<S: Real>(shape: &Shape<f64>) -> Shape<S> {
    match shape {
        Shape::Cylinder { center, radius } => Shape::Cylinder {
            center: center.lift(),
            radius: S::constant(*radius),
        },
        Shape::Plane { point, normal } => Shape::Plane {
            point: point.lift(),
            normal: normal.lift(),
        },
        Shape::TriangleMesh { vertices, faces } => Shape::TriangleMesh {
            vertices: vertices.iter().map(|v| v.lift()).collect(),
            faces: faces.clone(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn water() -> Medium<f64> {
        Medium {
            impedance: 1.48,
            sound_speed: 1480.0,
            attenuation: 0.0,
        }
    }

    fn tissue() -> Medium<f64> {
        Medium {
            impedance: 1.63,
            sound_speed: 1540.0,
            attenuation: 0.0,
        }
    }

    pub fn cylinder_scene(center_z: f64, radius: f64) -> Scene<f64> {
        Scene {
            media: vec![water(), tissue()],
            medium_names: vec!["water".into(), "tissue".into()],
            surfaces: vec![Surface {
                name: "cyl".into(),
                shape: Shape::Cylinder {
                    center: Vec3::new(0.0, 0.0, center_z),
                    radius,
                },
                roughness: 0.3,
                inside: 1,
                outside: 0,
            }],
            background: 0,
        }
    }

    #[test]
    fn on_axis_cylinder_hit() {
        let scene = cylinder_scene(15.0, 5.0);
        let hit = intersect(
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            &scene,
        )
        .expect("hit");
        assert!((hit.t - 10.0).abs() < 1e-12);
        assert!((hit.position.z - 10.0).abs() < 1e-12);
        assert!((hit.normal.z + 1.0).abs() < 1e-12);
        assert!(hit.entering);
        assert!((hit.eta - 1.48 / 1.63).abs() < 1e-12);
    }

    #[test]
    fn offset_cylinder_miss() {
        let mut scene = cylinder_scene(15.0, 5.0);
        if let Shape::Cylinder { center, .. } = &mut scene.surfaces[0].shape {
            center.x = 20.0;
        }
        assert!(intersect(
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            &scene
        )
        .is_none());
    }

    #[test]
    fn mesh_hits_match_exhaustive_triangle_scan() {
        // Independent oracle: re-derive the nearest hit by testing every
        // triangle with a separately written ray/plane + barycentric check.
        let (v, f) = load_obj(
            "v -5 -5 20\nv 5 -5 20\nv 5 5 22\nv -5 5 22\nv 0 0 18\n\
             f 1 2 3\nf 1 3 4\nf 1 2 5\nf 2 3 5\nf 3 4 5\nf 4 1 5\n",
        )
        .unwrap();
        let scene = Scene {
            media: vec![water(), tissue()],
            medium_names: vec!["water".into(), "tissue".into()],
            surfaces: vec![Surface {
                name: "mesh".into(),
                shape: Shape::TriangleMesh {
                    vertices: v.clone(),
                    faces: f.clone(),
                },
                roughness: 0.5,
                inside: 1,
                outside: 0,
            }],
            background: 0,
        };
        let oracle = |o: Vec3<f64>, d: Vec3<f64>| -> Option<f64> {
            let mut best: Option<f64> = None;
            for face in &f {
                let (a, b, c) = (v[face[0]], v[face[1]], v[face[2]]);
                let n = b.sub(a).cross(c.sub(a));
                let denom = d.dot(n);
                if denom.abs() < 1e-14 {
                    continue;
                }
                let t = a.sub(o).dot(n) / denom;
                if t <= EPS_GEOM {
                    continue;
                }
                let p = o.add(d.scale(t));
                // Barycentric containment via signed areas.
                let area = n.norm();
                let w0 = b.sub(p).cross(c.sub(p)).dot(n) / (area * area);
                let w1 = c.sub(p).cross(a.sub(p)).dot(n) / (area * area);
                let w2 = 1.0 - w0 - w1;
                if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                    best = Some(best.map_or(t, |bt: f64| bt.min(t)));
                }
            }
            best
        };
        let mut checked_hits = 0;
        for i in 0..100u64 {
            let ox = crate::rng::u01(5, i, 0, crate::rng::Stream::EmitJitter) * 20.0 - 10.0;
            let oy = crate::rng::u01(5, i, 1, crate::rng::Stream::EmitJitter) * 20.0 - 10.0;
            let dx = crate::rng::u01(5, i, 2, crate::rng::Stream::EmitJitter) - 0.5;
            let dy = crate::rng::u01(5, i, 3, crate::rng::Stream::EmitJitter) - 0.5;
            let o = Vec3::new(ox, oy, 0.0);
            let d = Vec3::new(dx, dy, 1.0).normalized();
            let ours = intersect(o, d, &scene).map(|h| h.t);
            let theirs = oracle(o, d);
            match (ours, theirs) {
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-9, "ray {i}: {a} vs {b}");
                    checked_hits += 1;
                }
                (None, None) => {}
                (a, b) => panic!("ray {i}: {a:?} vs {b:?}"),
            }
        }
        assert!(checked_hits > 10, "too few hits to be meaningful");
    }

    #[test]
    fn fresnel_matched_impedance_is_zero() {
        assert_eq!(fresnel_reflectance(1.5, 1.5, 1.0, 1.0), 0.0);
    }

    #[test]
    fn fresnel_rigid_boundary_limit() {
        let a = fresnel_reflectance(1.0, 1e9, 1.0, 1.0);
        assert!((a + 1.0).abs() < 1e-8);
        assert!((a * a - 1.0).abs() < 1e-7);
    }

    #[test]
    fn fresnel_water_tissue_normal_incidence() {
        // Direct evaluation: (1.48 - 1.63) / (1.48 + 1.63) = -0.04823...
        let a = fresnel_reflectance(1.48, 1.63, 1.0, 1.0);
        assert!((a - (-0.0482)).abs() < 5e-5);
    }

    #[test]
    fn specular_reflect_examples() {
        let n = Vec3::new(0.0, 0.0, -1.0);
        let r = specular_reflect(Vec3::new(0.0, 0.0, 1.0), n);
        assert!((r.z + 1.0).abs() < 1e-15);

        // 45 degree incidence on a z-plane mirrors the direction.
        let wi = Vec3::new(1.0, 0.0, 1.0).normalized();
        let r = specular_reflect(wi, n);
        assert!((r.x - wi.x).abs() < 1e-15);
        assert!((r.z + wi.z).abs() < 1e-15);
    }

    #[test]
    fn specular_reflect_random_sweep() {
        for i in 0..1000u64 {
            let u = |k: u32| crate::rng::u01(11, i, k, crate::rng::Stream::GgxU1) * 2.0 - 1.0;
            let n = Vec3::new(u(0), u(1), u(2)).normalized();
            let mut wi = Vec3::new(u(3), u(4), u(5)).normalized();
            if n.dot(wi) > 0.0 {
                wi = wi.neg(); // incident opposes the oriented normal
            }
            let r = specular_reflect(wi, n);
            assert!((r.norm() - 1.0).abs() < 1e-12);
            let a_in = n.dot(wi.neg()).acos();
            let a_out = n.dot(r).acos();
            assert!((a_in - a_out).abs() < 1e-12);
            // Reciprocity: reflecting twice restores the direction.
            let rr = specular_reflect(r.neg(), n.neg());
            assert!((rr.x + wi.x).abs() < 1e-12);
            assert!((rr.z + wi.z).abs() < 1e-12);
        }
    }

    #[test]
    fn snell_identity_and_normal_incidence() {
        let n = Vec3::new(0.0, 0.0, -1.0);
        let wi = Vec3::new(0.6, 0.0, 0.8).normalized();
        let t = snell_refract(wi, n, 1.0).unwrap();
        assert!((t.x - wi.x).abs() < 1e-12 && (t.z - wi.z).abs() < 1e-12);

        let t = snell_refract(Vec3::new(0.0, 0.0, 1.0), n, 0.7).unwrap();
        assert!((t.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snell_total_internal_reflection() {
        // eta = 1.5 at 60 degrees: sin th_t = 1.5 * sin 60 = 1.3 > 1.
        let n = Vec3::new(0.0, 0.0, -1.0);
        let th = 60f64.to_radians();
        let wi = Vec3::new(th.sin(), 0.0, th.cos());
        assert!(snell_refract(wi, n, 1.5).is_none());
    }

    #[test]
    fn snell_round_trip_recovers_direction() {
        let n = Vec3::new(0.0, 0.0, -1.0);
        for i in 0..200u64 {
            let th = crate::rng::u01(3, i, 0, crate::rng::Stream::GgxU1) * 1.2;
            let eta = 0.5 + crate::rng::u01(3, i, 1, crate::rng::Stream::GgxU1);
            let wi = Vec3::new(th.sin(), 0.0, th.cos());
            if let Some(wt) = snell_refract(wi, n, eta) {
                let back = snell_refract(wt, n, 1.0 / eta).expect("inverse exists");
                assert!((back.x - wi.x).abs() < 1e-9 && (back.z - wi.z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ggx_density_special_values() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        // alpha = 1 collapses to 1/pi regardless of h.
        let h = Vec3::new(0.3, 0.1, 0.9).normalized();
        assert!((ggx_density(h, n, 1.0) - 1.0 / std::f64::consts::PI).abs() < 1e-12);
        // h = n, alpha = 0.2: alpha^2/(pi alpha^4) = 1/(pi 0.04).
        let d = ggx_density(n, n, 0.2);
        assert!((d - 1.0 / (std::f64::consts::PI * 0.04)).abs() < 1e-10);
        assert!((d - 7.9577).abs() < 1e-3);
    }

    #[test]
    fn ggx_density_normalizes_against_cosine() {
        // Quadrature of D(h) (n.h) over the hemisphere in (theta, phi).
        let n = Vec3::new(0.0, 0.0, 1.0);
        for &alpha in &[0.1, 0.5, 1.0] {
            let nt = 2000;
            let mut total = 0.0;
            for i in 0..nt {
                let th = (i as f64 + 0.5) / nt as f64 * std::f64::consts::FRAC_PI_2;
                let h = Vec3::new(th.sin(), 0.0, th.cos());
                // phi-symmetric: the azimuth integral is 2 pi.
                total += ggx_density(h, n, alpha)
                    * th.cos()
                    * th.sin()
                    * (std::f64::consts::FRAC_PI_2 / nt as f64)
                    * 2.0
                    * std::f64::consts::PI;
            }
            assert!((total - 1.0).abs() < 1e-3, "alpha={alpha}: {total}");
        }
    }

    #[test]
    fn ggx_sample_cdf_origin_and_mirror_limit() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let h = ggx_sample_normal(n, 0.5, 0.0, 0.3);
        assert!((h.z - 1.0).abs() < 1e-12);
        let h = ggx_sample_normal(n, 1e-6, 0.9, 0.3);
        assert!((h.z - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ggx_sample_histogram_matches_density() {
        // Chi-squared goodness-of-fit of the sampled cos(theta_h) histogram
        // against bin masses from quadrature of D(h)(n.h).
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n = Vec3::new(0.0, 0.0, 1.0);
        let alpha = 0.5;
        let nbins = 40;
        let nsamp = 1_000_000u64;
        let mut counts = vec![0u64; nbins];
        for i in 0..nsamp {
            let u1 = crate::rng::u01(17, i, 0, crate::rng::Stream::GgxU1);
            let u2 = crate::rng::u01(17, i, 0, crate::rng::Stream::GgxU2);
            let h = ggx_sample_normal(n, alpha, u1, u2);
            let th = h.z.clamp(-1.0, 1.0).acos();
            let b = ((th / std::f64::consts::FRAC_PI_2) * nbins as f64) as usize;
            counts[b.min(nbins - 1)] += 1;
        }
        // Expected bin masses by fine quadrature of D(h) cos sin dtheta dphi.
        let fine = 400;
        let mut expected = vec![0.0f64; nbins];
        for b in 0..nbins {
            let lo = b as f64 / nbins as f64 * std::f64::consts::FRAC_PI_2;
            let hi = (b + 1) as f64 / nbins as f64 * std::f64::consts::FRAC_PI_2;
            for i in 0..fine {
                let th = lo + (i as f64 + 0.5) / fine as f64 * (hi - lo);
                let h = Vec3::new(th.sin(), 0.0, th.cos());
                expected[b] += ggx_density(h, n, alpha)
                    * th.cos()
                    * th.sin()
                    * ((hi - lo) / fine as f64)
                    * 2.0
                    * std::f64::consts::PI;
            }
        }
        let mut chi2 = 0.0;
        let mut dof = 0;
        for b in 0..nbins {
            let e = expected[b] * nsamp as f64;
            if e < 10.0 {
                continue;
            }
            let o = counts[b] as f64;
            chi2 += (o - e) * (o - e) / e;
            dof += 1;
        }
        let crit = ChiSquared::new((dof - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 = {chi2}, crit(1%) = {crit}");
    }

    #[test]
    fn energy_split_stays_in_unit_interval() {
        for i in 0..500u64 {
            let z1 = 0.5 + crate::rng::u01(7, i, 0, crate::rng::Stream::Branch) * 3.0;
            let z2 = 0.5 + crate::rng::u01(7, i, 1, crate::rng::Stream::Branch) * 3.0;
            let ci = crate::rng::u01(7, i, 2, crate::rng::Stream::Branch);
            let ct = crate::rng::u01(7, i, 3, crate::rng::Stream::Branch);
            let a = fresnel_reflectance(z1, z2, ci.max(1e-3), ct.max(1e-3));
            let r = a * a;
            assert!((0.0..=1.0).contains(&r));
            assert!((0.0..=1.0).contains(&(1.0 - r)));
        }
    }

    #[test]
    fn intersect_matches_brute_force_over_all_surfaces() {
        // 10^4 random rays against a multi-surface scene; oracle re-derives
        // the nearest hit per shape analytically.
        let mut scene = cylinder_scene(20.0, 5.0);
        scene.surfaces.push(Surface {
            name: "floor".into(),
            shape: Shape::Plane {
                point: Vec3::new(0.0, 0.0, 40.0),
                normal: Vec3::new(0.0, 0.0, -1.0),
            },
            roughness: 0.2,
            inside: 1,
            outside: 0,
        });
        for i in 0..10_000u64 {
            let u = |k: u32| crate::rng::u01(23, i, k, crate::rng::Stream::EmitDirU1);
            let o = Vec3::new(u(0) * 40.0 - 20.0, u(1) * 2.0 - 1.0, u(2) * 10.0);
            let d = Vec3::new(u(3) * 2.0 - 1.0, u(4) * 0.4 - 0.2, u(5) * 2.0 - 1.0);
            if d.norm() < 1e-3 {
                continue;
            }
            let d = d.normalized();
            let got = intersect(o, d, &scene).map(|h| h.t);
            // Oracle: circle quadratic + plane, independently.
            let mut want: Option<f64> = None;
            let (ox, oz) = (o.x, o.z - 20.0);
            let a = d.x * d.x + d.z * d.z;
            if a > 1e-18 {
                let b = d.x * ox + d.z * oz;
                let c = ox * ox + oz * oz - 25.0;
                let disc = b * b - a * c;
                if disc > 0.0 {
                    for t in [(-b - disc.sqrt()) / a, (-b + disc.sqrt()) / a] {
                        if t > EPS_GEOM && want.map_or(true, |w| t < w) {
                            want = Some(t);
                        }
                    }
                }
            }
            if d.z.abs() > 1e-15 {
                let t = (40.0 - o.z) / d.z;
                if t > EPS_GEOM && want.map_or(true, |w| t < w) {
                    want = Some(t);
                }
            }
            match (got, want) {
                (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9),
                (None, None) => {}
                (g, w) => panic!("ray {i}: {g:?} vs {w:?}"),
            }
        }
    }
}
