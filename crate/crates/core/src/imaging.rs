//! Delay-and-sum imaging chain: channel data to beamformed RF, envelope
//! detection by quadrature demodulation, and log compression to a [0, 1]
//! B-mode image.
//!
//! Every stage has a hand-written adjoint so image-space gradients can be
//! pulled back onto the channel-data grid exactly (the delay-and-sum
//! adjoint is the literal transpose of the gather, verified by dot-product
//! tests).

use crate::transducer::TransducerArray;
use crate::transport::ChannelData;

/// Floor inside the envelope square root so the gradient stays finite on
/// empty pixels.
const ENV_FLOOR: f64 = 1e-30;

/// Regular imaging grid, mm. Pixels are stored row-major by depth:
/// `idx = iz * nx + ix`.
#[derive(Clone, Copy, Debug)]
pub struct BeamformGrid {
    pub x0: f64,
    pub z0: f64,
    pub dx: f64,
    pub dz: f64,
    pub nx: usize,
    pub nz: usize,
}

impl BeamformGrid {
    pub fn new(x_min: f64, x_max: f64, z_min: f64, z_max: f64, nx: usize, nz: usize) -> Self {
        assert!(nx >= 2 && nz >= 2);
        assert!(x_max > x_min && z_max > z_min);
        BeamformGrid {
            x0: x_min,
            z0: z_min,
            dx: (x_max - x_min) / (nx - 1) as f64,
            dz: (z_max - z_min) / (nz - 1) as f64,
            nx,
            nz,
        }
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    #[inline]
    pub fn z(&self, iz: usize) -> f64 {
        self.z0 + iz as f64 * self.dz
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Round-trip delay in seconds for pixel (x, z) and element `e` under a
/// plane-wave transmit at `angle`. Matches the transmit-delay convention:
/// the earliest element fires at t = 0.
#[inline]
pub(crate) fn pixel_delay(
    array: &TransducerArray<f64>,
    angle: f64,
    c0: f64,
    x: f64,
    z: f64,
    e: usize,
) -> f64 {
    let half = (array.n_elements as f64 - 1.0) / 2.0 * array.pitch;
    let t_shift = (-half * angle.sin().abs()).min(0.0) * 1e-3 / c0;
    let t_tx = (x * angle.sin() + z * angle.cos()) * 1e-3 / c0 - t_shift;
    let xe = (e as f64 - (array.n_elements as f64 - 1.0) / 2.0) * array.pitch;
    let t_rx = ((x - xe) * (x - xe) + z * z).sqrt() * 1e-3 / c0;
    t_tx + t_rx
}

/// Hann receive-apodization weight for element `e` of `n` (applied
/// identically in the forward gather and its adjoint). Tapering the
/// aperture suppresses the lateral sidelobe ridge that an unweighted sum
/// spreads across the image at the depth of a strong specular reflector.
#[inline]
pub(crate) fn apodization(n: usize, e: usize) -> f64 {
    let t = std::f64::consts::PI * (e as f64 + 0.5) / n as f64;
    t.sin() * t.sin()
}

/// Delay-and-sum beamforming: for each pixel, gather the two-tap linearly
/// interpolated channel sample at the round-trip delay of every element and
/// sum with Hann receive-apodization weights.
pub fn das_forward(
    ch: &ChannelData,
    array: &TransducerArray<f64>,
    grid: &BeamformGrid,
    c0: f64,
    angle: f64,
) -> Vec<f64> {
    let mut rf = vec![0.0; grid.len()];
    for iz in 0..grid.nz {
        let z = grid.z(iz);
        for ix in 0..grid.nx {
            let x = grid.x(ix);
            let mut acc = 0.0;
            for e in 0..ch.n_elements {
                let s = pixel_delay(array, angle, c0, x, z, e) * ch.fs;
                let k = s.floor();
                if k < 0.0 || k as usize + 1 >= ch.n_samples {
                    continue;
                }
                let k = k as usize;
                let frac = s - k as f64;
                let base = e * ch.n_samples + k;
                let w = apodization(ch.n_elements, e);
                acc += w * ((1.0 - frac) * ch.values[base] + frac * ch.values[base + 1]);
            }
            rf[iz * grid.nx + ix] = acc;
        }
    }
    rf
}

/// Exact transpose of [`das_forward`]: scatter the RF adjoint back onto the
/// channel grid with the same taps and weights. Accumulates into
/// `ch.adjoint`.
pub fn das_adjoint(
    adj_rf: &[f64],
    ch: &mut ChannelData,
    array: &TransducerArray<f64>,
    grid: &BeamformGrid,
    c0: f64,
    angle: f64,
) {
    assert_eq!(adj_rf.len(), grid.len());
    for iz in 0..grid.nz {
        let z = grid.z(iz);
        for ix in 0..grid.nx {
            let a = adj_rf[iz * grid.nx + ix];
            if a == 0.0 {
                continue;
            }
            let x = grid.x(ix);
            for e in 0..ch.n_elements {
                let s = pixel_delay(array, angle, c0, x, z, e) * ch.fs;
                let k = s.floor();
                if k < 0.0 || k as usize + 1 >= ch.n_samples {
                    continue;
                }
                let k = k as usize;
                let frac = s - k as f64;
                let base = e * ch.n_samples + k;
                let w = apodization(ch.n_elements, e);
                ch.adjoint[base] += w * (1.0 - frac) * a;
                ch.adjoint[base + 1] += w * frac * a;
            }
        }
    }
}

/// Intermediates from envelope detection kept for the backward pass.
pub struct EnvelopeState {
    pub env: Vec<f64>,
    i_f: Vec<f64>,
    q_f: Vec<f64>,
    half: usize,
    norm: f64,
    carrier_cos: Vec<f64>,
    carrier_sin: Vec<f64>,
}

/// Moving-average box filter along each image column with a constant 1/M
/// normalization (zero padding at the edges), which makes the operator its
/// own transpose.
fn box_filter_columns(src: &[f64], grid: &BeamformGrid, half: usize, norm: f64) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for ix in 0..grid.nx {
        for iz in 0..grid.nz {
            let lo = iz.saturating_sub(half);
            let hi = (iz + half).min(grid.nz - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += src[j * grid.nx + ix];
            }
            out[iz * grid.nx + ix] = acc * norm;
        }
    }
    out
}

/// Envelope by quadrature demodulation: mix each column against the
/// round-trip carrier exp(-i 2 pi f_c 2z/c0), low-pass both quadratures
/// with a half-wavelength box filter, and take the magnitude.
pub fn envelope(
    rf: &[f64],
    grid: &BeamformGrid,
    f_c: f64,
    c0: f64,
) -> EnvelopeState {
    assert_eq!(rf.len(), grid.len());
    // Demodulation carrier sampled at each depth row.
    let mut carrier_cos = vec![0.0; grid.nz];
    let mut carrier_sin = vec![0.0; grid.nz];
    for iz in 0..grid.nz {
        let phase = 2.0 * std::f64::consts::PI * f_c * (2.0 * grid.z(iz) * 1e-3 / c0);
        carrier_cos[iz] = phase.cos();
        carrier_sin[iz] = phase.sin();
    }
    let mut i_raw = vec![0.0; rf.len()];
    let mut q_raw = vec![0.0; rf.len()];
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let v = rf[iz * grid.nx + ix];
            i_raw[iz * grid.nx + ix] = v * carrier_cos[iz];
            q_raw[iz * grid.nx + ix] = -v * carrier_sin[iz];
        }
    }
    // Window spanning half a wavelength of depth (one carrier period of
    // round-trip phase).
    let lambda_mm = c0 / f_c * 1e3;
    let half = ((lambda_mm / 2.0) / (2.0 * grid.dz)).round().max(1.0) as usize;
    let norm = 1.0 / (2 * half + 1) as f64;
    let i_f = box_filter_columns(&i_raw, grid, half, norm);
    let q_f = box_filter_columns(&q_raw, grid, half, norm);
    let env = i_f
        .iter()
        .zip(&q_f)
        .map(|(i, q)| (i * i + q * q + ENV_FLOOR).sqrt())
        .collect();
    EnvelopeState {
        env,
        i_f,
        q_f,
        half,
        norm,
        carrier_cos,
        carrier_sin,
    }
}

/// Pull an envelope adjoint back to the RF image.
pub fn envelope_vjp(state: &EnvelopeState, grid: &BeamformGrid, adj_env: &[f64]) -> Vec<f64> {
    assert_eq!(adj_env.len(), state.env.len());
    let n = state.env.len();
    let mut d_if = vec![0.0; n];
    let mut d_qf = vec![0.0; n];
    for k in 0..n {
        d_if[k] = adj_env[k] * state.i_f[k] / state.env[k];
        d_qf[k] = adj_env[k] * state.q_f[k] / state.env[k];
    }
    // The box filter is self-adjoint under constant normalization.
    let d_i = box_filter_columns(&d_if, grid, state.half, state.norm);
    let d_q = box_filter_columns(&d_qf, grid, state.half, state.norm);
    let mut d_rf = vec![0.0; n];
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let k = iz * grid.nx + ix;
            d_rf[k] = d_i[k] * state.carrier_cos[iz] - d_q[k] * state.carrier_sin[iz];
        }
    }
    d_rf
}

/// How the log-compression reference level is chosen.
#[derive(Clone, Copy, Debug)]
pub enum Normalization {
    /// Divide by the current envelope peak; the peak is treated as a
    /// constant in the backward pass.
    PeakDetached,
    /// Divide by a fixed level (used when two evaluations must share one
    /// normalization, e.g. finite-difference checks).
    Fixed(f64),
}

/// Log compression output with the per-pixel clip mask for the backward
/// pass.
pub struct CompressedImage {
    pub img: Vec<f64>,
    pub env_max: f64,
    /// 1 where the pixel is strictly inside (0, 1), else 0.
    mask: Vec<f64>,
}

/// Map the envelope to display range: 1 + 20 log10(env / env_max) / DR,
/// clipped to [0, 1]. Saturated pixels pass no gradient.
pub fn log_compress(env: &[f64], dynamic_range_db: f64, norm: Normalization) -> CompressedImage {
    assert!(dynamic_range_db > 0.0);
    let env_max = match norm {
        Normalization::PeakDetached => env.iter().cloned().fold(f64::MIN, f64::max).max(1e-300),
        Normalization::Fixed(v) => {
            assert!(v > 0.0, "normalization level must be positive");
            v
        }
    };
    let mut img = vec![0.0; env.len()];
    let mut mask = vec![0.0; env.len()];
    for k in 0..env.len() {
        let y = 1.0 + 20.0 * (env[k] / env_max).log10() / dynamic_range_db;
        let (c, pass) = crate::optimize::clip01(y);
        img[k] = c;
        mask[k] = pass;
    }
    CompressedImage { img, env_max, mask }
}

/// Pull an image adjoint back to the envelope.
pub fn log_compress_vjp(
    out: &CompressedImage,
    env: &[f64],
    dynamic_range_db: f64,
    adj_img: &[f64],
) -> Vec<f64> {
    let scale = 20.0 / (10f64.ln() * dynamic_range_db);
    (0..env.len())
        .map(|k| adj_img[k] * out.mask[k] * scale / env[k])
        .collect()
}

/// Everything computed while forming one B-mode image, kept so the
/// backward pass can reuse it.
pub struct BmodeState {
    pub rf: Vec<f64>,
    pub envelope: EnvelopeState,
    pub compressed: CompressedImage,
}

pub struct BmodeSettings {
    pub c0: f64,
    pub angle: f64,
    pub f_c: f64,
    pub dynamic_range_db: f64,
    pub normalization: Normalization,
}

/// Channel data to B-mode image.
pub fn bmode_forward(
    ch: &ChannelData,
    array: &TransducerArray<f64>,
    grid: &BeamformGrid,
    s: &BmodeSettings,
) -> BmodeState {
    let rf = das_forward(ch, array, grid, s.c0, s.angle);
    let envelope = envelope(&rf, grid, s.f_c, s.c0);
    let compressed = log_compress(&envelope.env, s.dynamic_range_db, s.normalization);
    BmodeState {
        rf,
        envelope,
        compressed,
    }
}

/// Pull an image-space adjoint all the way back onto `ch.adjoint`.
pub fn bmode_vjp(
    state: &BmodeState,
    adj_img: &[f64],
    ch: &mut ChannelData,
    array: &TransducerArray<f64>,
    grid: &BeamformGrid,
    s: &BmodeSettings,
) {
    let adj_env = log_compress_vjp(
        &state.compressed,
        &state.envelope.env,
        s.dynamic_range_db,
        adj_img,
    );
    let adj_rf = envelope_vjp(&state.envelope, grid, &adj_env);
    das_adjoint(&adj_rf, ch, array, grid, s.c0, s.angle);
}
