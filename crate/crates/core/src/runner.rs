//! Command implementations behind the CLI: forward rendering, inverse
//! optimization, and gradient checking, including reference-image loading
//! and output writing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::{load_run_config, load_scene, ConfigError, RunConfig};
use crate::gradcheck::{das_dot_product_test, run_sweep};
use crate::io::{
    read_image, write_csv, write_image, write_manifest, write_pgm, ImageMeta, IoError,
};
use crate::objective::{render, Problem};
use crate::optimize::run_optimization;
use crate::transport::TransportError;

/// Bundled forward-simulation config, also used by `--dump-defaults`.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/cylinder.cfg");

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Fs {
        path: String,
        source: std::io::Error,
    },
}

impl RunError {
    /// 1 for configuration/usage problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Usage(_) => 1,
            _ => 2,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Fs {
        path: dir.display().to_string(),
        source: e,
    })
}

fn meta_for(p: &Problem) -> ImageMeta {
    ImageMeta {
        nx: p.grid.nx,
        nz: p.grid.nz,
        x_min: p.grid.x0,
        x_max: p.grid.x(p.grid.nx - 1),
        z_min: p.grid.z0,
        z_max: p.grid.z(p.grid.nz - 1),
    }
}

/// Resample a stored image onto the problem grid by bilinear
/// interpolation. `rescale` converts the stored extent into simulation
/// millimeters; pixels outside the stored extent become 0.
pub fn resample_reference(
    img: &[f64],
    meta: &ImageMeta,
    rescale: f64,
    p: &Problem,
) -> Vec<f64> {
    let x_min = meta.x_min * rescale;
    let x_max = meta.x_max * rescale;
    let z_min = meta.z_min * rescale;
    let z_max = meta.z_max * rescale;
    let dx = (x_max - x_min) / (meta.nx - 1) as f64;
    let dz = (z_max - z_min) / (meta.nz - 1) as f64;
    let mut out = vec![0.0; p.grid.len()];
    for iz in 0..p.grid.nz {
        let z = p.grid.z(iz);
        for ix in 0..p.grid.nx {
            let x = p.grid.x(ix);
            let u = (x - x_min) / dx;
            let v = (z - z_min) / dz;
            if u < 0.0 || v < 0.0 || u > (meta.nx - 1) as f64 || v > (meta.nz - 1) as f64 {
                continue;
            }
            let (i0, j0) = (u.floor() as usize, v.floor() as usize);
            let (i1, j1) = ((i0 + 1).min(meta.nx - 1), (j0 + 1).min(meta.nz - 1));
            let (fu, fv) = (u - i0 as f64, v - j0 as f64);
            let at = |i: usize, j: usize| img[j * meta.nx + i];
            out[iz * p.grid.nx + ix] = (1.0 - fu) * (1.0 - fv) * at(i0, j0)
                + fu * (1.0 - fv) * at(i1, j0)
                + (1.0 - fu) * fv * at(i0, j1)
                + fu * fv * at(i1, j1);
        }
    }
    out
}

/// Produce one reference image per angle, either by rendering a truth
/// scene under the same acquisition or by loading recorded images.
pub fn resolve_references(rc: &RunConfig) -> Result<Vec<Vec<f64>>, RunError> {
    let opt = rc
        .optimize
        .as_ref()
        .ok_or_else(|| RunError::Usage("config has no [optimize] section".into()))?;
    if let Some(scene_path) = &opt.reference_scene {
        let truth_scene = load_scene(scene_path)?;
        let mut truth = rc.problem.clone();
        truth.scene = truth_scene;
        return Ok(render(&truth).per_angle);
    }
    let pattern = opt
        .reference_image
        .as_ref()
        .expect("validated: image or scene present");
    let paths: Vec<PathBuf> = if rc.problem.angles.len() == 1 {
        vec![pattern.clone()]
    } else {
        let s = pattern.display().to_string();
        if !s.contains("{}") {
            return Err(RunError::Usage(
                "several angles need a reference_image pattern containing {}".into(),
            ));
        }
        (0..rc.problem.angles.len())
            .map(|a| PathBuf::from(s.replace("{}", &a.to_string())))
            .collect()
    };
    let mut refs = Vec::new();
    for path in paths {
        let (img, meta) = read_image(&path)?;
        refs.push(resample_reference(&img, &meta, opt.rescale, &rc.problem));
    }
    Ok(refs)
}

fn write_images(
    p: &Problem,
    per_angle: &[Vec<f64>],
    compound: &[f64],
    out_dir: &Path,
    prefix: &str,
) -> Result<Vec<String>, RunError> {
    let meta = meta_for(p);
    let mut outputs = Vec::new();
    for (a, img) in per_angle.iter().enumerate() {
        let stem = out_dir.join(format!("{prefix}_angle{a:02}"));
        let f64_path = stem.with_extension("f64");
        let pgm_path = stem.with_extension("pgm");
        write_image(&f64_path, img, &meta)?;
        write_pgm(&pgm_path, img, p.grid.nx, p.grid.nz)?;
        outputs.push(f64_path.display().to_string());
        outputs.push(pgm_path.display().to_string());
    }
    if per_angle.len() > 1 {
        let stem = out_dir.join(format!("{prefix}_compound"));
        write_image(&stem.with_extension("f64"), compound, &meta)?;
        write_pgm(&stem.with_extension("pgm"), compound, p.grid.nx, p.grid.nz)?;
        outputs.push(stem.with_extension("f64").display().to_string());
    }
    Ok(outputs)
}

pub fn cmd_render(config: &Path, out_dir: &Path) -> Result<(), RunError> {
    let rc = load_run_config(config)?;
    ensure_dir(out_dir)?;
    let start = Instant::now();
    let rendered = render(&rc.problem);
    println!(
        "rendered {} angle(s), {} paths each, {:.2}s ({} arrivals past the record dropped)",
        rc.problem.angles.len(),
        rc.problem.n_paths(),
        start.elapsed().as_secs_f64(),
        rendered.dropped,
    );
    let outputs = write_images(
        &rc.problem,
        &rendered.per_angle,
        &rendered.compound,
        out_dir,
        "bmode",
    )?;
    write_manifest(
        &out_dir.join("manifest.txt"),
        &config.display().to_string(),
        &rc.text,
        rc.problem.seed,
        &outputs,
    )?;
    println!("wrote {} file(s) to {}", outputs.len() + 1, out_dir.display());
    Ok(())
}

pub fn cmd_optimize(config: &Path, out_dir: &Path) -> Result<(), RunError> {
    let rc = load_run_config(config)?;
    let opt = rc
        .optimize
        .clone()
        .ok_or_else(|| RunError::Usage("optimize needs an [optimize] section".into()))?;
    ensure_dir(out_dir)?;
    let references = resolve_references(&rc)?;
    let mut problem = rc.problem.clone();
    let mut specs = opt.params.clone();
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    println!(
        "optimizing {} parameter(s) [{}] for {} iterations",
        specs.len(),
        names.join(", "),
        opt.iterations
    );
    let start = Instant::now();
    let history = run_optimization(
        &mut problem,
        &mut specs,
        &references,
        opt.iterations,
        opt.max_grad_norm,
        |log| {
            let vals: Vec<String> = log
                .physical
                .iter()
                .zip(&names)
                .map(|(v, n)| format!("{n}={v:.5}"))
                .collect();
            println!(
                "iter {:4}  loss {:.6e}  |g| {:.3e}  {}",
                log.iteration,
                log.loss,
                log.grad_norm,
                vals.join("  ")
            );
        },
    )?;
    println!("finished in {:.1}s", start.elapsed().as_secs_f64());

    let mut header = vec!["iteration".to_string(), "loss".into(), "grad_norm".into()];
    header.extend(names.iter().cloned());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<f64>> = history
        .iter()
        .map(|l| {
            let mut row = vec![l.iteration as f64, l.loss, l.grad_norm];
            row.extend(&l.physical);
            row
        })
        .collect();
    let csv_path = out_dir.join("history.csv");
    write_csv(&csv_path, &header_refs, &rows)?;

    let mut final_text = String::new();
    for s in &specs {
        final_text.push_str(&format!("{} = {}\n", s.name, s.physical()));
    }
    let params_path = out_dir.join("final_params.txt");
    std::fs::write(&params_path, final_text).map_err(|e| RunError::Fs {
        path: params_path.display().to_string(),
        source: e,
    })?;

    let rendered = render(&problem);
    let mut outputs = write_images(
        &problem,
        &rendered.per_angle,
        &rendered.compound,
        out_dir,
        "final",
    )?;
    outputs.push(csv_path.display().to_string());
    outputs.push(params_path.display().to_string());
    write_manifest(
        &out_dir.join("manifest.txt"),
        &config.display().to_string(),
        &rc.text,
        rc.problem.seed,
        &outputs,
    )?;
    Ok(())
}

pub fn cmd_gradcheck(config: &Path, out_dir: &Path) -> Result<(), RunError> {
    let rc = load_run_config(config)?;
    let opt = rc
        .optimize
        .clone()
        .ok_or_else(|| {
            RunError::Usage("gradcheck reads its targets from the [param] sections".into())
        })?;
    ensure_dir(out_dir)?;
    let references = resolve_references(&rc)?;

    let worst = das_dot_product_test(rc.problem.seed, 100);
    println!("delay-and-sum adjoint identity over 100 pairs: max relative error {worst:.3e}");

    let targets: Vec<(String, crate::optimize::params::ParamTarget)> = opt
        .params
        .iter()
        .map(|s| (s.name.clone(), s.target))
        .collect();
    let mut problem = rc.problem.clone();
    for s in &opt.params {
        problem.write(s.target, s.physical());
    }
    let results = run_sweep(&problem, &targets, &references)?;
    let mut outputs = Vec::new();
    for r in &results {
        println!(
            "{}: replay gradient {:.6e}, best FD relative error {:.3e}, curve nonmonotone: {}",
            r.name,
            r.ad,
            r.best_rel_err,
            r.error_curve_is_nonmonotone()
        );
        let rows: Vec<Vec<f64>> = r
            .points
            .iter()
            .map(|pt| vec![pt.eps, pt.fd, r.ad, pt.rel_err])
            .collect();
        let path = out_dir.join(format!("gradcheck_{}.csv", r.name));
        write_csv(&path, &["eps", "fd", "ad", "rel_err"], &rows)?;
        outputs.push(path.display().to_string());
    }
    write_manifest(
        &out_dir.join("manifest.txt"),
        &config.display().to_string(),
        &rc.text,
        rc.problem.seed,
        &outputs,
    )?;
    Ok(())
}
