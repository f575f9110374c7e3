//! Plain-text configuration: an INI-style parser, scene descriptions, and
//! run configurations that assemble a full [`Problem`].
//!
//! Lengths are mm, speeds m/s, impedances MRayl, attenuations Np/m,
//! frequencies Hz, angles in the files are degrees.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imaging::{BeamformGrid, Normalization};
use crate::math::Vec3;
use crate::objective::Problem;
use crate::optimize::params::ParamTarget;
use crate::optimize::ParamSpec;
use crate::scene::{load_obj, Medium, Scene, Shape, Surface};
use crate::transducer::TransducerArray;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One `[header]` or `[header argument]` block with its key/value entries
/// in file order.
#[derive(Clone, Debug)]
pub struct IniSection {
    pub name: String,
    pub arg: Option<String>,
    pub entries: Vec<(String, String)>,
    pub line: usize,
}

impl IniSection {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn parse_ini(text: &str, path: &str) -> Result<Vec<IniSection>, ConfigError> {
    let mut sections: Vec<IniSection> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let stripped = match raw.find(['#', ';']) {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        if let Some(inner) = stripped.strip_prefix('[') {
            let inner = inner.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                path: path.into(),
                line,
                message: "unterminated section header".into(),
            })?;
            let mut parts = inner.split_whitespace();
            let name = parts.next().ok_or_else(|| ConfigError::Parse {
                path: path.into(),
                line,
                message: "empty section header".into(),
            })?;
            let arg = parts.next().map(str::to_string);
            if parts.next().is_some() {
                return Err(ConfigError::Parse {
                    path: path.into(),
                    line,
                    message: "section header takes at most one argument".into(),
                });
            }
            sections.push(IniSection {
                name: name.to_string(),
                arg,
                entries: Vec::new(),
                line,
            });
        } else if let Some((k, v)) = stripped.split_once('=') {
            let section = sections.last_mut().ok_or_else(|| ConfigError::Parse {
                path: path.into(),
                line,
                message: "key before any section header".into(),
            })?;
            section
                .entries
                .push((k.trim().to_string(), v.trim().to_string()));
        } else {
            return Err(ConfigError::Parse {
                path: path.into(),
                line,
                message: format!("expected `key = value`, found `{stripped}`"),
            });
        }
    }
    Ok(sections)
}

fn invalid(path: &Path, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn need<'a>(sec: &'a IniSection, key: &str, path: &Path) -> Result<&'a str, ConfigError> {
    sec.get(key).ok_or_else(|| {
        invalid(
            path,
            format!("section [{}] is missing `{key}`", section_label(sec)),
        )
    })
}

fn section_label(sec: &IniSection) -> String {
    match &sec.arg {
        Some(a) => format!("{} {a}", sec.name),
        None => sec.name.clone(),
    }
}

fn parse_f64(sec: &IniSection, key: &str, path: &Path) -> Result<f64, ConfigError> {
    let raw = need(sec, key, path)?;
    raw.parse::<f64>().map_err(|_| {
        invalid(
            path,
            format!("[{}] {key}: `{raw}` is not a number", section_label(sec)),
        )
    })
}

fn parse_usize(sec: &IniSection, key: &str, path: &Path) -> Result<usize, ConfigError> {
    let raw = need(sec, key, path)?;
    raw.parse::<usize>().map_err(|_| {
        invalid(
            path,
            format!("[{}] {key}: `{raw}` is not an integer", section_label(sec)),
        )
    })
}

fn parse_f64_opt(sec: &IniSection, key: &str, path: &Path, default: f64) -> Result<f64, ConfigError> {
    match sec.get(key) {
        Some(_) => parse_f64(sec, key, path),
        None => Ok(default),
    }
}

/// Load a scene description. Relative mesh paths resolve against the scene
/// file's directory.
pub fn load_scene(path: &Path) -> Result<Scene<f64>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let sections = parse_ini(&text, &path.display().to_string())?;
    let dir = path.parent().unwrap_or(Path::new("."));

    let mut media = Vec::new();
    let mut medium_names = Vec::new();
    let mut surfaces: Vec<Surface<f64>> = Vec::new();
    let mut background_name: Option<String> = None;

    for sec in &sections {
        match sec.name.as_str() {
            "medium" => {
                let name = sec
                    .arg
                    .clone()
                    .ok_or_else(|| invalid(path, "[medium] needs a name argument"))?;
                if medium_names.contains(&name) {
                    return Err(invalid(path, format!("duplicate medium `{name}`")));
                }
                let m = Medium {
                    impedance: parse_f64(sec, "impedance", path)?,
                    sound_speed: parse_f64(sec, "sound_speed", path)?,
                    attenuation: parse_f64_opt(sec, "attenuation", path, 0.0)?,
                };
                if m.impedance <= 0.0 || m.sound_speed <= 0.0 || m.attenuation < 0.0 {
                    return Err(invalid(
                        path,
                        format!("medium `{name}` has out-of-range properties"),
                    ));
                }
                medium_names.push(name);
                media.push(m);
            }
            "surface" => {
                let name = sec
                    .arg
                    .clone()
                    .ok_or_else(|| invalid(path, "[surface] needs a name argument"))?;
                let medium_of = |key: &str| -> Result<usize, ConfigError> {
                    let n = need(sec, key, path)?;
                    medium_names
                        .iter()
                        .position(|m| m == n)
                        .ok_or_else(|| invalid(path, format!("unknown medium `{n}` in surface `{name}`")))
                };
                let roughness = parse_f64(sec, "roughness", path)?;
                if !(roughness > 0.0 && roughness <= 1.0) {
                    return Err(invalid(
                        path,
                        format!("surface `{name}`: roughness must be in (0, 1]"),
                    ));
                }
                let shape = match need(sec, "shape", path)? {
                    "cylinder" => {
                        let c = parse_pair(sec, "center", path)?;
                        let radius = parse_f64(sec, "radius", path)?;
                        if radius <= 0.0 {
                            return Err(invalid(path, format!("surface `{name}`: radius must be positive")));
                        }
                        Shape::Cylinder {
                            center: Vec3::new(c.0, 0.0, c.1),
                            radius,
                        }
                    }
                    "plane" => {
                        let p = parse_pair(sec, "point", path)?;
                        let n = parse_pair(sec, "normal", path)?;
                        let len = (n.0 * n.0 + n.1 * n.1).sqrt();
                        if len == 0.0 {
                            return Err(invalid(path, format!("surface `{name}`: zero normal")));
                        }
                        Shape::Plane {
                            point: Vec3::new(p.0, 0.0, p.1),
                            normal: Vec3::new(n.0 / len, 0.0, n.1 / len),
                        }
                    }
                    "mesh" => {
                        let rel = need(sec, "obj", path)?;
                        let obj_path = dir.join(rel);
                        let obj_text = fs::read_to_string(&obj_path).map_err(|e| ConfigError::Io {
                            path: obj_path.display().to_string(),
                            source: e,
                        })?;
                        let (vertices, faces) = load_obj(&obj_text)
                            .map_err(|m| invalid(&obj_path, m))?;
                        Shape::TriangleMesh { vertices, faces }
                    }
                    other => {
                        return Err(invalid(
                            path,
                            format!("surface `{name}`: unknown shape `{other}`"),
                        ))
                    }
                };
                let inside = medium_of("inside")?;
                let outside = medium_of("outside")?;
                surfaces.push(Surface {
                    name,
                    shape,
                    roughness,
                    inside,
                    outside,
                });
            }
            "scene" => {
                background_name = Some(need(sec, "background", path)?.to_string());
            }
            other => {
                return Err(invalid(path, format!("unknown section [{other}]")));
            }
        }
    }

    if media.is_empty() {
        return Err(invalid(path, "scene defines no media"));
    }
    let bg = background_name.ok_or_else(|| invalid(path, "missing [scene] background"))?;
    let background = medium_names
        .iter()
        .position(|m| *m == bg)
        .ok_or_else(|| invalid(path, format!("unknown background medium `{bg}`")))?;
    let names: HashSet<&String> = surfaces.iter().map(|s| &s.name).collect();
    if names.len() != surfaces.len() {
        return Err(invalid(path, "duplicate surface names"));
    }
    Ok(Scene {
        media,
        medium_names,
        surfaces,
        background,
    })
}

fn parse_pair(sec: &IniSection, key: &str, path: &Path) -> Result<(f64, f64), ConfigError> {
    let raw = need(sec, key, path)?;
    let parts: Vec<&str> = raw.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(invalid(
            path,
            format!("[{}] {key}: expected two numbers", section_label(sec)),
        ));
    }
    let a = parts[0].parse().map_err(|_| {
        invalid(path, format!("[{}] {key}: bad number", section_label(sec)))
    })?;
    let b = parts[1].parse().map_err(|_| {
        invalid(path, format!("[{}] {key}: bad number", section_label(sec)))
    })?;
    Ok((a, b))
}

/// Settings for an optimization run on top of the forward problem.
#[derive(Clone, Debug)]
pub struct OptimizeSection {
    pub iterations: usize,
    pub max_grad_norm: f64,
    /// Pre-rendered reference image (one file, or a `{}` pattern expanded
    /// per angle index when several angles are configured).
    pub reference_image: Option<PathBuf>,
    /// Scene to render references from, with the same acquisition chain.
    pub reference_scene: Option<PathBuf>,
    /// Spatial scale factor applied to a loaded reference's extent
    /// (recorded-image units to simulation units).
    pub rescale: f64,
    pub params: Vec<ParamSpec>,
}

/// A fully resolved run: the forward problem plus optimization settings
/// and the raw config text for provenance.
pub struct RunConfig {
    pub problem: Problem,
    pub optimize: Option<OptimizeSection>,
    pub scene_path: PathBuf,
    pub config_path: PathBuf,
    pub text: String,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let sections = parse_ini(&text, &path.display().to_string())?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let find = |name: &str| -> Result<&IniSection, ConfigError> {
        sections
            .iter()
            .find(|s| s.name == name && s.arg.is_none())
            .ok_or_else(|| invalid(path, format!("missing [{name}] section")))
    };

    let run = find("run")?;
    let scene_rel = need(run, "scene", path)?;
    let scene_path = dir.join(scene_rel);
    let scene = load_scene(&scene_path)?;
    let seed = need(run, "seed", path)?
        .parse::<u64>()
        .map_err(|_| invalid(path, "[run] seed must be a non-negative integer"))?;

    let array_sec = find("array")?;
    let n_elements = parse_usize(array_sec, "elements", path)?;
    let pitch = parse_f64(array_sec, "pitch", path)?;
    let main_lobe = parse_f64(array_sec, "main_lobe_deg", path)?.to_radians();
    let cutoff = parse_f64(array_sec, "cutoff_deg", path)?.to_radians();
    if n_elements < 2 || pitch <= 0.0 {
        return Err(invalid(path, "[array] needs elements >= 2 and pitch > 0"));
    }
    if !(0.0 < main_lobe && main_lobe < cutoff && cutoff <= std::f64::consts::FRAC_PI_2) {
        return Err(invalid(
            path,
            "[array] needs 0 < main_lobe_deg < cutoff_deg <= 90",
        ));
    }
    let array = TransducerArray::new(n_elements, pitch, main_lobe, cutoff);

    let pulse = find("pulse")?;
    let f_c = parse_f64(pulse, "center_frequency", path)?;
    let n_cycles = parse_f64(pulse, "cycles", path)?;
    if f_c <= 0.0 || n_cycles <= 0.0 {
        return Err(invalid(path, "[pulse] values must be positive"));
    }

    let sampling = find("sampling")?;
    let fs = parse_f64(sampling, "rate", path)?;
    let n_samples = parse_usize(sampling, "samples", path)?;
    if fs <= 0.0 || n_samples < 2 {
        return Err(invalid(path, "[sampling] needs rate > 0 and samples >= 2"));
    }

    let transport = find("transport")?;
    let rays_per_element = parse_usize(transport, "rays_per_element", path)?;
    let max_bounces = parse_usize(transport, "max_bounces", path)? as u32;
    if rays_per_element == 0 || max_bounces == 0 {
        return Err(invalid(
            path,
            "[transport] needs rays_per_element >= 1 and max_bounces >= 1",
        ));
    }
    let angles: Vec<f64> = need(transport, "angles_deg", path)?
        .split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map(f64::to_radians)
                .map_err(|_| invalid(path, format!("[transport] angles_deg: bad number `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if angles.is_empty() {
        return Err(invalid(path, "[transport] angles_deg is empty"));
    }

    let grid_sec = find("grid")?;
    let (x_min, x_max) = (
        parse_f64(grid_sec, "x_min", path)?,
        parse_f64(grid_sec, "x_max", path)?,
    );
    let (z_min, z_max) = (
        parse_f64(grid_sec, "z_min", path)?,
        parse_f64(grid_sec, "z_max", path)?,
    );
    let (nx, nz) = (
        parse_usize(grid_sec, "nx", path)?,
        parse_usize(grid_sec, "nz", path)?,
    );
    if !(x_max > x_min && z_max > z_min && z_min >= 0.0 && nx >= 2 && nz >= 2) {
        return Err(invalid(path, "[grid] extent is malformed"));
    }
    let grid = BeamformGrid::new(x_min, x_max, z_min, z_max, nx, nz);

    let display = find("display")?;
    let dynamic_range_db = parse_f64(display, "dynamic_range_db", path)?;
    if dynamic_range_db <= 0.0 {
        return Err(invalid(path, "[display] dynamic_range_db must be positive"));
    }

    let loss = find("loss")?;
    let w_l1 = parse_f64(loss, "l1", path)?;
    let w_l2 = parse_f64(loss, "l2", path)?;
    if w_l1 < 0.0 || w_l2 < 0.0 || (w_l1 == 0.0 && w_l2 == 0.0) {
        return Err(invalid(path, "[loss] needs non-negative weights, not both zero"));
    }

    let mut problem = Problem {
        scene,
        array,
        angles,
        rays_per_element,
        max_bounces,
        seed,
        f_c,
        n_cycles,
        fs,
        n_samples,
        grid,
        dynamic_range_db,
        normalization: Normalization::PeakDetached,
        w_l1,
        w_l2,
        ray_batches: 1,
        spreading: false,
    };

    // Channel recording must reach the deepest pixel.
    let pulse_window = crate::transport::Pulse::from_cycles(f_c, n_cycles).window_halfwidth();
    let t_needed = 2.0 * z_max * 1e-3 / problem.c0() + 2.0 * pulse_window;
    if (n_samples as f64 - 1.0) / fs < t_needed {
        return Err(invalid(
            path,
            format!(
                "[sampling] record length {:.2} us is shorter than the {:.2} us needed for the grid depth",
                (n_samples as f64 - 1.0) / fs * 1e6,
                t_needed * 1e6
            ),
        ));
    }

    let optimize = match sections.iter().find(|s| s.name == "optimize" && s.arg.is_none()) {
        None => None,
        Some(sec) => {
            let iterations = parse_usize(sec, "iterations", path)?;
            let max_grad_norm = parse_f64_opt(sec, "max_grad_norm", path, 10.0)?;
            if iterations == 0 || max_grad_norm <= 0.0 {
                return Err(invalid(path, "[optimize] iterations and max_grad_norm must be positive"));
            }
            let ray_batches = match sec.get("ray_batches") {
                Some(_) => parse_usize(sec, "ray_batches", path)?,
                None => 1,
            };
            if ray_batches == 0 {
                return Err(invalid(path, "[optimize] ray_batches must be >= 1"));
            }
            problem.ray_batches = ray_batches;
            let reference_image = sec.get("reference_image").map(|r| dir.join(r));
            let reference_scene = sec.get("reference_scene").map(|r| dir.join(r));
            if reference_image.is_none() && reference_scene.is_none() {
                return Err(invalid(
                    path,
                    "[optimize] needs reference_image or reference_scene",
                ));
            }
            let rescale = parse_f64_opt(sec, "rescale", path, 1.0)?;
            if rescale <= 0.0 {
                return Err(invalid(path, "[optimize] rescale must be positive"));
            }
            let mut params = Vec::new();
            for psec in sections.iter().filter(|s| s.name == "param") {
                let pname = psec
                    .arg
                    .clone()
                    .ok_or_else(|| invalid(path, "[param] needs a name argument"))?;
                let target = resolve_target(need(psec, "target", path)?, &problem.scene, path)?;
                let min = parse_f64(psec, "min", path)?;
                let max = parse_f64(psec, "max", path)?;
                let init = parse_f64(psec, "init", path)?;
                let lr = parse_f64(psec, "lr", path)?;
                if !(max > min) || !(min..=max).contains(&init) || lr <= 0.0 {
                    return Err(invalid(
                        path,
                        format!("[param {pname}] needs min < max, init inside the range, lr > 0"),
                    ));
                }
                params.push(ParamSpec::from_physical(&pname, target, min, max, init, lr));
            }
            if params.is_empty() {
                return Err(invalid(path, "[optimize] present but no [param] sections"));
            }
            crate::optimize::check_slots(params.len());
            Some(OptimizeSection {
                iterations,
                max_grad_norm,
                reference_image,
                reference_scene,
                rescale,
                params,
            })
        }
    };

    Ok(RunConfig {
        problem,
        optimize,
        scene_path,
        config_path: path.to_path_buf(),
        text,
    })
}

/// Parse a target spec like `impedance tissue`, `radius cyl`, `pitch`.
pub fn resolve_target(
    spec: &str,
    scene: &Scene<f64>,
    path: &Path,
) -> Result<ParamTarget, ConfigError> {
    let parts: Vec<&str> = spec.split_whitespace().collect();
    let medium = |name: &str| {
        scene
            .medium_index(name)
            .ok_or_else(|| invalid(path, format!("unknown medium `{name}` in target `{spec}`")))
    };
    let surface = |name: &str| {
        scene
            .surface_index(name)
            .ok_or_else(|| invalid(path, format!("unknown surface `{name}` in target `{spec}`")))
    };
    match parts.as_slice() {
        ["impedance", n] => Ok(ParamTarget::MediumImpedance(medium(n)?)),
        ["attenuation", n] => Ok(ParamTarget::MediumAttenuation(medium(n)?)),
        ["roughness", n] => Ok(ParamTarget::SurfaceRoughness(surface(n)?)),
        ["radius", n] => Ok(ParamTarget::SurfaceRadius(surface(n)?)),
        ["pitch"] => Ok(ParamTarget::Pitch),
        ["center_frequency"] => Ok(ParamTarget::CenterFrequency),
        _ => Err(invalid(path, format!("unknown parameter target `{spec}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = "\
[medium water]
impedance = 1.48
sound_speed = 1480

[medium tissue]
impedance = 1.63
sound_speed = 1540
attenuation = 11.5

[surface cyl]
shape = cylinder
center = 0 20
radius = 5
roughness = 0.3
inside = tissue
outside = water

[scene]
background = water
";

    fn write_scene(dir: &Path) -> PathBuf {
        let p = dir.join("t.scene");
        fs::write(&p, SCENE).unwrap();
        p
    }

    #[test]
    fn ini_parser_sections_and_comments() {
        let text = "# hello\n[a]\nk = 1 # trailing\n[b arg]\nx = y z\n";
        let s = parse_ini(text, "mem").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].get("k"), Some("1"));
        assert_eq!(s[1].arg.as_deref(), Some("arg"));
        assert_eq!(s[1].get("x"), Some("y z"));
        assert!(parse_ini("k = 1\n", "mem").is_err());
        assert!(parse_ini("[a\n", "mem").is_err());
        assert!(parse_ini("[a]\nnot a pair\n", "mem").is_err());
    }

    #[test]
    fn scene_loads_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_scene(dir.path());
        let scene = load_scene(&p).unwrap();
        assert_eq!(scene.media.len(), 2);
        assert_eq!(scene.background, 0);
        assert_eq!(scene.surfaces[0].inside, 1);
        match &scene.surfaces[0].shape {
            Shape::Cylinder { center, radius } => {
                assert_eq!((center.x, center.z, *radius), (0.0, 20.0, 5.0));
            }
            _ => panic!("wrong shape"),
        }
    }

    #[test]
    fn scene_rejects_bad_roughness_and_unknown_medium() {
        let dir = tempfile::tempdir().unwrap();
        let bad1 = SCENE.replace("roughness = 0.3", "roughness = 0");
        let p = dir.path().join("b1.scene");
        fs::write(&p, bad1).unwrap();
        assert!(load_scene(&p).is_err());
        let bad2 = SCENE.replace("inside = tissue", "inside = bone");
        fs::write(&p, bad2).unwrap();
        assert!(load_scene(&p).is_err());
    }

    fn run_cfg(scene_name: &str) -> String {
        format!(
            "\
[run]
scene = {scene_name}
seed = 7

[array]
elements = 16
pitch = 0.3
main_lobe_deg = 20
cutoff_deg = 60

[pulse]
center_frequency = 5e6
cycles = 3

[sampling]
rate = 40e6
samples = 2048

[transport]
rays_per_element = 32
max_bounces = 4
angles_deg = 0, 5

[grid]
x_min = -2
x_max = 2
z_min = 10
z_max = 22
nx = 17
nz = 33

[display]
dynamic_range_db = 60

[loss]
l1 = 1
l2 = 1
"
        )
    }

    #[test]
    fn run_config_builds_problem() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path());
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, run_cfg("t.scene")).unwrap();
        let rc = load_run_config(&cfg).unwrap();
        assert_eq!(rc.problem.array.n_elements, 16);
        assert_eq!(rc.problem.angles.len(), 2);
        assert!((rc.problem.angles[1] - 5f64.to_radians()).abs() < 1e-15);
        assert!(rc.optimize.is_none());
        assert_eq!(rc.problem.seed, 7);
    }

    #[test]
    fn run_config_rejects_short_record() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path());
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, run_cfg("t.scene").replace("samples = 2048", "samples = 256")).unwrap();
        let err = match load_run_config(&cfg) {
            Err(e) => e,
            Ok(_) => panic!("short record accepted"),
        };
        assert!(err.to_string().contains("record length"));
    }

    #[test]
    fn optimize_section_with_params() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path());
        let cfg = dir.path().join("run.cfg");
        let text = run_cfg("t.scene")
            + "\
[optimize]
iterations = 10
ray_batches = 2
max_grad_norm = 5
reference_scene = t.scene

[param radius]
target = radius cyl
min = 2
max = 8
init = 4
lr = 0.02

[param impedance]
target = impedance tissue
min = 1.0
max = 2.6
init = 1.5
lr = 0.02
";
        fs::write(&cfg, text).unwrap();
        let rc = load_run_config(&cfg).unwrap();
        let opt = rc.optimize.unwrap();
        assert_eq!(opt.params.len(), 2);
        assert_eq!(opt.iterations, 10);
        assert_eq!(rc.problem.ray_batches, 2);
        assert_eq!(
            opt.params[0].target,
            ParamTarget::SurfaceRadius(0)
        );
        assert!((opt.params[0].physical() - 4.0).abs() < 1e-12);
        assert_eq!(
            opt.params[1].target,
            ParamTarget::MediumImpedance(1)
        );
    }

    #[test]
    fn bad_target_and_bad_range_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path());
        let scene = load_scene(&dir.path().join("t.scene")).unwrap();
        assert!(resolve_target("radius nosuch", &scene, Path::new("x")).is_err());
        assert!(resolve_target("banana", &scene, Path::new("x")).is_err());
        assert!(resolve_target("pitch", &scene, Path::new("x")).is_ok());
        let cfg = dir.path().join("run.cfg");
        let text = run_cfg("t.scene")
            + "[optimize]\niterations = 5\nreference_scene = t.scene\n[param r]\ntarget = radius cyl\nmin = 8\nmax = 2\ninit = 4\nlr = 0.1\n";
        fs::write(&cfg, text).unwrap();
        assert!(load_run_config(&cfg).is_err());
    }
}
