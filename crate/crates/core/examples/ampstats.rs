//! Scratch diagnostic: arrival amplitude distribution for a config.
use sonodiff::config::load_run_config;
use sonodiff::transport::trace_event;

fn main() {
    let rc = load_run_config(std::path::Path::new("configs/cylinder.cfg")).unwrap();
    let p = rc.problem.trace_params(0);
    let (arr, _) = trace_event(&p);
    let mut amps: Vec<f64> = arr.iter().map(|a| a.amplitude.abs()).collect();
    amps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = amps.len();
    let q = |f: f64| amps[((n as f64 - 1.0) * f) as usize];
    println!("n arrivals {n}");
    for f in [0.5, 0.9, 0.99, 0.999, 0.9999, 0.99999, 1.0] {
        println!("q{f} = {:.6e}", q(f));
    }
    let total: f64 = amps.iter().sum();
    let top: f64 = amps[n - 100..].iter().sum();
    println!("top-100 arrivals carry {:.2}% of |amplitude| mass", 100.0 * top / total);
    // time histogram of the top 100
    for a in arr.iter().filter(|a| a.amplitude.abs() >= q(1.0) * 0.1).take(20) {
        println!("big: e={} t={:.3}us amp={:.3e}", a.element, a.time * 1e6, a.amplitude);
    }
}
