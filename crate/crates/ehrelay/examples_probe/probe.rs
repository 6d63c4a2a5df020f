fn main() {
    use ehrelay::model::{EnergyDistribution, SystemParams};
    use ehrelay::qbd_solver::{solve, DEFAULT_MAX_ITER, DEFAULT_TOL};
    let params = SystemParams::new(0.3, 0.9, 10, 100, EnergyDistribution::uniform(5).unwrap()).unwrap();
    for alpha in [0.1, 0.2, 0.24, 0.25, 0.3, 0.5] {
        let t0 = std::time::Instant::now();
        match solve(&params, alpha, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(sol) => println!("alpha={alpha}: sp={:.12} stable={} iters={} mean_qd={:.6} ({:?})",
                sol.spectral_radius, sol.stable, sol.iterations, sol.mean_qd, t0.elapsed()),
            Err(e) => println!("alpha={alpha}: ERR {e} ({:?})", t0.elapsed()),
        }
    }
}
