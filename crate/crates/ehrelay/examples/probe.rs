fn main() {
    use ehrelay::model::{EnergyDistribution, SystemParams};
    use ehrelay::optimizers::{compute_tn, optimize_dynamic, optimize_static};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);
    let mut violations = 0;
    for draw in 0..40 {
        let k = rng.gen_range(3..=12);
        let b_max = rng.gen_range(1..=k);
        let n_cap = rng.gen_range(2 * k..=4 * k);
        let p_s = rng.gen_range(0.1..0.6);
        let p_r = rng.gen_range(0.2..1.0);
        let params = SystemParams::new(p_s, p_r, k, n_cap, EnergyDistribution::uniform(b_max).unwrap()).unwrap();
        let t0 = std::time::Instant::now();
        let stat = optimize_static(&params, 0.01).unwrap();
        let dynr = optimize_dynamic(&params, 0.01).unwrap();
        let ok = dynr.objective <= stat.objective + 1e-9;
        if !ok { violations += 1; }
        let t_n = compute_tn(&params).unwrap();
        println!(
            "{draw:2}: pS={p_s:.3} pR={p_r:.3} K={k} bmax={b_max} N={n_cap} tN={t_n:.3} 1/pS={:.3} | static {:.6} dyn {:.6} {} [{:?}]",
            1.0/p_s, stat.objective, dynr.objective, if ok {"OK"} else {"VIOLATION"}, t0.elapsed()
        );
    }
    println!("violations: {violations}/40");
}
