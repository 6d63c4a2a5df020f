//! Policy optimization: the closed-form boundary decode probability, the
//! non-cooperation test, golden-section searches for the delay-optimal
//! static and dynamic policies, and the zero-blocking throughput-optimal
//! threshold construction.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite_chain::solve_threshold;
use crate::linalg::lu_solve;
use crate::model::{Policy, SystemParams};
use crate::qbd_solver::{self, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Golden-section interior fraction.
const GOLDEN: f64 = 0.382;

/// Hard cap on golden-section iterations; the relative-width stop
/// condition cannot fire while the minimum sits on the lower bracket
/// edge, so the loop needs an absolute guard as well.
const GOLDEN_MAX_ITER: usize = 300;

/// Offset below the stability boundary at which delay evaluations are
/// capped to avoid the singular solve.
const BOUNDARY_GUARD: f64 = 1e-6;

/// Outcome of a policy search.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub best_policy: Policy,
    /// Objective value of `best_policy` (average delay, slots).
    pub objective: f64,
    /// False when staying out of the relay business is optimal.
    pub cooperation: bool,
    /// Every evaluated candidate with its objective.
    pub search_trace: Vec<(Policy, f64)>,
    pub evaluations: usize,
}

/// Decode probability that holds the relay data queue at the boundary of
/// stability: `E(G) p_R / (E(G) p_R + K (1 - p_S))`.
pub fn alpha_t(params: &SystemParams) -> f64 {
    let inflow = params.energy.mean() * params.p_det_r;
    inflow / (inflow + params.k_cost as f64 * (1.0 - params.p_det_s))
}

/// Expected slots to deliver one relay packet that arrives to a full
/// energy buffer, with harvesting in every following slot.
///
/// Each slot first harvests (capped at the buffer), then attempts a
/// transmission whenever at least `K` units are present, consuming `K`
/// per attempt. Computed exactly as the absorption time of the chain on
/// the energy level.
pub fn compute_tn(params: &SystemParams) -> Result<f64> {
    params.validate()?;
    if params.p_det_r <= 0.0 {
        return Err(Error::NonAbsorbing);
    }
    let n_cap = params.n_cap;
    let k = params.k_cost;
    let p_r = params.p_det_r;
    let gamma = &params.energy;

    let size = n_cap + 1;
    let mut system = Array2::<f64>::eye(size);
    for e in 0..size {
        for m in 0..=gamma.b_max() {
            let after_harvest = (e + m).min(n_cap);
            let p = gamma.prob(m);
            if after_harvest >= k {
                system[[e, after_harvest - k]] -= p * (1.0 - p_r);
            } else {
                system[[e, after_harvest]] -= p;
            }
        }
    }
    let t = lu_solve(&system, &Array1::ones(size)).map_err(|_| Error::NonAbsorbing)?;
    let t_n = t[n_cap];
    if !t_n.is_finite() || t_n < 1.0 - 1e-9 {
        return Err(Error::NonAbsorbing);
    }
    Ok(t_n)
}

/// True when never decoding is delay-optimal: the relay-side delay limit
/// exceeds the direct-link delay, `t_N > 1 / p_S`.
pub fn noncoop_check(params: &SystemParams) -> Result<bool> {
    Ok(compute_tn(params)? > 1.0 / params.p_det_s)
}

struct GoldenSearch {
    lo: f64,
    hi: f64,
    evaluations: usize,
    trace: Vec<(f64, f64)>,
}

/// Golden-section bracket narrowing with two fresh evaluations per step,
/// stopping when the relative bracket width falls below `eps`.
fn golden_section<F>(objective: &mut F, mut lo: f64, mut hi: f64, eps: f64) -> Result<GoldenSearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut evaluations = 0;
    let mut trace = Vec::new();
    for _ in 0..GOLDEN_MAX_ITER {
        if hi <= 0.0 || (hi - lo) / hi < eps || hi - lo < 1e-12 {
            break;
        }
        let x1 = lo + GOLDEN * (hi - lo);
        let x2 = hi - GOLDEN * (hi - lo);
        let f1 = objective(x1)?;
        let f2 = objective(x2)?;
        evaluations += 2;
        trace.push((x1, f1));
        trace.push((x2, f2));
        if f1 < f2 {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    Ok(GoldenSearch {
        lo,
        hi,
        evaluations,
        trace,
    })
}

fn noncooperation_result(params: &SystemParams, best_policy: Policy) -> OptimizationResult {
    OptimizationResult {
        best_policy,
        objective: 1.0 / params.p_det_s,
        cooperation: false,
        search_trace: Vec::new(),
        evaluations: 0,
    }
}

/// Delay-optimal static policy.
///
/// Returns the non-cooperation policy whenever it is provably optimal;
/// otherwise runs a golden-section search on `[0, alpha_t]` (delay is
/// infinite beyond the boundary, which would break a unimodal search on
/// `[0, 1]`) and returns the final bracket midpoint.
pub fn optimize_static(params: &SystemParams, eps: f64) -> Result<OptimizationResult> {
    params.validate()?;
    if eps <= 0.0 {
        return Err(Error::InvalidParams("eps must be positive".into()));
    }
    if noncoop_check(params)? {
        return Ok(noncooperation_result(params, Policy::Static(0.0)));
    }

    let boundary = alpha_t(params);
    let capped = |x: f64| x.min(boundary - BOUNDARY_GUARD).max(0.0);
    let mut delay_at = |x: f64| -> Result<f64> {
        let alpha = capped(x);
        let solution = qbd_solver::solve(params, alpha, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        if !solution.stable {
            return Ok(f64::INFINITY);
        }
        Ok(qbd_solver::static_metrics(params, alpha, &solution)?.delay)
    };

    let search = golden_section(&mut delay_at, 0.0, boundary, eps)?;
    let midpoint = capped(0.5 * (search.lo + search.hi));
    let objective = delay_at(midpoint)?;
    let evaluations = search.evaluations + 1;
    let mut search_trace: Vec<(Policy, f64)> = search
        .trace
        .iter()
        .map(|(x, f)| (Policy::Static(capped(*x)), *f))
        .collect();
    search_trace.push((Policy::Static(midpoint), objective));

    let noncoop_delay = 1.0 / params.p_det_s;
    if objective < noncoop_delay {
        Ok(OptimizationResult {
            best_policy: Policy::Static(midpoint),
            objective,
            cooperation: true,
            search_trace,
            evaluations,
        })
    } else {
        let mut result = noncooperation_result(params, Policy::Static(0.0));
        result.search_trace = search_trace;
        result.evaluations = evaluations;
        Ok(result)
    }
}

/// Delay-optimal dynamic policy over the threshold family.
///
/// For each threshold in the top `b_max` energy levels, a golden-section
/// search over the decode probability at the threshold state; the
/// incumbent starts at the non-cooperation delay so never decoding wins
/// whenever it should. Ties within 1e-9 keep the larger threshold.
pub fn optimize_dynamic(params: &SystemParams, eps: f64) -> Result<OptimizationResult> {
    params.validate()?;
    if eps <= 0.0 {
        return Err(Error::InvalidParams("eps must be positive".into()));
    }
    let n_cap = params.n_cap;
    let lowest = n_cap - params.energy.b_max() + 1;
    let noncoop_delay = 1.0 / params.p_det_s;

    let mut best_policy = Policy::Threshold {
        e_th: n_cap,
        beta: 0.0,
    };
    let mut best_objective = noncoop_delay;
    let mut cooperation = false;
    let mut evaluations = 0;
    let mut search_trace = Vec::new();

    for e_th in (lowest..=n_cap).rev() {
        let mut delay_at = |beta: f64| -> Result<f64> {
            let policy = Policy::Threshold { e_th, beta };
            Ok(solve_threshold(params, &policy)?.delay)
        };
        let search = golden_section(&mut delay_at, 0.0, 1.0, eps)?;

        // The bracket midpoint plus both edges; evaluating the edges lets
        // a boundary optimum (notably beta = 1) be returned exactly.
        let mut local_best: Option<(f64, f64)> = None;
        let mut candidates = vec![0.5 * (search.lo + search.hi), search.hi];
        if search.lo > 0.0 {
            candidates.push(search.lo);
        }
        let mut local_evals = Vec::new();
        for beta in candidates {
            let value = delay_at(beta)?;
            local_evals.push((beta, value));
            if local_best.is_none() || value < local_best.unwrap().1 {
                local_best = Some((beta, value));
            }
        }
        evaluations += search.evaluations + local_evals.len();
        for (beta, value) in search.trace.iter().chain(local_evals.iter()) {
            search_trace.push((
                Policy::Threshold {
                    e_th,
                    beta: *beta,
                },
                *value,
            ));
        }

        let (beta_star, objective) = local_best.expect("candidate list is never empty");
        if objective < best_objective - 1e-9 {
            best_policy = Policy::Threshold {
                e_th,
                beta: beta_star,
            };
            best_objective = objective;
            cooperation = true;
        }
    }

    Ok(OptimizationResult {
        best_policy,
        objective: best_objective,
        cooperation,
        search_trace,
        evaluations,
    })
}

/// Threshold policy that attains the boundary decode rate with zero
/// blocking: decode surely at or above `e_th`, which must not exceed
/// `N - b_max + 1` so a harvesting slot can never overflow the buffer.
pub fn throughput_optimal_dynamic(
    params: &SystemParams,
    e_th: Option<usize>,
) -> Result<Policy> {
    params.validate()?;
    let bound = params.n_cap - params.energy.b_max() + 1;
    let e_th = e_th.unwrap_or(bound);
    if e_th > bound {
        return Err(Error::InvalidThreshold { e_th, max: bound });
    }
    // "Decode iff q_e >= e_th" in the threshold-family parameterization:
    // beta = 1 makes the threshold state itself decode.
    Ok(Policy::Threshold { e_th, beta: 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EnergyDistribution, State};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn typical_params() -> SystemParams {
        SystemParams::new(0.3, 0.9, 10, 100, EnergyDistribution::uniform(5).unwrap()).unwrap()
    }

    fn with_p_det_r(p_det_r: f64) -> SystemParams {
        SystemParams::new(0.3, p_det_r, 10, 100, EnergyDistribution::uniform(5).unwrap()).unwrap()
    }

    #[test]
    fn boundary_decode_rate_closed_form() {
        // 2.5 * 0.9 / (2.5 * 0.9 + 10 * 0.7) = 2.25 / 9.25.
        assert_abs_diff_eq!(alpha_t(&typical_params()), 2.25 / 9.25, epsilon = 1e-12);
        assert_abs_diff_eq!(alpha_t(&typical_params()), 0.243243, epsilon = 1e-6);
    }

    #[test]
    fn boundary_decode_rate_limits() {
        let energy = EnergyDistribution::uniform(5).unwrap();
        let near_one =
            SystemParams::new(1.0 - 1e-9, 0.9, 10, 100, energy.clone()).unwrap();
        assert!(alpha_t(&near_one) > 0.9999);

        let no_energy = EnergyDistribution::new(vec![1.0, 0.0]).unwrap();
        let dry = SystemParams::new(0.3, 0.9, 10, 100, no_energy).unwrap();
        assert_eq!(alpha_t(&dry), 0.0);
    }

    #[test]
    fn transmission_time_is_one_slot_with_a_perfect_link() {
        let params =
            SystemParams::new(0.3, 1.0, 10, 100, EnergyDistribution::uniform(5).unwrap()).unwrap();
        assert_abs_diff_eq!(compute_tn(&params).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn transmission_time_dominates_geometric_retries() {
        for p_det_r in [0.2, 0.5, 0.9] {
            let params = with_p_det_r(p_det_r);
            let t_n = compute_tn(&params).unwrap();
            assert!(t_n >= 1.0 / p_det_r - 1e-12, "t_N = {t_n} at p_R = {p_det_r}");
        }
    }

    #[test]
    fn transmission_time_matches_monte_carlo() {
        let params = typical_params();
        let exact = compute_tn(&params).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let replications = 1_000_000usize;
        let b_max = params.energy.b_max();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..replications {
            let mut energy = params.n_cap;
            let mut slots = 0u64;
            loop {
                slots += 1;
                let m = rng.gen_range(0..=b_max);
                energy = (energy + m).min(params.n_cap);
                if energy >= params.k_cost {
                    energy -= params.k_cost;
                    if rng.gen_bool(params.p_det_r) {
                        break;
                    }
                }
            }
            sum += slots as f64;
            sum_sq += (slots as f64) * (slots as f64);
        }
        let mean = sum / replications as f64;
        let var = (sum_sq - sum * sum / replications as f64) / (replications as f64 - 1.0);
        let se = (var / replications as f64).sqrt();
        assert!(
            (exact - mean).abs() <= 3.0 * se,
            "exact {exact} vs simulated {mean} +- {se}"
        );
    }

    #[test]
    fn degenerate_harvest_never_absorbs() {
        let no_energy = EnergyDistribution::new(vec![1.0, 0.0]).unwrap();
        let params = SystemParams::new(0.3, 0.5, 10, 100, no_energy).unwrap();
        assert!(matches!(compute_tn(&params), Err(Error::NonAbsorbing)));
    }

    #[test]
    fn noncooperation_condition_examples() {
        // Weak relay link: t_N >= 5 exceeds the 1/0.9 direct delay.
        let weak_relay =
            SystemParams::new(0.9, 0.2, 10, 100, EnergyDistribution::uniform(5).unwrap()).unwrap();
        assert!(noncoop_check(&weak_relay).unwrap());

        // Strong relay link: cooperation helps.
        assert!(!noncoop_check(&typical_params()).unwrap());

        // Weak relay link with the typical source: still not worth it.
        assert!(noncoop_check(&with_p_det_r(0.2)).unwrap());
    }

    #[test]
    fn static_search_returns_noncooperation_when_optimal() {
        let params = with_p_det_r(0.2);
        let result = optimize_static(&params, 0.01).unwrap();
        assert!(!result.cooperation);
        assert_eq!(result.best_policy, Policy::Static(0.0));
        assert_abs_diff_eq!(result.objective, 1.0 / 0.3, epsilon = 1e-12);
    }

    #[test]
    fn static_search_finds_an_interior_optimum() {
        let params = typical_params();
        let result = optimize_static(&params, 0.01).unwrap();
        assert!(result.cooperation);
        let alpha = match result.best_policy {
            Policy::Static(a) => a,
            ref other => panic!("unexpected policy {other:?}"),
        };
        assert!(alpha > 0.0 && alpha < alpha_t(&params));
        assert!(result.objective < 1.0 / 0.3);

        // The minimizer beats both bracket endpoints under convexity.
        let tau = |a: f64| {
            let sol = qbd_solver::solve(&params, a, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            qbd_solver::static_metrics(&params, a, &sol).unwrap().delay
        };
        let hi = 0.99 * alpha_t(&params);
        assert!(result.objective <= tau(0.0).min(tau(hi)) + 1e-6);
    }

    #[test]
    fn static_objective_matches_reevaluation() {
        let params = typical_params();
        let result = optimize_static(&params, 0.01).unwrap();
        let alpha = match result.best_policy {
            Policy::Static(a) => a,
            ref other => panic!("unexpected policy {other:?}"),
        };
        let sol = qbd_solver::solve(&params, alpha, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let tau = qbd_solver::static_metrics(&params, alpha, &sol).unwrap().delay;
        assert_abs_diff_eq!(result.objective, tau, epsilon = 1e-9);
    }

    #[test]
    fn static_search_tracks_a_fine_grid_scan() {
        let params = typical_params();
        let eps = 0.01;
        let result = optimize_static(&params, eps).unwrap();

        let hi = alpha_t(&params) - 1e-3;
        let grid_min = (0..200)
            .map(|i| {
                let a = hi * i as f64 / 199.0;
                let sol = qbd_solver::solve(&params, a, 1e-10, DEFAULT_MAX_ITER).unwrap();
                qbd_solver::static_metrics(&params, a, &sol).unwrap().delay
            })
            .fold(f64::INFINITY, f64::min);
        assert!(
            result.objective <= grid_min + eps * grid_min,
            "search {} vs grid {}",
            result.objective,
            grid_min
        );
    }

    #[test]
    fn dynamic_search_with_single_unit_arrivals_decodes_only_when_full() {
        let params =
            SystemParams::new(0.3, 0.9, 10, 100, EnergyDistribution::uniform(1).unwrap()).unwrap();
        let result = optimize_dynamic(&params, 0.01).unwrap();
        assert!(result.cooperation);
        // b_max = 1 confines the search to e_th = N, and the delay is
        // decreasing in beta, so the optimum decodes surely at (0, N) only.
        assert_eq!(
            result.best_policy,
            Policy::Threshold { e_th: 100, beta: 1.0 }
        );
        let sol = solve_threshold(&params, &result.best_policy).unwrap();
        assert_abs_diff_eq!(sol.alpha_bar, alpha_t(&params), epsilon = 1e-9);
    }

    #[test]
    fn dynamic_search_respects_the_noncooperation_incumbent() {
        let params = with_p_det_r(0.2);
        let result = optimize_dynamic(&params, 0.01).unwrap();
        assert!(!result.cooperation);
        assert_abs_diff_eq!(result.objective, 1.0 / 0.3, epsilon = 1e-12);
        assert!(matches!(
            result.best_policy,
            Policy::Threshold { beta, .. } if beta == 0.0
        ));
    }

    #[test]
    fn dynamic_never_loses_to_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD0_0D);
        for _ in 0..5 {
            let k = rng.gen_range(4..=10);
            let b_max = rng.gen_range(1..=k);
            let n_cap = rng.gen_range(2 * k..=3 * k);
            let p_s = rng.gen_range(0.15..0.5);
            let p_r = rng.gen_range(0.4..=0.95);
            let params =
                SystemParams::new(p_s, p_r, k, n_cap, EnergyDistribution::uniform(b_max).unwrap())
                    .unwrap();
            let stat = optimize_static(&params, 0.01).unwrap();
            let dyn_ = optimize_dynamic(&params, 0.01).unwrap();
            assert!(
                dyn_.objective <= stat.objective + 1e-9,
                "dynamic {} vs static {} at {params:?}",
                dyn_.objective,
                stat.objective
            );
        }
    }

    #[test]
    fn throughput_optimal_policy_is_the_bound_threshold() {
        let params = typical_params();
        let policy = throughput_optimal_dynamic(&params, None).unwrap();
        assert_eq!(policy, Policy::Threshold { e_th: 96, beta: 1.0 });
        let sol = solve_threshold(&params, &policy).unwrap();
        assert_abs_diff_eq!(sol.alpha_bar, alpha_t(&params), epsilon = 1e-9);
        assert!(sol.p_block < 1e-12);

        // The hard-threshold map: decode exactly from e_th upward.
        assert_eq!(policy.dd_probability(State::new(0, 96)), 1.0);
        assert_eq!(policy.dd_probability(State::new(0, 95)), 0.0);
    }

    #[test]
    fn throughput_optimal_policy_rejects_thresholds_above_the_bound() {
        let params = typical_params();
        let err = throughput_optimal_dynamic(&params, Some(params.n_cap)).unwrap_err();
        assert!(matches!(err, Error::InvalidThreshold { e_th: 100, max: 96 }));
    }
}
