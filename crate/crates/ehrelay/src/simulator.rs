//! Slot-level Monte Carlo simulation of the three-node protocol under any
//! policy. This is the independent check on every analytic quantity: it
//! implements the protocol directly (two subslots, ACKs, energy
//! bookkeeping) with no chain machinery.

use std::collections::VecDeque;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Policy, State, SystemParams};

/// Run lengths, seeding, and replication count.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    /// Total simulated slots across all replications.
    pub slots: u64,
    /// Slots discarded at the start of each replication.
    pub warmup: u64,
    /// Base seed; replication `i` runs on `seed ^ i`.
    pub seed: u64,
    pub replications: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            slots: 1_000_000,
            warmup: 10_000,
            seed: 1,
            replications: 8,
        }
    }
}

impl SimConfig {
    fn slots_per_replication(&self) -> u64 {
        self.slots / self.replications as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParams("replications must be >= 1".into()));
        }
        if self.warmup >= self.slots_per_replication() {
            return Err(Error::InvalidParams(format!(
                "warmup {} must be below the {} slots of each replication",
                self.warmup,
                self.slots_per_replication()
            )));
        }
        Ok(())
    }
}

/// Raw counters of one replication. Totals run over the whole replication
/// (warmup included) so the conservation identities are exact; rates use
/// the post-warmup window only.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Replication {
    pub measured_slots: u64,
    pub delivered: u64,
    pub delay_sum: u64,
    pub qd_sum: u64,
    pub dd_slots: u64,
    pub active_slots: u64,
    pub blocked_units: u64,
    pub offered_units: u64,
    pub max_qd: usize,
    pub total_s_departures: u64,
    pub total_delivered: u64,
    pub total_offered_units: u64,
    pub total_blocked_units: u64,
    pub total_consumed_units: u64,
    pub final_qd: usize,
    pub final_qe: usize,
}

/// Aggregated simulation estimates with per-replication standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct SimStats {
    /// Packets delivered to the destination per slot.
    pub throughput: f64,
    pub throughput_se: f64,
    /// Per-packet slots from head-of-line at the source through detection,
    /// inclusive.
    pub mean_delay: f64,
    pub mean_delay_se: f64,
    /// Fraction of slots with a relay transmission attempt.
    pub p_active: f64,
    /// Blocked energy units over offered energy units.
    pub p_block: f64,
    /// Relay queue length averaged over slot starts.
    pub mean_qd: f64,
    /// Fraction of slots spent in the DD mode.
    pub alpha_bar_emp: f64,
    pub delivered: u64,
    pub replications: Vec<Replication>,
}

fn run_replication(
    params: &SystemParams,
    policy: &Policy,
    slots: u64,
    warmup: u64,
    seed: u64,
) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = WeightedIndex::new(params.energy.probs()).expect("validated distribution");
    let n_cap = params.n_cap;
    let k = params.k_cost;

    // Relay queue holds each stored packet's head-of-line slot at S.
    let mut queue: VecDeque<u64> = VecDeque::new();
    let mut q_e: usize = 0;
    let mut s_hol_slot: u64 = 1;

    let mut rep = Replication {
        measured_slots: slots - warmup,
        delivered: 0,
        delay_sum: 0,
        qd_sum: 0,
        dd_slots: 0,
        active_slots: 0,
        blocked_units: 0,
        offered_units: 0,
        max_qd: 0,
        total_s_departures: 0,
        total_delivered: 0,
        total_offered_units: 0,
        total_blocked_units: 0,
        total_consumed_units: 0,
        final_qd: 0,
        final_qe: 0,
    };

    for slot in 1..=slots {
        let measured = slot > warmup;
        if measured {
            rep.qd_sum += queue.len() as u64;
        }
        rep.max_qd = rep.max_qd.max(queue.len());

        let alpha = policy.dd_probability(State::new(queue.len(), q_e));
        let decode = rng.gen_bool(alpha);
        if measured && decode {
            rep.dd_slots += 1;
        }

        // Subslot 1: the source transmits. The destination's ACK always
        // preempts storage at the relay.
        let detected_at_d = rng.gen_bool(params.p_det_s);
        if detected_at_d {
            rep.total_s_departures += 1;
            rep.total_delivered += 1;
            if measured {
                rep.delivered += 1;
                rep.delay_sum += slot - s_hol_slot + 1;
            }
            s_hol_slot = slot + 1;
        } else if decode {
            queue.push_back(s_hol_slot);
            rep.total_s_departures += 1;
            s_hol_slot = slot + 1;
        }
        if !decode {
            // Harvest from the source transmission regardless of its fate.
            let units = gamma.sample(&mut rng);
            let gain = units.min(n_cap - q_e);
            q_e += gain;
            rep.total_offered_units += units as u64;
            rep.total_blocked_units += (units - gain) as u64;
            if measured {
                rep.offered_units += units as u64;
                rep.blocked_units += (units - gain) as u64;
            }
        }

        // Subslot 2: the relay transmits when it has a packet and enough
        // energy; each attempt consumes K units.
        if !queue.is_empty() && q_e >= k {
            q_e -= k;
            rep.total_consumed_units += k as u64;
            if measured {
                rep.active_slots += 1;
            }
            if rng.gen_bool(params.p_det_r) {
                let hol = queue.pop_front().expect("queue checked non-empty");
                rep.total_delivered += 1;
                if measured {
                    rep.delivered += 1;
                    rep.delay_sum += slot - hol + 1;
                }
            }
        }
    }

    rep.final_qd = queue.len();
    rep.final_qe = q_e;
    rep
}

/// Mean and standard error of per-replication values.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Simulates `policy` and aggregates across replications.
///
/// Identical inputs produce bit-identical output: replication `i` draws
/// from a `ChaCha8` stream seeded with `seed ^ i` and replications are
/// reduced in order.
pub fn run(params: &SystemParams, policy: &Policy, config: &SimConfig) -> Result<SimStats> {
    params.validate()?;
    policy.validate(params)?;
    config.validate()?;

    let per_rep = config.slots_per_replication();
    let reps: Vec<Replication> = (0..config.replications)
        .map(|i| {
            run_replication(
                params,
                policy,
                per_rep,
                config.warmup,
                config.seed ^ i as u64,
            )
        })
        .collect();

    let throughputs: Vec<f64> = reps
        .iter()
        .map(|r| r.delivered as f64 / r.measured_slots as f64)
        .collect();
    let delays: Vec<f64> = reps
        .iter()
        .map(|r| {
            if r.delivered > 0 {
                r.delay_sum as f64 / r.delivered as f64
            } else {
                f64::NAN
            }
        })
        .collect();
    let (throughput, throughput_se) = mean_and_se(&throughputs);
    let (mean_delay, mean_delay_se) = mean_and_se(&delays);

    let measured: u64 = reps.iter().map(|r| r.measured_slots).sum();
    let delivered: u64 = reps.iter().map(|r| r.delivered).sum();
    let offered: u64 = reps.iter().map(|r| r.offered_units).sum();
    let blocked: u64 = reps.iter().map(|r| r.blocked_units).sum();

    Ok(SimStats {
        throughput,
        throughput_se,
        mean_delay,
        mean_delay_se,
        p_active: reps.iter().map(|r| r.active_slots).sum::<u64>() as f64 / measured as f64,
        p_block: if offered > 0 {
            blocked as f64 / offered as f64
        } else {
            0.0
        },
        mean_qd: reps.iter().map(|r| r.qd_sum).sum::<u64>() as f64 / measured as f64,
        alpha_bar_emp: reps.iter().map(|r| r.dd_slots).sum::<u64>() as f64 / measured as f64,
        delivered,
        replications: reps,
    })
}

/// Simulates each policy under common random numbers (the same seed base),
/// one result per policy.
pub fn run_policy_comparison(
    params: &SystemParams,
    policies: &[Policy],
    config: &SimConfig,
) -> Result<Vec<SimStats>> {
    if policies.is_empty() {
        return Err(Error::InvalidParams("no policies to compare".into()));
    }
    policies.iter().map(|p| run(params, p, config)).collect()
}

/// One audit row of the per-slot debug trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub slot: u64,
    pub dd_mode: bool,
    pub q_d_start: usize,
    pub q_e_start: usize,
    pub s_detected: bool,
    pub stored_at_r: bool,
    pub harvested: usize,
    pub blocked: usize,
    pub attempted: bool,
    pub delivered_by_r: bool,
    pub q_e_end: usize,
}

/// Single-replication run that records one row per slot, for protocol
/// audits of short horizons.
pub fn run_traced(
    params: &SystemParams,
    policy: &Policy,
    slots: u64,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    params.validate()?;
    policy.validate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = WeightedIndex::new(params.energy.probs()).expect("validated distribution");
    let mut queue: VecDeque<u64> = VecDeque::new();
    let mut q_e: usize = 0;
    let mut s_hol_slot: u64 = 1;
    let mut rows = Vec::with_capacity(slots as usize);

    for slot in 1..=slots {
        let q_d_start = queue.len();
        let q_e_start = q_e;
        let decode = rng.gen_bool(policy.dd_probability(State::new(q_d_start, q_e)));
        let detected_at_d = rng.gen_bool(params.p_det_s);
        let mut stored_at_r = false;
        let mut harvested = 0;
        let mut blocked = 0;
        if detected_at_d {
            s_hol_slot = slot + 1;
        } else if decode {
            queue.push_back(s_hol_slot);
            s_hol_slot = slot + 1;
            stored_at_r = true;
        }
        if !decode {
            let units = gamma.sample(&mut rng);
            harvested = units.min(params.n_cap - q_e);
            blocked = units - harvested;
            q_e += harvested;
        }
        let mut attempted = false;
        let mut delivered_by_r = false;
        if !queue.is_empty() && q_e >= params.k_cost {
            q_e -= params.k_cost;
            attempted = true;
            if rng.gen_bool(params.p_det_r) {
                queue.pop_front();
                delivered_by_r = true;
            }
        }
        rows.push(TraceRow {
            slot,
            dd_mode: decode,
            q_d_start,
            q_e_start,
            s_detected: detected_at_d,
            stored_at_r,
            harvested,
            blocked,
            attempted,
            delivered_by_r,
            q_e_end: q_e,
        });
    }
    Ok(rows)
}
