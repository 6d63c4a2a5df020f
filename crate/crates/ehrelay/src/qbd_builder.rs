//! Construction of the energy-subslot transition matrices and the QBD
//! level blocks for a fixed decoding probability.
//!
//! Energy phases are indexed 0..=N throughout. `M` moves the energy state
//! through the second subslot when a packet is backlogged (consume `K`
//! units iff at least `K` are present), `T` moves it through a harvesting
//! first subslot (arrivals fold into the full-buffer state), and
//! `B = T * M` covers a full EH slot with a backlogged data buffer.

use ndarray::Array2;

use crate::model::SystemParams;

/// The energy-buffer transition matrices.
///
/// The attempt/idle splits partition `m_tx` and `b_slot` by whether a
/// transmission actually happens; the detection-probability split of a
/// level transition applies only on attempt paths, while idle paths keep
/// the data queue unchanged.
#[derive(Debug, Clone)]
pub struct EnergyMatrices {
    /// Second-subslot transition given backlogged data: transmit iff
    /// `q_e >= K`.
    pub m_tx: Array2<f64>,
    /// First-subslot harvesting transition.
    pub t_harvest: Array2<f64>,
    /// Full EH slot with backlogged data, `t_harvest * m_tx`.
    pub b_slot: Array2<f64>,
    /// Rows of `m_tx` where a transmission occurs (`q_e >= K`).
    pub m_attempt: Array2<f64>,
    /// Rows of `m_tx` where the relay must stay silent (`q_e < K`).
    pub m_idle: Array2<f64>,
    /// Paths of `b_slot` whose second subslot transmits.
    pub b_attempt: Array2<f64>,
    /// Paths of `b_slot` that end the slot still short of `K` units.
    pub b_idle: Array2<f64>,
}

/// Level blocks of the QBD for a state-independent decode probability.
#[derive(Debug, Clone)]
pub struct QbdBlocks {
    /// Level 0 -> 0.
    pub b00: Array2<f64>,
    /// Level 0 -> 1.
    pub b01: Array2<f64>,
    /// Level l -> l+1 for l >= 1.
    pub a_up: Array2<f64>,
    /// Level l -> l.
    pub a_same: Array2<f64>,
    /// Level l -> l-1.
    pub a_down: Array2<f64>,
}

/// Transmission matrix: `M[i][j] = 1` iff (`i < K`, `j = i`) or
/// (`i >= K`, `j = i - K`).
pub fn build_m(params: &SystemParams) -> Array2<f64> {
    let n = params.phases();
    let k = params.k_cost;
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        let j = if i < k { i } else { i - k };
        m[[i, j]] = 1.0;
    }
    m
}

/// Harvesting matrix: `T[i][j] = gamma_{j-i}` for `i <= j < N`, with all
/// arrivals beyond the remaining capacity folded into column `N`.
pub fn build_t(params: &SystemParams) -> Array2<f64> {
    let n_cap = params.n_cap;
    let n = params.phases();
    let gamma = &params.energy;
    let mut t = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n_cap {
            t[[i, j]] = gamma.prob(j - i);
        }
        let fold: f64 = (n_cap - i..=gamma.b_max()).map(|l| gamma.prob(l)).sum();
        t[[i, n_cap]] = if i == n_cap { 1.0 } else { fold };
    }
    t
}

pub fn build_energy_matrices(params: &SystemParams) -> EnergyMatrices {
    let m_tx = build_m(params);
    let t_harvest = build_t(params);
    let b_slot = t_harvest.dot(&m_tx);

    let n = params.phases();
    let k = params.k_cost;
    let mut m_attempt = Array2::zeros((n, n));
    let mut m_idle = Array2::zeros((n, n));
    for i in 0..n {
        if i >= k {
            m_attempt[[i, i - k]] = 1.0;
        } else {
            m_idle[[i, i]] = 1.0;
        }
    }
    let b_attempt = t_harvest.dot(&m_attempt);
    let b_idle = t_harvest.dot(&m_idle);

    EnergyMatrices {
        m_tx,
        t_harvest,
        b_slot,
        m_attempt,
        m_idle,
        b_attempt,
        b_idle,
    }
}

/// Assembles the level blocks for decode probability `alpha`.
///
/// The detection split `p_R` / `1 - p_R` enters only through the attempt
/// parts of `M` and `B`; on idle paths (fewer than `K` units when the
/// second subslot starts) no packet can leave, so a freshly decoded packet
/// always backlogs and an existing one always stays.
pub fn build_blocks(params: &SystemParams, alpha: f64) -> QbdBlocks {
    assert!(
        (0.0..=1.0).contains(&alpha),
        "decode probability {alpha} outside [0, 1]"
    );
    let em = build_energy_matrices(params);
    let n = params.phases();
    let p_s = params.p_det_s;
    let p_r = params.p_det_r;
    let eye = Array2::<f64>::eye(n);

    // The identity term (decode chosen, no packet received) is kept as a
    // separate summand rather than folded into the transmission matrix.
    let b00 = &em.m_attempt * (alpha * (1.0 - p_s) * p_r)
        + &eye * (alpha * p_s)
        + &em.t_harvest * (1.0 - alpha);
    let b01 = &em.m_attempt * (alpha * (1.0 - p_s) * (1.0 - p_r))
        + &em.m_idle * (alpha * (1.0 - p_s));
    let a_up = b01.clone();
    let a_same = &em.m_attempt * (alpha * ((1.0 - p_s) * p_r + p_s * (1.0 - p_r)))
        + &em.m_idle * (alpha * p_s)
        + &em.b_attempt * ((1.0 - alpha) * (1.0 - p_r))
        + &em.b_idle * (1.0 - alpha);
    let a_down = &em.m_attempt * (alpha * p_s * p_r) + &em.b_attempt * ((1.0 - alpha) * p_r);

    QbdBlocks {
        b00,
        b01,
        a_up,
        a_same,
        a_down,
    }
}
