//! Bit budgets: evaluation-time masking plans.
//!
//! A budget is built once from a reference trace of eval-mode episodes.
//! Structural pruning already saves (pruned edges x d) bits; if that alone
//! reaches the target MCR nothing is masked. Otherwise (node,bit) pairs are
//! masked greedily in ascending importance until the projected MCR meets the
//! target. Because the greedy order is fixed, a higher target always yields
//! a superset mask.

use serde::{Deserialize, Serialize};

use crate::comm::{rank_bits, BitMask, CommRoundState, KlLedger};
use crate::{CgibError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Ascending per-bit KL (least informative bits masked first).
    KlRank,
    /// Ascending mean absolute activation.
    AbsValue,
}

impl std::fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskStrategy::KlRank => write!(f, "kl_rank"),
            MaskStrategy::AbsValue => write!(f, "abs_value"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BitBudget {
    pub target_mcr: f64,
    pub mask: BitMask,
    pub strategy: MaskStrategy,
    /// MCR projected on the reference trace when the budget was built.
    pub projected_mcr: f64,
}

/// Aggregated structure/activation statistics of a reference trace.
///
/// Bit accounting follows the final communication round (whose messages the
/// policies consume); per-round edge counts back the per-round compression
/// ratios.
#[derive(Debug, Clone, Default)]
pub struct TraceStats {
    pub num_agents: usize,
    pub bits: usize,
    /// Complete alive edges summed over steps (last round).
    pub complete_edges: usize,
    /// Kept edges summed over steps (last round).
    pub kept_edges: usize,
    /// Kept outgoing edges per node summed over steps (last round).
    pub kept_out_degree: Vec<usize>,
    /// Per round: kept edges summed over steps.
    pub round_kept: Vec<usize>,
    /// Per round: complete alive edges summed over steps.
    pub round_complete: Vec<usize>,
    /// Sum of |activation| per (node,bit) over steps.
    pub abs_activation: Vec<f64>,
    /// Per-bit KL summed over steps.
    pub ledger: KlLedger,
    pub steps: usize,
}

impl TraceStats {
    pub fn new(num_agents: usize, bits: usize) -> Self {
        TraceStats {
            num_agents,
            bits,
            complete_edges: 0,
            kept_edges: 0,
            kept_out_degree: vec![0; num_agents],
            round_kept: Vec::new(),
            round_complete: Vec::new(),
            abs_activation: vec![0.0; num_agents * bits],
            ledger: KlLedger::new(num_agents, bits),
            steps: 0,
        }
    }

    /// Fold one step's communication rounds plus the step's ledger.
    pub fn absorb_step(&mut self, rounds: &[CommRoundState], ledger: &KlLedger) {
        let Some(last) = rounds.last() else {
            return;
        };
        if self.round_kept.len() < rounds.len() {
            self.round_kept.resize(rounds.len(), 0);
            self.round_complete.resize(rounds.len(), 0);
        }
        for (l, round) in rounds.iter().enumerate() {
            self.round_kept[l] += round.kept_edges.len();
            self.round_complete[l] += round.complete_edges;
        }
        self.complete_edges += last.complete_edges;
        self.kept_edges += last.kept_edges.len();
        for &(j, _) in &last.kept_edges {
            self.kept_out_degree[j] += 1;
        }
        let d = self.bits;
        for node in 0..self.num_agents {
            for b in 0..d {
                self.abs_activation[node * d + b] += last.node_messages[node * d + b].abs();
            }
        }
        self.ledger.absorb(ledger);
        self.steps += 1;
    }

    /// Per-round structure compression ratios.
    pub fn scr_per_round(&self) -> Vec<f64> {
        self.round_kept
            .iter()
            .zip(&self.round_complete)
            .map(|(&k, &c)| if c == 0 { 0.0 } else { (c - k) as f64 / c as f64 })
            .collect()
    }

    pub fn bits_complete(&self) -> usize {
        self.complete_edges * self.bits
    }

    /// Transmitted bits with the given mask applied on top of the structure.
    pub fn bits_kept(&self, mask: &BitMask) -> usize {
        (0..self.num_agents)
            .map(|n| self.kept_out_degree[n] * mask.kept_bits(n))
            .sum()
    }
}

/// Greedy masking plan for `target_mcr` in [0,1].
pub fn build_budget(stats: &TraceStats, target_mcr: f64, strategy: MaskStrategy) -> Result<BitBudget> {
    if !(0.0..=1.0).contains(&target_mcr) {
        return Err(CgibError::usage(format!("target_mcr {target_mcr} outside [0,1]")));
    }
    if stats.bits_complete() == 0 {
        return Err(CgibError::usage("build_budget on an empty trace"));
    }

    let order: Vec<(usize, usize)> = match strategy {
        MaskStrategy::KlRank => rank_bits(&stats.ledger),
        MaskStrategy::AbsValue => {
            let mut pairs: Vec<(usize, usize)> = (0..stats.num_agents)
                .flat_map(|n| (0..stats.bits).map(move |b| (n, b)))
                .collect();
            pairs.sort_by(|&a, &b| {
                let ka = stats.abs_activation[a.0 * stats.bits + a.1];
                let kb = stats.abs_activation[b.0 * stats.bits + b.1];
                ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
            });
            pairs
        }
    };

    let complete = stats.bits_complete() as f64;
    let mut mask = BitMask::keep_all(stats.num_agents, stats.bits);
    let mut kept = stats.bits_kept(&mask);
    let mut achieved = (complete - kept as f64) / complete;
    let mut cursor = order.iter();
    while achieved < target_mcr {
        let Some(&(node, bit)) = cursor.next() else {
            break; // every bit masked; structural floor reached
        };
        mask.set(node, bit, false);
        kept = stats.bits_kept(&mask);
        achieved = (complete - kept as f64) / complete;
    }
    // a full-bandwidth shutdown must mask everything, even bits that carry
    // no structural cost on this trace
    if target_mcr >= 1.0 {
        mask = BitMask::drop_all(stats.num_agents, stats.bits);
        achieved = 1.0;
    }
    Ok(BitBudget {
        target_mcr,
        mask,
        strategy,
        projected_mcr: achieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built trace: 3 nodes, d = 3, one step, complete graph of 6
    /// directed edges pruned to 4.
    fn fig_style_stats(kept: &[(usize, usize)], kl: Vec<f64>) -> TraceStats {
        let n = 3;
        let d = 3;
        let mut stats = TraceStats::new(n, d);
        let round = CommRoundState {
            node_messages: vec![0.5; n * d],
            edge_samples: vec![0.0; n * n],
            edge_probs: vec![0.0; n * n],
            mu: vec![0.0; n * d],
            sigma: vec![1.0; n * d],
            sib: 0.0,
            xib: 0.0,
            alive: vec![true; n],
            valid_edges: (0..n)
                .flat_map(|j| (0..n).filter(move |&k| k != j).map(move |k| (j, k)))
                .collect(),
            kept_edges: kept.to_vec(),
            complete_edges: 6,
        };
        let mut ledger = KlLedger::new(n, d);
        ledger.per_bit_kl = kl;
        stats.absorb_step(std::slice::from_ref(&round), &ledger);
        stats
    }

    #[test]
    fn target_zero_masks_nothing() {
        let stats = fig_style_stats(&[(0, 1), (0, 2), (1, 0), (2, 0)], vec![1.0; 9]);
        let budget = build_budget(&stats, 0.0, MaskStrategy::KlRank).unwrap();
        assert_eq!(budget.mask.masked_count(), 0);
    }

    #[test]
    fn target_one_masks_everything() {
        let stats = fig_style_stats(&[(0, 1), (0, 2), (1, 0), (2, 0)], vec![1.0; 9]);
        let budget = build_budget(&stats, 1.0, MaskStrategy::KlRank).unwrap();
        assert_eq!(budget.mask.masked_count(), 9);
        assert_eq!(stats.bits_kept(&budget.mask), 0);
    }

    #[test]
    fn worked_masking_example_hits_sixty_one_percent() {
        // 4 kept edges x 3 bits = 12 structurally live bits out of 18.
        // Node 0 sends on two kept edges, nodes 1 and 2 on one each.
        // KL ranking: node1/node2 bits cheapest, then node 0.
        // Masking (1,0) saves 1, (1,1) saves 1, (2,0) saves 1, then (0,0)
        // saves 2 -> kept = 12-5 = 7, MCR = 11/18 = 61.11%.
        let kl = vec![
            0.9, 0.9, 0.9, // node 0 bits are most informative
            0.1, 0.2, 0.8, // node 1
            0.3, 0.7, 0.8, // node 2
        ];
        let stats = fig_style_stats(&[(0, 1), (0, 2), (1, 0), (2, 0)], kl);
        assert_eq!(stats.bits_complete(), 18);
        let target = 11.0 / 18.0;
        let budget = build_budget(&stats, target, MaskStrategy::KlRank).unwrap();
        assert_eq!(stats.bits_kept(&budget.mask), 7);
        assert!((budget.projected_mcr - 11.0 / 18.0).abs() < 1e-12);
        assert_eq!(
            format!("{:.2}%", budget.projected_mcr * 100.0),
            "61.11%"
        );
        // structure alone: SCR = 33.33%, and with no node masking MCR = SCR
        let no_mask = build_budget(&stats, 0.0, MaskStrategy::KlRank).unwrap();
        let mcr0 = (18 - stats.bits_kept(&no_mask.mask)) as f64 / 18.0;
        assert!((mcr0 - 2.0 / 6.0).abs() < 1e-12, "MCR must subsume SCR");
    }

    #[test]
    fn structural_savings_can_satisfy_target_alone() {
        let stats = fig_style_stats(&[(0, 1), (0, 2), (1, 0), (2, 0)], vec![1.0; 9]);
        // structure already saves 6/18 = 33%
        let budget = build_budget(&stats, 0.30, MaskStrategy::KlRank).unwrap();
        assert_eq!(budget.mask.masked_count(), 0);
        assert!(budget.projected_mcr >= 0.30);
    }

    #[test]
    fn budgets_are_monotone_in_target() {
        let mut rng = crate::rng::Pcg::from_seed_u64(9);
        let kl: Vec<f64> = (0..9).map(|_| rng.uniform()).collect();
        let stats = fig_style_stats(&[(0, 1), (1, 2), (2, 1)], kl);
        let mut prev: Option<BitMask> = None;
        for target in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
            let b = build_budget(&stats, target, MaskStrategy::KlRank).unwrap();
            assert!(b.projected_mcr >= target - 1e-12);
            if let Some(p) = &prev {
                for n in 0..3 {
                    for bit in 0..3 {
                        if !p.is_kept(n, bit) {
                            assert!(!b.mask.is_kept(n, bit), "mask must grow with target");
                        }
                    }
                }
            }
            prev = Some(b.mask);
        }
    }

    #[test]
    fn abs_value_strategy_orders_by_activation() {
        let n = 2;
        let d = 2;
        let mut stats = TraceStats::new(n, d);
        let round = CommRoundState {
            node_messages: vec![0.1, 5.0, 2.0, 0.05],
            edge_samples: vec![0.0; 4],
            edge_probs: vec![0.0; 4],
            mu: vec![0.0; 4],
            sigma: vec![1.0; 4],
            sib: 0.0,
            xib: 0.0,
            alive: vec![true; 2],
            valid_edges: vec![(0, 1), (1, 0)],
            kept_edges: vec![(0, 1), (1, 0)],
            complete_edges: 2,
        };
        stats.absorb_step(std::slice::from_ref(&round), &KlLedger::new(n, d));
        // smallest |activation| first: (1,1), then (0,0)
        let budget = build_budget(&stats, 0.5, MaskStrategy::AbsValue).unwrap();
        assert!(!budget.mask.is_kept(1, 1));
        assert!(!budget.mask.is_kept(0, 0));
        assert!(budget.mask.is_kept(0, 1));
        assert!(budget.mask.is_kept(1, 0));
    }
}
