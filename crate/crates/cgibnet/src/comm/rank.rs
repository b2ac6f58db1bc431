//! Bit-importance ranking.

use super::KlLedger;

/// All (node, bit) pairs sorted ascending by per-bit KL; ties broken by
/// (node index, bit index) so masking plans are reproducible.
pub fn rank_bits(ledger: &KlLedger) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..ledger.num_agents)
        .flat_map(|n| (0..ledger.bits).map(move |b| (n, b)))
        .collect();
    pairs.sort_by(|&a, &b| {
        let ka = ledger.bit_kl(a.0, a.1);
        let kb = ledger.bit_kl(b.0, b.1);
        ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
    });
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger_from(n: usize, d: usize, kl: Vec<f64>) -> KlLedger {
        let mut l = KlLedger::new(n, d);
        l.per_bit_kl = kl;
        l
    }

    #[test]
    fn equal_kls_fall_back_to_index_order() {
        let l = ledger_from(2, 2, vec![0.3; 4]);
        assert_eq!(rank_bits(&l), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn single_informative_bit_ranks_last() {
        let l = ledger_from(2, 2, vec![0.0, 0.0, 5.0, 0.0]);
        let order = rank_bits(&l);
        assert_eq!(*order.last().unwrap(), (1, 0));
    }

    #[test]
    fn ordering_agrees_with_reference_sort() {
        let mut rng = crate::rng::Pcg::from_seed_u64(44);
        let kl: Vec<f64> = (0..12).map(|_| rng.uniform()).collect();
        let l = ledger_from(3, 4, kl.clone());
        let order = rank_bits(&l);
        // reference: stable sort over explicitly keyed pairs
        let mut reference: Vec<((usize, usize), f64)> = kl
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i / 4, i % 4), v))
            .collect();
        reference.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let reference: Vec<(usize, usize)> = reference.into_iter().map(|(p, _)| p).collect();
        assert_eq!(order, reference);
    }
}
