use proptest::prelude::*;

use csafm::train::{cir, SplitFractions, SplitPlan};

proptest! {
    #[test]
    fn cir_ignores_sample_order(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60), seed in any::<u64>()) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let base = cir(&preds, &labels).unwrap();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut s = seed | 1;
        for i in (1..order.len()).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            order.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let p: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
        let l: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(cir(&p, &l).unwrap(), base);
        let hits = pairs.iter().filter(|(a, b)| a == b).count();
        prop_assert_eq!(base, 100.0 * hits as f64 / pairs.len() as f64);
    }

    #[test]
    fn split_is_a_stratified_partition(classes in 1usize..6, tens in 1usize..4, seed in any::<u64>()) {
        // 0.3 / 0.4 / 0.3 of a multiple of ten is whole
        let per_class = 10 * tens;
        let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
        let plan = SplitPlan::stratified(&labels, classes, SplitFractions::default(), seed).unwrap();
        let (tr, va, te) = (plan.train(), plan.val(), plan.test());
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for k in 0..classes {
            for part in [&tr, &va, &te] {
                prop_assert!(part.iter().any(|&i| labels[i] == k));
            }
        }
        let again = SplitPlan::stratified(&labels, classes, SplitFractions::default(), seed).unwrap();
        prop_assert_eq!(again.test(), te);
    }
}
