use proptest::prelude::*;
use rand::seq::index;
use uturn_core::chain::uturn_step;
use uturn_core::harness::snap_density;
use uturn_core::inference::{parse, posterior_marginals, posterior_sample, upward_pass, MaskedLeaves};
use uturn_core::observables::{layer_overlap, CurveAccumulator};
use uturn_core::oracle::{enumerate_sentences, posterior_brute};
use uturn_core::rng::{stream_rng, Stream};
use uturn_core::theory::admissible_counts;
use uturn_core::{Grammar, GrammarParams};

/// Small grammars: `v ≤ 6`, `s ≤ 3`, `L ≤ 3`, `m ≤ min(4, v^(s-1))`.
fn params() -> impl Strategy<Value = GrammarParams> {
    (2usize..=6, 2usize..=3, 1usize..=3, 1usize..=4, any::<u64>()).prop_map(|(v, s, depth, m, seed)| {
        let m = m.min(v.pow(s as u32 - 1));
        GrammarParams::new(v, s, depth, m, seed)
    })
}

fn hamming(a: &[u16], b: &[u16]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_sentences_parse_back(p in params(), seed in any::<u64>()) {
        let g = Grammar::sample(&p).unwrap();
        let x = g.generate(&mut stream_rng(seed, Stream::Data, &[]));
        prop_assert!(g.is_consistent(&x));
        prop_assert_eq!(parse(&g, x.leaves()).unwrap().tree(), Some(x));
    }

    #[test]
    fn grammar_json_round_trips(p in params()) {
        let g = Grammar::sample(&p).unwrap();
        let back = Grammar::from_json(&g.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn posterior_samples_agree_with_the_mask(p in params(), seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let g = Grammar::sample(&p).unwrap();
        let mut rng = stream_rng(seed, Stream::Chain, &[]);
        let x = g.generate(&mut rng);
        let d = g.leaf_count();
        let k = (frac * d as f64).round() as usize;
        let masked = MaskedLeaves::from_sentence(x.leaves(), &index::sample(&mut rng, d, k).into_vec());
        let y = posterior_sample(&g, &masked, &mut rng).unwrap();
        prop_assert!(masked.admits(y.leaves()));
        prop_assert!(g.is_consistent(&y));
        let marginals = posterior_marginals(&g, &masked).unwrap();
        for level in &marginals.levels {
            for node in level {
                prop_assert!((node.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn completion_count_matches_enumeration(p in params(), seed in any::<u64>(), frac in 0.0f64..=1.0) {
        prop_assume!(p.sentence_count() <= 20_000.0);
        let g = Grammar::sample(&p).unwrap();
        let set = enumerate_sentences(&g, 20_000).unwrap();
        let mut rng = stream_rng(seed, Stream::Validate, &[]);
        let x = g.generate(&mut rng);
        let d = g.leaf_count();
        let k = (frac * d as f64).round() as usize;
        let masked = MaskedLeaves::from_sentence(x.leaves(), &index::sample(&mut rng, d, k).into_vec());
        let brute = posterior_brute(&set, &masked).unwrap();
        let log_count = upward_pass(&g, &masked).unwrap().log_completions(g.v());
        prop_assert!((log_count - (brute.support.len() as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn uturn_moves_at_most_k_leaves(p in params(), seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let g = Grammar::sample(&p).unwrap();
        let mut rng = stream_rng(seed, Stream::Chain, &[1]);
        let d = g.leaf_count();
        let k = 1 + (frac * (d - 1) as f64).round() as usize;
        let mut x = g.generate(&mut rng);
        for _ in 0..5 {
            let y = uturn_step(&g, &x, k, &mut rng);
            prop_assert!(g.is_consistent(&y));
            prop_assert!(hamming(x.leaves(), y.leaves()) <= k);
            x = y;
        }
    }

    #[test]
    fn overlap_is_a_symmetric_fraction(p in params(), seed in any::<u64>()) {
        let g = Grammar::sample(&p).unwrap();
        let mut rng = stream_rng(seed, Stream::Data, &[2]);
        let (a, b) = (g.generate(&mut rng), g.generate(&mut rng));
        for level in 0..=p.depth {
            let q = layer_overlap(&a, &b, level).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
            prop_assert_eq!(q, layer_overlap(&b, &a, level).unwrap());
            prop_assert_eq!(layer_overlap(&a, &a, level).unwrap(), 1.0);
        }
    }

    #[test]
    fn snapped_density_is_admissible(f in 0.0f64..=1.5, v in 2usize..=40, s in 2usize..=3) {
        let m = snap_density(f, v, s);
        prop_assert!(m >= 1 && m <= v.pow(s as u32 - 1));
    }

    #[test]
    fn admissible_counts_stay_in_range(v in 2usize..=1000, s in 2usize..=4, depth in 1usize..=12, frac in 0.0f64..=1.0) {
        let space = (v as f64).powi(s as i32 - 1);
        let m = 1.0 + frac * (space - 1.0);
        for c in admissible_counts(v as f64, s, depth, m) {
            prop_assert!(c >= 1.0 - 1e-9 && c <= v as f64 + 1e-9);
        }
    }

    #[test]
    fn merged_accumulators_equal_sequential_adds(
        chains in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 1..12),
        split in 0usize..12,
    ) {
        let steps = vec![0, 1, 2, 3];
        let split = split.min(chains.len());
        let mut all = CurveAccumulator::new(steps.clone(), 1);
        let mut left = CurveAccumulator::new(steps.clone(), 1);
        let mut right = CurveAccumulator::new(steps, 1);
        for (i, c) in chains.iter().enumerate() {
            all.add(std::slice::from_ref(c));
            if i < split { left.add(std::slice::from_ref(c)) } else { right.add(std::slice::from_ref(c)) }
        }
        left.merge(&right);
        prop_assert_eq!(left.n_chains(), all.n_chains());
        let (a, b) = (&all.curves(1)[0], &left.curves(1)[0]);
        for (x, y) in a.raw.iter().zip(&b.raw) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
