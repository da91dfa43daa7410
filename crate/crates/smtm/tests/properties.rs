//! Property tests for the numeric invariants the pipeline relies on.

use proptest::prelude::*;

use smtm::encoding::{cosine_similarity, encode_gap, SimilarityRow};
use smtm::exit::{AcScore, CumulativeState, Verdict};
use smtm::memory::{adaptive_cache_size, select_fast_memory, GlobalMemory};
use smtm::tensor::FeatureMap;
use smtm::trace::TraceFile;
use smtm::ClassId;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-100.0f32..100.0, len)
}

proptest! {
    #[test]
    fn cosine_is_symmetric(len in 1usize..16, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f32> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let b: Vec<f32> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn cosine_is_scale_invariant(
        v in finite_vec(8),
        alpha in 0.001f32..1000.0,
        beta in 0.001f32..1000.0,
    ) {
        let w: Vec<f32> = v.iter().rev().cloned().collect();
        let base = cosine_similarity(&v, &w).unwrap();
        let scaled_a: Vec<f32> = v.iter().map(|x| x * alpha).collect();
        let scaled_b: Vec<f32> = w.iter().map(|x| x * beta).collect();
        let scaled = cosine_similarity(&scaled_a, &scaled_b).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-6);
    }

    #[test]
    fn cosine_stays_in_range(a in finite_vec(6), b in finite_vec(6)) {
        let s = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&s));
    }

    #[test]
    fn gap_is_linear(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = c * h * w;
        let a_data: Vec<f32> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b_data: Vec<f32> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let sum_data: Vec<f32> = a_data.iter().zip(&b_data).map(|(x, y)| x + y).collect();
        let a = FeatureMap::new(c, h, w, a_data).unwrap();
        let b = FeatureMap::new(c, h, w, b_data).unwrap();
        let s = FeatureMap::new(c, h, w, sum_data).unwrap();
        let ga = encode_gap(&a, 1);
        let gb = encode_gap(&b, 1);
        let gs = encode_gap(&s, 1);
        for i in 0..c {
            prop_assert!((gs.values[i] - (ga.values[i] + gb.values[i])).abs() <= 1e-5);
        }
    }

    /// The normalized recurrence equals the literal exponentially-weighted
    /// sum up to the common 2^(l-1) scaling, and both pick the same argmax.
    #[test]
    fn cumulative_matches_literal_weighted_sum(
        layers in 1usize..12,
        n in 2usize..6,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let candidates: Vec<ClassId> = (0..n as u32).collect();
        let mut state = CumulativeState::new(&candidates).unwrap();
        let mut literal = vec![0.0f64; n];
        for l in 1..=layers {
            let entries: Vec<(ClassId, f32)> = candidates
                .iter()
                .map(|&c| (c, rng.random_range(-1.0f32..1.0)))
                .collect();
            for (acc, &(_, s)) in literal.iter_mut().zip(&entries) {
                *acc += s as f64 * 2f64.powi(l as i32 - 1);
            }
            state
                .accumulate(&SimilarityRow {
                    layer: l as u32,
                    entries,
                })
                .unwrap();
        }
        let scale = 2f64.powi(layers as i32 - 1);
        for (j, &lit) in literal.iter().enumerate() {
            let normalized = state.accumulators()[j] * scale;
            let denom = lit.abs().max(1e-9);
            prop_assert!(((normalized - lit) / denom).abs() <= 1e-6);
        }
        let state_best = (0..n).max_by(|&a, &b| {
            state.accumulators()[a].partial_cmp(&state.accumulators()[b]).unwrap()
                .then(b.cmp(&a))
        }).unwrap();
        let literal_best = (0..n).max_by(|&a, &b| {
            literal[a].partial_cmp(&literal[b]).unwrap().then(b.cmp(&a))
        }).unwrap();
        prop_assert_eq!(state_best, literal_best);
    }

    /// Raising tau never lets more frames exit on a fixed stream of rows.
    #[test]
    fn exit_gating_is_monotone_in_tau(seed in any::<u64>(), frames in 1usize..20) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let candidates: Vec<ClassId> = vec![0, 1, 2];
        let taus = [0.0f32, 0.25, 0.5, 1.0, 2.0, f32::INFINITY];
        let mut exited = vec![0usize; taus.len()];
        for _ in 0..frames {
            let rows: Vec<Vec<(ClassId, f32)>> = (0..5)
                .map(|_| {
                    candidates
                        .iter()
                        .map(|&c| (c, rng.random_range(-1.0f32..1.0)))
                        .collect()
                })
                .collect();
            for (ti, &tau) in taus.iter().enumerate() {
                let mut state = CumulativeState::new(&candidates).unwrap();
                for (l, entries) in rows.iter().enumerate() {
                    state
                        .accumulate(&SimilarityRow {
                            layer: l as u32 + 1,
                            entries: entries.clone(),
                        })
                        .unwrap();
                    if matches!(state.decide(tau).verdict, Verdict::Exit { .. }) {
                        exited[ti] += 1;
                        break;
                    }
                }
            }
        }
        for pair in exited.windows(2) {
            prop_assert!(pair[1] <= pair[0]);
        }
        prop_assert_eq!(*exited.last().unwrap(), 0);
    }

    #[test]
    fn adaptive_k_is_minimal(seed in any::<u64>(), n in 1usize..50) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.0..8.0) })
            .collect();
        let cl = rng.random_range(0.5..0.99);
        let k = adaptive_cache_size(&scores, cl, 1, n);
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mass: f64 = sorted[..k].iter().sum();
            prop_assert!(mass / total >= cl);
            if k > 1 {
                let prev: f64 = sorted[..k - 1].iter().sum();
                prop_assert!(prev / total < cl);
            }
        } else {
            prop_assert_eq!(k, 1);
        }
    }

    #[test]
    fn selection_is_optimal(seed in any::<u64>(), n in 1u32..100, k in 0usize..12) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut global = GlobalMemory::new(n, vec![2]);
        for c in 0..n {
            global.set_center(c, 0, vec![1.0, c as f32], 1).unwrap();
        }
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..5.0) })
            .collect();
        let fast = select_fast_memory(&global, &scores, k);
        // Any cached class's score must be >= any uncached positive score
        // is false in general (ties), so check: the selected multiset of
        // scores matches the k largest positive scores.
        let mut want: Vec<f64> = scores.iter().cloned().filter(|&s| s > 0.0).collect();
        want.sort_by(|a, b| b.partial_cmp(a).unwrap());
        want.truncate(k);
        let mut got: Vec<f64> = fast
            .classes()
            .iter()
            .map(|&c| scores[c as usize])
            .collect();
        got.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(got, want);
    }

    #[test]
    fn trace_round_trip(frames in 0usize..5, c in 1usize..3, h in 1usize..4, w in 1usize..4, labeled in any::<bool>(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut trace = TraceFile::new(c, h, w, labeled);
        for _ in 0..frames {
            let data: Vec<f32> = (0..c * h * w).map(|_| rng.random_range(-5.0f32..5.0)).collect();
            trace
                .push_frame(labeled.then(|| rng.random_range(0..9)), &data)
                .unwrap();
        }
        let back = TraceFile::from_bytes(&trace.to_bytes()).unwrap();
        prop_assert_eq!(back, trace);
    }
}

/// AC is scale-invariant across the two accumulation routes even when
/// exercised through the public decide() path.
#[test]
fn decision_agrees_between_normalized_and_literal_routes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let candidates: Vec<ClassId> = (0..rng.random_range(2..6)).collect();
        let layers = rng.random_range(1..10);
        let tau = rng.random_range(0.0f32..2.0);
        let mut state = CumulativeState::new(&candidates).unwrap();
        let mut literal = vec![0.0f64; candidates.len()];
        let mut literal_exit = None;
        let mut state_exit = None;
        for l in 1..=layers {
            let entries: Vec<(ClassId, f32)> = candidates
                .iter()
                .map(|&c| (c, rng.random_range(-1.0f32..1.0)))
                .collect();
            for (acc, &(_, s)) in literal.iter_mut().zip(&entries) {
                *acc += s as f64 * 2f64.powi(l as i32 - 1);
            }
            state
                .accumulate(&SimilarityRow { layer: l, entries })
                .unwrap();

            if state_exit.is_none() {
                if let Verdict::Exit { class, .. } = state.decide(tau).verdict {
                    state_exit = Some((l, class));
                }
            }
            if literal_exit.is_none() {
                // Literal-route AC with the same undefined-denominator rules.
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                let mut best_class = candidates[0];
                for (j, &v) in literal.iter().enumerate() {
                    if v > best {
                        second = best;
                        best = v;
                        best_class = candidates[j];
                    } else if v > second {
                        second = v;
                    }
                }
                let fire = if best <= 0.0 {
                    false
                } else if second <= 0.0 {
                    true
                } else {
                    (best - second) / second >= tau as f64
                };
                if fire {
                    literal_exit = Some((l, best_class));
                }
            }
        }
        assert_eq!(state_exit, literal_exit);
    }
}

/// The no-confidence marker never exits at any finite threshold.
#[test]
fn no_confidence_never_exits() {
    let candidates: Vec<ClassId> = vec![0, 1];
    let mut state = CumulativeState::new(&candidates).unwrap();
    state
        .accumulate(&SimilarityRow {
            layer: 1,
            entries: vec![(0, -0.5), (1, -0.9)],
        })
        .unwrap();
    assert_eq!(
        state.accumulated_confidence().unwrap(),
        AcScore::NoConfidence
    );
    for tau in [0.0f32, 0.5, 100.0] {
        assert_eq!(state.decide(tau).verdict, Verdict::Continue);
    }
}
