mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{dense_by_chain, gaussian, obs_slice, rel_diff};
use ttice::ice_star::{HeuristicConfig, SkipStatistic};
use ttice::linalg::{orthonormality_error, svd_trunc};
use ttice::stream::{decode_batch, encode_batch};
use ttice::tt::{deserialize, occupancy, random_train, serialize, tt_add};
use ttice::{ittd_update, tt_ice_star_update, tt_ice_update, tt_svd, DenseTensor, IttdState, StreamIncrement};

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=6, 2..=3)
}

fn stream(shape: &[usize], batches: &[usize], seed: u64) -> Vec<StreamIncrement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batches
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let mut s = shape.to_vec();
            s.push(b);
            StreamIncrement::new(gaussian(&s, &mut rng), k, "prop").unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_trunc_is_minimal(
        m in 1usize..10,
        n in 1usize..10,
        frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&[m, n], &mut rng);
        let a = a.as_matrix(m, n).unwrap();
        let delta = frac * a.norm();
        let t = svd_trunc(a, delta).unwrap();
        prop_assert!(t.tail_norm <= delta);
        prop_assert!(orthonormality_error(&t.u.as_view()) < 1e-12);
        if t.rank() > 0 {
            let s = t.s[t.rank() - 1];
            prop_assert!((t.tail_norm * t.tail_norm + s * s).sqrt() > delta);
        }
    }

    #[test]
    fn ice_stream_meets_bound_and_keeps_history(
        shape in shape_strategy(),
        batches in prop::collection::vec(1usize..4, 2..6),
        eps in prop::sample::select(vec![0.3, 0.1, 0.01]),
        seed in any::<u64>(),
    ) {
        let incs = stream(&shape, &batches, seed);
        let slice: usize = shape.iter().product();
        let mut tt = tt_svd(&incs[0].tensor, eps).unwrap();
        let mut prev = dense_by_chain(&tt);
        for inc in &incs[1..] {
            let (next, rep) = tt_ice_update(&tt, inc, eps).unwrap();
            let dense = dense_by_chain(&next);
            let range = next.batch_range(inc.increment_index).unwrap();
            let err = rel_diff(obs_slice(&dense, slice, range.clone()), inc.tensor.data());
            prop_assert!(err <= eps + 1e-9);
            prop_assert!(err <= rep.batch_rel_error_estimate + 1e-9);
            prop_assert!(rel_diff(obs_slice(&dense, slice, 0..range.start), &prev) <= 1e-12);
            prop_assert!(next.orthonormality_error() < 1e-10);
            for core in &next.cores()[..next.spatial_dims()] {
                let o = occupancy(core);
                prop_assert!(o > 0.0 && o <= 1.0);
            }
            prev = dense;
            tt = next;
        }
    }

    #[test]
    fn ice_star_full_batch_statistic_meets_bound(
        shape in shape_strategy(),
        batches in prop::collection::vec(1usize..5, 2..6),
        eps in prop::sample::select(vec![0.3, 0.1]),
        seed in any::<u64>(),
    ) {
        let cfg = HeuristicConfig {
            occupancy_threshold: 1.0,
            skip_statistic: SkipStatistic::FullBatch,
            ..Default::default()
        };
        let incs = stream(&shape, &batches, seed);
        let mut tt = tt_svd(&incs[0].tensor, eps).unwrap();
        for inc in &incs[1..] {
            let (next, rep) = tt_ice_star_update(&tt, inc, eps, &cfg).unwrap();
            let got = next.reconstruct(Some(next.batch_range(inc.increment_index).unwrap())).unwrap();
            let err = rel_diff(got.data(), inc.tensor.data());
            prop_assert!(err <= eps + 1e-9, "err {} skipped {}", err, rep.skipped);
            prop_assert!(rep.obs_used <= rep.obs_in_batch);
            tt = next;
        }
    }

    #[test]
    fn tt_add_rank_rule(
        shape in shape_strategy(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = shape.len();
        let mut ra = vec![2; d + 1];
        let mut rb = vec![1; d + 1];
        ra[0] = 1; ra[d] = 1; rb[0] = 1; rb[d] = 1;
        if d > 2 { rb[1] = 3; }
        let a = random_train(&shape, &ra, &mut rng).unwrap();
        let b = random_train(&shape, &rb, &mut rng).unwrap();
        let s = tt_add(&a, &b).unwrap();
        for i in 1..d {
            prop_assert_eq!(s.ranks()[i], ra[i] + rb[i]);
        }
    }

    #[test]
    fn ittd_ranks_add_between_roundings(
        shape in shape_strategy(),
        batches in prop::collection::vec(1usize..3, 2..5),
        seed in any::<u64>(),
    ) {
        let incs = stream(&shape, &batches, seed);
        let mut state = IttdState::new(0.1, None).unwrap();
        let mut expected = vec![0; shape.len() + 1];
        for inc in &incs {
            let fresh = tt_svd(&inc.tensor, 0.1).unwrap().ranks();
            for i in 1..=shape.len() {
                expected[i] += fresh[i];
            }
            state = ittd_update(state, inc).unwrap().0;
        }
        let got = state.accumulation.unwrap().ranks();
        prop_assert_eq!(&got[1..=shape.len()], &expected[1..]);
    }

    #[test]
    fn formats_round_trip(
        shape in prop::collection::vec(1usize..5, 1..5),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&shape, &mut rng);
        prop_assert_eq!(decode_batch(&encode_batch(&x).unwrap()).unwrap(), x);
        let ranks: Vec<usize> = (0..=shape.len()).map(|i| if i == 0 || i == shape.len() { 1 } else { 2 }).collect();
        let tt = random_train(&shape, &ranks, &mut rng).unwrap();
        prop_assert_eq!(deserialize(&serialize(&tt).unwrap()).unwrap(), tt);
    }

    #[test]
    fn unfolding_rank_bounds_tt_svd_ranks(
        shape in prop::collection::vec(1usize..6, 2..5),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: DenseTensor = gaussian(&shape, &mut rng);
        let tt = tt_svd(&x, 0.0).unwrap();
        let ranks = tt.ranks();
        for i in 1..shape.len() {
            let rows: usize = shape[..i].iter().product();
            let cols: usize = shape[i..].iter().product();
            prop_assert!(ranks[i] <= rows.min(cols));
        }
        prop_assert!(rel_diff(&dense_by_chain(&tt), x.data()) < 1e-12);
    }
}
