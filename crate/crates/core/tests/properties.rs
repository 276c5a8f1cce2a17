use ie_core::mine::{dv_from_outputs, log_mean_exp};
use ie_core::pipeline::{compute_ie, read_ie_profile, render_ie_profile, CellOutcome, Level, MiMatrix, MicroProtocol};
use ie_core::repr_io::{read_store, write_store};
use ie_core::{MIEstimate, RepresentationStore, StoreDims, StoreMode};
use proptest::prelude::*;

fn outputs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, 1..64)
}

fn matrix(level: Level, pairs: usize, tokens: usize, bits: &[f64]) -> MiMatrix {
    let cells = bits
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            CellOutcome::Done(MIEstimate {
                value_bits: b,
                layer_pair: i / tokens,
                token: i % tokens,
                epochs_run: 1,
                best_epoch: 0,
                seed: 0,
            })
        })
        .collect();
    MiMatrix {
        level,
        layer_pairs: pairs,
        tokens,
        cells,
    }
}

proptest! {
    #[test]
    fn log_mean_exp_shifts_and_is_bracketed(v in outputs(), c in -50.0f64..50.0) {
        let lme = log_mean_exp(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!((log_mean_exp(&shifted).unwrap() - (lme + c)).abs() < 1e-9);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!(lme <= max + 1e-12 && lme >= mean - 1e-12);
    }

    #[test]
    fn dv_bound_ignores_row_order_and_offsets(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..64),
        rot in 0usize..64,
        c in -5.0f64..5.0,
    ) {
        let (joint, marginal): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = dv_from_outputs(&joint, &marginal).unwrap();
        let mut j2 = joint.clone();
        let mut m2 = marginal.clone();
        j2.rotate_left(rot % joint.len());
        m2.reverse();
        prop_assert!((dv_from_outputs(&j2, &m2).unwrap() - base).abs() < 1e-9);
        let j3: Vec<f64> = joint.iter().map(|x| x + c).collect();
        let m3: Vec<f64> = marginal.iter().map(|x| x + c).collect();
        prop_assert!((dv_from_outputs(&j3, &m3).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn repr1_roundtrips(s in 1usize..40, l in 1usize..4, t in 1usize..5, d in 1usize..9, micro: bool, seed: u64) {
        let dims = StoreDims::new(s, l, t, d);
        let mode = if micro { StoreMode::Micro } else { StoreMode::Macro };
        let mut store = RepresentationStore::empty(dims, mode, format!("prop;seed={seed}"));
        let mut x = seed | 1;
        for layer in 0..l {
            for token in 0..t {
                let data = (0..s * d)
                    .map(|_| {
                        x ^= x << 13;
                        x ^= x >> 7;
                        x ^= x << 17;
                        f32::from_bits((x as u32) & 0x7f7f_ffff | ((x >> 32) as u32 & 0x8000_0000))
                    })
                    .collect();
                store.set_slice(layer, token, data).unwrap();
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.repr1");
        write_store(&store, &path).unwrap();
        let back = read_store(&path).unwrap();
        for layer in 0..l {
            for token in 0..t {
                let a: Vec<u32> = store.slice_data(layer, token).unwrap().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = back.slice_data(layer, token).unwrap().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
        prop_assert_eq!(back.source_id(), store.source_id());
        prop_assert_eq!(back.mode(), mode);
    }

    #[test]
    fn profile_is_macro_minus_micro_and_roundtrips(
        pairs in 1usize..4,
        tokens in 1usize..6,
        micro_tokens in 1usize..4,
        seed in prop::collection::vec(0.0f64..3.0, 40),
    ) {
        let macro_bits = &seed[..pairs * tokens];
        let micro_bits = &seed[20..20 + pairs * micro_tokens];
        let macro_mi = matrix(Level::Macro, pairs, tokens, macro_bits);
        let micro_mi = matrix(Level::Micro, pairs, micro_tokens, micro_bits);
        let p = compute_ie(&macro_mi, &micro_mi, MicroProtocol::PositionMean).unwrap();
        for l in 0..pairs {
            let row = &micro_bits[l * micro_tokens..(l + 1) * micro_tokens];
            let micro_mean = row.iter().sum::<f64>() / micro_tokens as f64;
            for t in 0..tokens {
                let e = p.e_by_layer[l][t].unwrap();
                prop_assert!((e - (macro_bits[l * tokens + t] - micro_mean)).abs() < 1e-12);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ie_profile.csv");
        std::fs::write(&path, render_ie_profile(&p).unwrap()).unwrap();
        let back = read_ie_profile(&path).unwrap();
        prop_assert_eq!(back.e_by_layer, p.e_by_layer);
        prop_assert_eq!(back.e_hat_by_token, p.e_hat_by_token);
    }
}
