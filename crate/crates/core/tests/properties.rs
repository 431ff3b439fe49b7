use proptest::prelude::*;

use mmcl::data::mmf::{self, Dtype};
use mmcl::decoupling::{combine_similarities, decouple, pairwise_cosine, CompareMode};
use mmcl::diffcore::{Axis, Tape, Tensor};
use mmcl::eval::{entropy, regression_metrics};
use mmcl::mining::apply_action;

fn matrix(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> impl Strategy<Value = Tensor> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c)
            .prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

/// Three modalities sharing one `L × d` shape.
fn trimodal() -> impl Strategy<Value = [Tensor; 3]> {
    (1usize..6, 1usize..5).prop_flat_map(|(l, d)| {
        prop::collection::vec(-2.0f64..2.0, 3 * l * d).prop_map(move |v| {
            let m =
                |k: usize| Tensor::matrix(l, d, v[k * l * d..(k + 1) * l * d].to_vec()).unwrap();
            [m(0), m(1), m(2)]
        })
    })
}

proptest! {
    #[test]
    fn mmf_f64_round_trip_is_bit_exact(x in matrix(0..6, 1..6)) {
        let bytes = mmf::encode(&x, Dtype::F64).unwrap();
        prop_assert_eq!(bytes.len(), mmf::HEADER_LEN + 8 * x.len());
        let (back, dtype) = mmf::decode(&bytes).unwrap();
        prop_assert_eq!(dtype, Dtype::F64);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&x));
        prop_assert_eq!(back.shape(), x.shape());
    }

    #[test]
    fn mmf_f32_round_trip_keeps_f32_values(x in matrix(1..6, 1..6)) {
        let x = x.map(|v| v as f32 as f64);
        let (back, _) = mmf::decode(&mmf::encode(&x, Dtype::F32).unwrap()).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn truncated_mmf_is_rejected(x in matrix(1..4, 1..4), cut in 1usize..8) {
        let bytes = mmf::encode(&x, Dtype::F64).unwrap();
        prop_assert!(mmf::decode(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn decoupling_weights_are_row_stochastic(z in trimodal()) {
        for mode in CompareMode::ALL {
            let p = decouple(&z[0], &z[1..], mode).unwrap();
            for w in [&p.w_common, &p.w_specific] {
                prop_assert!(w.data().iter().all(|v| *v >= 0.0));
                for i in 0..w.rows() {
                    prop_assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            prop_assert_eq!(p.common.shape(), z[0].shape());
            prop_assert_eq!(p.specific.shape(), z[0].shape());
        }
    }

    #[test]
    fn cosines_are_bounded_and_modes_ordered(z in trimodal()) {
        let sims: Vec<_> = z[1..].iter().map(|o| pairwise_cosine(&z[0], o).unwrap()).collect();
        for s in &sims {
            prop_assert!(s.values.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        }
        let lo = combine_similarities(&sims, CompareMode::Minor).unwrap();
        let mid = combine_similarities(&sims, CompareMode::Mean).unwrap();
        let hi = combine_similarities(&sims, CompareMode::Major).unwrap();
        for ((a, b), c) in lo.data().iter().zip(mid.data()).zip(hi.data()) {
            prop_assert!(a <= b && b <= c);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in matrix(1..5, 1..6)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.softmax(v, Axis::Cols).unwrap();
        let out = tape.value(s);
        for i in 0..out.rows() {
            prop_assert!((out.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_and_zero_actions(x in matrix(1..6, 1..4)) {
        let l = x.rows();
        prop_assert_eq!(apply_action(&x, &vec![1.0; l]).unwrap(), x.clone());
        let zero = apply_action(&x, &vec![0.0; l]).unwrap();
        prop_assert!(zero.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn entropy_is_bounded(w in prop::collection::vec(0.0f64..1.0, 2..9)) {
        prop_assume!(w.iter().sum::<f64>() > 1e-3);
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|v| v / total).collect();
        let h = entropy(&p).unwrap();
        prop_assert!(h >= 0.0 && h <= (p.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn regression_metric_relations(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40)) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = regression_metrics(&p, &y).unwrap();
        prop_assert!(m.mae <= m.rmse + 1e-12);
        prop_assert!((-1.0..=1.0).contains(&m.pearson));
        prop_assert!((0.0..=1.0).contains(&m.acc2) && (0.0..=1.0).contains(&m.acc7) && (0.0..=1.0).contains(&m.f1));
    }
}
