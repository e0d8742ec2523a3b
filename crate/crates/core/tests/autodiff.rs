use std::sync::Arc;

use molsde::autodiff::checkpoint::{read_params, write_params, CheckpointError};
use molsde::autodiff::{adam_step, Array, Graph, OptimState, Params, Var};
use proptest::prelude::*;

fn fd_check(data: &[f64], build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let (rows, cols) = (2, data.len() / 2);
    let run = |d: &[f64]| {
        let mut g = Graph::new();
        let x = g.input("x", Array::matrix(rows, cols, d.to_vec())).unwrap();
        let y = build(&mut g, x);
        let s = g.sum(y).unwrap();
        let v = g.value(s).item().unwrap();
        let grads = g.backward(s).unwrap().into_named();
        (v, grads["x"].clone())
    };
    let (_, analytic) = run(data);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..data.len() {
        let mut up = data.to_vec();
        up[k] += h;
        let mut down = data.to_vec();
        down[k] -= h;
        let numeric = (run(&up).0 - run(&down).0) / (2.0 * h);
        let a = analytic.data()[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0));
    }
    worst
}

fn entries() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_unary_ops_match_differences(d in entries()) {
        for (name, err) in [
            ("tanh", fd_check(&d, |g, x| g.tanh(x).unwrap())),
            ("sigmoid", fd_check(&d, |g, x| g.sigmoid(x).unwrap())),
            ("exp", fd_check(&d, |g, x| g.exp(x).unwrap())),
            ("softplus", fd_check(&d, |g, x| g.softplus(x).unwrap())),
            ("square", fd_check(&d, |g, x| g.mul(x, x).unwrap())),
            ("ln", fd_check(&d, |g, x| {
                let e = g.exp(x).unwrap();
                let e = g.add_scalar(e, 1.0).unwrap();
                g.ln(e).unwrap()
            })),
        ] {
            prop_assert!(err < 1e-7, "{name}: {err}");
        }
    }

    #[test]
    fn structural_ops_match_differences(d in entries(), w in prop::collection::vec(-1.0f64..1.0, 12)) {
        let wm = Array::matrix(3, 4, w.clone());
        let err = fd_check(&d, |g, x| {
            let w = g.constant(wm.clone());
            let y = g.matmul(x, w).unwrap();
            g.tanh(y).unwrap()
        });
        prop_assert!(err < 1e-7, "matmul {err}");
        let err = fd_check(&d, |g, x| {
            let t = g.transpose(x).unwrap();
            let y = g.matmul(x, t).unwrap();
            g.mul(y, y).unwrap()
        });
        prop_assert!(err < 1e-7, "gram {err}");
        let err = fd_check(&d, |g, x| {
            let r = g.gather_rows(x, Arc::from(vec![1, 0, 1, 1])).unwrap();
            let s = g.scatter_add_rows(r, Arc::from(vec![2, 0, 0, 1]), 3).unwrap();
            g.mul(s, s).unwrap()
        });
        prop_assert!(err < 1e-7, "gather/scatter {err}");
        let err = fd_check(&d, |g, x| {
            let row = g.sum_rows(x).unwrap();
            let y = g.add_row(x, row).unwrap();
            let col = g.sum_cols(x).unwrap();
            let y = g.mul_col(y, col).unwrap();
            let c = g.concat_cols(&[y, x]).unwrap();
            let c = g.select_cols(c, Arc::from(vec![0, 4, 5])).unwrap();
            g.sigmoid(c).unwrap()
        });
        prop_assert!(err < 1e-7, "broadcasts {err}");
        let err = fd_check(&d, |g, x| {
            let den = g.exp(x).unwrap();
            let q = g.div(x, den).unwrap();
            let r = g.reshape(q, 3, 2).unwrap();
            let m = g.mean(r).unwrap();
            let m = g.broadcast_rows(m, 1).unwrap();
            g.scale(m, 3.0).unwrap()
        });
        prop_assert!(err < 1e-7, "div/reshape/mean {err}");
    }

    #[test]
    fn checkpoints_round_trip_bit_for_bit(
        arrays in prop::collection::btree_map("[a-z.]{1,8}", (1usize..4, prop::collection::vec(any::<f64>(), 1..6)), 0..5)
    ) {
        let mut params = Params::new();
        for (name, (rows, base)) in arrays {
            let data: Vec<f64> = base.iter().cycle().take(rows * base.len()).copied().collect();
            params.insert(name, Array::matrix(rows, base.len(), data));
        }
        let mut bytes = Vec::new();
        write_params(&mut bytes, &params).unwrap();
        let back = read_params(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.len(), params.len());
        for (name, arr) in &params {
            prop_assert_eq!(back[name].shape(), arr.shape());
            let a: Vec<u64> = arr.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back[name].data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
        let mut again = Vec::new();
        write_params(&mut again, &back).unwrap();
        prop_assert_eq!(again, bytes);
    }
}

#[test]
fn checkpoint_bytes_are_frozen() {
    let mut params = Params::new();
    params.insert("w".into(), Array::matrix(1, 2, vec![1.0, -0.5]));
    params.insert("a".into(), Array::scalar(2.0).reshaped(&[1]).unwrap());
    let mut bytes = Vec::new();
    write_params(&mut bytes, &params).unwrap();

    let mut expected = b"MSDE1".to_vec();
    // "a": rank 1, [1], 2.0
    expected.extend(1u64.to_le_bytes());
    expected.extend(b"a");
    expected.extend(1u64.to_le_bytes());
    expected.extend(1u64.to_le_bytes());
    expected.extend([0, 0, 0, 0, 0, 0, 0, 0x40]);
    // "w": rank 2, [1, 2], 1.0, -0.5
    expected.extend(1u64.to_le_bytes());
    expected.extend(b"w");
    expected.extend(2u64.to_le_bytes());
    expected.extend(1u64.to_le_bytes());
    expected.extend(2u64.to_le_bytes());
    expected.extend([0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
    expected.extend([0, 0, 0, 0, 0, 0, 0xe0, 0xbf]);
    assert_eq!(bytes, expected);
    assert_eq!(bytes.len(), 5 + (8 + 1 + 8 + 8 + 8) + (8 + 1 + 8 + 16 + 16));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut params = Params::new();
    params.insert("w".into(), Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let mut bytes = Vec::new();
    write_params(&mut bytes, &params).unwrap();
    for cut in [0, 3, 6, 14, bytes.len() - 1] {
        assert!(read_params(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[4] = b'2';
    assert!(matches!(
        read_params(bad.as_slice()),
        Err(CheckpointError::BadMagic)
    ));
    let mut doubled = bytes.clone();
    doubled.extend_from_slice(&bytes[5..]);
    assert!(matches!(
        read_params(doubled.as_slice()),
        Err(CheckpointError::Duplicate(_))
    ));
    let mut zero_dim = bytes.clone();
    zero_dim[5 + 8 + 1 + 8..5 + 8 + 1 + 16].copy_from_slice(&0u64.to_le_bytes());
    assert!(matches!(
        read_params(zero_dim.as_slice()),
        Err(CheckpointError::BadShape { .. })
    ));
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let mut params = Params::new();
    params.insert("x".into(), Array::matrix(1, 3, vec![3.0, -2.0, 0.5]));
    let mut state = OptimState::new(0.05);
    for _ in 0..2000 {
        let mut g = Graph::new();
        let x = g.input("x", params["x"].clone()).unwrap();
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq).unwrap();
        let grads = g.backward(l).unwrap().into_named();
        adam_step(&mut params, &grads, &mut state).unwrap();
    }
    assert!(params["x"].norm() < 1e-3, "{:?}", params["x"]);
}
