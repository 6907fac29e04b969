use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn mat(r: usize, c: usize, d: &[f64]) -> Tensor {
    Tensor::matrix(r, c, d.to_vec()).unwrap()
}

#[test]
fn matmul_examples() {
    let mut t = Tape::new();
    let id = t.constant(mat(2, 2, &[1., 0., 0., 1.]));
    let b = t.constant(mat(2, 2, &[5., 6., 7., 8.]));
    let z = t.constant(Tensor::zeros(&[2, 2]));
    let a = t.constant(mat(2, 2, &[1., 2., 3., 4.]));
    let r = t.matmul(id, b).unwrap();
    assert_eq!(t.value(r).data(), &[5., 6., 7., 8.]);
    let r = t.matmul(z, b).unwrap();
    assert_eq!(t.value(r).data(), &[0.; 4]);
    let r = t.matmul(a, b).unwrap();
    assert_eq!(t.value(r).data(), &[19., 22., 43., 50.]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, GasError::Shape { .. }));
}

#[test]
fn masked_softmax_examples() {
    let w = masked_softmax(&[0.7, 0.7, 0.7], &[true; 3]).unwrap();
    for x in &w {
        assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
    }
    assert_eq!(masked_softmax(&[5., 99.], &[true, false]).unwrap(), vec![1.0, 0.0]);
    let w = masked_softmax(&[1., 2.], &[true, true]).unwrap();
    assert_abs_diff_eq!(w[0], 0.26894, epsilon = 1e-4);
    assert_abs_diff_eq!(w[1], 0.73106, epsilon = 1e-4);
    assert!(matches!(
        masked_softmax(&[1., 2.], &[false, false]),
        Err(GasError::EmptyNeighborhood)
    ));
}

proptest! {
    #[test]
    fn masked_softmax_normalised_and_shift_invariant(
        scores in prop::collection::vec(-20.0f64..20.0, 1..12),
        mask_bits in prop::collection::vec(any::<bool>(), 12),
        shift in -50.0f64..50.0,
    ) {
        let n = scores.len();
        let mut mask: Vec<bool> = mask_bits[..n].to_vec();
        mask[0] = true;
        let w = masked_softmax(&scores, &mask).unwrap();
        let total: f64 = w.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        for (x, m) in w.iter().zip(&mask) {
            if *m { prop_assert!(*x > 0.0) } else { prop_assert_eq!(*x, 0.0) }
        }
        let shifted: Vec<f64> = scores.iter().zip(&mask).map(|(s, m)| if *m { s + shift } else { *s }).collect();
        let w2 = masked_softmax(&shifted, &mask).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

fn conv(seq: Tensor, filters: Tensor, bias: Vec<f64>) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let s = t.constant(seq);
    let f = t.constant(filters);
    let b = t.constant(Tensor::vector(bias));
    let o = seq_conv_maxpool(&mut t, s, f, b)?;
    Ok(t.value(o).data().to_vec())
}

#[test]
fn conv_zero_sequence_gives_zero() {
    let f = Tensor::new(vec![3, 2, 4], (0..24).map(|i| i as f64 - 7.0).collect()).unwrap();
    assert_eq!(conv(Tensor::zeros(&[5, 2]), f, vec![0.0; 4]).unwrap(), vec![0.0; 4]);
}

#[test]
fn conv_single_window_equals_activation() {
    let seq = mat(2, 1, &[1.5, -2.0]);
    let f = Tensor::new(vec![2, 1, 2], vec![1.0, -1.0, 2.0, 1.0]).unwrap();
    // filter 0: 1.5*1 + -2*2 = -2.5 → relu 0; filter 1: 1.5*-1 + -2*1 = -3.5 + 4 bias
    let out = conv(seq, f, vec![0.0, 4.0]).unwrap();
    assert_eq!(out, vec![0.0, 0.5]);
}

#[test]
fn conv_hand_enumerated_windows() {
    // windows (flattened 2×2) dotted with [1, 2, 0, -1]: 0, 1, 5 → max 5, plus bias 0.5
    let seq = mat(4, 2, &[1., 0., 0., 1., 2., 1., 1., -1.]);
    let f = Tensor::new(vec![2, 2, 1], vec![1., 2., 0., -1.]).unwrap();
    assert_eq!(conv(seq, f, vec![0.5]).unwrap(), vec![5.5]);
}

#[test]
fn conv_too_short_is_an_error() {
    let f = Tensor::zeros(&[3, 2, 1]);
    let err = conv(Tensor::zeros(&[2, 2]), f, vec![0.0]).unwrap_err();
    assert!(matches!(err, GasError::SequenceTooShort { len: 2, width: 3 }));
}

#[test]
fn conv_ignores_rows_outside_segment() {
    // Same sequence with trailing rows that are not part of the segment.
    let seq = [1., 0., 0., 1., 2., 1., 1., -1.];
    let mut padded = seq.to_vec();
    padded.extend_from_slice(&[0.0, 0.0, 9.0, 9.0]);
    let f = Tensor::new(vec![2, 2, 1], vec![1., 2., 0., -1.]).unwrap();
    let mut t = Tape::new();
    let x = t.constant(mat(6, 2, &padded));
    let fv = t.constant(f);
    let b = t.constant(Tensor::vector(vec![0.5]));
    let o = t
        .seq_conv_maxpool(x, fv, b, 2, &[Segment { start: 0, len: 4 }])
        .unwrap();
    assert_eq!(t.value(o).data(), &[5.5]);
}

#[test]
fn backward_sum_and_dot() {
    let mut t = Tape::new();
    let x = t.leaf(mat(2, 3, &[1., -2., 3., 0.5, 0., 4.]));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 6]);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![1., -2., 3.]));
    let d = t.dot(x, x).unwrap();
    let g = t.backward(d).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[2., -4., 6.]);
}

#[test]
fn backward_rejects_non_scalar_and_zeroes_unused() {
    let mut store = ParamStore::new();
    let used = store.add("used", Tensor::vector(vec![1.0, 2.0]));
    let unused = store.add("unused", Tensor::vector(vec![3.0]));
    let mut t = Tape::with_params(&store);
    let u = t.param(used);
    assert!(matches!(t.backward(u), Err(GasError::Rank(_))));
    let s = t.sum(u);
    let g = t.backward(s).unwrap();
    assert_eq!(g.param(unused), vec![0.0]);
    assert_eq!(g.param(used), vec![1.0, 1.0]);
}

#[test]
fn finite_diff_exact_for_linear_and_quadratic() {
    let p = Tensor::vector(vec![0.3, -1.2, 2.5]);
    let lin = finite_diff_check(
        |t, x| {
            let c = t.constant(Tensor::vector(vec![2.0, -3.0, 0.5]));
            t.dot(x, c)
        },
        &p,
        1e-5,
    )
    .unwrap();
    assert!(lin < 1e-9, "{lin}");
    let quad = finite_diff_check(|t, x| t.dot(x, x), &Tensor::zeros(&[3]), 1e-5).unwrap();
    assert!(quad < 1e-7, "{quad}");
}

fn pseudo(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn every_op_passes_finite_differences() {
    let h = 1e-5;
    let p = Tensor::matrix(3, 4, pseudo(12, 1)).unwrap();
    // matmul + add_row + relu + sigmoid + sum
    let e = finite_diff_check(
        |t, x| {
            let w = t.constant(Tensor::matrix(4, 2, pseudo(8, 2))?);
            let b = t.constant(Tensor::vector(vec![0.1, -0.2]));
            let z = t.linear(x, w, Some(b))?;
            let r = t.relu(z);
            let s = t.sigmoid(r);
            let q = t.mul(s, s)?;
            Ok(t.sum(q))
        },
        &p,
        h,
    )
    .unwrap();
    assert!(e < 1e-4, "dense {e}");
    // concat, gather, zero_rows, sub, scale
    let e = finite_diff_check(
        |t, x| {
            let c = t.concat(&[x, x])?;
            let g = t.gather(c, &[2, 0, 2, 1])?;
            let z = t.zero_rows(g, &[true, false, true, true])?;
            let k = t.constant(Tensor::matrix(4, 8, pseudo(32, 3))?);
            let d = t.sub(z, k)?;
            let s = t.scale(d, 0.7);
            t.dot(s, s)
        },
        &p,
        h,
    )
    .unwrap();
    assert!(e < 1e-4, "structural {e}");
    // attention chain: scores → masked softmax → weighted sum
    let slots = SlotIndex {
        width: 3,
        idx: vec![0, 2, 1, 1, 0, 0],
        mask: vec![true, true, true, true, false, true],
    };
    let e = finite_diff_check(
        |t, x| {
            let q = t.gather(x, &[0, 1])?;
            let s = t.attn_scores(q, x, &slots, 0.5)?;
            let w = t.masked_softmax(s, &slots.mask)?;
            let o = t.weighted_sum(w, x, &slots)?;
            let k = t.constant(Tensor::matrix(2, 4, pseudo(8, 4))?);
            t.dot(o, k)
        },
        &p,
        h,
    )
    .unwrap();
    assert!(e < 1e-4, "attention {e}");
    // bce on logits
    let e = finite_diff_check(
        |t, x| {
            let w = t.constant(Tensor::matrix(4, 1, pseudo(4, 5))?);
            let z = t.matmul(x, w)?;
            t.bce_with_logits(z, &[1.0, 0.0, 1.0], &[2.0, 1.0, 0.5])
        },
        &p,
        h,
    )
    .unwrap();
    assert!(e < 1e-4, "bce {e}");
}

#[test]
fn conv_gradients_match_finite_differences() {
    let x = Tensor::matrix(9, 3, pseudo(27, 7)).unwrap();
    let filters = Tensor::new(vec![2, 3, 4], pseudo(24, 8)).unwrap();
    let segs = [Segment { start: 0, len: 5 }, Segment { start: 5, len: 4 }];
    let e = finite_diff_check(
        |t, xv| {
            let f = t.constant(filters.clone());
            let b = t.constant(Tensor::vector(vec![0.3, 0.1, -0.2, 0.4]));
            let o = t.seq_conv_maxpool(xv, f, b, 2, &segs)?;
            let k = t.constant(Tensor::matrix(2, 4, pseudo(8, 9))?);
            t.dot(o, k)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(e < 1e-4, "wrt input {e}");
    let e = finite_diff_check(
        |t, fv| {
            let xv = t.constant(x.clone());
            let b = t.constant(Tensor::vector(vec![0.3, 0.1, -0.2, 0.4]));
            let o = t.seq_conv_maxpool(xv, fv, b, 2, &segs)?;
            let k = t.constant(Tensor::matrix(2, 4, pseudo(8, 9))?);
            t.dot(o, k)
        },
        &filters,
        1e-5,
    )
    .unwrap();
    assert!(e < 1e-4, "wrt filters {e}");
}

#[test]
fn weighted_sum_is_permutation_invariant_bitwise() {
    let table = Tensor::matrix(5, 3, pseudo(15, 11)).unwrap();
    let weights = [0.1, 0.35, 0.2, 0.35];
    let idx = [4usize, 1, 3, 0];
    let perm = [2usize, 0, 3, 1];
    let run = |order: &[usize]| {
        let mut t = Tape::new();
        let tv = t.constant(table.clone());
        let w = t.constant(Tensor::matrix(1, 4, order.iter().map(|&i| weights[i]).collect()).unwrap());
        let slots = SlotIndex {
            width: 4,
            idx: order.iter().map(|&i| idx[i]).collect(),
            mask: vec![true; 4],
        };
        let o = t.weighted_sum(w, tv, &slots).unwrap();
        t.value(o).data().to_vec()
    };
    let a = run(&[0, 1, 2, 3]);
    let b = run(&perm);
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![0.5, -1.5]));
    let mut st = OptimizerState::new(&store, AdamConfig::default());
    for _ in 0..2 {
        adam_step(&mut store, &[Some(vec![0.0, 0.0])], &mut st).unwrap();
    }
    assert_eq!(st.step, 2);
    assert_eq!(store.get(id).data(), &[0.5, -1.5]);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps) ≈ lr·sign(g).
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![1.0, 1.0, 1.0]));
    let mut st = OptimizerState::new(&store, AdamConfig::default());
    adam_step(&mut store, &[Some(vec![3.0, -0.01, 250.0])], &mut st).unwrap();
    let d = store.get(id).data();
    assert_abs_diff_eq!(d[0], 1.0 - 0.005, epsilon = 1e-8);
    assert_abs_diff_eq!(d[1], 1.0 + 0.005, epsilon = 1e-8);
    assert_abs_diff_eq!(d[2], 1.0 - 0.005, epsilon = 1e-8);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::vector(vec![1.0]));
    let mut st = OptimizerState::new(&store, AdamConfig::default());
    let err = adam_step(&mut store, &[Some(vec![f64::NAN])], &mut st).unwrap_err();
    assert!(matches!(err, GasError::NonFinite(_)));
    assert_eq!(st.step, 0);
    assert_eq!(store.get(id).data(), &[1.0]);
}
