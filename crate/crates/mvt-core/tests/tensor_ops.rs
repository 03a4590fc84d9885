//! Forward-value checks for the tape operations against hand values and
//! independent straight-loop references.

mod common;

use common::*;
use mvt_core::{CoreError, Tape, Tensor};

fn leaf(tape: &mut Tape<f64>, t: Tensor<f64>) -> mvt_core::NodeId {
    tape.leaf(t)
}

#[test]
fn matmul_identity_passthrough() {
    let mut tape = Tape::<f64>::new();
    let i2 = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let m = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let y = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_projector_selects_row() {
    let mut tape = Tape::<f64>::new();
    let p = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]));
    let v = leaf(&mut tape, Tensor::from_rows(&[&[5.0], &[7.0]]));
    let y = tape.matmul(p, v).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, 0.0]);
}

#[test]
fn matmul_matches_triple_loop_reference() {
    let mut r = rng(11);
    let a = rand_tensor(&mut r, &[3, 4], -2.0, 2.0);
    let b = rand_tensor(&mut r, &[4, 2], -2.0, 2.0);
    let expect = naive_matmul(a.data(), b.data(), 3, 4, 2);
    let mut tape = Tape::<f64>::new();
    let an = leaf(&mut tape, a);
    let bn = leaf(&mut tape, b);
    let y = tape.matmul(an, bn).unwrap();
    assert_close(tape.value(y), &expect, 1e-12, "matmul");
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = leaf(&mut tape, Tensor::zeros(&[2, 3]));
    let b = leaf(&mut tape, Tensor::zeros(&[4, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "got: {msg}");
}

#[test]
fn matmul_nt_equals_matmul_with_transpose() {
    let mut r = rng(12);
    let a = rand_tensor(&mut r, &[3, 5], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[4, 5], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let an = leaf(&mut tape, a.clone());
    let bn = leaf(&mut tape, b.clone());
    let direct = tape.matmul_nt(an, bn).unwrap();
    let bt = tape.transpose(bn).unwrap();
    let via_t = tape.matmul(an, bt).unwrap();
    let diff = tape.value(direct).max_abs_diff(tape.value(via_t));
    assert!(diff <= 1e-12, "nt vs transpose path differ by {diff}");
}

#[test]
fn softmax_symmetric_pair_is_half_half() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[0.0, 0.0]]));
    let y = tape.softmax_rows(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_ln2_gives_two_thirds() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[std::f64::consts::LN_2, 0.0]]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((v[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_survives_huge_logit() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[1000.0, 0.0]]));
    let y = tape.softmax_rows(x).unwrap();
    let v = tape.value(y).data();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
}

#[test]
fn softmax_rejects_nan() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[f64::NAN, 0.0]]));
    assert!(matches!(
        tape.softmax_rows(x),
        Err(CoreError::Numeric { .. })
    ));
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut r = rng(13);
    let x = rand_tensor(&mut r, &[6, 7], -50.0, 50.0);
    let mut tape = Tape::<f64>::new();
    let xn = leaf(&mut tape, x);
    let y = tape.softmax_rows(xn).unwrap();
    for i in 0..6 {
        let s: f64 = tape.value(y).data()[i * 7..(i + 1) * 7].iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
    }
}

#[test]
fn gelu_zero_is_zero() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::scalar(0.0));
    let y = tape.gelu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0]);
}

#[test]
fn gelu_large_positive_approaches_identity() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::scalar(9.0));
    let y = tape.gelu(x).unwrap();
    assert!((tape.value(y).data()[0] - 9.0).abs() < 1e-12);
}

#[test]
fn gelu_at_one_matches_series_reference() {
    let expect = 0.5 * (1.0 + erf_series(1.0 / std::f64::consts::SQRT_2));
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::scalar(1.0));
    let y = tape.gelu(x).unwrap();
    assert!(
        (tape.value(y).data()[0] - expect).abs() < 1e-14,
        "gelu(1) = {}, series gives {expect}",
        tape.value(y).data()[0]
    );
}

#[test]
fn add_sub_mul_scale_elementwise() {
    let mut tape = Tape::<f64>::new();
    let a = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = leaf(&mut tape, Tensor::from_rows(&[&[10.0, 20.0], &[30.0, 40.0]]));
    let sum = tape.add(a, b).unwrap();
    assert_eq!(tape.value(sum).data(), &[11.0, 22.0, 33.0, 44.0]);
    let diff = tape.sub(b, a).unwrap();
    assert_eq!(tape.value(diff).data(), &[9.0, 18.0, 27.0, 36.0]);
    let prod = tape.mul(a, b).unwrap();
    assert_eq!(tape.value(prod).data(), &[10.0, 40.0, 90.0, 160.0]);
    let scaled = tape.scale(a, -2.0).unwrap();
    assert_eq!(tape.value(scaled).data(), &[-2.0, -4.0, -6.0, -8.0]);
}

#[test]
fn add_row_bias_broadcasts_one_row() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = leaf(&mut tape, Tensor::from_rows(&[&[0.5, -0.5]]));
    let y = tape.add_row_bias(x, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.5, 1.5, 3.5, 3.5]);
    let bad = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    assert!(tape.add_row_bias(x, bad).is_err());
}

#[test]
fn transpose_round_trip_is_bit_exact() {
    let mut r = rng(14);
    let x = rand_tensor(&mut r, &[5, 3], -10.0, 10.0);
    let mut tape = Tape::<f64>::new();
    let xn = leaf(&mut tape, x.clone());
    let t = tape.transpose(xn).unwrap();
    let back = tape.transpose(t).unwrap();
    assert_eq!(tape.value(back).data(), x.data());
    assert_eq!(tape.value(t).shape(), &[3, 5]);
}

#[test]
fn reshape_round_trip_is_bit_exact() {
    let mut r = rng(15);
    let x = rand_tensor(&mut r, &[4, 6], -10.0, 10.0);
    let mut tape = Tape::<f64>::new();
    let xn = leaf(&mut tape, x.clone());
    let r1 = tape.reshape(xn, &[8, 3]).unwrap();
    let r2 = tape.reshape(r1, &[4, 6]).unwrap();
    assert_eq!(tape.value(r2).data(), x.data());
    assert!(tape.reshape(xn, &[5, 5]).is_err());
}

#[test]
fn concat_and_slice_round_trip() {
    let mut r = rng(16);
    let a = rand_tensor(&mut r, &[2, 4], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let an = leaf(&mut tape, a.clone());
    let bn = leaf(&mut tape, b.clone());
    let cat = tape.concat_rows(&[an, bn]).unwrap();
    assert_eq!(tape.value(cat).shape(), &[5, 4]);
    let sa = tape.slice_rows(cat, 0, 2).unwrap();
    let sb = tape.slice_rows(cat, 2, 3).unwrap();
    assert_eq!(tape.value(sa).data(), a.data());
    assert_eq!(tape.value(sb).data(), b.data());

    let c = rand_tensor(&mut r, &[2, 3], -1.0, 1.0);
    let cn = leaf(&mut tape, c.clone());
    let wide = tape.concat_cols(&[an, cn]).unwrap();
    assert_eq!(tape.value(wide).shape(), &[2, 7]);
    let left = tape.slice_cols(wide, 0, 4).unwrap();
    let right = tape.slice_cols(wide, 4, 3).unwrap();
    assert_eq!(tape.value(left).data(), a.data());
    assert_eq!(tape.value(right).data(), c.data());
}

#[test]
fn gather_rows_duplicates_and_bounds() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(
        &mut tape,
        Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]),
    );
    let y = tape.gather_rows(x, &[2, 0, 2]).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
    assert!(matches!(
        tape.gather_rows(x, &[3]),
        Err(CoreError::Contract { .. })
    ));
}

#[test]
fn mean_axis_both_directions() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 3.0], &[5.0, 7.0]]));
    let m0 = tape.mean_axis(x, 0).unwrap();
    assert_eq!(tape.value(m0).shape(), &[1, 2]);
    assert_eq!(tape.value(m0).data(), &[3.0, 5.0]);
    let m1 = tape.mean_axis(x, 1).unwrap();
    assert_eq!(tape.value(m1).shape(), &[2, 1]);
    assert_eq!(tape.value(m1).data(), &[2.0, 6.0]);
}

#[test]
fn sum_totals_everything() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let s = tape.sum(x).unwrap();
    assert_eq!(tape.value(s).data(), &[10.0]);
}

#[test]
fn layer_norm_constant_row_collapses_to_beta() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[5.0, 5.0, 5.0, 5.0]]));
    let g = leaf(&mut tape, Tensor::from_rows(&[&[1.0; 4]]));
    let b = leaf(&mut tape, Tensor::from_rows(&[&[0.0; 4]]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    for &v in tape.value(y).data() {
        assert!(v.abs() < 1e-10, "zero-variance row should normalize to ~0, got {v}");
    }
}

#[test]
fn layer_norm_already_normalized_row_is_fixed_point() {
    let mut tape = Tape::<f64>::new();
    let x = leaf(&mut tape, Tensor::from_rows(&[&[1.0, -1.0]]));
    let g = leaf(&mut tape, Tensor::from_rows(&[&[1.0, 1.0]]));
    let b = leaf(&mut tape, Tensor::from_rows(&[&[0.0, 0.0]]));
    let y = tape.layer_norm(x, g, b, 1e-15).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 1.0).abs() < 1e-7 && (v[1] + 1.0).abs() < 1e-7);
}

#[test]
fn layer_norm_output_moments() {
    let mut r = rng(17);
    let x = rand_tensor(&mut r, &[1, 8], -4.0, 4.0);
    let mut tape = Tape::<f64>::new();
    let xn = leaf(&mut tape, x);
    let g = leaf(&mut tape, Tensor::full(&[1, 8], 1.0));
    let b = leaf(&mut tape, Tensor::zeros(&[1, 8]));
    let y = tape.layer_norm(xn, g, b, 1e-12).unwrap();
    let v = tape.value(y).data();
    let mean: f64 = v.iter().sum::<f64>() / 8.0;
    let var: f64 = v.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / 8.0;
    assert!(mean.abs() < 1e-12, "mean {mean}");
    assert!((var - 1.0).abs() < 1e-6, "population variance {var}");
}

#[test]
fn layer_norm_matches_reference() {
    let mut r = rng(18);
    let x = rand_tensor(&mut r, &[3, 5], -2.0, 2.0);
    let g = rand_tensor(&mut r, &[1, 5], 0.5, 1.5);
    let b = rand_tensor(&mut r, &[1, 5], -0.5, 0.5);
    let mut expect = Vec::new();
    for i in 0..3 {
        expect.extend(naive_layer_norm(
            &x.data()[i * 5..(i + 1) * 5],
            g.data(),
            b.data(),
            1e-5,
        ));
    }
    let mut tape = Tape::<f64>::new();
    let xn = leaf(&mut tape, x);
    let gn = leaf(&mut tape, g);
    let bn = leaf(&mut tape, b);
    let y = tape.layer_norm(xn, gn, bn, 1e-5).unwrap();
    assert_close(tape.value(y), &expect, 1e-12, "layer_norm");
}

#[test]
fn cross_entropy_uniform_logits_is_ln_k() {
    let mut tape = Tape::<f64>::new();
    let logits = leaf(&mut tape, Tensor::zeros(&[2, 4]));
    let loss = tape.cross_entropy_mean(logits, &[1, 3]).unwrap();
    assert!((tape.value(loss).data()[0] - 4.0f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_confident_correct_logit_vanishes() {
    let mut tape = Tape::<f64>::new();
    let logits = leaf(&mut tape, Tensor::from_rows(&[&[50.0, 0.0, 0.0]]));
    let loss = tape.cross_entropy_mean(logits, &[0]).unwrap();
    assert!(tape.value(loss).data()[0] < 1e-12);
}

#[test]
fn cross_entropy_matches_log_sum_exp_reference() {
    let mut r = rng(19);
    let logits = rand_tensor(&mut r, &[5, 6], -3.0, 3.0);
    let labels = [2usize, 0, 5, 1, 3];
    let mut expect = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &logits.data()[i * 6..(i + 1) * 6];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
        expect += lse - row[l];
    }
    expect /= 5.0;
    let mut tape = Tape::<f64>::new();
    let ln = leaf(&mut tape, logits);
    let loss = tape.cross_entropy_mean(ln, &labels).unwrap();
    assert!((tape.value(loss).data()[0] - expect).abs() < 1e-10);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let mut tape = Tape::<f64>::new();
    let logits = leaf(&mut tape, Tensor::zeros(&[1, 3]));
    assert!(matches!(
        tape.cross_entropy_mean(logits, &[3]),
        Err(CoreError::Contract { .. })
    ));
}

#[test]
fn tensor_constructors_validate() {
    assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
}
