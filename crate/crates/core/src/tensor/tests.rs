use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::new();
    let i2 = tape.constant(&Tensor::identity(2));
    let a = tape.constant(&m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(&m(&[&[5.0, 6.0], &[7.0, 8.0]]));
    let id = tape.matmul(i2, a).unwrap();
    assert_eq!(tape.value(id), &[1.0, 2.0, 3.0, 4.0]);
    let ab = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(ab), &[19.0, 22.0, 43.0, 50.0]);
    let abt = tape.matmul_nt(a, b).unwrap();
    // [[1,2],[3,4]] · [[5,7],[6,8]]
    assert_eq!(tape.value(abt), &[17.0, 23.0, 39.0, 53.0]);
}

#[test]
fn matmul_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(&Tensor::zeros(vec![2, 3]));
    let b = tape.constant(&Tensor::zeros(vec![4, 2]));
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(&Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    for v in tape.value(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.constant(&Tensor::vector(vec![0.0, 2f64.ln()]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    assert!((tape.value(y)[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((tape.value(y)[1] - 2.0 / 3.0).abs() < 1e-15);

    let base = Tensor::vector(vec![0.3, -1.2, 2.5, 0.0]).unwrap();
    let shifted = Tensor::vector(base.data().iter().map(|v| v + 17.0).collect()).unwrap();
    let a = tape.constant(&base);
    let b = tape.constant(&shifted);
    let (sa, sb) = (tape.softmax(a, 0).unwrap(), tape.softmax(b, 0).unwrap());
    for (p, q) in tape.value(sa).iter().zip(tape.value(sb)) {
        assert!((p - q).abs() < 1e-14);
    }
}

#[test]
fn softmax_rejects_bad_axis_and_handles_inner_axes() {
    let mut tape = Tape::new();
    let x = tape.constant(&Tensor::zeros(vec![2, 3]));
    assert!(tape.softmax(x, 2).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_tensor(&mut rng, &[2, 3, 4]);
    let x = tape.constant(&t);
    let y = tape.softmax(x, 1).unwrap();
    let v = tape.value(y);
    for o in 0..2 {
        for i in 0..4 {
            let s: f64 = (0..3).map(|l| v[(o * 3 + l) * 4 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap().with_grad());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![0.5, -0.25]).unwrap().with_grad());
    let d = tape.sub(x, x).unwrap();
    let sq = tape.mul(d, d).unwrap();
    let l = tape.mean(sq);
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_errors_and_unreached_leaves() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
    assert!(tape.backward(x).is_err());
    let unused = tape.leaf(&Tensor::vector(vec![4.0]).unwrap().with_grad());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), &[0.0]);
    let mut t = Tensor::vector(vec![4.0]).unwrap();
    tape.write_grad(unused, &mut t);
    assert_eq!(t.grad.as_deref(), Some(&[0.0][..]));

    let mut empty = Tape::new();
    let mut other = Tape::new();
    let v = other.constant(&Tensor::scalar(1.0));
    assert!(empty.backward(v).is_err());
}

#[test]
fn finite_difference_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&mut rng, &[5]);
    let err = finite_difference_check(
        |t, x| {
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");

    let err = finite_difference_check(
        |t, x| {
            let z = t.scale(x, 0.0);
            Ok(t.sum(z))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");

    // softmax sums to one, so its gradient is ~0; a wide step keeps the
    // finite-difference roundoff below the comparison floor.
    let err = finite_difference_check(
        |t, x| {
            let s = t.softmax(x, 0)?;
            Ok(t.sum(s))
        },
        &x,
        1e-2,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

/// Scalar probe that mixes every output entry with fixed random weights so
/// the gradient of each op is exercised in full.
fn weighted_sum(t: &mut Tape, y: Var, seed: u64) -> Result<Var, crate::SignError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random_tensor(&mut rng, &t.shape(y).to_vec().iter().map(|&d| d.max(1)).collect::<Vec<_>>());
    let w = if t.shape(y).is_empty() {
        Tensor::scalar(w.item())
    } else {
        w
    };
    let wv = t.constant(&w);
    let p = t.mul(y, wv)?;
    Ok(t.sum(p))
}

#[test]
fn every_op_passes_gradient_check_over_seeds() {
    type OpFn = Box<dyn Fn(&mut Tape, Var, &Tensor) -> Result<Var, crate::SignError>>;
    let other_shape = [3, 4];
    let ops: Vec<(&str, OpFn)> = vec![
        ("matmul", Box::new(|t, x, o| {
            let ov = t.constant(&o.clone().reshape(vec![4, 3]).unwrap());
            t.matmul(x, ov)
        })),
        ("matmul_rhs", Box::new(|t, x, o| {
            let ov = t.constant(&o.clone().reshape(vec![4, 3]).unwrap());
            t.matmul(ov, x)
        })),
        ("matmul_nt", Box::new(|t, x, o| {
            let ov = t.constant(o);
            t.matmul_nt(x, ov)
        })),
        ("matmul_nt_rhs", Box::new(|t, x, o| {
            let ov = t.constant(o);
            t.matmul_nt(ov, x)
        })),
        ("add", Box::new(|t, x, o| {
            let ov = t.constant(o);
            t.add(x, ov)
        })),
        ("sub", Box::new(|t, x, o| {
            let ov = t.constant(o);
            t.sub(ov, x)
        })),
        ("mul", Box::new(|t, x, o| {
            let ov = t.constant(o);
            t.mul(x, ov)
        })),
        ("self_mul", Box::new(|t, x, _| t.mul(x, x))),
        ("add_row", Box::new(|t, x, _| {
            let b = t.slice_cols(x, 0, 4)?;
            let b = t.mean_rows(b)?;
            t.add_row(x, b)
        })),
        ("affine", Box::new(|t, x, _| Ok(t.affine(x, -2.5, 0.75)))),
        ("relu", Box::new(|t, x, _| Ok(t.relu(x)))),
        ("sigmoid", Box::new(|t, x, _| Ok(t.sigmoid(x)))),
        ("exp", Box::new(|t, x, _| Ok(t.exp(x)))),
        ("log", Box::new(|t, x, _| {
            let e = t.exp(x);
            Ok(t.log(e))
        })),
        ("softmax_rows", Box::new(|t, x, _| t.softmax(x, 1))),
        ("softmax_cols", Box::new(|t, x, _| t.softmax(x, 0))),
        ("layer_norm", Box::new(|t, x, o| {
            let g = t.leaf(&Tensor::vector(o.data()[..4].to_vec()).unwrap().with_grad());
            let b = t.leaf(&Tensor::vector(o.data()[4..8].to_vec()).unwrap().with_grad());
            t.layer_norm(x, g, b, 1e-5)
        })),
        ("slice_concat", Box::new(|t, x, _| {
            let a = t.slice_cols(x, 0, 1)?;
            let b = t.slice_cols(x, 1, 3)?;
            t.concat_cols(&[b, a, b])
        })),
        ("gather_rows", Box::new(|t, x, _| t.gather_rows(x, &[2, 0, 2, 1]))),
        ("mean_rows", Box::new(|t, x, _| t.mean_rows(x))),
        ("mean", Box::new(|t, x, _| Ok(t.mean(x)))),
        ("pick_prod", Box::new(|t, x, _| {
            let p = t.pick(x, &[3, 0, 1])?;
            Ok(t.prod(p))
        })),
        ("reshape", Box::new(|t, x, _| t.reshape(x, vec![12]))),
        ("bce", Box::new(|t, x, _| t.bce_with_logits(x, &[0., 1., 1., 0., 0., 0., 1., 0., 1., 1., 0., 0.]))),
        ("ctc", Box::new(|t, x, _| {
            let p = t.softmax(x, 1)?;
            t.ctc_log_prob(p, &[1, 2], 0)
        })),
        ("add_const", Box::new(|t, x, o| t.add_const(x, o))),
    ];
    for (name, op) in &ops {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 97 + 1);
            let x = random_tensor(&mut rng, &[3, 4]);
            let o = random_tensor(&mut rng, &other_shape);
            let err = finite_difference_check(
                |t, xv| {
                    let y = op(t, xv, &o)?;
                    weighted_sum(t, y, seed)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{name} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::vector(vec![3.0]).unwrap().with_grad());
    let d = tape.detach(x);
    let y = tape.mul(d, x).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[3.0]);
}

#[test]
fn dropout_masks_consistently_and_is_identity_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::new(vec![50], vec![1.0; 50]).unwrap().with_grad());
    assert_eq!(tape.dropout(x, 0.0, &mut rng), x);
    let y = tape.dropout(x, 0.5, &mut rng);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.value(y), tape.grad(x).unwrap());
    assert!(tape.value(y).iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = random_tensor(&mut rng, &[4, 6]).with_grad();
        let b = random_tensor(&mut rng, &[6, 3]).with_grad();
        let mut tape = Tape::new();
        let (av, bv) = (tape.leaf(&a), tape.leaf(&b));
        let c = tape.matmul(av, bv).unwrap();
        let s = tape.softmax(c, 1).unwrap();
        let l = tape.log(s);
        let out = tape.mean(l);
        tape.backward(out).unwrap();
        (tape.grad(av).unwrap().to_vec(), tape.grad(bv).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn tensor_construction_invariants() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    let t = Tensor::scalar(3.0);
    assert_eq!(t.numel(), 1);
    assert!(t.shape().is_empty());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..7, seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&mut rng, &[rows, cols]);
            let t = Tensor::new(vec![rows, cols], t.data().iter().map(|v| v * scale).collect()).unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(&t);
            let y = tape.softmax(x, 1).unwrap();
            for r in tape.value(y).chunks(cols) {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(r.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
