use celldet::tensor::ops::{bilinear_upsample, conv2d, fold, matmul, permute, softmax, unfold};
use celldet::tensor::{Padding, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
}

/// Six nested loops; padding follows ceil(in / stride) with the extra pixel after the data.
fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, same: bool) -> Tensor {
    let [n, h, wd, cin] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    let [kh, kw, _, cout] = [w.dim(0), w.dim(1), w.dim(2), w.dim(3)];
    let (ho, wo, pt, pl) = if same {
        let ho = h.div_ceil(stride);
        let wo = wd.div_ceil(stride);
        let ph = ((ho - 1) * stride + kh).saturating_sub(h);
        let pw = ((wo - 1) * stride + kw).saturating_sub(wd);
        (ho, wo, ph / 2, pw / 2)
    } else {
        ((h - kh) / stride + 1, (wd - kw) / stride + 1, 0, 0)
    };
    let xd = x.data();
    let wdata = w.data();
    let mut out = vec![0.0f32; n * ho * wo * cout];
    for bi in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for co in 0..cout {
                    let mut acc = b.data()[co] as f64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = xd[((bi * h + iy as usize) * wd + ix as usize) * cin + ci];
                                let wv = wdata[((ky * kw + kx) * cin + ci) * cout + co];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((bi * ho + oy) * wo + ox) * cout + co] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, ho, wo, cout], out).unwrap()
}

fn close(a: &Tensor, b: &Tensor, tol: f32) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b) <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_loop_oracle(
        n in 1usize..3, h in 3usize..9, w in 3usize..9, cin in 1usize..4, cout in 1usize..4,
        k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, same: bool, seed: u64,
    ) {
        let x = rand_tensor(&[n, h, w, cin], seed);
        let wt = rand_tensor(&[k, k, cin, cout], seed ^ 1);
        let b = rand_tensor(&[cout], seed ^ 2);
        let pad = if same { Padding::Same } else { Padding::Valid };
        let got = conv2d(&x, &wt, &b, stride, pad).unwrap();
        prop_assert!(close(&got, &naive_conv(&x, &wt, &b, stride, same), 1e-5));
    }

    #[test]
    fn batched_matmul_matches_triple_loop(bt in 1usize..3, m in 1usize..6, k in 1usize..6, p in 1usize..6, seed: u64) {
        let a = rand_tensor(&[bt, m, k], seed);
        let b = rand_tensor(&[bt, k, p], seed ^ 7);
        let got = matmul(&a, &b).unwrap();
        let mut want = vec![0.0f32; bt * m * p];
        for t in 0..bt {
            for i in 0..m {
                for j in 0..p {
                    let mut s = 0.0f64;
                    for l in 0..k {
                        s += a.data()[(t * m + i) * k + l] as f64 * b.data()[(t * k + l) * p + j] as f64;
                    }
                    want[(t * m + i) * p + j] = s as f32;
                }
            }
        }
        prop_assert!(close(&got, &Tensor::new(vec![bt, m, p], want).unwrap(), 1e-5));
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..8, shift in -50.0f32..50.0, seed: u64) {
        let x = rand_tensor(&[rows, cols], seed).map(|v| 4.0 * v);
        let y = softmax(&x, 1).unwrap();
        for row in y.data().chunks(cols) {
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        let shifted = softmax(&x.map(|v| v + shift), 1).unwrap();
        prop_assert!(close(&y, &shifted, 1e-5));
    }

    #[test]
    fn fold_inverts_unfold(n in 1usize..3, hp in 1usize..5, wp in 1usize..5, c in 1usize..4, p in 1usize..4, seed: u64) {
        let x = rand_tensor(&[n, hp * p, wp * p, c], seed);
        let seq = unfold(&x, p).unwrap();
        prop_assert_eq!(seq.shape(), &[n * p * p, hp * wp, c][..]);
        let back = fold(&seq, p, [n, hp * p, wp * p, c]).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn unfold_groups_by_patch_offset(hp in 1usize..4, wp in 1usize..4, p in 1usize..4, seed: u64) {
        let (h, w) = (hp * p, wp * p);
        let x = rand_tensor(&[1, h, w, 1], seed);
        let seq = unfold(&x, p).unwrap();
        for s in 0..p * p {
            let (oy, ox) = (s / p, s % p);
            for t in 0..hp * wp {
                let (py, px) = (t / wp, t % wp);
                let src = x.data()[(py * p + oy) * w + px * p + ox];
                prop_assert_eq!(seq.data()[s * hp * wp + t], src);
            }
        }
    }

    #[test]
    fn permute_roundtrip(a in 1usize..4, b in 1usize..4, c in 1usize..4, seed: u64) {
        let x = rand_tensor(&[a, b, c], seed);
        let y = permute(&x, &[2, 0, 1]).unwrap();
        prop_assert_eq!(y.shape(), &[c, a, b][..]);
        prop_assert_eq!(permute(&y, &[1, 2, 0]).unwrap(), x);
    }

    #[test]
    fn upsample_preserves_constants(h in 1usize..5, w in 1usize..5, factor in 2usize..4, v in -2.0f32..2.0) {
        let x = Tensor::full([1, h, w, 2], v);
        let y = bilinear_upsample(&x, factor).unwrap();
        prop_assert_eq!(y.shape(), &[1, h * factor, w * factor, 2][..]);
        prop_assert!(y.data().iter().all(|&u| (u - v).abs() < 1e-6));
    }
}

#[test]
fn unfold_rejects_indivisible_sizes() {
    assert!(unfold(&Tensor::zeros([1, 5, 4, 1]), 2).is_err());
    assert!(fold(&Tensor::zeros([4, 4, 1]), 2, [1, 4, 4, 2]).is_err());
}

#[test]
fn same_padding_stride_two_halves() {
    let x = Tensor::ones([1, 7, 6, 1]);
    let w = Tensor::ones([3, 3, 1, 1]);
    let y = conv2d(&x, &w, &Tensor::zeros([1]), 2, Padding::Same).unwrap();
    assert_eq!(y.shape(), &[1, 4, 3, 1]);
}
