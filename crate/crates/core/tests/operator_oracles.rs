//! Operator-level oracles: every engine operator checked against an
//! independent brute-force implementation or analytic identity.

use hiersteer_core::autodiff::ComputeGraph;
use hiersteer_core::rng::splitmix64;
use hiersteer_core::tensor::Tensor;
use proptest::prelude::*;

/// Independent conv oracle: quadruple loop straight off the definition
/// out[d,i,j] = bias[d] + Σ_c Σ_m Σ_n input[c, i·s+m, j·s+n] · k[d,c,m,n].
#[allow(clippy::too_many_arguments)]
fn conv_bruteforce(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    k: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0.0; d * oh * ow];
    for dd in 0..d {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias[dd];
                for cc in 0..c {
                    for m in 0..k {
                        for n in 0..k {
                            let iv = input[(cc * h + i * stride + m) * w + j * stride + n];
                            let kv = kernels[((dd * c + cc) * k + m) * k + n];
                            acc += iv * kv;
                        }
                    }
                }
                out[(dd * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

fn rand_vec(seed: u64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let h = splitmix64(seed.wrapping_add(i as u64 * 0x9E37_79B9));
            (h & 0xFFFFF) as f64 / 0xFFFFF as f64 * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn conv2d_matches_bruteforce_on_200_seeded_cases() {
    let mut checked = 0usize;
    let mut case_seed = 0xC0FFEE_u64;
    while checked < 200 {
        case_seed = splitmix64(case_seed);
        let c = 1 + (case_seed % 3) as usize;
        let d = 1 + ((case_seed >> 8) % 3) as usize;
        let h = 2 + ((case_seed >> 16) % 7) as usize; // 2..=8
        let w = 2 + ((case_seed >> 24) % 7) as usize;
        let kmax = h.min(w).min(4);
        let k = 1 + ((case_seed >> 32) % kmax as u64) as usize;
        let stride = 1 + ((case_seed >> 40) % 3) as usize;

        let input = rand_vec(case_seed ^ 1, c * h * w);
        let kernels = rand_vec(case_seed ^ 2, d * c * k * k);
        let bias = rand_vec(case_seed ^ 3, d);

        let expected = conv_bruteforce(&input, &kernels, &bias, c, h, w, d, k, stride);

        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![c, h, w], input).unwrap(), false);
        let kk = g.leaf(Tensor::new(vec![d, c, k, k], kernels).unwrap(), false);
        let b = g.leaf(Tensor::new(vec![d], bias).unwrap(), false);
        let y = g.conv2d(x, kk, b, stride).unwrap();

        for (a, e) in g.value(y).data().iter().zip(&expected) {
            let rel = (a - e).abs() / (1.0f64).max(e.abs());
            assert!(
                rel < 1e-10,
                "case {checked} (c{c} d{d} {h}x{w} k{k} s{stride}): {a} vs {e}"
            );
        }
        checked += 1;
    }
}

/// Hand-unrolled recurrence oracle for h_t = Wx·x_t + Whᵀ·relu(h_{t−1}) + b.
fn rnn_bruteforce(
    xs: &[Vec<f64>],
    wx: &[f64],
    wh: &[f64],
    b: &[f64],
    m: usize,
    n: usize,
) -> Vec<f64> {
    let mut h: Vec<f64> = vec![0.0; m];
    for x in xs {
        let s: Vec<f64> = h.iter().map(|&v| v.max(0.0)).collect();
        let mut next = vec![0.0; m];
        for (i, nx) in next.iter_mut().enumerate() {
            let mut acc = b[i];
            for (j, &xv) in x.iter().enumerate() {
                acc += wx[i * n + j] * xv;
            }
            for (j, &sv) in s.iter().enumerate() {
                acc += wh[j * m + i] * sv;
            }
            *nx = acc;
        }
        h = next;
    }
    h
}

#[test]
fn rnn_sequence_matches_hand_unrolled_recurrence() {
    for seed in 0..24u64 {
        let s = splitmix64(seed * 7 + 1);
        let m = 1 + (s % 5) as usize;
        let n = 1 + ((s >> 8) % 6) as usize;
        let steps = 1 + ((s >> 16) % 7) as usize;
        let wx = rand_vec(s ^ 0x11, m * n);
        let wh = rand_vec(s ^ 0x22, m * m);
        let b = rand_vec(s ^ 0x33, m);
        let xs: Vec<Vec<f64>> = (0..steps)
            .map(|t| rand_vec(s ^ (0x44 + t as u64), n))
            .collect();

        let expected = rnn_bruteforce(&xs, &wx, &wh, &b, m, n);

        let mut g = ComputeGraph::<f64>::new();
        let x_ids: Vec<_> = xs
            .iter()
            .map(|x| g.leaf(Tensor::vector(x.clone()), false))
            .collect();
        let wx_id = g.leaf(Tensor::new(vec![m, n], wx).unwrap(), false);
        let wh_id = g.leaf(Tensor::new(vec![m, m], wh).unwrap(), false);
        let b_id = g.leaf(Tensor::vector(b), false);
        let h = g.rnn_sequence(&x_ids, wx_id, wh_id, b_id, None).unwrap();

        for (a, e) in g.value(h).data().iter().zip(&expected) {
            assert!(
                (a - e).abs() < 1e-12,
                "seed {seed}: rnn output {a} vs oracle {e}"
            );
        }
    }
}

#[test]
fn fully_connected_matches_naive_double_loop() {
    let (m, n) = (10, 7);
    let w = rand_vec(77, m * n);
    let x = rand_vec(78, n);
    let b = rand_vec(79, m);
    let mut expected = vec![0.0; m];
    for i in 0..m {
        let mut acc = b[i];
        for j in 0..n {
            acc += w[i * n + j] * x[j];
        }
        expected[i] = acc;
    }
    let mut g = ComputeGraph::<f64>::new();
    let xi = g.leaf(Tensor::vector(x), false);
    let wi = g.leaf(Tensor::new(vec![m, n], w).unwrap(), false);
    let bi = g.leaf(Tensor::vector(b), false);
    let y = g.fully_connected(xi, wi, bi).unwrap();
    for (a, e) in g.value(y).data().iter().zip(&expected) {
        let rel = (a - e).abs() / (1e-30 + e.abs());
        assert!(rel < 1e-12, "{a} vs {e}");
    }
}

#[test]
fn loss_operators_pass_their_analytic_cases() {
    let mut g = ComputeGraph::<f64>::new();

    // Softmax: uniform over equal logits, analytic two-class case.
    let five = g.leaf(Tensor::vector(vec![0.0; 5]), false);
    let p = g.softmax(five).unwrap();
    for &v in g.value(p).data() {
        assert!((v - 0.2).abs() < 1e-12);
    }
    let two = g.leaf(Tensor::vector(vec![0.0, 2.0f64.ln()]), false);
    let p2 = g.softmax(two).unwrap();
    assert!((g.value(p2).data()[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((g.value(p2).data()[1] - 2.0 / 3.0).abs() < 1e-12);

    // Cross-entropy: perfect prediction and uniform five-class.
    let perfect = g.leaf(Tensor::vector(vec![0.0, 0.0, 1.0]), false);
    let ce0 = g.cross_entropy(perfect, 2).unwrap();
    assert_eq!(g.value(ce0).data(), &[0.0]);
    let uniform = g.leaf(Tensor::vector(vec![0.2; 5]), false);
    let ce = g.cross_entropy(uniform, 0).unwrap();
    assert!((g.value(ce).item().unwrap() - 5.0f64.ln()).abs() < 1e-12);

    // Half-L2: residual (1, 2) → 2.5.
    let pred = g.leaf(Tensor::vector(vec![3.0, 4.0]), false);
    let target = g.leaf(Tensor::vector(vec![2.0, 2.0]), false);
    let l2 = g.half_l2(pred, target).unwrap();
    assert_eq!(g.value(l2).data(), &[2.5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -500.0f64..500.0,
    ) {
        let mut g = ComputeGraph::<f64>::new();
        let a = g.leaf(Tensor::vector(logits.clone()), false);
        let pa = g.softmax(a).unwrap();
        let probs = g.value(pa).data().to_vec();

        let sum: f64 = probs.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        for &p in &probs {
            prop_assert!(p > 0.0);
        }

        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let b = g.leaf(Tensor::vector(shifted), false);
        let pb = g.softmax(b).unwrap();
        let probs_b = g.value(pb).data();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0
        };
        prop_assert_eq!(argmax(&probs), argmax(probs_b));
    }

    #[test]
    fn cross_entropy_is_nonnegative_and_zero_only_at_certainty(
        raw in prop::collection::vec(0.01f64..10.0, 2..8),
        pick in 0usize..8,
    ) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let label = pick % probs.len();
        let mut g = ComputeGraph::<f64>::new();
        let p = g.leaf(Tensor::vector(probs.clone()), false);
        let ce = g.cross_entropy(p, label).unwrap();
        let loss = g.value(ce).item().unwrap();
        prop_assert!(loss >= 0.0);
        if probs[label] < 1.0 - 1e-12 {
            prop_assert!(loss > 0.0);
        }
    }

    #[test]
    fn half_l2_is_nonnegative_and_zero_iff_equal(
        pred in prop::collection::vec(-100.0f64..100.0, 1..10),
        delta in prop::collection::vec(-5.0f64..5.0, 1..10),
    ) {
        let n = pred.len().min(delta.len());
        let pred = &pred[..n];
        let target: Vec<f64> = pred.iter().zip(&delta[..n]).map(|(p, d)| p + d).collect();
        let mut g = ComputeGraph::<f64>::new();
        let pi = g.leaf(Tensor::vector(pred.to_vec()), false);
        let ti = g.leaf(Tensor::vector(target.clone()), false);
        let l = g.half_l2(pi, ti).unwrap();
        let loss = g.value(l).item().unwrap();
        prop_assert!(loss >= 0.0);
        let equal = pred.iter().zip(&target).all(|(a, b)| a == b);
        prop_assert_eq!(loss == 0.0, equal);
    }

    #[test]
    fn conv_matches_oracle_on_random_small_instances(
        seed in any::<u64>(),
    ) {
        let s = splitmix64(seed);
        let c = 1 + (s % 3) as usize;
        let d = 1 + ((s >> 8) % 3) as usize;
        let h = 1 + ((s >> 16) % 8) as usize;
        let w = 1 + ((s >> 24) % 8) as usize;
        let k = 1 + ((s >> 32) % h.min(w) as u64) as usize;
        let stride = 1 + ((s >> 40) % 2) as usize;
        let input = rand_vec(s ^ 0xA, c * h * w);
        let kernels = rand_vec(s ^ 0xB, d * c * k * k);
        let bias = rand_vec(s ^ 0xC, d);
        let expected = conv_bruteforce(&input, &kernels, &bias, c, h, w, d, k, stride);
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![c, h, w], input).unwrap(), false);
        let kk = g.leaf(Tensor::new(vec![d, c, k, k], kernels).unwrap(), false);
        let b = g.leaf(Tensor::new(vec![d], bias).unwrap(), false);
        let y = g.conv2d(x, kk, b, stride).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&expected) {
            prop_assert!((a - e).abs() / (1.0f64).max(e.abs()) < 1e-10);
        }
    }
}
