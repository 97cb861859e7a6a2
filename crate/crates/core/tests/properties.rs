use lidar::metrics::{self, MetricConfig};
use lidar::pipeline::emb1;
use lidar::scatter::{self, EmbeddingBatch, ScatterPair};
use lidar::spectra::{self, SquareMatrix, Spectrum, DEFAULT_NEG_TOL};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_symmetric(dim: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| gaussian(rng));
    let sym = (&a + a.transpose()) * 0.5;
    SquareMatrix::from_matrix(sym).unwrap()
}

fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |_, _| gaussian(rng)).qr().q()
}

fn planted_batch(n: usize, q: usize, p: usize, rng: &mut ChaCha8Rng) -> EmbeddingBatch {
    let centers: Vec<f64> = (0..n * p).map(|_| 3.0 * gaussian(rng)).collect();
    EmbeddingBatch::from_fn(n, q, p, |i, _, k| centers[i * p + k] + gaussian(rng)).unwrap()
}

#[test]
fn sym_eig_reconstructs_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..100 {
        let dim = 2 + case * 62 / 99;
        let m = random_symmetric(dim, &mut rng);
        // indefinite inputs need a permissive floor
        let (s, q) = spectra::sym_eig(&m, 1e6).unwrap();
        let raw = m.as_matrix().clone().symmetric_eigenvalues();
        let mut raw: Vec<f64> = raw.iter().copied().collect();
        raw.sort_by(|a, b| b.total_cmp(a));
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(raw));
        let recon = &q * lambda * q.transpose();
        let scale = m.max_abs().max(1.0);
        assert!((recon - m.as_matrix()).amax() <= 1e-8 * scale, "dim {dim}");
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(dim, dim)).amax() <= 1e-8);
        assert!(s.values().windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn psd_reconstruction_uses_clamped_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for dim in [2usize, 7, 16, 33, 64] {
        let a = DMatrix::from_fn(dim, dim / 2 + 1, |_, _| gaussian(&mut rng));
        let m = SquareMatrix::from_matrix(&a * a.transpose()).unwrap();
        let m = SquareMatrix::from_matrix((m.as_matrix() + m.as_matrix().transpose()) * 0.5).unwrap();
        let (s, q) = spectra::sym_eig(&m, DEFAULT_NEG_TOL).unwrap();
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.values().to_vec()));
        let recon = &q * lambda * q.transpose();
        assert!((recon - m.as_matrix()).amax() <= 1e-8 * m.max_abs().max(1.0));
    }
}

#[test]
fn singular_values_square_to_gram_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..30 {
        let rows = 3 + case % 17;
        let cols = 2 + (case * 7) % 13;
        let z = DMatrix::from_fn(rows, cols, |_, _| gaussian(&mut rng));
        let sv = spectra::singular_values(&z).unwrap();
        assert_eq!(sv.len(), rows.min(cols));
        let gram = SquareMatrix::from_matrix({
            let g = z.transpose() * &z;
            (&g + g.transpose()) * 0.5
        })
        .unwrap();
        let (eig, _) = spectra::sym_eig(&gram, DEFAULT_NEG_TOL).unwrap();
        let top = eig.max();
        for (s, e) in sv.values().iter().zip(eig.values()) {
            assert!((s * s - e).abs() <= 1e-8 * top.max(1.0), "{} vs {}", s * s, e);
        }
    }
}

#[test]
fn lidar_rank_bound_and_score_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = MetricConfig::default();
    let exact = MetricConfig {
        eps: 0.0,
        ..Default::default()
    };
    for _ in 0..50 {
        let n = rng.gen_range(2..24);
        let q = rng.gen_range(2..6);
        let p = rng.gen_range(1..40);
        let b = planted_batch(n, q, p, &mut rng);
        let cap = (n - 1).min(p) as f64;

        let s0 = metrics::lidar_score(&b, &exact).unwrap();
        assert!(s0.value <= cap * (1.0 + p as f64 * exact.eps) + 1e-6, "{} > {cap}", s0.value);
        assert!(s0.value >= 1.0 - 1e-12);
        assert!(s0.spectrum.numerical_rank(1e-9) <= (n - 1).min(p));

        // each p_i shifted by eps moves the entropy by at most 2 eps ln(1/eps)
        let s = metrics::lidar_score(&b, &cfg).unwrap();
        let slack = 2.0 * p as f64 * cfg.eps * (1.0 / cfg.eps).ln();
        assert!(s.value <= cap * slack.exp() + 1e-6, "{} > {cap}", s.value);
    }
}

#[test]
fn lidar_orthogonal_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let cfg = MetricConfig::default();
    for _ in 0..10 {
        let b = planted_batch(12, 5, 7, &mut rng);
        let q = random_orthogonal(7, &mut rng);
        let rotated = b
            .map_samples(|x| (&q * nalgebra::DVector::from_column_slice(x)).iter().copied().collect())
            .unwrap();
        let s0 = ScatterPair::estimate(&b, cfg.delta).unwrap();
        let s1 = ScatterPair::estimate(&rotated, cfg.delta).unwrap();
        let l0 = scatter::lidar_spectrum(&s0).unwrap();
        let l1 = scatter::lidar_spectrum(&s1).unwrap();
        for (a, c) in l0.values().iter().zip(l1.values()) {
            assert!((a - c).abs() <= 1e-8 * l0.max().max(1.0));
        }
        let a = metrics::lidar_score(&b, &cfg).unwrap().value;
        let c = metrics::lidar_score(&rotated, &cfg).unwrap().value;
        assert!((a - c).abs() / a <= 1e-6);
    }
}

#[test]
fn reduce_dim_keeps_score_for_low_rank_batches() {
    // samples confined to a 3-dimensional subspace of R^32
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let basis = random_orthogonal(32, &mut rng).columns(0, 3).into_owned();
    let inner = planted_batch(10, 6, 3, &mut rng);
    let b = inner
        .map_samples(|x| (&basis * nalgebra::DVector::from_column_slice(x)).iter().copied().collect())
        .unwrap();
    let cfg = MetricConfig {
        eps: 0.0,
        ..Default::default()
    };
    let full = metrics::lidar_score(&b, &cfg).unwrap().value;
    let reduced = metrics::lidar_score(
        &b,
        &MetricConfig {
            reduce_before_invert: Some(3),
            ..cfg.clone()
        },
    )
    .unwrap()
    .value;
    assert!((full - reduced).abs() <= 1e-6, "{full} vs {reduced}");

    // k = p is a rotation
    let small = planted_batch(8, 4, 5, &mut rng);
    let a = metrics::lidar_score(&small, &MetricConfig::default()).unwrap().value;
    let c = metrics::lidar_score(
        &small,
        &MetricConfig {
            reduce_before_invert: Some(5),
            ..Default::default()
        },
    )
    .unwrap()
    .value;
    assert!((a - c).abs() <= 1e-9, "{a} vs {c}");
}

#[test]
fn reduce_dim_wide_batch() {
    // n = 4, q = 4, p = 1000, k = n * q
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let b = planted_batch(4, 4, 1000, &mut rng);
    let cfg = MetricConfig {
        eps: 0.0,
        ..Default::default()
    };
    let full = metrics::lidar_score(&b, &cfg).unwrap().value;
    let reduced = metrics::lidar_score(
        &b,
        &MetricConfig {
            reduce_before_invert: Some(16),
            ..cfg
        },
    )
    .unwrap()
    .value;
    assert!((full - reduced).abs() <= 1e-6, "{full} vs {reduced}");
}

#[test]
fn score_sweep_matches_individual_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let batches: Vec<(String, EmbeddingBatch)> = (0..5)
        .map(|i| (format!("model-{i}"), planted_batch(9, 4, 6, &mut rng)))
        .collect();
    let cfg = MetricConfig::default();
    let kinds = metrics::MetricKind::ALL.into_iter().collect();
    let swept = metrics::score_sweep(&batches, &cfg, &kinds).unwrap();
    assert_eq!(swept.len(), 15);
    for (id, s) in &swept {
        let batch = &batches.iter().find(|(b, _)| b == id).unwrap().1;
        let direct = metrics::score(batch, s.kind, &cfg).unwrap();
        assert_eq!(direct.value, s.value);
    }
    let twins = vec![("a".to_string(), batches[0].1.clone()), ("b".to_string(), batches[0].1.clone())];
    let out = metrics::score_sweep(&twins, &cfg, &kinds).unwrap();
    assert_eq!(out[0].1.value, out[3].1.value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smooth_rank_of_k_equal_values(k in 1usize..40, zeros in 0usize..20, level in 1e-6f64..1e6) {
        let mut v = vec![level; k];
        v.extend(std::iter::repeat(0.0).take(zeros));
        let s = Spectrum::new(v, k + zeros, 0.0).unwrap();
        let r = spectra::smooth_rank(&s, 0.0).unwrap().value;
        prop_assert!((r - k as f64).abs() <= 1e-12 * k as f64);
    }

    #[test]
    fn smooth_rank_bounds_and_scale(values in prop::collection::vec(0.0f64..10.0, 1..30), c in 1e-3f64..1e3) {
        prop_assume!(values.iter().any(|v| *v > 0.0));
        let nonzero = values.iter().filter(|v| **v > 0.0).count() as f64;
        let s = Spectrum::new(values.clone(), values.len(), 0.0).unwrap();
        let r = spectra::smooth_rank(&s, 0.0).unwrap().value;
        prop_assert!(r >= 1.0 - 1e-12 && r <= nonzero * (1.0 + 1e-12));
        let scaled = Spectrum::new(values.iter().map(|v| v * c).collect(), values.len(), 0.0).unwrap();
        let rs = spectra::smooth_rank(&scaled, 0.0).unwrap().value;
        prop_assert!((r - rs).abs() <= 1e-10 * r);
    }

    #[test]
    fn rankme_scale_invariance(seed in 0u64..1000, c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(12, 5, |_, _| gaussian(&mut rng));
        let cfg = MetricConfig { eps: 0.0, ..Default::default() };
        let a = metrics::rankme_score(&z, &cfg).unwrap().value;
        let b = metrics::rankme_score(&(z * c), &cfg).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn emb1_round_trip(n in 2usize..6, q in 2usize..6, p in 1usize..9, seed in any::<u64>(), label in "[a-z]{0,12}") {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * q * p).map(|_| gaussian(&mut rng) as f32 as f64).collect();
        let b = EmbeddingBatch::new(n, q, p, data, Some(label)).unwrap();
        let bytes = emb1::encode_emb1(&b).unwrap();
        let back = emb1::decode_emb1(&bytes).unwrap();
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(emb1::encode_emb1(&back).unwrap(), bytes);
    }
}
