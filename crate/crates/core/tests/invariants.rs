mod common;

use common::random_matrix;
use descpress::cluster::kmeans_fit;
use descpress::data::{
    decode_descriptors, decode_patches, encode_descriptors, encode_patches, sift_like_descriptor,
    split_dataset, DescriptorSet, Precision, SynthConfig, Tier, PATCH_PIXELS,
};
use descpress::eval::{average_precision, eval_matching, eval_retrieval, eval_verification, rank_by_distance, EvalReport};
use descpress::losses::{distance_loss, softmax_cross_entropy, triplet_loss_hardest};
use descpress::nn::{build_encoder, BatchNorm, FrozenEncoder, Layer, Linear, MlpModel, Mode};
use descpress::numerics::{l2_distance, matmul, pairwise_distance_matrix, sym_eigen, Matrix};
use descpress::pca::PcaModel;
use descpress::train::{train, History, LabelSource, Scheme, TrainConfig, TripletSampler};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

fn matrix(rows: impl Strategy<Value = usize>, cols: impl Strategy<Value = usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
fn random_rotation(dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = nalgebra::DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    Matrix::from_vec(dim, dim, (0..dim * dim).map(|i| q[(i / dim, i % dim)]).collect()).unwrap()
}

/// Descriptors for `classes` labels with `per` rows each over two sequences per
/// scene, tiers cycling.
fn labelled_set(classes: usize, per: usize, dim: usize, seed: u64) -> DescriptorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::new();
    let mut seqs = Vec::new();
    let mut tiers = Vec::new();
    for c in 0..classes {
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for v in 0..per {
            data.extend(center.iter().map(|x| x + 0.4 * rng.random_range(-1.0..1.0)));
            labels.push(c as u32);
            seqs.push(v as u32);
            tiers.push(if v == 0 { Tier::Easy } else { Tier::ALL[v % 3] });
        }
    }
    DescriptorSet::new(Matrix::from_vec(n, dim, data).unwrap(), labels, seqs, Some(tiers)).unwrap()
}

fn maps(r: &EvalReport) -> Vec<f64> {
    std::iter::once(r.map_overall).chain(r.map_by_tier.iter().map(|t| t.map)).collect()
}

fn all_maps(set: &DescriptorSet) -> Vec<f64> {
    let mut out = maps(&eval_verification(set, 50, 3).unwrap());
    out.extend(maps(&eval_matching(set, 3).unwrap()));
    out.extend(maps(&eval_retrieval(set, 10, 3).unwrap()));
    out
}

// ---- numerics ----

proptest! {
    #![proptest_config(config())]

    #[test]
    fn matmul_associative(a in matrix(1..6usize, 4..5usize), seed in any::<u64>()) {
        let b = random_matrix(4, 3, seed);
        let c = random_matrix(3, 5, seed ^ 1);
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = left.frobenius_norm().max(1.0);
        prop_assert!(left.max_abs_diff(&right) / scale < 1e-9);
    }

    #[test]
    fn eigen_trace_and_orthonormality(m in matrix(6..7usize, 6..7usize)) {
        let a = descpress::numerics::matmul_tn(&m, &m).unwrap();
        let eig = sym_eigen(&a).unwrap();
        let trace: f64 = (0..6).map(|i| a.get(i, i)).sum();
        let sum: f64 = eig.eigenvalues.iter().sum();
        prop_assert!((trace - sum).abs() <= 1e-9 * trace.abs().max(1.0));
        let vtv = descpress::numerics::matmul_tn(&eig.eigenvectors, &eig.eigenvectors).unwrap();
        prop_assert!(vtv.max_abs_diff(&Matrix::identity(6)) < 1e-9);
    }

    #[test]
    fn self_distance_matrix_symmetric_zero_diagonal(a in matrix(1..10usize, 1..6usize)) {
        let d = pairwise_distance_matrix(&a, &a).unwrap();
        for i in 0..a.rows() {
            prop_assert_eq!(d.get(i, i), 0.0);
            for j in 0..a.rows() {
                prop_assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn triangle_inequality(v in prop::collection::vec(-5.0f64..5.0, 12)) {
        let (x, rest) = v.split_at(4);
        let (y, z) = rest.split_at(4);
        let xz = l2_distance(x, z).unwrap();
        let bound = l2_distance(x, y).unwrap() + l2_distance(y, z).unwrap();
        prop_assert!(xz <= bound * (1.0 + 1e-12) + 1e-12);
    }
}

// ---- data ----

proptest! {
    #![proptest_config(config())]

    #[test]
    fn gradient_histogram_norm_and_bounds(pixels in prop::collection::vec(any::<u8>(), PATCH_PIXELS)) {
        let d = sift_like_descriptor(&pixels).unwrap();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() <= 1e-6);
        prop_assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn descriptor_file_round_trip(m in matrix(0..12usize, 1..9usize), with_tiers in any::<bool>()) {
        let n = m.rows();
        let labels: Vec<u32> = (0..n as u32).map(|i| i * 7 % 5).collect();
        let seqs: Vec<u32> = (0..n as u32).rev().collect();
        let tiers = with_tiers.then(|| (0..n).map(|i| Tier::ALL[i % 3]).collect());
        let set = DescriptorSet::new(m, labels, seqs, tiers).unwrap();
        let back = decode_descriptors(&encode_descriptors(&set, Precision::F64)).unwrap();
        prop_assert_eq!(&back, &set);
        // f32 storage is exact once values are f32-representable
        let narrowed = set.descriptors.data().iter().map(|&v| v as f32 as f64).collect();
        let set32 = set.with_descriptors(Matrix::from_vec(n, set.dim(), narrowed).unwrap()).unwrap();
        let bytes = encode_descriptors(&set32, Precision::F32);
        prop_assert_eq!(&decode_descriptors(&bytes).unwrap(), &set32);
        prop_assert_eq!(encode_descriptors(&decode_descriptors(&bytes).unwrap(), Precision::F32), bytes);
    }

    #[test]
    fn synthetic_patches_pure_and_round_trip(classes in 2..5usize, per in 2..5usize, seed in any::<u64>()) {
        let cfg = SynthConfig::new(classes, per, Tier::ALL.to_vec(), seed);
        let a = cfg.generate().unwrap();
        prop_assert_eq!(&a, &cfg.generate().unwrap());
        let bytes = encode_patches(&a).unwrap();
        prop_assert_eq!(&decode_patches(&bytes).unwrap(), &a);
    }

    #[test]
    fn split_is_class_disjoint_partition(classes in 10..40usize, seed in any::<u64>()) {
        let set = labelled_set(classes, 2, 3, seed);
        let (a, b, c) = split_dataset(&set, [0.6, 0.2, 0.2], seed).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), set.len());
        let la: std::collections::BTreeSet<u32> = a.labels.iter().copied().collect();
        prop_assert!(b.labels.iter().chain(&c.labels).all(|l| !la.contains(l)));
        prop_assert!(b.labels.iter().all(|l| !c.labels.contains(l)));
    }
}

// ---- pca ----

proptest! {
    #![proptest_config(config())]

    #[test]
    fn pca_row_order_invariant(seed in any::<u64>()) {
        let x = random_matrix(30, 5, seed);
        let mut order: Vec<usize> = (0..30).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = PcaModel::fit(&x, 3).unwrap();
        let b = PcaModel::fit(&x.select_rows(&order), 3).unwrap();
        prop_assert!(a.basis.max_abs_diff(&b.basis) < 1e-9);
        prop_assert!(a.mean.iter().zip(&b.mean).all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn projected_variance_equals_eigenvalue(seed in any::<u64>()) {
        let x = random_matrix(40, 6, seed);
        let m = PcaModel::fit(&x, 6).unwrap();
        let z = m.project(&x).unwrap();
        for c in 0..6 {
            let col = z.column(c);
            let mean = col.iter().sum::<f64>() / 40.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 39.0;
            prop_assert!((var - m.variances[c]).abs() < 1e-8);
        }
    }

    #[test]
    fn reconstruction_error_non_increasing(seed in any::<u64>()) {
        let x = random_matrix(25, 6, seed);
        let mut last = f64::INFINITY;
        for d in 1..=6 {
            let m = PcaModel::fit(&x, d).unwrap();
            let back = m.reconstruct(&m.project(&x).unwrap()).unwrap();
            let err = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            prop_assert!(err <= last + 1e-9);
            last = err;
        }
        prop_assert!(last < 1e-9);
    }
}

// ---- nn ----

proptest! {
    #![proptest_config(config())]

    #[test]
    fn encoder_outputs_unit_or_zero(x in matrix(1..20usize, 7..8usize), layers in 0..3usize, seed in any::<u64>()) {
        let enc = build_encoder(7, 3, &vec![6; layers], seed).unwrap();
        let y = enc.infer(&x).unwrap();
        for row in y.row_iter() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() <= 1e-6);
        }
        // eval-mode forward is pure
        let again = enc.infer(&x).unwrap();
        prop_assert!(y.data().iter().zip(again.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let frozen = FrozenEncoder::new(&enc).project(&x).unwrap();
        prop_assert!(frozen.max_abs_diff(&y) < 1e-4);
    }

    #[test]
    fn batchnorm_train_outputs_standardized(x in matrix(4..30usize, 5..6usize), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::from_layers(vec![
            Layer::Linear(Linear::glorot(5, 4, &mut rng)),
            Layer::BatchNorm(BatchNorm::new(4)),
        ]).unwrap();
        m.set_mode(Mode::Train);
        let lin = MlpModel::from_layers(vec![m.layers[0].clone()]).unwrap().infer(&x).unwrap();
        let y = m.forward(&x).unwrap();
        let n = x.rows() as f64;
        for c in 0..4 {
            let pre = lin.column(c);
            let pm = pre.iter().sum::<f64>() / n;
            let pv = pre.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / n;
            prop_assume!(pv > 1e-2);
            let col = y.column(c);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-9);
            // ε in the denominator shrinks the variance by pv / (pv + ε)
            prop_assert!((var - 1.0).abs() <= 1e-6 + 1e-5 / pv);
        }
    }
}

// ---- losses ----

proptest! {
    #![proptest_config(config())]

    #[test]
    fn triplet_permutation_invariant(e in matrix(6..7usize, 3..4usize), seed in any::<u64>()) {
        // 3 anchor rows followed by 3 positives
        let mut perm: Vec<usize> = (0..3).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let full: Vec<usize> = perm.iter().copied().chain(perm.iter().map(|p| p + 3)).collect();
        let a = triplet_loss_hardest(&e, 1.0).unwrap();
        let b = triplet_loss_hardest(&e.select_rows(&full), 1.0).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-12);
        prop_assert!(a.value >= 0.0);
    }

    #[test]
    fn distance_loss_of_identity_is_zero(x in matrix(2..10usize, 1..5usize)) {
        prop_assert_eq!(distance_loss(&x, &x).unwrap().value, 0.0);
    }

    #[test]
    fn cross_entropy_bounds(logits in matrix(1..6usize, 2..7usize), t in any::<usize>()) {
        let k = logits.cols();
        let targets: Vec<usize> = (0..logits.rows()).map(|i| (t + i) % k).collect();
        prop_assert!(softmax_cross_entropy(&logits, &targets).unwrap().value >= 0.0);
        let zero = Matrix::zeros(logits.rows(), k);
        let v = softmax_cross_entropy(&zero, &targets).unwrap().value;
        prop_assert!((v - (k as f64).ln()).abs() < 1e-12);
    }
}

// ---- cluster ----

proptest! {
    #![proptest_config(config())]

    #[test]
    fn lloyd_monotone_and_deterministic(x in matrix(3..40usize, 1..4usize), k in 1..4usize, seed in any::<u64>()) {
        prop_assume!(k <= x.rows());
        let a = kmeans_fit(&x, k, 50, seed).unwrap();
        for w in a.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
        prop_assert!(a.assignments.iter().all(|&c| c < k));
        prop_assert_eq!(&a, &kmeans_fit(&x, k, 50, seed).unwrap());
    }

    #[test]
    fn separated_blobs_recovered(seed in any::<u64>(), k in 2..5usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = 0.1;
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for c in 0..k {
            for _ in 0..15 {
                data.push(10.0 * c as f64 + sigma * rng.random_range(-1.0..1.0));
                data.push(sigma * rng.random_range(-1.0..1.0));
                truth.push(c);
            }
        }
        let x = Matrix::from_vec(truth.len(), 2, data).unwrap();
        let m = kmeans_fit(&x, k, 50, seed).unwrap();
        for i in 0..truth.len() {
            for j in 0..truth.len() {
                prop_assert_eq!(truth[i] == truth[j], m.assignments[i] == m.assignments[j]);
            }
        }
    }
}

// ---- eval ----

proptest! {
    #![proptest_config(config())]

    #[test]
    fn eval_invariant_under_rotation_and_scale(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let set = labelled_set(12, 4, 5, seed);
        let base = all_maps(&set);
        let rotated = set.with_descriptors(matmul(&set.descriptors, &random_rotation(5, seed)).unwrap()).unwrap();
        for (a, b) in base.iter().zip(all_maps(&rotated)) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
        let mut scaled_m = set.descriptors.clone();
        scaled_m.scale(scale);
        let scaled = set.with_descriptors(scaled_m).unwrap();
        for (a, b) in base.iter().zip(all_maps(&scaled)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(all_maps(&set), base);
    }

    #[test]
    fn ranking_is_sorted_permutation(d in prop::collection::vec(0.0f64..3.0, 0..20)) {
        let r = rank_by_distance(&d);
        let mut seen = r.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..d.len()).collect::<Vec<_>>());
        for w in r.windows(2) {
            prop_assert!(d[w[0]] < d[w[1]] || (d[w[0]] == d[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn average_precision_in_unit_interval(rel in prop::collection::vec(any::<bool>(), 1..30)) {
        match average_precision(&rel) {
            None => prop_assert!(rel.iter().all(|r| !r)),
            Some(ap) => prop_assert!(ap > 0.0 && ap <= 1.0),
        }
    }
}

// ---- train ----

fn tiny_config(scheme: Scheme, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(scheme, 3);
    c.hidden_sizes = vec![8];
    c.epochs = 3;
    c.batch_size = 4;
    c.seed = seed;
    c.k = Some(4);
    c.recluster_period = 2;
    c
}

#[test]
fn training_deterministic_and_finite_for_every_scheme() {
    let set = labelled_set(10, 3, 6, 9);
    for scheme in [Scheme::Unsupervised, Scheme::SelfSupervised, Scheme::Supervised] {
        for distance in [false, true] {
            let mut c = tiny_config(scheme, 4);
            c.use_distance_loss = distance;
            let a = train(&set, &c, &mut History::default()).unwrap();
            let b = train(&set, &c, &mut History::default()).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes(), "{scheme} distance={distance}");
            assert!(a.is_finite());
        }
    }
}

#[test]
fn pseudo_labels_switch_at_first_recluster() {
    let set = labelled_set(10, 3, 6, 2);
    let mut c = tiny_config(Scheme::SelfSupervised, 1);
    c.epochs = 6;
    c.recluster_period = 2;
    let mut h = History::default();
    train(&set, &c, &mut h).unwrap();
    let events: Vec<(usize, LabelSource)> = h.clusters.iter().map(|e| (e.epoch, e.source)).collect();
    assert_eq!(
        events,
        vec![
            (1, LabelSource::Original),
            (3, LabelSource::Embedded),
            (5, LabelSource::Embedded)
        ]
    );
    assert!(h.clusters.iter().all(|e| e.head_width == 4));
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn triplet_batches_have_distinct_labels(classes in 4..30usize, batch in 2..8usize, seed in any::<u64>()) {
        prop_assume!(batch <= classes);
        let set = labelled_set(classes, 3, 2, seed);
        let mut sampler = TripletSampler::new(&set, batch, seed).unwrap();
        for pairs in sampler.epoch() {
            let b = TripletSampler::batch(&set, &pairs);
            let mut l = b.labels.clone();
            l.sort_unstable();
            l.dedup();
            prop_assert_eq!(l.len(), pairs.len());
            for &(a, p) in &pairs {
                prop_assert!(a != p);
                prop_assert_eq!(set.labels[a], set.labels[p]);
            }
        }
    }
}
