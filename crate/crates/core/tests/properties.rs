//! Property tests for the crate-wide invariants that hold over whole input
//! families rather than single examples.

use proptest::prelude::*;

use specnorm::attack::{fgsm, ClipRange};
use specnorm::conv::Kernel;
use specnorm::data::generate_synthetic;
use specnorm::fft::fft2;
use specnorm::matrix::Matrix;
use specnorm::nn::{Layer, Network, Tensor};
use specnorm::spectral::spectral_norm_fft;

fn small_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(rows, cols)| {
        proptest::collection::vec(-2.0..2.0f64, rows * cols)
            .prop_map(move |data| Matrix::new(rows, cols, data).expect("sized to fit"))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Σ|X[u,v]|² = rows·cols·Σx² for the unnormalized forward transform.
    #[test]
    fn parseval_holds(m in small_matrix(9)) {
        let f = fft2(&m);
        let spatial: f64 = m.data().iter().map(|x| x * x).sum();
        let spectral: f64 = f.data().iter().map(|z| z.norm_sqr()).sum();
        let expected = (m.rows() * m.cols()) as f64 * spatial;
        prop_assert!((spectral - expected).abs() <= 1e-10 * expected.max(1.0));
    }

    /// The transform is linear in its input.
    #[test]
    fn fft_linearity(
        x in small_matrix(6),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        seed in 0..1000u64,
    ) {
        let y = specnorm::testutil::seeded_matrix(x.rows(), x.cols(), seed);
        let lhs = fft2(&x.scale(a).add(&y.scale(b)));
        let fx = fft2(&x);
        let fy = fft2(&y);
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let want = a * fx[(i, j)] + b * fy[(i, j)];
                prop_assert!((lhs[(i, j)] - want).norm() <= 1e-12 * (1.0 + want.norm()));
            }
        }
    }

    /// σ is absolutely homogeneous: σ(c·K) = |c|·σ(K).
    #[test]
    fn fourier_sigma_scaling(m in small_matrix(4), c in -5.0..5.0f64) {
        let k = Kernel::new(m).expect("finite");
        let n = 6;
        let base = spectral_norm_fft(&k, n).expect("fits").sigma;
        let scaled = spectral_norm_fft(&k.scale(c), n).expect("fits").sigma;
        prop_assert!((scaled - c.abs() * base).abs() <= 1e-10 * (1.0 + c.abs() * base));
    }

    /// The split is disjoint, covering, and sized ⌈fn⌉ / n−⌈fn⌉.
    #[test]
    fn split_partitions_the_dataset(per_class in 3..20usize, seed in 0..500u64) {
        let ds = generate_synthetic(2, per_class, 8, seed).expect("valid settings");
        let n = ds.len();
        let (train, test) = ds.split(0.8, seed).expect("valid fraction");
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert_eq!(train.len(), (4 * n).div_ceil(5));
    }

    /// FGSM respects the ∞-norm budget and the clip range exactly.
    #[test]
    fn fgsm_budget_and_clip(
        eps in 0.0..0.5f64,
        seed in 0..300u64,
        label in 0..2usize,
    ) {
        let weight = specnorm::testutil::seeded_matrix(2, 9, seed);
        let net = Network::new(
            1,
            3,
            3,
            vec![Layer::Linear { weight, bias: vec![0.0; 2] }],
        )
        .expect("shapes compose");
        let pixels: Vec<f64> = specnorm::testutil::seeded_vector(9, seed ^ 0xf00d)
            .iter()
            .map(|v| (v + 1.0) / 2.0)
            .collect();
        let x = Tensor::new(1, 3, 3, pixels).expect("sized");
        let adv = fgsm(&net, &x, label, eps, ClipRange::unit()).expect("valid epsilon");
        for (a, b) in adv.data.iter().zip(&x.data) {
            prop_assert!((a - b).abs() <= eps + 1e-12);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }
}
