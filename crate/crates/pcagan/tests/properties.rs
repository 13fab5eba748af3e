mod common;

use common::{normal_vec, random_measurement, random_prior, random_spd, rng};
use nalgebra::SymmetricEigen;
use pcagan::datakit::{generate_dataset, pair_at, SplitCounts};
use pcagan::gaussian_world::{w2_gaussian, GaussianDist, PosteriorOperator};
use pcagan::regularizers::{pca_extract, SdController, SdSettings, SdStats};
use pcagan::trainer::{lazy_step_count, TrainConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_a_nonnegative_symmetric_divergence(seed in 0u64..10_000, d in 1usize..7) {
        let mut r = rng(seed);
        let a = GaussianDist::new(normal_vec(&mut r, d), random_spd(&mut r, d)).unwrap();
        let b = GaussianDist::new(normal_vec(&mut r, d), random_spd(&mut r, d)).unwrap();
        let ab = w2_gaussian(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - w2_gaussian(&b, &a).unwrap()).abs() <= 1e-9 * ab.max(1.0));
    }

    #[test]
    fn measuring_never_adds_uncertainty(seed in 0u64..10_000, d in 1usize..9) {
        let mut r = rng(seed);
        let prior = random_prior(&mut r, d);
        let mm = random_measurement(&mut r, d);
        let op = PosteriorOperator::new(&prior, &mm).unwrap();
        let gap = prior.covariance() - op.cov();
        let gap = (&gap + gap.transpose()) * 0.5;
        let min = SymmetricEigen::new(gap).eigenvalues.min();
        prop_assert!(min >= -1e-10 * prior.eigvals().max());
        prop_assert!(op.eigvals().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn pca_basis_is_orthonormal_and_sorted(seed in 0u64..10_000, d in 2usize..8, extra in 1usize..20, k in 1usize..8) {
        let k = k.min(d);
        let mut r = rng(seed);
        let samples: Vec<_> = (0..k + extra).map(|_| normal_vec(&mut r, d)).collect();
        let pca = pca_extract(&samples, k).unwrap();
        let v = pca.components();
        let gram = v.transpose() * &v;
        let eye = nalgebra::DMatrix::identity(v.ncols(), v.ncols());
        prop_assert!((gram - eye).amax() < 1e-10);
        let vals = pca.eigvals();
        prop_assert!(vals.iter().all(|s| *s >= 0.0));
        prop_assert!(vals.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn lazy_counts_are_additive(start in 0u64..1000, n1 in 0u64..500, n2 in 0u64..500, m in 1u64..50) {
        prop_assert_eq!(
            lazy_step_count(start, n1 + n2, m),
            lazy_step_count(start, n1, m) + lazy_step_count(start + n1, n2, m)
        );
    }

    #[test]
    fn sd_updates_stay_in_band(err in 1e-6f64..1e3, spread in 1e-6f64..1e3, p in 2usize..10, band in 0.0f64..0.9) {
        let settings = SdSettings { band, ..SdSettings::default() };
        let ctl = SdController::new(&settings, p).unwrap();
        let next = ctl.update(&SdStats { p, err_sq_mean: err, spread_sq_mean: spread });
        let f = next.controller.beta_sd / ctl.beta_sd;
        prop_assert!(f >= 1.0 - band - 1e-12 && f <= 1.0 + band + 1e-12);
    }

    #[test]
    fn dataset_pairs_are_addressable(seed in 0u64..1000, train in 1usize..6, val in 1usize..4, test in 1usize..4) {
        let mut r = rng(seed);
        let prior = random_prior(&mut r, 3);
        let mm = random_measurement(&mut r, 3);
        let data = generate_dataset(&prior, &mm, SplitCounts { train, val, test }, seed).unwrap();
        let all: Vec<_> = data.train.iter().chain(&data.val).chain(&data.test).collect();
        for (i, p) in all.into_iter().enumerate() {
            prop_assert_eq!(p, &pair_at(&prior, &mm, seed, i).unwrap());
        }
    }

    #[test]
    fn train_config_json_round_trips(lazy in 1u64..500, e_evec in 0usize..50, seed in any::<u64>(), beta in 1e-6f64..1.0) {
        let cfg = TrainConfig { lazy_period: lazy, e_evec, seed, beta_pca: beta, ..TrainConfig::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
