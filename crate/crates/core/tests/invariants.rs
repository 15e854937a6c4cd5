use proptest::prelude::*;

use lsda::data::Image;
use lsda::latent_search::{search, Generator, SearchConfig};
use lsda::metrics::{a_distance, frechet_feature_distance, FeatureSet};
use lsda::ssim::{ssim, LossKind, SsimConfig};

fn image(h: usize, w: usize, c: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-1.0f32..=1.0, h * w * c).prop_map(move |p| Image::new(h, w, c, p).unwrap())
}

/// Elementwise tanh of z, a 1 x n single-channel image.
struct Tanh(usize);

impl Generator for Tanh {
    type State = Vec<f32>;

    fn latent_dim(&self) -> usize {
        self.0
    }

    fn output_shape(&self) -> (usize, usize, usize) {
        (1, self.0, 1)
    }

    fn forward(&self, z: &[f32]) -> lsda::Result<(Vec<f32>, Vec<f32>)> {
        let y: Vec<f32> = z.iter().map(|v| v.tanh()).collect();
        Ok((y.clone(), y))
    }

    fn backward(&self, y: Vec<f32>, dy: &[f32]) -> Vec<f32> {
        y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_bounded_symmetric_and_reflexive((a, b) in (image(12, 12, 2), image(12, 12, 2))) {
        let cfg = SsimConfig::with_window(5);
        let ab = ssim(&a, &b, &cfg).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
        prop_assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn search_returns_the_best_evaluated_iterate(
        target in prop::collection::vec(-0.9f32..0.9, 6),
        step in 0.0f64..2.0,
        seed in any::<u64>(),
        kind in prop_oneof![Just(LossKind::Mse), Just(LossKind::Mae)],
    ) {
        let cfg = SearchConfig { iterations: 25, step_size: step, loss_kind: kind, ..SearchConfig::default() };
        let g = Tanh(6);
        let out = search(&g, &target, None, seed, &cfg, &SsimConfig::default()).unwrap();
        let min = out.loss_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.final_loss, min);
        prop_assert_eq!(&out.output, &g.forward(&out.z.0).unwrap().0);
    }

    #[test]
    fn distances_are_in_range(
        a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 12..30),
        b in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 12..30),
    ) {
        let fa = FeatureSet::new(a, "a").unwrap();
        let fb = FeatureSet::new(b, "b").unwrap();
        let d = a_distance(&fa, &fb, 5).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert!(frechet_feature_distance(&fa, &fb).unwrap() >= 0.0);
        prop_assert!(frechet_feature_distance(&fa, &fa).unwrap() < 1e-9);
    }
}
