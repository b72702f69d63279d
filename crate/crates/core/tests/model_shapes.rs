use csafm::backbone::{feature_size, BackboneConfig};
use csafm::model::{FpvCsafmModel, Modality, ModelConfig, Network, UnimodalModel};
use csafm::ops::Mode;
use csafm::oracle::backbone_spatial;
use csafm::tensor::{Distribution, Rng, Tensor};
use csafm::{Dims, FusionVariant};

fn config(variant: FusionVariant, classes: usize) -> ModelConfig {
    ModelConfig {
        variant,
        classes,
        fp_size: [64, 64],
        fv_size: [48, 80],
        width_multiplier: 1.0 / 16.0,
        r1: 4,
        r2: 4,
        literal_double_mul: false,
        bn_momentum: 0.1,
        bn_eps: 1e-5,
    }
}

#[test]
fn logits_shape_through_all_stages() {
    let mut rng = Rng::new(3);
    let dist = Distribution::Uniform { lo: 0.0, hi: 1.0 };
    let fp = Tensor::<f32>::random([2, 1, 64, 64], dist, &mut rng).unwrap();
    let fv = Tensor::<f32>::random([2, 1, 48, 80], dist, &mut rng).unwrap();
    for variant in FusionVariant::ALL {
        let cfg = config(variant, 10);
        // 64x64 -> 1x1, 48x80 -> 1x2, crop -> 1x1
        assert_eq!(backbone_spatial(48, 80), (1, 2));
        assert_eq!(cfg.fused_shape().unwrap(), (variant.output_channels(32), 1, 1));
        let mut m = FpvCsafmModel::new(cfg, &mut rng).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let (logits, _) = m.forward(&fp, &fv, mode).unwrap();
            assert_eq!(logits.dims(), Dims::new(2, 10, 1, 1));
            assert!(logits.is_finite());
        }
    }
    let mut uni = UnimodalModel::new(Modality::Fingerprint, &config(FusionVariant::Csafm, 10), &mut rng).unwrap();
    assert_eq!(uni.forward(&fp, &fv, Mode::Eval).unwrap().0.dims(), Dims::new(2, 10, 1, 1));
}

#[test]
fn width_multipliers() {
    let w = |m: f64| BackboneConfig { width_multiplier: m, ..Default::default() }.stage_channels();
    assert_eq!(w(1.0).unwrap(), [64, 128, 256, 512, 512]);
    assert_eq!(w(1.0 / 16.0).unwrap(), [4, 8, 16, 32, 32]);
    assert_eq!(w(1.0 / 64.0).unwrap(), [1, 2, 4, 8, 8]);
    assert!(w(0.3).is_err());
}

#[test]
fn feature_size_matches_oracle() {
    for (h, w) in [(200, 400), (64, 96), (48, 80), (64, 64), (20, 20), (1, 1), (33, 17)] {
        assert_eq!(feature_size(h, w).unwrap(), backbone_spatial(h, w));
    }
    assert_eq!(feature_size(200, 400).unwrap(), (4, 7));
}

#[test]
fn wrong_input_size_is_a_dimension_error() {
    let mut rng = Rng::new(1);
    let mut m = FpvCsafmModel::<f32>::new(config(FusionVariant::Csafm, 4), &mut rng).unwrap();
    let fp = Tensor::zeros([1, 1, 64, 96]).unwrap();
    let fv = Tensor::zeros([1, 1, 48, 80]).unwrap();
    assert!(matches!(m.forward(&fp, &fv, Mode::Eval), Err(csafm::Error::Dimension(_))));
}
