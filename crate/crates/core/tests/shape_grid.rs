use autograd::{no_grad, Tensor};
use kfseg::baselines::BlockKind;
use kfseg::encoder::EncoderVariant;
use kfseg::model::{ModelConfig, SegModel};

/// Parameter counts of the canonical 256×256, 64-channel models.
const FROZEN: [(EncoderVariant, BlockKind, usize); 18] = [
    (EncoderVariant::Vanilla, BlockKind::None, 7_696_193),
    (EncoderVariant::Vanilla, BlockKind::Attn, 7_854_340),
    (EncoderVariant::Vanilla, BlockKind::Stack, 7_698_497),
    (EncoderVariant::Vanilla, BlockKind::Lstm, 13_998_917),
    (EncoderVariant::Vanilla, BlockKind::Convlstm, 26_572_609),
    (EncoderVariant::Vanilla, BlockKind::Kf, 38_633_281),
    (EncoderVariant::Resnet, BlockKind::None, 14_182_209),
    (EncoderVariant::Resnet, BlockKind::Attn, 14_340_356),
    (EncoderVariant::Resnet, BlockKind::Stack, 14_194_753),
    (EncoderVariant::Resnet, BlockKind::Lstm, 20_484_933),
    (EncoderVariant::Resnet, BlockKind::Convlstm, 33_058_625),
    (EncoderVariant::Resnet, BlockKind::Kf, 45_119_297),
    (EncoderVariant::Hybrid, BlockKind::None, 6_724_673),
    (EncoderVariant::Hybrid, BlockKind::Attn, 6_882_820),
    (EncoderVariant::Hybrid, BlockKind::Stack, 6_726_977),
    (EncoderVariant::Hybrid, BlockKind::Lstm, 13_027_397),
    (EncoderVariant::Hybrid, BlockKind::Convlstm, 25_601_089),
    (EncoderVariant::Hybrid, BlockKind::Kf, 37_661_761),
];

#[test]
fn all_configurations_build_and_keep_the_frame_shape() {
    let mut counts = Vec::new();
    for (variant, kind, want) in FROZEN {
        let cfg = ModelConfig::canonical(variant, kind, 0);
        let model = SegModel::<f32>::new(&cfg).unwrap();
        let c = model.in_channels();
        let x: Tensor<f32> = Tensor::from_vec(vec![0.5; c * 256 * 256], &[1, c, 256, 256]);
        let s = model.reset_sequence(None).unwrap();
        let (y, _) = no_grad(|| model.forward_frame(&s, 0, &x)).unwrap();
        assert_eq!(y.dims(), &[1, 1, 256, 256], "{}", cfg.label());
        assert!(y.data().iter().all(|v| v.is_finite()), "{}", cfg.label());
        counts.push((cfg.label(), model.num_params(), want));
    }
    for (label, got, want) in &counts {
        assert_eq!(got, want, "{label}");
    }
}
