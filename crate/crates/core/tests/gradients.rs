use vidpose_core::backbone::BackboneConfig;
use vidpose_core::gradcheck::{self, GradcheckOptions};
use vidpose_core::ModelConfig;

fn small() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.window = 1;
    c.backbone = BackboneConfig {
        img_h: 32,
        img_w: 24,
        patch: 8,
        embed_dim: 16,
        depth: 2,
        heads: 2,
        tap_layers: vec![1, 2],
    };
    c.msff.heads = 2;
    c.cross_attention.heads = 2;
    c.decoder.channels = 8;
    c
}

#[test]
fn every_group_matches_finite_differences() {
    let r = gradcheck::run(&small(), &GradcheckOptions::default()).unwrap();
    assert_eq!(r.groups.len(), gradcheck::GROUPS.len());
    assert!(r.passed(), "{:?}", r.failures());
}

#[test]
fn raw_map_pyramid_matches_finite_differences() {
    let mut cfg = small();
    cfg.msff.keep_input = true;
    let opts = GradcheckOptions {
        only: vec!["msff".into(), "composed".into()],
        ..GradcheckOptions::default()
    };
    let r = gradcheck::run(&cfg, &opts).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
}

#[test]
fn corrupted_gradients_are_caught() {
    let opts = GradcheckOptions {
        only: vec!["decoder".into()],
        corrupt: Some("decoder".into()),
        ..GradcheckOptions::default()
    };
    let r = gradcheck::run(&small(), &opts).unwrap();
    assert_eq!(r.failures(), ["decoder"]);
}
