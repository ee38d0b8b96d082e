use mfst_core::weights::synth_container;
use mfst_core::{xcorr_taps, Engine, ModelId, TapLayer, Tensor3};

#[test]
fn tap_and_response_dimensions_with_synth_weights() {
    let engine = Engine::from_container(&synth_container(11)).unwrap();
    let z = Tensor3::from_fn(127, 127, 3, |x, y, c| {
        ((x * 3 + y * 5 + c) % 11) as f32 / 11.0
    });
    let x = Tensor3::from_fn(255, 255, 3, |x, y, c| {
        ((x * 7 + y * 2 + c) % 13) as f32 / 13.0
    });
    for model in ModelId::ALL {
        let zt = engine.backbone(model).forward_taps(&z).unwrap();
        let xt = engine.backbone(model).forward_taps(&x).unwrap();
        let expect_z = [(10, 384), (8, 384), (6, 256)];
        let expect_x = [(26, 384), (24, 384), (22, 256)];
        for tap in TapLayer::ALL {
            let (s, c) = expect_z[tap.index()];
            assert_eq!(zt.get(tap).dims(), (s, s, c), "{model} exemplar {tap}");
            let (s, c) = expect_x[tap.index()];
            assert_eq!(xt.get(tap).dims(), (s, s, c), "{model} search {tap}");
        }
        for map in xcorr_taps(&zt, &xt).unwrap() {
            assert_eq!((map.width(), map.height()), (17, 17));
        }
    }
}

#[test]
fn other_patch_sizes_are_rejected() {
    let engine = Engine::from_container(&synth_container(0)).unwrap();
    let odd = Tensor3::zeros(128, 128, 3);
    assert!(engine.backbone(ModelId::S).forward_taps(&odd).is_err());
    let gray = Tensor3::zeros(127, 127, 1);
    assert!(engine.backbone(ModelId::A).forward_taps(&gray).is_err());
}
