mod common;

use common::Texture;
use mfst_core::tensor::resize_bicubic;
use mfst_core::weights::synth_container;
use mfst_core::{
    combine_all, BBox, Engine, ModelId, TapLayer, Tensor3, Tracker, TrackerConfig, TrackerState,
};
use std::sync::OnceLock;

fn engine() -> &'static Engine {
    static ENGINE: OnceLock<Engine> = OnceLock::new();
    ENGINE.get_or_init(|| Engine::from_container(&synth_container(0)).unwrap())
}

fn scene() -> (Texture, Tensor3, BBox) {
    let tex = Texture::random(7, 5, 8);
    let frame = tex.render(255, 255, 100.0, 90.0);
    let bbox = BBox::from_top_left(100.0, 90.0, tex.side(), tex.side()).unwrap();
    (tex, frame, bbox)
}

#[test]
fn static_scene_does_not_drift() {
    let (_, frame, bbox) = scene();
    let mut st = TrackerState::init(engine(), &frame, bbox, TrackerConfig::default()).unwrap();
    for _ in 0..20 {
        let r = st.step(engine(), &frame).unwrap();
        let d = (r.bbox.center_x - bbox.center_x).hypot(r.bbox.center_y - bbox.center_y);
        assert!(d <= 2.0, "drifted {d} px");
    }
    assert_eq!(st.frames_tracked, 20);
}

#[test]
fn featureless_frames_keep_the_box_finite_and_inside() {
    let (_, frame, bbox) = scene();
    let blank = Tensor3::filled(255, 255, 3, 0.3);
    let mut st = TrackerState::init(engine(), &frame, bbox, TrackerConfig::default()).unwrap();
    for _ in 0..4 {
        let b = st.step(engine(), &blank).unwrap().bbox;
        for v in [b.center_x, b.center_y, b.width, b.height] {
            assert!(v.is_finite());
        }
        assert!((0.0..=255.0).contains(&b.center_x) && (0.0..=255.0).contains(&b.center_y));
        assert!(b.width > 0.0 && b.height > 0.0);
    }
}

#[test]
fn middle_scale_wins_ties() {
    let blank = Tensor3::filled(255, 255, 3, 0.6);
    let bbox = BBox::new(127.5, 127.5, 40.0, 40.0).unwrap();
    let config = TrackerConfig {
        window_influence: 0.0,
        ..TrackerConfig::default()
    };
    let mut st = TrackerState::init(engine(), &blank, bbox, config).unwrap();
    let r = st.step(engine(), &blank).unwrap();
    assert_eq!(r.scale_index, 1);
    assert_eq!((r.bbox.width, r.bbox.height), (40.0, 40.0));
}

#[test]
fn per_step_size_change_is_bounded() {
    let tex = Texture::random(3, 5, 8);
    let first = tex.render(255, 255, 90.0, 90.0);
    let bbox = BBox::from_top_left(90.0, 90.0, tex.side(), tex.side()).unwrap();
    let mut st = TrackerState::init(engine(), &first, bbox, TrackerConfig::default()).unwrap();
    let mut prev = st.current;
    for i in 1..6 {
        let frame = tex.render(255, 255, 90.0 + 3.0 * i as f64, 90.0);
        let b = st.step(engine(), &frame).unwrap().bbox;
        for ratio in [b.width / prev.width, b.height / prev.height] {
            assert!(
                (1.0 / 1.025 - 1e-12..=1.025 + 1e-12).contains(&ratio),
                "ratio {ratio}"
            );
        }
        prev = b;
    }
}

#[test]
fn exemplar_and_cached_weights_never_change() {
    let (tex, frame, bbox) = scene();
    let mut st = TrackerState::init(engine(), &frame, bbox, TrackerConfig::default()).unwrap();
    let before = st.clone();
    for i in 1..4 {
        st.step(
            engine(),
            &tex.render(255, 255, 100.0 + 2.0 * i as f64, 90.0),
        )
        .unwrap();
    }
    for model in ModelId::ALL {
        for tap in TapLayer::ALL {
            assert_eq!(
                st.exemplar_filter(model, tap),
                before.exemplar_filter(model, tap)
            );
            assert_eq!(
                st.cached_se_weights(model, tap),
                before.cached_se_weights(model, tap)
            );
        }
    }
}

#[test]
fn init_is_reproducible_and_weights_are_open_unit() {
    let (_, frame, bbox) = scene();
    let a = TrackerState::init(engine(), &frame, bbox, TrackerConfig::default()).unwrap();
    let b = TrackerState::init(engine(), &frame, bbox, TrackerConfig::default()).unwrap();
    assert_eq!(a, b);
    for model in ModelId::ALL {
        for tap in TapLayer::ALL {
            let w = a.cached_se_weights(model, tap);
            assert_eq!(w.len(), a.exemplar_filter(model, tap).channels());
            assert!(w.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn tracking_is_deterministic() {
    let (tex, frame, bbox) = scene();
    let run = || {
        let mut t = Tracker::new(engine(), TrackerConfig::default()).unwrap();
        t.init(&frame, bbox).unwrap();
        (1..4)
            .map(|i| {
                t.step(&tex.render(255, 255, 100.0 + 2.0 * i as f64, 91.0))
                    .unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn without_window_the_peak_is_the_upsampled_argmax() {
    let (tex, frame, bbox) = scene();
    let config = TrackerConfig {
        window_influence: 0.0,
        ..TrackerConfig::default()
    };
    let mut st = TrackerState::init(engine(), &frame, bbox, config.clone()).unwrap();
    let next = tex.render(255, 255, 104.0, 93.0);
    let responses = st.search_responses(engine(), &next).unwrap();
    let report = st.apply_responses(255, 255, &responses).unwrap();

    let mut best = (0, 0, f32::NEG_INFINITY);
    for k in [1, 0, 2] {
        let combined = combine_all(&responses.scales[k].maps, &config.fusion).unwrap();
        let up = resize_bicubic(&combined.to_tensor(), 255, 255).unwrap();
        let up = mfst_core::ResponseMap::new(255, 255, up.into_data()).unwrap();
        let (row, col, v) = mfst_core::peak_location(&up);
        if v > best.2 {
            best = (k, row * 255 + col, v);
        }
    }
    assert_eq!(report.scale_index, best.0);
    assert_eq!(report.peak_row * 255 + report.peak_col, best.1);
    assert_eq!(report.peak_score, best.2);
}

#[test]
fn stepping_before_init_is_a_state_error() {
    let mut t = Tracker::new(engine(), TrackerConfig::default()).unwrap();
    let err = t.step(&Tensor3::zeros(64, 64, 3)).unwrap_err();
    assert!(matches!(err, mfst_core::Error::State(_)));
}
