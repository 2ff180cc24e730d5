use diffload::checkpoint::TrainedModel;
use diffload::data::{synth_generate, DataConfig, Dataset, SynthProfile};
use diffload::inference::{forecast_split, sample_forecasts, EpistemicMode};
use diffload::model::{ModelConfig, Network, Variant};
use diffload::rng::{stream, TAG_INIT};

fn setup(variant: Variant) -> (TrainedModel, Dataset) {
    let frame = synth_generate(30, &SynthProfile::default(), 4).unwrap();
    let cfg = DataConfig {
        input_len: 48,
        horizon: 12,
        eval_stride: 12,
        ..DataConfig::default()
    };
    let ds = Dataset::prepare(&frame, &cfg).unwrap();
    let net = Network::new(ModelConfig {
        variant,
        input_dim: ds.input_dim(),
        horizon: 12,
        hidden: 6,
        ..ModelConfig::default()
    })
    .unwrap();
    let params = net.init_params(&mut stream(9, &[TAG_INIT]));
    let model = TrainedModel::new(net, params, ds.standardizer.clone(), 48).unwrap();
    (model, ds)
}

#[test]
fn deterministic_variant_repeats_one_pass() {
    let (model, ds) = setup(Variant::OO);
    let s = sample_forecasts(&model, &ds.test, 7, 1).unwrap();
    assert_eq!(s.len(), ds.test.len());
    for w in &s {
        assert_eq!(w.passes(), 7);
        for m in 1..7 {
            assert_eq!(w.loc.row(m), w.loc.row(0));
            assert_eq!(w.scale.row(m), w.scale.row(0));
        }
    }
    let fr = forecast_split(&model, &ds.test, &s, 0.5, EpistemicMode::QuantileDistance).unwrap();
    assert!(fr.iter().all(|f| f.sigma_epistemic.iter().all(|v| *v == 0.0)));
}

#[test]
fn diffused_passes_differ_and_are_reproducible() {
    let (model, ds) = setup(Variant::DC);
    let a = sample_forecasts(&model, &ds.test, 10, 1).unwrap();
    let b = sample_forecasts(&model, &ds.test, 10, 1).unwrap();
    let c = sample_forecasts(&model, &ds.test, 10, 2).unwrap();
    assert_eq!(a[0].loc, b[0].loc);
    assert_ne!(a[0].loc, c[0].loc);
    assert_ne!(a[0].loc.row(0), a[0].loc.row(1));
    let fr = forecast_split(&model, &ds.test, &a, 0.5, EpistemicMode::QuantileDistance).unwrap();
    assert!(fr[0].sigma_epistemic.iter().all(|v| *v > 0.0));
}

#[test]
fn pass_values_do_not_depend_on_pass_count_or_chunking() {
    // 60 passes span three internal chunks; 7 passes fit in one.
    let (model, ds) = setup(Variant::DO);
    let few = sample_forecasts(&model, &ds.test, 7, 3).unwrap();
    let many = sample_forecasts(&model, &ds.test, 60, 3).unwrap();
    for (f, m) in few.iter().zip(&many) {
        for r in 0..7 {
            assert_eq!(f.loc.row(r), m.loc.row(r));
            assert_eq!(f.scale.row(r), m.scale.row(r));
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_samples() {
    let (model, ds) = setup(Variant::DC);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back.params, model.params);
    let a = sample_forecasts(&model, &ds.val, 5, 8).unwrap();
    let b = sample_forecasts(&back, &ds.val, 5, 8).unwrap();
    assert_eq!(a[0].loc, b[0].loc);
}
