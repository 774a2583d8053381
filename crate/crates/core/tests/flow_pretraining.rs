//! The built-in estimator, fitted to synthetic translations, must report
//! near-zero motion on held-out static pairs and recover a known shift.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stmfnet::blfnet::{pretrain_on_translations, FlowEstimator, FlowPretrainConfig, PyramidFlow, PyramidFlowConfig};
use stmfnet::synth::Texture;
use stmfnet::FlowField;
use stmfnet_tensor::{Graph, ParamBuilder, ParamStore, Var};

#[test]
fn trained_estimator_sees_static_and_shifted_pairs() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = PyramidFlowConfig {
        levels: 3,
        search_radius: 4,
        widths: vec![8, 12, 16],
        decoder: vec![16, 8],
    };
    let est = PyramidFlow::<f32>::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).unwrap();
    let epe = pretrain_on_translations(&est, store.params(), &FlowPretrainConfig::default()).unwrap();
    let head: f64 = epe[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = epe[epe.len() - 50..].iter().sum::<f64>() / 50.0;
    assert!(tail < 0.5 * head, "end-point error {head:.3} -> {tail:.3}");

    let g = Graph::inference();
    let mut held_out = ChaCha8Rng::seed_from_u64(1234);
    let flow = |tex: &Texture, d: (f64, f64)| {
        let a = Var::constant(tex.render(64, 64, 0.0, 0.0).to_array());
        let b = Var::constant(tex.render(64, 64, d.0, d.1).to_array());
        FlowField::from_array(est.estimate(&g, &a, &b).unwrap().value(), 0).unwrap()
    };
    for _ in 0..4 {
        let tex = Texture::random(&mut held_out);
        let still = flow(&tex, (0.0, 0.0)).mean_magnitude();
        assert!(still < 0.5, "static pair reports {still:.3} px");
        let (mx, my) = flow(&tex, (3.0, 0.0)).mean();
        assert!((mx - 3.0).abs() < 0.5 && my.abs() < 0.5, "shift (3,0) estimated as ({mx:.3}, {my:.3})");
    }
}
