mod common;

use rulforge::engine::{forward, init_params, ParamInit, Tensor};
use rulforge::lrp::{explain, explain_with_seed, summarize, LrpConfig, LrpError, LrpMode};
use rulforge::model::{build_model, ModelConfig, IMAGE_INPUT, TF_INPUT};

fn conserving() -> LrpConfig {
    LrpConfig {
        epsilon: 1e-6,
        mode: LrpMode::Conserving,
        ..LrpConfig::default()
    }
}

#[test]
fn conserving_mode_keeps_total_relevance_across_seeds() {
    let cfg = ModelConfig::default();
    let graph = build_model(&cfg).unwrap();
    // biases are the only sink left once epsilon is negligible, so draw none
    let init = ParamInit::HeUniform { bias_limit: 0.0 };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let params = init_params(&graph, init, seed).unwrap();
        // dense inputs: the lstm rule ignores activations, so a token that is
        // exactly zero can receive relevance no layer below it can pass on
        let inputs = common::uniform_inputs(&cfg, 1000 + seed);
        let trace = forward(&graph, &params, &inputs).unwrap();
        let out = trace.output().data()[0] as f64;
        let map = explain(&graph, &params, &trace, out, &conserving()).unwrap();
        let leak = (map.input_total() - out).abs() / out.abs();
        worst = worst.max(leak);
    }
    assert!(worst <= 0.05, "worst relative leak {worst}");
}

#[test]
fn literal_mode_maps_are_finite_and_shaped_like_inputs() {
    let cfg = ModelConfig::default();
    let graph = build_model(&cfg).unwrap();
    let params = init_params(&graph, ParamInit::default(), 3).unwrap();
    let inputs = common::line_inputs(&cfg, 3);
    let trace = forward(&graph, &params, &inputs).unwrap();
    let out = trace.output().data()[0] as f64;
    let map = explain(&graph, &params, &trace, out, &LrpConfig::default()).unwrap();

    assert_eq!(map.image_relevance().unwrap().shape(), inputs[IMAGE_INPUT].shape());
    assert_eq!(map.tf_relevance().unwrap().shape(), inputs[TF_INPUT].shape());
    assert!(map.inputs.values().all(Tensor::is_finite));
    assert_eq!(map.ledger.len(), trace.order.len());
    assert!(map.ledger.iter().all(|l| l.sum.is_finite()));

    let s = summarize(&map);
    assert_eq!(s.per_feature.len(), 7);
    let feat_total: f64 = s.per_feature.values().sum();
    assert!((feat_total - s.tf_total).abs() <= 1e-6 * s.tf_total.abs().max(1.0));
}

#[test]
fn relevance_is_linear_in_the_seed() {
    let cfg = ModelConfig::default();
    let graph = build_model(&cfg).unwrap();
    let params = init_params(&graph, ParamInit::default(), 5).unwrap();
    let trace = forward(&graph, &params, &common::line_inputs(&cfg, 5)).unwrap();
    for mode in [LrpMode::PaperLiteral, LrpMode::Conserving] {
        let lcfg = LrpConfig { mode, ..LrpConfig::default() };
        let one = explain(&graph, &params, &trace, 1.0, &lcfg).unwrap();
        let three = explain(&graph, &params, &trace, -3.0, &lcfg).unwrap();
        for (a, b) in one.inputs.values().zip(three.inputs.values()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                assert!((y as f64 + 3.0 * x as f64).abs() <= 1e-4 * (x.abs() as f64).max(1e-3));
            }
        }
    }
}

#[test]
fn zero_seed_gives_zero_maps() {
    let cfg = ModelConfig::default();
    let graph = build_model(&cfg).unwrap();
    let params = init_params(&graph, ParamInit::default(), 9).unwrap();
    let trace = forward(&graph, &params, &common::line_inputs(&cfg, 9)).unwrap();
    let zero = Tensor::zeros(trace.output().shape());
    let map = explain_with_seed(&graph, &params, &trace, &zero, &LrpConfig::default()).unwrap();
    assert!(map.inputs.values().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn incomplete_trace_is_rejected() {
    let cfg = ModelConfig::default();
    let graph = build_model(&cfg).unwrap();
    let params = init_params(&graph, ParamInit::default(), 1).unwrap();
    let trace = forward(&graph, &params, &common::line_inputs(&cfg, 1)).unwrap();

    let mut no_pool = trace.clone();
    no_pool.pools.remove("img_pool1");
    let err = explain(&graph, &params, &no_pool, 1.0, &LrpConfig::default()).unwrap_err();
    assert!(matches!(err, LrpError::MissingTraceRecord(ref id) if id == "img_pool1"), "{err}");

    let mut no_attention = trace.clone();
    no_attention.attention.clear();
    assert!(matches!(
        explain(&graph, &params, &no_attention, 1.0, &LrpConfig::default()),
        Err(LrpError::MissingTraceRecord(_))
    ));

    let mut no_output = trace;
    no_output.activations.remove(&graph.output);
    assert!(matches!(
        explain(&graph, &params, &no_output, 1.0, &LrpConfig::default()),
        Err(LrpError::MissingTraceRecord(_))
    ));
}

#[test]
fn bad_config_is_rejected() {
    for cfg in [
        LrpConfig { epsilon: 0.0, ..LrpConfig::default() },
        LrpConfig { gamma: -1.0, ..LrpConfig::default() },
        LrpConfig { epsilon: f64::NAN, ..LrpConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(LrpError::InvalidConfig(_))));
    }
}
