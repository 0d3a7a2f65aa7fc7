use lyap_bench::{bench_calibration, bench_variance};
use lyap_core::calibration::CalibrationConfig;
use lyap_core::data_io::{generate_synthetic_chain, SyntheticChainSpec};
use lyap_core::{LmrGwParams, ModelKind, ModelParams};

fn params() -> LmrGwParams {
    LmrGwParams::new(2.0, 0.5, 0.2).unwrap()
}

#[test]
fn closed_form_is_faster_per_point() {
    let report = bench_variance(&params(), &[1000, 2000], 5).unwrap();
    println!("{}", report.to_table());
    for row in &report.rows {
        assert!(row.speedup >= 5.0, "{row:?}");
    }
}

#[test]
fn closed_form_calibration_is_faster() {
    let truth: ModelParams = params().into();
    let chains: Vec<_> = (0..5)
        .map(|i| {
            let spec = SyntheticChainSpec {
                n_quotes: 100,
                noise_sd: 0.05,
                rng_seed: i,
                market_label: format!("chain-{i}"),
                ..Default::default()
            };
            generate_synthetic_chain(&truth, &spec).unwrap()
        })
        .collect();
    let bench = bench_calibration(&chains, ModelKind::Lmrgw, &CalibrationConfig::default()).unwrap();
    println!("{}", bench.to_table());
    assert!(bench.chains.iter().all(|c| c.error.is_none()));
    assert!(bench.speedup >= 3.0, "{}", bench.speedup);
}
