use std::fs;

use lyap_core::calibration::SurfacePoint;
use lyap_core::data_io::{
    export_surface, generate_synthetic_chain, parse_chain, read_surface, write_chain, OptionChainFile,
    SyntheticChainSpec,
};
use lyap_core::{calibration::loss, LmrGwParams, ModelParams, OptionKind, OptionQuote, PricingConfig, VarianceMethod};
use proptest::prelude::*;

fn quote_strategy() -> impl Strategy<Value = OptionQuote> {
    (any::<bool>(), 1e-3f64..1e4, 1e-4f64..30.0, 1e-3f64..1e4, 0.0f64..1.0).prop_map(
        |(call, strike, maturity, s0, frac)| {
            let kind = if call { OptionKind::Call } else { OptionKind::Put };
            let upper = if call { s0 } else { strike };
            OptionQuote {
                id: String::new(),
                kind,
                strike,
                maturity,
                underlying_price: s0,
                market_price: frac * upper,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_parse_is_identity(quotes in prop::collection::vec(quote_strategy(), 1..40)) {
        let quotes: Vec<OptionQuote> = quotes
            .into_iter()
            .enumerate()
            .map(|(i, q)| OptionQuote { id: format!("id-{i}"), ..q })
            .collect();
        let chain = OptionChainFile { trade_date: None, market_label: "prop".into(), quotes };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.csv");
        write_chain(&chain, &path).unwrap();
        let parsed = parse_chain(&path).unwrap();
        prop_assert!(parsed.diagnostics.is_empty());
        prop_assert_eq!(parsed.chain.quotes, chain.quotes);
    }
}

#[test]
fn chain_files_use_lf() {
    let p: ModelParams = LmrGwParams::new(2.0, 0.5, 0.2).unwrap().into();
    let chain = generate_synthetic_chain(&p, &SyntheticChainSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    write_chain(&chain, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 501);
    assert_eq!(parse_chain(&path).unwrap().chain.market_label, "c");
}

#[test]
fn noiseless_chain_has_zero_loss_at_truth() {
    let p: ModelParams = LmrGwParams::new(2.0, 0.5, 0.2).unwrap().into();
    let chain = generate_synthetic_chain(&p, &SyntheticChainSpec::default()).unwrap();
    assert_eq!(chain.quotes.len(), 500);
    let l = loss(&p, &chain.quotes, VarianceMethod::Analytical, &PricingConfig::default()).unwrap();
    assert_eq!(l, 0.0);
}

#[test]
fn surface_export_round_trip() {
    let points = [
        SurfacePoint {
            maturity: 1.0 / 12.0,
            moneyness: 0.8,
            model_iv: 0.461_442_290_809_513_5,
            market_iv: 0.461_442_290_810_344_4,
        },
        SurfacePoint {
            maturity: 0.5,
            moneyness: 1.0,
            model_iv: 0.3,
            market_iv: 0.300_000_000_1,
        },
        SurfacePoint {
            maturity: 1.0,
            moneyness: 1.2,
            model_iv: 0.2,
            market_iv: 1e-9,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    export_surface(&points, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("maturity_years,moneyness,model_implied_vol,market_implied_vol\n"));
    let back = read_surface(&path).unwrap();
    for (a, b) in points.iter().zip(&back) {
        for (x, y) in [
            (a.maturity, b.maturity),
            (a.moneyness, b.moneyness),
            (a.model_iv, b.model_iv),
            (a.market_iv, b.market_iv),
        ] {
            assert!((x - y).abs() <= 1e-15 * x.abs(), "{x} vs {y}");
        }
    }
    assert!(export_surface(&[], &path).is_err());
    assert!(export_surface(&points, dir.path().join("missing/s.csv")).is_err());
}

#[test]
fn missing_file_is_io_error() {
    let err = parse_chain("/nonexistent/chain.csv").unwrap_err();
    assert!(err.is_input_error());
}
