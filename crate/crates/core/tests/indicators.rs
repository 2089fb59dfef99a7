use factorlab::indicators::{compute_indicator, indicator_to_decision, DecisionRule, IndicatorSpec};
use factorlab::market::{generate_synthetic_market, AlphaSpec, PricePanel};

fn panel() -> PricePanel {
    generate_synthetic_market(12, 160, 21, &AlphaSpec::default()).unwrap().panel
}

fn all_specs() -> Vec<IndicatorSpec> {
    let mut v = IndicatorSpec::prior_knowledge_pool();
    v.push(IndicatorSpec::Ma { n: 3 });
    v.push(IndicatorSpec::Ema { n: 5 });
    v.push(IndicatorSpec::Macd { fast: 3, slow: 8 });
    v
}

#[test]
fn no_indicator_reads_the_future() {
    let p = panel();
    for spec in all_specs() {
        let full = compute_indicator(&spec, &p).unwrap();
        for cut in [60, 100, 159] {
            let prefix = compute_indicator(&spec, &p.slice_days(0, cut + 1)).unwrap();
            for d in 0..=cut {
                for s in 0..p.n_symbols() {
                    assert_eq!(full.get(d, s).map(f64::to_bits), prefix.get(d, s).map(f64::to_bits), "{spec} day {d}");
                }
            }
        }
    }
}

#[test]
fn finite_window_indicators_are_shift_equivariant() {
    let p = panel();
    let k = 37;
    let shifted = p.slice_days(k, p.n_days());
    for spec in [IndicatorSpec::Ma { n: 10 }, IndicatorSpec::Top10, IndicatorSpec::Dc { n: 20 }, IndicatorSpec::Boll { n: 20 }] {
        let a = compute_indicator(&spec, &p).unwrap();
        let b = compute_indicator(&spec, &shifted).unwrap();
        for d in spec.warmup()..shifted.n_days() {
            for s in 0..p.n_symbols() {
                assert_eq!(a.get(d + k, s), b.get(d, s), "{spec} day {d}");
            }
        }
    }
}

#[test]
fn price_scaling() {
    let p = panel();
    let q = p.scale_prices(3.0);
    for spec in all_specs() {
        let a = compute_indicator(&spec, &p).unwrap();
        let b = compute_indicator(&spec, &q).unwrap();
        let factor = if matches!(spec, IndicatorSpec::Ma { .. } | IndicatorSpec::Ema { .. } | IndicatorSpec::Macd { .. }) {
            3.0
        } else {
            1.0
        };
        for d in 0..p.n_days() {
            for s in 0..p.n_symbols() {
                match (a.get(d, s), b.get(d, s)) {
                    (Some(x), Some(y)) => assert!((x * factor - y).abs() <= 1e-9 * (1.0 + y.abs()), "{spec}: {x} vs {y}"),
                    (x, y) => assert_eq!(x.is_some(), y.is_some(), "{spec} mask differs at day {d}"),
                }
            }
        }
    }
}

#[test]
fn bounded_indicators_stay_in_range() {
    let p = panel();
    let rsi = compute_indicator(&IndicatorSpec::Rsi { n: 14 }, &p).unwrap();
    assert!(rsi.values().iter().zip(rsi.mask()).filter(|(_, m)| **m).all(|(v, _)| (0.0..=1.0).contains(v)));
    let top = compute_indicator(&IndicatorSpec::Top10, &p).unwrap();
    // the 90th percentile name is at most 10% of the panel above it
    for d in 0..p.n_days() {
        let row = top.row(d);
        if row.len() > 5 {
            let above = row.iter().filter(|(_, v)| *v > 1e-12).count();
            assert!(above as f64 <= 0.1 * row.len() as f64 + 1.0);
        }
    }
}

#[test]
fn decisions_follow_default_rules() {
    let p = panel();
    for spec in all_specs() {
        let values = compute_indicator(&spec, &p).unwrap();
        let rule = DecisionRule::default_for(spec.kind());
        let dec = indicator_to_decision(spec.kind(), &values, rule, &p).unwrap();
        for d in 0..p.n_days() {
            for s in 0..p.n_symbols() {
                if let Some(x) = dec.get(d, s) {
                    assert!(x == 0.0 || x == 1.0);
                }
            }
        }
    }
}

#[test]
fn spec_text_round_trips() {
    for spec in all_specs() {
        let back: IndicatorSpec = spec.to_string().parse().unwrap();
        assert_eq!(back, spec);
    }
    assert!("macd:26:12".parse::<IndicatorSpec>().is_err());
    assert!("wobble:3".parse::<IndicatorSpec>().is_err());
}
