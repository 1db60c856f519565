use proptest::prelude::*;
use viscoinv::config::{Geometry, KernelPairSpec, KernelSpec, RunConfig};
use viscoinv::io::{format_value, TimeSeriesFile};
use viscoinv::Error;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

proptest! {
    #[test]
    fn any_finite_value_round_trips(x in finite()) {
        let back: f64 = format_value(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }

    #[test]
    fn time_series_round_trips(
        steps in prop::collection::vec(1e-6f64..1.0, 1..30),
        cols in 1usize..5,
        seed in prop::collection::vec(finite(), 150),
    ) {
        let mut t = 0.0;
        let index: Vec<f64> = std::iter::once(0.0).chain(steps.iter().map(|d| { t += d; t })).collect();
        let rows: Vec<Vec<f64>> = (0..index.len()).map(|r| (0..cols).map(|c| seed[(r * cols + c) % seed.len()]).collect()).collect();
        let names = (0..cols).map(|c| format!("c{c}")).collect();
        let f = TimeSeriesFile::new("t", names, index, rows).unwrap();
        let back = TimeSeriesFile::from_csv_str(&f.to_csv_string().unwrap()).unwrap();
        prop_assert_eq!(back.index_name, f.index_name);
        prop_assert_eq!(back.columns, f.columns);
        for (a, b) in back.index.iter().chain(back.rows.iter().flatten()).zip(f.index.iter().chain(f.rows.iter().flatten())) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn config_json_round_trips(
        seed in any::<u64>(),
        nx in 1usize..100,
        alpha in 0.05f64..0.95,
        modes in 1usize..30,
        w in prop::collection::vec(0.01f64..5.0, 1..4),
    ) {
        let mut cfg = RunConfig {
            seed,
            geometry: Geometry { nx, ..Geometry::desk() },
            ..RunConfig::default()
        };
        cfg.kernels.truth = KernelPairSpec::shared(KernelSpec::fractional(alpha, modes));
        cfg.kernels.initial = KernelPairSpec {
            dev: KernelSpec::Soe { weights: w.clone(), rates: w.iter().map(|x| 1.0 / x).collect() },
            trace: KernelSpec::Zero,
        };
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn config_load_resolves_relative_paths_and_names_bad_fields() {
    let dir = std::env::temp_dir().join(format!("viscoinv-cli-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.json");

    std::fs::write(&path, r#"{"seed": 3, "output": {"directory": "results"}}"#).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.output_dir(), dir.join("results"));

    std::fs::write(&path, r#"{"inverse": {"t_meas": 9.0}}"#).unwrap();
    match RunConfig::load(&path) {
        Err(e @ Error::Config { .. }) => assert!(e.to_string().contains("inverse.t_meas"), "{e}"),
        other => panic!("expected a config error, got {other:?}"),
    }

    std::fs::write(&path, r#"{"geometry": {"nx": 4}}"#).unwrap();
    assert!(RunConfig::load(&path).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
