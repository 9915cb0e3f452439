use tradeoff_core::Regime;
use crate::acceptance::{run_criterion, AcceptanceOptions, Suite};
use crate::config::{default_suite_config, load, preset, ExperimentConfig, RegimeSpec, WidthGrid, PRESETS};
use crate::plot::{parse_panels, render};
use crate::results::{read_csv, write_csv, ResultRow, ResultSet, CSV_HEADER};
use crate::runner::{row_count, run_experiment, write_outputs};

fn small() -> ExperimentConfig {
    let mut cfg = default_suite_config();
    cfg.name = "small".into();
    cfg.d = 24;
    cfg.widths = WidthGrid::M(vec![8, 30]);
    cfg.mc_samples = 2000;
    cfg
}

fn csv_of(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn config_text_round_trips() {
    for (name, _) in PRESETS {
        for cfg in preset(name).unwrap() {
            let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }
}

#[test]
fn config_errors_carry_line_numbers() {
    let err = ExperimentConfig::parse("name = x\nd = 40\nbogus = 1\n").unwrap_err().to_string();
    assert!(err.contains("line 3"), "{err}");
    let mut cfg = small();
    cfg.d = 5;
    assert!(cfg.validate().is_err());
    let mut cfg = small();
    cfg.activation = "tanh".into();
    assert!(cfg.validate().is_err(), "NT regimes need a quadratic activation");
}

#[test]
fn load_accepts_presets_and_files() {
    assert_eq!(load("fig1").unwrap().len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.cfg");
    std::fs::write(&p, small().to_text()).unwrap();
    assert_eq!(load(p.to_str().unwrap()).unwrap(), vec![small()]);
}

#[test]
fn row_count_matches_seeds_and_inits() {
    let cfg = small();
    // Per width: SGD 1; RF, RF_RIDGE, NT 1 per seed; RFL, INIT, NTL 2 per seed.
    let per_m = 1 + 2 * (3 + 3 * 2);
    assert_eq!(row_count(&cfg), 2 * per_m);
    let set = run_experiment(&cfg).unwrap();
    assert_eq!(set.rows.len(), row_count(&cfg));
    assert_eq!(set.exit_code(), 0);
}

#[test]
fn csv_round_trip_is_exact() {
    let set = run_experiment(&small()).unwrap();
    let text = csv_of(&set.rows);
    assert!(text.starts_with(&CSV_HEADER.join(",")));
    let back = read_csv(text.as_bytes()).unwrap();
    assert_eq!(back, set.rows);
    assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn runs_are_deterministic() {
    let a = run_experiment(&small()).unwrap();
    let b = run_experiment(&small()).unwrap();
    let strip = |rows: &[ResultRow]| {
        let mut rows = rows.to_vec();
        rows.iter_mut().for_each(|r| r.wall_time_ms = 0.0);
        csv_of(&rows)
    };
    assert_eq!(strip(&a.rows), strip(&b.rows));
}

#[test]
fn outputs_are_written() {
    let set = run_experiment(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(&set, dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("small.json")).unwrap()).unwrap();
    assert_eq!(json["rows"], set.rows.len());
    assert!(json["norm_check"]["passed"].as_bool().unwrap());
}

#[test]
fn exit_code_reflects_failed_rows() {
    let mut rows: Vec<ResultRow> = (0..20).map(|m| ResultRow::new(Regime::Rf, 30, m + 1)).collect();
    let mut set = ResultSet { config: small(), rows: rows.clone(), norm_check: None };
    assert_eq!(set.exit_code(), 0);
    rows[0].error = Some("boom".into());
    set.rows = rows.clone();
    assert_eq!(set.exit_code(), 1);
    rows[1].error = Some("boom".into());
    rows[2].error = Some("boom".into());
    set.rows = rows;
    assert_eq!(set.exit_code(), 2);
}

#[test]
fn plot_handles_single_point_and_empty_selection() {
    let mut cfg = small();
    cfg.widths = WidthGrid::M(vec![12]);
    cfg.seeds = vec![0];
    cfg.regimes = vec![RegimeSpec::new(Regime::Rf)];
    let set = run_experiment(&cfg).unwrap();
    let svg = render(&[set.rows.clone()], &parse_panels("RF|one point").unwrap(), "t").unwrap();
    assert!(svg.contains("<circle") && svg.contains("one point"));
    assert!(render(&[set.rows], &parse_panels("NT").unwrap(), "t").is_none());
    assert!(parse_panels("XX").is_err());
}

#[test]
fn zeroed_theory_fails_theory_criteria() {
    let opts = AcceptanceOptions { suite: Suite::Smoke, tolerance_scale: 1.0, zero_theory: true };
    for id in [1, 3, 4, 6, 7, 8] {
        let r = run_criterion(id, &opts);
        assert!(!r.passed, "{r}");
    }
}

#[test]
fn zero_tolerance_fails_numerical_criteria() {
    let opts = AcceptanceOptions { suite: Suite::Smoke, tolerance_scale: 0.0, zero_theory: false };
    for id in [1, 2, 3, 5, 6, 7, 9, 11, 12] {
        let r = run_criterion(id, &opts);
        assert!(!r.passed, "{r}");
    }
}
