use freehorizon::horizon::SweepRecord;
use freehorizon_cli::output::{read_sweep_csv, write_sweep_csv};
use freehorizon_cli::CliError;

fn record(horizon: usize, value: f64) -> SweepRecord {
    SweepRecord {
        horizon,
        total_cost: value,
        transfer_cost: value / 3.0,
        terminal_phi: 0.1 + 0.2,
        hit: horizon % 2 == 0,
        converged: true,
        iterations: 3,
    }
}

#[test]
fn single_record_gives_header_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&[record(10, 1.5)], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "T,total_cost,transfer_cost,terminal_phi,hit,converged,iterations"
    );
    assert!(lines[1].starts_with("10,1.5000000000000000e0,"));
}

#[test]
fn round_trip_is_exact_and_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let records = vec![
        record(20, 1e-300),
        record(5, std::f64::consts::PI),
        record(10, 12345.678901234567),
    ];
    write_sweep_csv(&records, &path).unwrap();
    let back = read_sweep_csv(&path).unwrap();
    let mut expected = records.clone();
    expected.sort_by_key(|r| r.horizon);
    assert_eq!(back, expected);
}

#[test]
fn empty_and_unwritable_outputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        write_sweep_csv(&[], &dir.path().join("x.csv")),
        Err(CliError::Argument(_))
    ));
    let missing = dir.path().join("no/such/dir/sweep.csv");
    match write_sweep_csv(&[record(1, 1.0)], &missing) {
        Err(CliError::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("{other:?}"),
    }
}
