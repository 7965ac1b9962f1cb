use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gapscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapscope"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = gapscope(args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Data rows of a table (the units line and header skipped).
fn rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("synth");
    let mut args = vec!["synth", "--out-dir", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn synth_is_deterministic_and_reloads_without_warnings() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["synth", "--seed", "9", "--out-dir", s(&a)]);
    ok(&["synth", "--seed", "9", "--out-dir", s(&b), "--threads", "3"]);
    for f in ["prices.csv", "meta.csv", "truth.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let other = tmp.path().join("c");
    ok(&["synth", "--seed", "10", "--out-dir", s(&other)]);
    assert_ne!(
        fs::read(a.join("prices.csv")).unwrap(),
        fs::read(other.join("prices.csv")).unwrap()
    );

    let g = tmp.path().join("g");
    let o = ok(&[
        "gap",
        "--prices",
        s(&a.join("prices.csv")),
        "--meta",
        s(&a.join("meta.csv")),
        "--by-sector",
        "--out-dir",
        s(&g),
    ]);
    assert_eq!(stderr(&o), "", "reload produced diagnostics");
    assert!(g.join("gap_T60_SYN.csv").exists() && g.join("gap_T60_SYN_C.csv").exists());
}

#[test]
fn synth_rejects_overlapping_regimes() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"kind": "factor", "config": {
            "market": "X", "start_date": "2024-01-01", "n_days": 10,
            "sectors": ["A", "A"], "market_loadings": [1, 1], "sector_loadings": [1, 1], "seed": 1,
            "regimes": [
              {"name": "a", "start_day": 1, "end_day": 6, "market_vol": 0.01, "sector_vol": 0, "idio_vol": 0.01},
              {"name": "b", "start_day": 5, "end_day": 10, "market_vol": 0.01, "sector_vol": 0, "idio_vol": 0.01}
            ]}}"#,
    )
    .unwrap();
    let o = gapscope(&["synth", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn one_factor_panel_has_small_gap() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("one.json");
    let sectors: Vec<String> = (0..20).map(|i| format!("\"{}\"", ["A", "B"][i % 2])).collect();
    let ones = vec!["1"; 20].join(",");
    fs::write(
        &cfg,
        format!(
            r#"{{"kind": "factor", "config": {{
                "market": "ONE", "start_date": "2024-01-01", "n_days": 400,
                "sectors": [{}], "market_loadings": [{ones}], "sector_loadings": [{ones}], "seed": 4,
                "regimes": [{{"name": "all", "start_day": 1, "end_day": 400,
                              "market_vol": 0.0054772, "sector_vol": 0, "idio_vol": 0.0083666}}]}}}}"#,
            sectors.join(",")
        ),
    )
    .unwrap();
    let syn = tmp.path().join("syn");
    ok(&["synth", "--config", s(&cfg), "--out-dir", s(&syn)]);
    let out = tmp.path().join("gap");
    ok(&[
        "gap",
        "--prices",
        s(&syn.join("prices.csv")),
        "--meta",
        s(&syn.join("meta.csv")),
        "--out-dir",
        s(&out),
    ]);
    let summary = json(&out.join("gap_summary.json"));
    let max = summary["series"][0]["max_abs_delta"].as_f64().unwrap();
    assert!(max < 0.05, "max |delta| {max}");
    let m = json(&syn.join("manifest.json"));
    assert_eq!(m["inputs"][0]["path"], s(&cfg));
}

#[test]
fn window_sizes_keep_pre_above_shock() {
    let tmp = TempDir::new().unwrap();
    let syn = synth(tmp.path(), &["--seed", "2025"]);
    let event = json(&syn.join("truth.json"))["event_date"]
        .as_str()
        .unwrap()
        .to_string();
    for w in ["30", "90"] {
        let out = tmp.path().join(format!("g{w}"));
        ok(&[
            "gap",
            "--prices",
            s(&syn.join("prices.csv")),
            "--meta",
            s(&syn.join("meta.csv")),
            "--window",
            w,
            "--event-date",
            &event,
            "--out-dir",
            s(&out),
        ]);
        assert!(out.join(format!("gap_T{w}_SYN.csv")).exists());
        let e = &json(&out.join("gap_summary.json"))["series"][0]["event"];
        let (pre, shock) = (
            e["pre_shock_mean_delta"].as_f64().unwrap(),
            e["shock_mean_delta"].as_f64().unwrap(),
        );
        assert!(pre > shock, "T={w}: pre {pre} shock {shock}");
    }
}

#[test]
fn by_sector_needs_metadata() {
    let tmp = TempDir::new().unwrap();
    let syn = synth(tmp.path(), &["--seed", "1"]);
    let o = gapscope(&[
        "gap",
        "--prices",
        s(&syn.join("prices.csv")),
        "--by-sector",
        "--out-dir",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--meta"));
}

#[test]
fn entropy_phases_and_range_errors() {
    let tmp = TempDir::new().unwrap();
    let syn = synth(tmp.path(), &["--seed", "2025"]);
    let event = json(&syn.join("truth.json"))["event_date"]
        .as_str()
        .unwrap()
        .to_string();
    let out = tmp.path().join("e");
    let prices = syn.join("prices.csv");
    let meta = syn.join("meta.csv");
    ok(&[
        "entropy",
        "--prices",
        s(&prices),
        "--meta",
        s(&meta),
        "--event-date",
        &event,
        "--out-dir",
        s(&out),
    ]);
    let doc = json(&out.join("phases_SYN.json"));
    for phase in ["pre_shock", "shock", "false_recovery", "stabilized"] {
        assert!(doc["phases"][phase]["start"].is_string(), "{phase}");
        assert!(doc["statistics"][phase]["mean"].is_f64(), "{phase}");
    }
    assert_eq!(doc["statistics"]["percentile_method"], "linear");
    let header = fs::read_to_string(out.join("entropy_SYN.csv")).unwrap();
    assert!(header.lines().nth(1).unwrap() == "date,n_stocks,H_ord_nats,p0,p1,p2,p3,p4,p5");

    let o = gapscope(&[
        "entropy",
        "--prices",
        s(&prices),
        "--event-date",
        "2031-01-01",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = gapscope(&[
        "entropy",
        "--prices",
        s(&prices),
        "--dimension",
        "4",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn constant_panel_has_zero_entropy() {
    let tmp = TempDir::new().unwrap();
    let prices = tmp.path().join("flat.csv");
    let mut text = String::from("date,A,B,C\n");
    let start = chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    for d in 0..80 {
        text.push_str(&format!("{},10,20,30\n", start + chrono::Days::new(d)));
    }
    fs::write(&prices, text).unwrap();
    let out = tmp.path().join("o");
    ok(&["entropy", "--prices", s(&prices), "--out-dir", s(&out)]);
    let r = rows(&out.join("entropy_all.csv"));
    assert_eq!(r.len(), 80 - 1 - 60 + 1);
    assert!(r.iter().all(|row| row[2] == "0"), "{r:?}");
}

#[test]
fn portfolio_needs_seed_and_reports_negative_post_event_spearman() {
    let tmp = TempDir::new().unwrap();
    let syn = synth(tmp.path(), &["--scenario", "two-market-risk", "--seed", "5"]);
    let prices = syn.join("prices.csv");
    let meta = syn.join("meta.csv");
    let o = gapscope(&[
        "portfolio",
        "--prices",
        s(&prices),
        "--out-dir",
        s(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--seed"));

    let event = json(&syn.join("truth.json"))["event_date"]
        .as_str()
        .unwrap()
        .to_string();
    let run = |dir: &str, threads: &str| {
        let out = tmp.path().join(dir);
        ok(&[
            "portfolio",
            "--prices",
            s(&prices),
            "--meta",
            s(&meta),
            "--seed",
            "77",
            "--event-date",
            &event,
            "--threads",
            threads,
            "--out-dir",
            s(&out),
        ]);
        out
    };
    let a = run("p1", "1");
    let b = run("p4", "4");
    for f in ["portfolio_observations.csv", "quintile_report.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = json(&a.join("manifest.json"));
    let c = &m["config"];
    assert_eq!(
        [&c["formation"], &c["test"], &c["n_stocks"], &c["portfolios"]].map(|v| v.as_u64().unwrap()),
        [60, 20, 10, 500]
    );
    assert_eq!(c["annualization"].as_f64(), Some(252.0));
    assert_eq!(m["seed"], 77);
    let rep = json(&a.join("quintile_report.json"));
    for market in rep["markets"].as_array().unwrap() {
        assert!(market["report"]["post_event"]["rho"].as_f64().unwrap() < 0.0);
    }
    let header = fs::read_to_string(a.join("portfolio_observations.csv")).unwrap();
    assert_eq!(
        header.lines().nth(1).unwrap(),
        "market,window_end,delta,rho_bar,sigma_hist,sigma_mvp,sigma_ew,tickers"
    );
}

#[test]
fn gap_output_is_thread_invariant_and_replays() {
    let tmp = TempDir::new().unwrap();
    let syn = synth(tmp.path(), &["--seed", "3"]);
    let prices = syn.join("prices.csv");
    let meta = syn.join("meta.csv");
    let out = |d: &str| tmp.path().join(d);
    for (d, t) in [("t1", "1"), ("t8", "8")] {
        ok(&[
            "gap",
            "--prices",
            s(&prices),
            "--meta",
            s(&meta),
            "--by-sector",
            "--threads",
            t,
            "--out-dir",
            s(&out(d)),
        ]);
    }
    let names: Vec<_> = fs::read_dir(out("t1"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(names.len() >= 6);
    for n in &names {
        assert_eq!(
            fs::read(out("t1").join(n)).unwrap(),
            fs::read(out("t8").join(n)).unwrap(),
            "{n:?}"
        );
    }

    let replay = out("replay");
    ok(&[
        "replay",
        "--manifest",
        s(&out("t1").join("manifest.json")),
        "--out-dir",
        s(&replay),
    ]);
    for n in &names {
        assert_eq!(
            fs::read(out("t1").join(n)).unwrap(),
            fs::read(replay.join(n)).unwrap(),
            "{n:?}"
        );
    }

    fs::write(&prices, fs::read_to_string(&prices).unwrap().replacen("100", "101", 1)).unwrap();
    let o = gapscope(&[
        "replay",
        "--manifest",
        s(&out("t1").join("manifest.json")),
        "--out-dir",
        s(&out("r2")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("changed"), "{}", stderr(&o));
}

#[test]
fn heatmap_single_sector_and_month_coverage() {
    let tmp = TempDir::new().unwrap();
    let prices = tmp.path().join("p.csv");
    let meta = tmp.path().join("m.csv");
    let mut text = String::from("date,ticker,close\n");
    let start = chrono::NaiveDate::from_ymd_opt(2024, 1, 15).unwrap();
    let mut x = 1u64;
    for d in 0..200 {
        for t in ["A", "B", "C"] {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let price = 100.0 + (x >> 40) as f64 / 1e6;
            text.push_str(&format!("{},{t},{price}\n", start + chrono::Days::new(d)));
        }
    }
    fs::write(&prices, text).unwrap();
    fs::write(&meta, "ticker,sector,market\nA,Tech,M\nB,Tech,M\nC,Tech,M\n").unwrap();
    let out = tmp.path().join("h");
    ok(&[
        "heatmap",
        "--prices",
        s(&prices),
        "--meta",
        s(&meta),
        "--out-dir",
        s(&out),
    ]);
    let grid = json(&out.join("heatmap_M.json"));
    assert_eq!(grid["sectors"], serde_json::json!(["Tech"]));
    let months: Vec<&str> = grid["months"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m.as_str().unwrap())
        .collect();
    assert_eq!(months.first(), Some(&"2024-01"));
    // 200 calendar days from mid-January end in August
    assert_eq!(months.last(), Some(&"2024-08"));
    assert_eq!(rows(&out.join("heatmap_M.csv")).len(), months.len());

    let o = gapscope(&["heatmap", "--prices", s(&prices), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_prices_give_a_data_error_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let prices = tmp.path().join("bad.csv");
    fs::write(&prices, "date,ticker,close\n2024-01-02,A,1\n2024-01-03,A,oops\n").unwrap();
    let o = gapscope(&["gap", "--prices", s(&prices), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 3);
    let e = stderr(&o);
    assert_eq!(e.trim().lines().count(), 1, "{e}");
    assert!(e.contains("bad.csv:3"), "{e}");
}

#[test]
fn tables_name_their_units() {
    let tmp = TempDir::new().unwrap();
    let syn = synth(tmp.path(), &["--seed", "2"]);
    let out = tmp.path().join("g");
    ok(&["gap", "--prices", s(&syn.join("prices.csv")), "--out-dir", s(&out)]);
    let text = fs::read_to_string(out.join("gap_T60_all.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("# units: end_date=date; n_assets=count; lambda_max=dimensionless"));
    assert_eq!(
        lines.next().unwrap(),
        "end_date,n_assets,lambda_max,lambda_norm,rho_signed,rho_abs,delta,mp_lower,mp_upper,n_above_mp"
    );
}
