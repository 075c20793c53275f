//! End-to-end acceptance checks. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;

use ppde::grid::{default_domain_for, solve_at_origin, SchemeConfig, SchemeKind};
use ppde::harness::{Outcome, RunConfig, VerificationReport, EXAMPLE2_PUBLISHED};
use ppde::model::problem_by_name;
use ppde::{ftw_solve, run_convergence, run_verification_suite, FtwConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn example1() -> Verdict {
    let mut config = RunConfig::example1();
    config.output.timing = true;
    let report = run_convergence(&config).expect("example1 study runs");
    let mut pass = true;
    let mut detail = Vec::new();
    for kind in [SchemeKind::Fd, SchemeKind::SemiLagrangian] {
        let errs: Vec<f64> = report.rows_for(kind).map(|r| r.abs_error).collect();
        let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
        let finest = *errs.last().unwrap();
        pass &= errs.len() == 4 && decreasing && finest <= 0.02;
        let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
        detail.push(format!("{kind} errors [{}]", shown.join(", ")));
    }
    let ftw = report
        .rows_for(SchemeKind::Ftw)
        .find(|r| (r.dt - 0.02).abs() < 1e-12)
        .expect("regression row at dt = 0.02");
    pass &= ftw.abs_error <= 0.05;
    detail.push(format!("ftw |error| at dt=0.02 {:.2e}", ftw.abs_error));
    let slowest = report.rows.iter().map(|r| r.wall_ms).fold(0.0, f64::max);
    pass &= slowest <= 120_000.0;
    detail.push(format!("slowest row {:.1} s", slowest / 1e3));
    verdict(pass, detail.join("; "))
}

fn example2() -> Verdict {
    let report = run_convergence(&RunConfig::example2()).expect("example2 study runs");
    let mut pass = true;
    let mut detail = vec![format!("PDE reference {:.5}", report.reference)];
    for kind in [SchemeKind::Fd, SchemeKind::Ftw] {
        let finest = report.rows_for(kind).last().expect("rows");
        let v = finest.value;
        let published = (v - EXAMPLE2_PUBLISHED).abs() <= 0.01;
        let agrees = (v - report.reference).abs() <= 0.005;
        pass &= published && agrees;
        detail.push(format!(
            "{kind} dt={} value {v:.5} (within 0.01 of {EXAMPLE2_PUBLISHED}: {published}; within 0.005 of reference: {agrees})",
            finest.dt
        ));
    }
    verdict(pass, detail.join("; "))
}

fn oracles() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for name in ["linear", "heat"] {
        let p = problem_by_name(name).unwrap();
        let exact = p.exact1(0.0, 0.0, 0.0).unwrap();
        for kind in [SchemeKind::Fd, SchemeKind::Trinomial, SchemeKind::SemiLagrangian, SchemeKind::Ftw] {
            let v = if kind == SchemeKind::Ftw {
                ftw_solve(&p, &FtwConfig { h: 0.01, ..Default::default() }).map(|r| r.value)
            } else {
                let cfg = SchemeConfig::with_h(0.01);
                solve_at_origin(&p, kind, &cfg, &default_domain_for(&p, kind)).map(|r| r.0)
            };
            let err = v.map(|v| (v - exact).abs()).unwrap_or(f64::INFINITY);
            worst = worst.max(err);
            detail.push(format!("{name}/{kind} {err:.1e}"));
        }
    }
    verdict(worst < 5e-3, format!("worst {worst:.2e} < 5e-3; {}", detail.join(", ")))
}

fn rows_pass(report: &VerificationReport, check: &str, schemes: &[&str]) -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for s in schemes {
        let rows = report.find(check, s);
        pass &= !rows.is_empty();
        for r in rows {
            pass &= r.outcome == Outcome::Pass;
            detail.push(format!("{s}: {:.4e} vs bound {:.1e}", r.statistic, r.bound));
        }
    }
    verdict(pass, detail.join("; "))
}

fn monotonicity(report: &VerificationReport) -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for s in ["fd", "trinomial", "semilagrangian"] {
        for r in report.find("monotonicity", s) {
            pass &= r.outcome == Outcome::Pass;
            detail.push(format!("{s} [{}] worst {:.1e}", r.params, r.statistic));
        }
    }
    verdict(pass && detail.len() == 6, detail.join("; "))
}

fn run_cli(args: &[&str], out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_ppde"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "ppde {args:?} failed: {}", String::from_utf8_lossy(&status.stderr));
    status.stdout
}

fn determinism() -> Verdict {
    let base = std::env::temp_dir().join(format!("ppde-acceptance-{}", std::process::id()));
    let commands: [&[&str]; 3] = [
        &["solve", "--problem", "example2", "--scheme", "ftw", "--dt", "0.05", "--n-paths", "20000", "--seed", "9"],
        &["converge", "--problem", "example1", "--scheme", "fd,ftw", "--dt", "0.1,0.05,0.025", "--n-paths", "20000", "--seed", "9"],
        &["verify", "--trials", "40", "--exit-paths", "100000", "--seed", "9"],
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let (a, b) = (base.join(format!("{i}a")), base.join(format!("{i}b")));
        let out_a = run_cli(args, &a);
        let out_b = run_cli(args, &b);
        let mut same = out_a == out_b && !out_a.is_empty();
        for entry in std::fs::read_dir(&a).map(|d| d.flatten().collect::<Vec<_>>()).unwrap_or_default() {
            let other = b.join(entry.file_name());
            same &= std::fs::read(entry.path()).ok() == std::fs::read(&other).ok();
        }
        pass &= same;
        detail.push(format!("{} identical: {same}", args[0]));
    }
    let _ = std::fs::remove_dir_all(&base);
    verdict(pass, detail.join("; "))
}

fn main() {
    let mut failed = 0;
    let mut line = |name: &str, v: Verdict| {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    line("example 1 reproduction", example1());
    line("example 2 reproduction", example2());
    line("oracle equivalence", oracles());
    let report = run_verification_suite(&RunConfig::default());
    line(
        "consistency order",
        rows_pass(&report, "consistency", &["fd", "trinomial", "semilagrangian", "ftw"]),
    );
    line("monotonicity battery", monotonicity(&report));
    line("chain interpretation", rows_pass(&report, "chain_expectation", &["fd"]));
    line("moment conditions", rows_pass(&report, "moments", &["fd"]));
    let exit = report
        .rows
        .iter()
        .find(|r| r.check == "exit_probability" && r.params.contains("eps=0.1 delta=0.01"))
        .map(|r| verdict(r.outcome == Outcome::Pass, format!("{} p = {:.1e} <= {:.3e}", r.params, r.statistic, r.bound)))
        .unwrap_or_else(|| verdict(false, "missing".into()));
    line("exit-time bound", exit);
    line("determinism", determinism());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
