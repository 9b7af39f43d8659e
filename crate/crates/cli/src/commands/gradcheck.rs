use std::time::Instant;

use parkbench_autodiff::gradcheck::{registry, CaseReport, GradcheckCase};
use serde::Serialize;

use crate::args::GradcheckArgs;
use crate::error::CliError;
use crate::fsio::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct CaseLine {
    pub name: String,
    pub rel_error: f64,
    pub evaluations: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseLine>,
    pub secs: f64,
    pub passed: bool,
}

/// Autodiff primitives followed by the planner objectives.
pub fn all_cases() -> Vec<GradcheckCase> {
    let mut cases = registry();
    cases.extend(parkbench_planner::loss::gradcheck_cases());
    cases
}

pub fn run(args: &GradcheckArgs) -> Result<GradcheckReport, CliError> {
    let started = Instant::now();
    let mut lines = Vec::new();
    for case in all_cases() {
        let CaseReport {
            name,
            rel_error,
            evaluations,
            passed,
        } = case.run(args.corrupt)?;
        println!("{name:<32} {rel_error:.3e} {}", if passed { "pass" } else { "FAIL" });
        lines.push(CaseLine {
            name,
            rel_error,
            evaluations,
            passed,
        });
    }
    let report = GradcheckReport {
        passed: lines.iter().all(|l| l.passed),
        cases: lines,
        secs: started.elapsed().as_secs_f64(),
    };
    println!("{} cases in {:.2} s", report.cases.len(), report.secs);
    if let Some(p) = &args.report {
        write_json(p, &report)?;
    }
    if !report.passed {
        let failed: Vec<&str> = report.cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(CliError::Numeric(format!("gradient check failed: {}", failed.join(", "))));
    }
    Ok(report)
}
