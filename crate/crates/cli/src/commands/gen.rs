use std::collections::BTreeMap;
use std::time::Instant;

use parkbench_core::corpus::{generate_corpus, Rejection};
use parkbench_core::dataset::{write_jsonl, KShot};
use serde::{Deserialize, Serialize};

use crate::args::GenArgs;
use crate::config::{load, resolve_seed};
use crate::error::CliError;
use crate::fsio::{write_atomic, write_json, DATASET_FILE, MANIFEST_FILE};
use crate::manifest::RunManifest;

pub const CENSUS_FILE: &str = "census.json";
pub const DEFAULT_SCENARIOS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub requested: usize,
    pub kept: usize,
    pub infeasible: usize,
    pub filtered: usize,
    pub categories: BTreeMap<KShot, usize>,
    pub rejections: Vec<Rejection>,
}

impl Census {
    pub fn render(&self) -> String {
        let mut s = String::from("category  count\n");
        for (k, n) in &self.categories {
            s.push_str(&format!("{:<9} {n:>5}\n", k.label()));
        }
        s.push_str(&format!(
            "kept {} of {} (infeasible {}, filtered {})\n",
            self.kept, self.requested, self.infeasible, self.filtered
        ));
        s
    }
}

pub fn run(args: &GenArgs, argv: &[String]) -> Result<Census, CliError> {
    let started = Instant::now();
    let mut file = load(args.config.as_deref())?;
    let seed = resolve_seed(args.seed, &file);
    let scenarios = args.scenarios.or(file.scenarios).unwrap_or(DEFAULT_SCENARIOS);
    file.seed = Some(seed);
    file.scenarios = Some(scenarios);
    let corpus = generate_corpus(seed, scenarios, &file.lot, &file.filter)?;
    if corpus.infeasible_rate() > 0.5 {
        let first = corpus.infeasible.first().map(|r| r.reason.clone()).unwrap_or_default();
        return Err(CliError::Data(format!(
            "{} of {} scenarios have no feasible demonstration (first: {first})",
            corpus.infeasible.len(),
            scenarios
        )));
    }
    let mut rejections = corpus.infeasible.clone();
    rejections.extend(corpus.filtered.iter().cloned());
    rejections.sort_by_key(|r| r.index);
    let census = Census {
        requested: scenarios,
        kept: corpus.records.len(),
        infeasible: corpus.infeasible.len(),
        filtered: corpus.filtered.len(),
        categories: corpus.census.clone(),
        rejections,
    };

    let mut data = Vec::new();
    write_jsonl(&mut data, &corpus.records)?;
    let dataset = args.out.join(DATASET_FILE);
    write_atomic(&dataset, &data)?;
    let census_path = args.out.join(CENSUS_FILE);
    write_json(&census_path, &census)?;

    let config = serde_json::to_value(&file).map_err(|e| CliError::Config(e.to_string()))?;
    let mut manifest = RunManifest::new("gen", argv, config, seed);
    manifest.outputs = vec![dataset.display().to_string(), census_path.display().to_string()];
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    Ok(census)
}
