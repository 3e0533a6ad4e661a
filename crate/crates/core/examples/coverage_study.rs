//! Small Monte-Carlo coverage study.
//!
//! cargo run --release --example coverage_study -- [scenario] [n_groups] [replicates] [learner] [seed]
//!
//! learner is one of rf, linear, oracle (default rf with 200 trees).

use std::time::Instant;

use plmm_dml::study::run_study;
use plmm_dml::{DmlConfig, LearnerKind, LearnerSpec, ScenarioKind, SimScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: ScenarioKind = args.first().map_or("nonsmooth_balanced", String::as_str).parse()?;
    let n_groups: usize = args.get(1).map_or(Ok(100), |s| s.parse())?;
    let replicates: usize = args.get(2).map_or(Ok(20), |s| s.parse())?;
    let learner = match args.get(3).map_or("rf", String::as_str) {
        "linear" => LearnerSpec::linear(),
        "oracle" => LearnerSpec {
            kind: LearnerKind::Oracle,
            ..LearnerSpec::random_forest()
        },
        _ => LearnerSpec::random_forest().with_trees(200),
    };

    let config = DmlConfig {
        repetitions: 5,
        learner,
        seed: args.get(4).map_or(Ok(2024), |s| s.parse())?,
        ..DmlConfig::default()
    };
    let start = Instant::now();
    let study = run_study(&SimScenario::new(kind, n_groups), replicates, &config)?;
    let s = &study.summary;
    println!("scenario          {}", s.scenario);
    println!("replicates        {} ({} failed)", s.replicates, s.failed);
    println!("coverage          {:.3}", s.coverage);
    println!("median CI length  {:.4}", s.median_ci_length);
    println!("median bias       {:+.4}", s.median_bias);
    println!("mean beta_hat     {:.4}", s.mean_beta_hat);
    println!("elapsed           {:.1?}", start.elapsed());
    Ok(())
}
