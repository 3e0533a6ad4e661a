//! Cross-fitted estimate on one simulated dataset with each learner,
//! including the oracle that knows the true conditional means.

use plmm_dml::sim::oracle_hooks;
use plmm_dml::{dml_fit, gen_dataset, DmlConfig, LearnerSpec, ScenarioKind, SimScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = SimScenario::new(ScenarioKind::NonsmoothBalanced, 100);
    let data = gen_dataset(&scenario, 42)?;

    let learners = [
        ("oracle", LearnerSpec::oracle(oracle_hooks(&scenario))),
        ("linear", LearnerSpec::linear()),
        ("forest", LearnerSpec::random_forest().with_trees(100)),
    ];
    println!("true beta = {}", scenario.beta0);
    for (name, learner) in learners {
        let config = DmlConfig {
            repetitions: 3,
            learner,
            seed: 1,
            ..DmlConfig::default()
        };
        let fit = dml_fit(&data, &config)?;
        println!(
            "{name:>7}: {:.4}  se {:.4}  95% CI [{:.4}, {:.4}]",
            fit.beta_hat[0], fit.std_errors[0], fit.ci_lower[0], fit.ci_upper[0]
        );
        for split in &fit.splits {
            let folds: Vec<String> = split.folds.iter().map(|f| format!("{:.3}", f.beta[0])).collect();
            println!("         repetition {}: folds {}", split.repetition, folds.join(", "));
        }
    }
    Ok(())
}
