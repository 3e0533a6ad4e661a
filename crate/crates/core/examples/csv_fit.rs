//! Write a dataset to CSV, read it back with an explicit schema and fit it,
//! printing the JSON report the command-line tool would emit.

use plmm_dml::cli::{load_csv, write_dataset_csv, CsvSchema, FitReport};
use plmm_dml::{dml_fit, gen_dataset, DmlConfig, LearnerSpec, ScenarioKind, SimScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("plmm_dml_csv_fit");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("smooth.csv");

    let data = gen_dataset(&SimScenario::new(ScenarioKind::SmoothBalanced, 40), 5)?;
    write_dataset_csv(&data, std::fs::File::create(&path)?)?;

    let schema = CsvSchema {
        group_col: "group".into(),
        y_col: "y".into(),
        x_cols: vec!["x1".into()],
        w_cols: vec!["w1".into(), "w2".into(), "w3".into()],
        z_cols: vec!["z1".into(), "z2".into(), "z3".into()],
    };
    let loaded = load_csv(&path, &schema)?;
    let config = DmlConfig {
        repetitions: 2,
        learner: LearnerSpec::random_forest().with_trees(50),
        seed: 9,
        ..DmlConfig::default()
    };
    let fit = dml_fit(&loaded, &config)?;
    let report = FitReport::new(&fit, &loaded, &schema.x_cols);
    println!("{}", serde_json::to_string_pretty(&report.coefficients)?);
    println!("wrote {}", path.display());
    Ok(())
}
