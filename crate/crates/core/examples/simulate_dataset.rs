//! Generate one synthetic dataset and print a few summaries of it.
//!
//! cargo run --example simulate_dataset -- [scenario] [n_groups] [seed]

use plmm_dml::sim::{eval_h, ScenarioKind, SimScenario};
use plmm_dml::gen_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: ScenarioKind = args.first().map_or("nonsmooth_unbalanced", String::as_str).parse()?;
    let n_groups: usize = args.get(1).map_or(Ok(50), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(1), |s| s.parse())?;

    let scenario = SimScenario::new(kind, n_groups);
    let data = gen_dataset(&scenario, seed)?;
    let sizes: Vec<usize> = data.groups().iter().map(|g| g.n_obs()).collect();
    println!("{kind}: {} groups, {} rows", data.n_groups(), data.n_total());
    println!(
        "group sizes: min {}, max {}",
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    );

    // X = h(W) + noise, so X − h(W) should average near zero
    let mut resid = Vec::new();
    for g in data.groups() {
        for i in 0..g.n_obs() {
            let w: Vec<f64> = g.w.row(i).iter().copied().collect();
            resid.push(g.x[(i, 0)] - eval_h(&w));
        }
    }
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    println!("mean of X - h(W): {mean:+.4}");

    let first = &data.groups()[0];
    println!("group {} (n = {}):", first.group_id, first.n_obs());
    for i in 0..first.n_obs().min(4) {
        println!(
            "  y = {:8.3}  x = {:7.3}  z = {:?}",
            first.y[i],
            first.x[(i, 0)],
            first.z.row(i).iter().collect::<Vec<_>>()
        );
    }
    Ok(())
}
