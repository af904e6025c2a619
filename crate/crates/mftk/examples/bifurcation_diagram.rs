//! Trace the default model's bifurcation diagram and print a summary.
//!
//! cargo run --release --example bifurcation_diagram -- 0 100

use mftk::continuation::{trace_branch, Annotate, ContinuationSettings, ScalarProfile};
use mftk::model::{build_model, ModelConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lo: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let hi: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let model = build_model(&ModelConfig::default()).unwrap();
    let profile = ScalarProfile::build(&model, 64).unwrap();
    let branch = trace_branch(
        &model,
        &profile,
        (lo, hi),
        &ContinuationSettings::default(),
        Annotate::None,
    )
    .unwrap();
    println!(
        "traced {} points over nu in [{lo}, {hi}], {} folds",
        branch.points.len(),
        branch.folds.len()
    );
    for f in &branch.folds {
        println!(
            "  fold at nu = {:.9}, omega = {:.9}, nu''(tau0) = {:.3} (fit {:.3})",
            f.nu, f.omega, f.nu_second_derivative, f.nu_second_derivative_fit
        );
    }
}
