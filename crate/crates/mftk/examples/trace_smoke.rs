use mftk::continuation::{fold_nus_oracle, trace_branch, Annotate, ContinuationSettings, ScalarProfile};
use mftk::model::{build_model, ModelConfig};

fn main() {
    let m = build_model(&ModelConfig::default()).unwrap();
    let p = ScalarProfile::build(&m, 64).unwrap();
    let b = trace_branch(&m, &p, (0.0, 400.0), &ContinuationSettings::default(), Annotate::None).unwrap();
    let t = std::time::Instant::now();
    let oracle = fold_nus_oracle(&p, (0.0, 400.0), 0.01);
    println!("oracle: {} folds in {:?} (branch: {})", oracle.len(), t.elapsed(), b.folds.len());
    let mut bn: Vec<f64> = b.folds.iter().map(|f| f.nu).collect();
    bn.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let worst = bn.iter().zip(&oracle).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max);
    println!("worst |dnu| branch-vs-oracle: {worst:.2e}");
    for dir in [1i8, -1] {
        let mut f: Vec<f64> = b.folds.iter().filter(|x| x.direction == dir).map(|x| x.nu).collect();
        f.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let gap = f.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
        println!("dir {dir}: {} folds, max spacing {gap:.4} (limit {:.4})", f.len(), std::f64::consts::TAU + 1.0);
    }
    println!("max corrector contraction: {:.4} over {} runs", b.corrector.max_contraction, b.corrector.runs);
    let fit_ok = b.folds.iter().filter(|f| f.nu_second_derivative_fit.is_finite()).count();
    println!("folds with finite fits: {fit_ok}/{}", b.folds.len());
    let worst_rel = b.folds.iter().filter(|f| f.nu_second_derivative_fit.is_finite())
        .map(|f| ((f.nu_second_derivative - f.nu_second_derivative_fit) / f.nu_second_derivative).abs())
        .fold(0.0f64, f64::max);
    println!("worst fit-vs-formula rel: {worst_rel:.2e}");
}
