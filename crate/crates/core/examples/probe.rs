use testlet_core::datagen::{generate_persons, generate_responses, table1_fixture, GenConfig, ItemSpec};
use testlet_core::mmle::{fit_mmle, EmSettings, QuadratureSpec};
use testlet_core::model::TestletVariances;
use testlet_core::TestletDesign;
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let tv: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let design = TestletDesign::blocks(6, 5);
    let items = table1_fixture();
    let cfg = GenConfig {
        n_persons: n,
        design: design.clone(),
        sigma2: TestletVariances::constant(6, tv).unwrap(),
        items: ItemSpec::Fixed(items.clone()),
        seed: 31415,
    };
    let persons = generate_persons(&cfg).unwrap();
    let data = generate_responses(&cfg, &persons, &items).unwrap();
    let t0 = Instant::now();
    let fit = fit_mmle(&data, &design, &QuadratureSpec::default(), &EmSettings::default()).unwrap();
    println!("n={n} tv={tv}: converged={} iters={} loglik={:.3} wall={:.2}s",
        fit.converged, fit.n_iterations, fit.loglik.unwrap(), t0.elapsed().as_secs_f64());
    let a_hat = fit.a_vec();
    let b_hat = fit.b_vec();
    let mut abs_a = 0.0; let mut abs_b = 0.0;
    for j in 0..30 {
        abs_a += (a_hat[j] - items[j].a).abs() / 30.0;
        abs_b += (b_hat[j] - items[j].b).abs() / 30.0;
    }
    println!("mean |a_hat - a| = {abs_a:.4}  mean |b_hat - b| = {abs_b:.4}");
    println!("sigma2_hat = {:?}", fit.sigma2.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
}
