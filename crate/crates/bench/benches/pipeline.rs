use criterion::{criterion_group, criterion_main, Criterion};
use metrovuln_bench::PanelFixture;
use metrovuln_core::effects::estimate_all;
use metrovuln_core::matching::{balance_report, match_units, OutcomeRequirement};
use metrovuln_core::propensity::{fit_propensity, predict_scores};
use metrovuln_core::{Formula, MatchConfig};

fn stages(c: &mut Criterion) {
    let fx = PanelFixture::new(10);
    let panel = fx.panel();
    let formula = Formula::standard();
    let (model, _) = fit_propensity(&panel, &formula, &Default::default()).unwrap();
    let scores = predict_scores(&model, &panel.covariates).unwrap();
    let mc = MatchConfig::default();
    let entry = match_units(&panel, &scores, &mc, OutcomeRequirement::Any).unwrap();
    let speed = match_units(&panel, &scores, &mc, OutcomeRequirement::Speed).unwrap();

    let mut g = c.benchmark_group("stages_20x10");
    g.sample_size(10);
    g.bench_function("build_panel", |b| b.iter(|| fx.panel()));
    g.bench_function("fit_propensity", |b| b.iter(|| fit_propensity(&panel, &formula, &Default::default()).unwrap()));
    g.bench_function("nn_match_m2", |b| {
        b.iter(|| match_units(&panel, &scores, &mc, OutcomeRequirement::Any).unwrap())
    });
    g.bench_function("balance", |b| b.iter(|| balance_report(&panel, &scores, &entry).unwrap()));
    g.bench_function("estimate_all", |b| b.iter(|| estimate_all(&panel, &entry, &speed, 1e-6).unwrap()));
    g.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
