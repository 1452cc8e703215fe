use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qbm_core::par::{set_execution, Execution};
use qbm_core::scenarios::{run, uniform_grid, ScenarioPreset};

fn scenario_run(c: &mut Criterion) {
    let mut group = c.benchmark_group("thermalization");
    group.sample_size(10);
    let mut preset = ScenarioPreset::fig2(1.0341).unwrap().with_mode_count(400);
    preset.time_grid = uniform_grid(40.0, 40);
    for (name, mode) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        group.bench_with_input(BenchmarkId::new(name, 400), &preset, |b, p| {
            set_execution(mode);
            b.iter(|| run(p).unwrap());
        });
    }
    set_execution(Execution::Parallel);
    group.finish();
}

criterion_group!(benches, scenario_run);
criterion_main!(benches);
