use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use skyroute_bench::PlannerFixture;
use skyroute_core::planner::{dijkstra, plan_request, WeatherCost};

fn planners(c: &mut Criterion) {
    let mut group = c.benchmark_group("planner");
    for n in [50, 200, 500] {
        let f = PlannerFixture::new(n, 11);
        group.bench_with_input(BenchmarkId::new("astar", n), &f, |b, f| {
            b.iter(|| plan_request(&f.net, &f.wx, &f.drone, 2.0, black_box(f.origin), black_box(f.dest), f.t).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dijkstra", n), &f, |b, f| {
            b.iter(|| {
                let wc = WeatherCost::at_time(&f.net, &f.wx, &f.drone, 2.0, f.t).unwrap();
                dijkstra(&f.net, |u, v, d| wc.cost(u, v, d), black_box(f.origin), black_box(f.dest)).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, planners);
criterion_main!(benches);
