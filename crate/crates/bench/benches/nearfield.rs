use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rffence_bench::desk_scene;
use rffence_core::quietzone::init_per_element;
use rffence_core::{illuminate, scatter_to_grid, DualVolumeGrid, FieldCache, Refinement, Vec3};

fn grid(counts: usize) -> Arc<DualVolumeGrid> {
    Arc::new(DualVolumeGrid::build(4.0, [counts; 3], Vec3::new(2.0, 2.0, 2.0), 0.5, Refinement::Factor(1.0)).unwrap())
}

fn volume_maps(c: &mut Criterion) {
    let scene = desk_scene(16);
    let incident = illuminate(&scene).unwrap();
    let phases = scene.pec_baseline();
    let g = grid(21);
    let mut group = c.benchmark_group("scatter_to_grid");
    group.sample_size(10);
    group.bench_function("desk_21^3", |b| b.iter(|| scatter_to_grid(&scene, &phases, &incident, &g).unwrap()));
    group.finish();
}

fn cache(c: &mut Criterion) {
    let scene = desk_scene(16);
    let incident = illuminate(&scene).unwrap();
    let g = grid(41);
    let flat = scene.flatten_phases(&scene.pec_baseline()).unwrap();
    let mut cache = FieldCache::new(&scene, &incident, g.fine_points(), &flat).unwrap();
    c.bench_function("probe_pair_515pts", |b| {
        let mut n = 0;
        b.iter(|| {
            n = (n + 1) % cache.element_count();
            cache.probe_pair(n, 0.1)
        })
    });
    c.bench_function("apply_515pts", |b| {
        let mut n = 0;
        b.iter(|| {
            n = (n + 1) % cache.element_count();
            cache.apply(n, 0.3 * n as f64)
        })
    });
    let mut group = c.benchmark_group("init_per_element");
    group.sample_size(10);
    group.bench_function("desk", |b| {
        b.iter(|| {
            let mut fresh = FieldCache::new(&scene, &incident, g.fine_points(), &flat).unwrap();
            init_per_element(&mut fresh);
            fresh
        })
    });
    group.finish();
}

criterion_group!(benches, volume_maps, cache);
criterion_main!(benches);
