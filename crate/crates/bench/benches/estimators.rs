use criterion::{black_box, criterion_group, criterion_main, Criterion};

use bismut_core::{
    additive_hdot, control_function, estimate_gradient_bismut, integrate_mild, make_grid,
    multiplicative_hdot, sample_noise, tangent_path, upsilon_path, z_path, ControlKind, DiffusionSpec,
    DriftSpec, GridSpec, Matrix, McConfig, ModelSpec, NoiseKind, SegmentPath, SegmentSpec,
    TestFunctional,
};

fn scalar(diffusion: DiffusionSpec, kind: NoiseKind) -> ModelSpec {
    ModelSpec {
        dim: 1,
        eigenvalues: vec![-1.0],
        delay: 1.0,
        drift: DriftSpec::LinearDelay {
            b0: Matrix::diag(&[-0.4]),
            b1: Matrix::diag(&[0.6]),
        },
        diffusion,
        a4_alpha: 0.25,
        noise_kind: kind,
    }
}

fn additive() -> ModelSpec {
    scalar(
        DiffusionSpec::Constant {
            s: Matrix::diag(&[1.0]),
        },
        NoiseKind::Additive,
    )
}

fn multiplicative() -> ModelSpec {
    scalar(
        DiffusionSpec::DiagonalSaturating {
            s0: vec![1.0],
            s1: vec![0.5],
        },
        NoiseKind::Multiplicative,
    )
}

fn segments(grid: &GridSpec) -> (SegmentPath, SegmentPath) {
    let xi = SegmentSpec::Constant { value: vec![0.5] };
    let eta = SegmentSpec::Constant { value: vec![1.0] };
    (
        xi.sample(1, grid.m, grid.step).unwrap(),
        eta.sample(1, grid.m, grid.step).unwrap(),
    )
}

fn per_path(c: &mut Criterion) {
    let grid = make_grid(1.0, 2.0, 1000).unwrap();
    let (xi, eta) = segments(&grid);
    let add = additive();
    let mult = multiplicative();
    let mut g = c.benchmark_group("per_path_m1000");

    g.bench_function("noise", |b| {
        let mut i = 0u64;
        b.iter(|| {
            i += 1;
            black_box(sample_noise(&grid, 1, 7, i))
        })
    });

    let noise = sample_noise(&grid, 1, 7, 0);
    g.bench_function("integrate_additive", |b| {
        b.iter(|| integrate_mild(&add, &xi, black_box(&noise), &grid).unwrap())
    });
    g.bench_function("integrate_multiplicative", |b| {
        b.iter(|| integrate_mild(&mult, &xi, black_box(&noise), &grid).unwrap())
    });

    let u_add = control_function(ControlKind::AdditiveNormalized, &grid, 2.0).unwrap();
    let ups = upsilon_path(&add, &eta, &u_add, &grid).unwrap();
    let traj = integrate_mild(&add, &xi, &noise, &grid).unwrap();
    g.bench_function("additive_hdot", |b| {
        b.iter(|| additive_hdot(&add, black_box(&traj), &ups, &u_add, &eta).unwrap())
    });

    let u_mult = control_function(ControlKind::MultiplicativeLinear, &grid, 2.0).unwrap();
    let traj = integrate_mild(&mult, &xi, &noise, &grid).unwrap();
    g.bench_function("tangent", |b| {
        b.iter(|| tangent_path(&mult, black_box(&traj), &eta).unwrap())
    });
    g.bench_function("z_path", |b| {
        b.iter(|| z_path(&mult, black_box(&traj), &eta, &u_mult).unwrap())
    });
    let z = z_path(&mult, &traj, &eta, &u_mult).unwrap();
    g.bench_function("multiplicative_hdot", |b| {
        b.iter(|| multiplicative_hdot(&mult, black_box(&traj), &z, &u_mult).unwrap())
    });
    g.finish();
}

fn estimators(c: &mut Criterion) {
    let grid = make_grid(1.0, 2.0, 100).unwrap();
    let (xi, eta) = segments(&grid);
    let f = TestFunctional::BoundedSmooth {
        v: vec![1.0],
        w: Some(vec![0.5]),
    };
    let mc = McConfig {
        threads: Some(1),
        ..McConfig::new(2000, 3).with_antithetic(true)
    };
    let mut g = c.benchmark_group("bismut_2000_paths_m100");
    g.sample_size(10);
    for (name, spec, kind) in [
        ("additive", additive(), ControlKind::AdditiveNormalized),
        ("multiplicative", multiplicative(), ControlKind::MultiplicativeLinear),
    ] {
        let u = control_function(kind, &grid, 2.0).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| estimate_gradient_bismut(&spec, &grid, &xi, &eta, &f, &u, &mc).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, per_path, estimators);
criterion_main!(benches);
