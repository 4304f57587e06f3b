#![allow(dead_code)]

use bismut_core::{DiffusionSpec, DriftSpec, Matrix, ModelSpec, NoiseKind, SegmentPath};

pub fn linear_scalar(lambda: f64, b0: f64, b1: f64, s: f64, tau: f64) -> ModelSpec {
    ModelSpec {
        dim: 1,
        eigenvalues: vec![lambda],
        delay: tau,
        drift: DriftSpec::LinearDelay {
            b0: Matrix::diag(&[b0]),
            b1: Matrix::diag(&[b1]),
        },
        diffusion: DiffusionSpec::Constant {
            s: Matrix::diag(&[s]),
        },
        a4_alpha: 0.25,
        noise_kind: NoiseKind::Additive,
    }
}

/// λ = -1, B1 = 0.5, τ = 1, s = 0.3.
pub fn add_linear_scalar() -> ModelSpec {
    linear_scalar(-1.0, 0.0, 0.5, 0.3, 1.0)
}

fn gains(scale: f64, seed: usize) -> Matrix {
    let rows = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| scale * (((i * 4 + j + seed) as f64 * 1.7).sin()))
                .collect()
        })
        .collect();
    Matrix::from_rows(rows).unwrap()
}

/// Four modes with saturating feedback through `ξ(0)`, `ξ(-τ)` and a
/// distributed delay.
pub fn nonlinear_d4(m: usize, noise_kind: NoiseKind) -> ModelSpec {
    let weights = (0..=m).map(|j| 0.2 / (m + 1) as f64 * (1.0 + (j as f64 / m as f64))).collect();
    let diffusion = match noise_kind {
        NoiseKind::Additive => DiffusionSpec::Constant {
            s: Matrix::from_rows(vec![
                vec![0.5, 0.1, 0.0, 0.0],
                vec![0.0, 0.4, 0.1, 0.0],
                vec![0.0, 0.0, 0.4, 0.1],
                vec![0.05, 0.0, 0.0, 0.3],
            ])
            .unwrap(),
        },
        NoiseKind::Multiplicative => DiffusionSpec::DiagonalSaturating {
            s0: vec![1.0; 4],
            s1: vec![0.5; 4],
        },
    };
    ModelSpec {
        dim: 4,
        eigenvalues: vec![-1.0, -4.0, -9.0, -16.0],
        delay: 1.0,
        drift: DriftSpec::BoundedNonlinear {
            g0: gains(0.6, 0),
            g1: gains(0.5, 3),
            linear: None,
            weights: Some(weights),
        },
        diffusion,
        a4_alpha: 0.25,
        noise_kind,
    }
}

/// `λ = -1`, `σ(x) = 1 + 0.5 tanh(x)`.
pub fn mult_scalar(s1: f64) -> ModelSpec {
    ModelSpec {
        dim: 1,
        eigenvalues: vec![-1.0],
        delay: 1.0,
        drift: DriftSpec::BoundedNonlinear {
            g0: Matrix::diag(&[-0.4]),
            g1: Matrix::diag(&[0.6]),
            linear: None,
            weights: None,
        },
        diffusion: DiffusionSpec::DiagonalSaturating {
            s0: vec![1.0],
            s1: vec![s1],
        },
        a4_alpha: 0.25,
        noise_kind: NoiseKind::Multiplicative,
    }
}

pub fn smooth_segment(dim: usize, m: usize, step: f64, offset: f64) -> SegmentPath {
    SegmentPath::from_fn(dim, m, step, |t| {
        (0..dim)
            .map(|i| offset + 0.3 * ((i + 1) as f64 * t).cos() / (i + 1) as f64)
            .collect()
    })
}

/// `|a - b| ≤ tol·max(1, |a|, |b|)`
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
