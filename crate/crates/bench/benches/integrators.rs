use std::f64::consts::FRAC_PI_2;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DVector, Vector3};
use vidam::adjoint::{gradient, OcpObjective};
use vidam::beam::{simulate, BeamMaterial, BeamModel, BoundaryCondition};
use vidam::beam_ocp::{beam_gradient, BeamOcp};
use vidam::constrained::constrained_integrate;
use vidam::dualquat::from_screw;
use vidam::mechanics::integrate;
use vidam::models::{pendulum_constrained, pendulum_minimal, PendulumParams};
use vidam::numerics::NewtonSettings;

fn pendulums(c: &mut Criterion) {
    let params = PendulumParams { h: 1e-3, ..Default::default() };
    let newton = NewtonSettings::default();
    let u = vec![DVector::from_element(1, 1.0); 2000];

    let sys = pendulum_minimal(params);
    let (q0, p0) = (DVector::zeros(1), DVector::zeros(1));
    c.bench_function("pendulum integrate 2000 steps", |b| {
        b.iter(|| integrate(&sys, black_box(&q0), &p0, &u, &newton).unwrap())
    });
    let obj = OcpObjective::scalar(1e3, 1e-2, 1e-8, DVector::from_element(1, 3.0), DVector::zeros(1), 1);
    c.bench_function("pendulum gradient 2000 steps", |b| {
        b.iter(|| gradient(&sys, black_box(&q0), &p0, &u, &obj, &newton).unwrap())
    });

    let sys = pendulum_constrained(params);
    let (q0, p0) = (sys.position(0.0), DVector::zeros(2));
    c.bench_function("constrained pendulum integrate 2000 steps", |b| {
        b.iter(|| constrained_integrate(&sys, black_box(&q0), &p0, &u, &newton).unwrap())
    });
}

fn beams(c: &mut Criterion) {
    let mat = BeamMaterial::square(0.05, 50000.0, 0.35, 1000.0, 0.1, 0.01);
    let model = BeamModel::new(mat, 1.0, 5, 1.0 / 1200.0, BoundaryCondition::Pinned, BoundaryCondition::Free).unwrap();
    let row = model.rigid_row(&from_screw(-FRAC_PI_2, &Vector3::z(), &Vector3::zeros()).unwrap());
    let newton = NewtonSettings { residual_tolerance: 1e-10, ..Default::default() };
    c.bench_function("beam A=5 simulate 20 steps", |b| {
        b.iter(|| simulate(&model, black_box(&row), &model.rest_momenta(), &[50.0; 20], &newton).unwrap())
    });
    let ocp = BeamOcp::swing_up(model, 1e2, 0.0, 50.0).unwrap();
    c.bench_function("beam A=5 gradient 20 steps", |b| b.iter(|| beam_gradient(&ocp, black_box(&[50.0; 20])).unwrap()));
}

criterion_group!(benches, pendulums, beams);
criterion_main!(benches);
