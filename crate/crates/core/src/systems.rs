//! Reference systems used by tests, examples and the command line.

use nalgebra::DMatrix;

use crate::poly::{Polynomial, VectorField, VectorFieldSystem};

fn build(
    n: usize,
    drift: Option<VectorField>,
    fields: Vec<VectorField>,
    x0: Vec<f64>,
) -> VectorFieldSystem {
    VectorFieldSystem::new(n, drift, fields)
        .and_then(|s| s.with_x0(x0))
        .expect("catalogue systems are well formed")
}

fn poly_field(components: Vec<Polynomial>) -> VectorField {
    VectorField::new(components).expect("catalogue fields are well formed")
}

/// `V_1 = d/dx`, `V_2 = d/dy + x d/dz` on `R^3`, started at the origin.
pub fn heisenberg() -> VectorFieldSystem {
    let n = 3;
    let v1 = VectorField::constant(&[1.0, 0.0, 0.0]);
    let v2 = poly_field(vec![
        Polynomial::zero(n),
        Polynomial::constant(n, 1.0),
        Polynomial::var(n, 0),
    ]);
    build(n, None, vec![v1, v2], vec![0.0; n])
}

/// `V_1 = d/dx`, `V_2 = x d/dy` on `R^2`.
pub fn grushin() -> VectorFieldSystem {
    let n = 2;
    let v1 = VectorField::constant(&[1.0, 0.0]);
    let v2 = poly_field(vec![Polynomial::zero(n), Polynomial::var(n, 0)]);
    build(n, None, vec![v1, v2], vec![0.0; n])
}

/// `V_i = e_i`, `i = 1..n`.
pub fn elliptic(n: usize) -> VectorFieldSystem {
    let fields = (0..n)
        .map(|i| {
            let mut c = vec![0.0; n];
            c[i] = 1.0;
            VectorField::constant(&c)
        })
        .collect();
    build(n, None, fields, vec![0.0; n])
}

/// Constant fields given by the columns of `v` (`n x d`).
pub fn constant_fields(v: &DMatrix<f64>) -> VectorFieldSystem {
    let fields = v
        .column_iter()
        .map(|c| VectorField::constant(c.as_slice()))
        .collect();
    build(v.nrows(), None, fields, vec![0.0; v.nrows()])
}

/// `dX = dB` in one dimension.
pub fn additive_1d() -> VectorFieldSystem {
    build(1, None, vec![VectorField::constant(&[1.0])], vec![0.0])
}

/// `dX = X dB` in one dimension, started at `x0`.
pub fn scalar_linear(x0: f64) -> VectorFieldSystem {
    build(
        1,
        None,
        vec![poly_field(vec![Polynomial::var(1, 0)])],
        vec![x0],
    )
}

/// `V_1 = e_1`, `V_2 = 0` on `R^2`.
pub fn rank_deficient() -> VectorFieldSystem {
    build(
        2,
        None,
        vec![VectorField::constant(&[1.0, 0.0]), VectorField::zero(2)],
        vec![0.0; 2],
    )
}

/// `V_1 = (x_2^2, x_1)` on `R^2`.
pub fn quadratic() -> VectorFieldSystem {
    let n = 2;
    let x2sq = Polynomial::var(n, 1).mul(&Polynomial::var(n, 1));
    build(
        n,
        None,
        vec![poly_field(vec![x2sq, Polynomial::var(n, 0)])],
        vec![0.5, -0.3],
    )
}

/// Linear fields `x -> A x`, `x -> B x` with `A = [[0,1],[0,0]]`,
/// `B = [[0,0],[1,0]]`; their brackets never vanish.
pub fn sl2() -> VectorFieldSystem {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
    build(
        2,
        None,
        vec![VectorField::linear(&a), VectorField::linear(&b)],
        vec![1.0, 1.0],
    )
}

/// Look up a catalogue system by name.
pub fn by_name(name: &str) -> Option<VectorFieldSystem> {
    Some(match name {
        "heisenberg" => heisenberg(),
        "grushin" => grushin(),
        "elliptic2" => elliptic(2),
        "elliptic3" => elliptic(3),
        "additive" => additive_1d(),
        "linear" => scalar_linear(1.0),
        "rank-deficient" => rank_deficient(),
        "quadratic" => quadratic(),
        "sl2" => sl2(),
        _ => return None,
    })
}

pub const CATALOGUE: &[&str] = &[
    "heisenberg",
    "grushin",
    "elliptic2",
    "elliptic3",
    "additive",
    "linear",
    "rank-deficient",
    "quadratic",
    "sl2",
];
