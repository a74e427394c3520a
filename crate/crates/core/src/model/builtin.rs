use super::{CertificateInputs, Polynomial, PolynomialSpec, SdeModel};

pub const BUILTIN_NAMES: &[&str] = &["example1", "example2", "ou"];

/// Scalar mean-reverting model `dX = (1 - X - 2X^3) dt + X^2 dW`, split as
/// `A = [1]`, `f(x) = 1 - 2x^3`, `g(x) = x^2`.
pub fn example1() -> SdeModel {
    let spec = PolynomialSpec {
        a: vec![vec![1.0]],
        f: vec![Polynomial::from_terms([(1.0, vec![0]), (-2.0, vec![3])])],
        g: vec![vec![Polynomial::from_terms([(1.0, vec![2])])]],
    };
    SdeModel::from_polynomials("example1", &spec).expect("example1 is well formed")
}

/// Declared constants for [`example1`].
///
/// `l1 = 3` is the largest value for which the one-sided pair condition holds
/// for every `c > 0`; `l2 = 4` is the largest for which the growth condition
/// holds at all. With `q = 3` the exponent condition `l2 >= 4q - 3` cannot be
/// met, so the certificate carries a warning for it.
pub fn example1_inputs() -> CertificateInputs {
    CertificateInputs {
        q: 3.0,
        lipschitz: 3.0,
        c: 0.5,
        c1: 2.0,
        c2: 0.5,
        l1: 3.0,
        l2: 4.0,
    }
}

/// Controlled 2D system with `A = 3I`:
///
/// ```text
/// dX1 = (10 - 3 X1 - X2) dt + (0.5 + 0.1 X2) dW1
/// dX2 = (5 - X1 - 3 X2 - X2^3) dt + (0.3 + 0.1 (X1 + X2^2)) dW2
/// ```
pub fn example2() -> SdeModel {
    let spec = PolynomialSpec {
        a: vec![vec![3.0, 0.0], vec![0.0, 3.0]],
        f: vec![
            Polynomial::from_terms([(10.0, vec![0, 0]), (-1.0, vec![0, 1])]),
            Polynomial::from_terms([(5.0, vec![0, 0]), (-1.0, vec![1, 0]), (-1.0, vec![0, 3])]),
        ],
        g: vec![
            vec![
                Polynomial::from_terms([(0.5, vec![0, 0]), (0.1, vec![0, 1])]),
                Polynomial::zero(),
            ],
            vec![
                Polynomial::zero(),
                Polynomial::from_terms([(0.3, vec![0, 0]), (0.1, vec![1, 0]), (0.1, vec![0, 2])]),
            ],
        ],
    };
    SdeModel::from_polynomials("example2", &spec).expect("example2 is well formed")
}

/// Declared constants for [`example2`]. `c1 = 60` bounds the growth
/// inequality, whose supremum on a fine grid is about 51.8.
pub fn example2_inputs() -> CertificateInputs {
    CertificateInputs {
        q: 3.0,
        lipschitz: 3.0,
        c: 2.1,
        c1: 60.0,
        c2: 2.5,
        l1: 3.0,
        l2: 9.0,
    }
}

/// Ornstein-Uhlenbeck `dX = -X dt + dW`.
pub fn ou() -> SdeModel {
    let spec = PolynomialSpec {
        a: vec![vec![1.0]],
        f: vec![Polynomial::zero()],
        g: vec![vec![Polynomial::constant(1.0, 1)]],
    };
    SdeModel::from_polynomials("ou", &spec).expect("ou is well formed")
}

fn ou_inputs() -> CertificateInputs {
    CertificateInputs {
        q: 1.0,
        lipschitz: 1.0,
        c: 0.5,
        c1: 2.0,
        c2: 0.5,
        l1: 3.0,
        l2: 2.0,
    }
}

/// Looks up a built-in model and its declared constants by name.
pub fn builtin(name: &str) -> Option<(SdeModel, CertificateInputs)> {
    match name {
        "example1" => Some((example1(), example1_inputs())),
        "example2" => Some((example2(), example2_inputs())),
        "ou" => Some((ou(), ou_inputs())),
        _ => None,
    }
}
