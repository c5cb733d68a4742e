/// Tensor-product Gauss–Legendre rule on the reference square `[0,1]²`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    /// Points as `(xi, eta)` in the reference square.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    per_axis: usize,
}

fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Nodes and weights on [-1, 1], then mapped to [0, 1].
    let (x, w): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let s = (6.0f64 / 5.0).sqrt() * 2.0 / 7.0;
            let a = ((3.0 - s) / 7.0f64).sqrt();
            let b = ((3.0 + s) / 7.0f64).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let s = 2.0 * (10.0f64 / 7.0).sqrt();
            let a = (5.0 - s).sqrt() / 3.0;
            let b = (5.0 + s).sqrt() / 3.0;
            let w0 = 128.0 / 225.0;
            let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
            (vec![-b, -a, 0.0, a, b], vec![wb, wa, w0, wa, wb])
        }
        _ => unreachable!("gauss rule order checked by caller"),
    };
    (
        x.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|v| 0.5 * v).collect(),
    )
}

impl QuadratureRule {
    /// `n × n` Gauss rule, exact for polynomials of degree `2n − 1` per axis.
    ///
    /// Supported orders are 1 through 5.
    pub fn gauss(n: usize) -> Self {
        assert!((1..=5).contains(&n), "Gauss rule order {n} not supported");
        let (x, w) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (yj, wj) in x.iter().zip(&w) {
            for (xi, wi) in x.iter().zip(&w) {
                points.push([*xi, *yj]);
                weights.push(wi * wj);
            }
        }
        Self {
            points,
            weights,
            per_axis: n,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss(2)
    }
}

/// Bilinear shape functions on the reference square, counterclockwise from
/// the lower-left corner.
#[inline]
pub fn q1_values(xi: f64, eta: f64) -> [f64; 4] {
    [
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        xi * eta,
        (1.0 - xi) * eta,
    ]
}

/// Reference gradients `[d/dxi, d/deta]` of the four bilinear shape functions.
#[inline]
pub fn q1_gradients(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta), -(1.0 - xi)],
        [1.0 - eta, -xi],
        [eta, xi],
        [-eta, 1.0 - xi],
    ]
}
