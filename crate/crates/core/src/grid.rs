//! Finite weighted grids standing in for a σ-finite measure space, with the
//! `L²(𝕐)` and `L²(𝕐²)` algebra built on top.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LrdError, Result};
use crate::scalar::{pairwise_sum, Real};

/// Sites of the grid with their quadrature masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "RawGrid<T>", into = "RawGrid<T>")]
pub struct GridSpace<T: Real> {
    points: Vec<T>,
    weights: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct RawGrid<T: Real> {
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> TryFrom<RawGrid<T>> for GridSpace<T> {
    type Error = LrdError;
    fn try_from(raw: RawGrid<T>) -> Result<Self> {
        GridSpace::new(raw.points, raw.weights)
    }
}

impl<T: Real> From<GridSpace<T>> for RawGrid<T> {
    fn from(g: GridSpace<T>) -> Self {
        RawGrid { points: g.points, weights: g.weights }
    }
}

impl<T: Real> GridSpace<T> {
    pub fn new(points: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(LrdError::config("grid needs at least one site"));
        }
        check_dim(points.len(), weights.len())?;
        if let Some(w) = weights.iter().find(|w| !(**w > T::zero()) || !w.is_finite()) {
            return Err(LrdError::config(format!("grid weights must be positive and finite (found {w})")));
        }
        Ok(GridSpace { points, weights })
    }

    /// `m` midpoints of `[0, 1]` with weights `1/m`.
    pub fn uniform_unit(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(LrdError::config("grid needs at least one site"));
        }
        let h = T::one() / T::of_usize(m);
        let points = (0..m).map(|i| (T::of_usize(i) + T::of(0.5)) * h).collect();
        Self::new(points, vec![h; m])
    }

    /// Unit-weight grid on labels `0..m`, the finite-dimensional `ℝ^m` with
    /// its Euclidean inner product.
    pub fn counting(m: usize) -> Result<Self> {
        let points = (0..m).map(T::of_usize).collect();
        Self::new(points, vec![T::one(); m])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn total_mass(&self) -> T {
        pairwise_sum(&self.weights)
    }

    pub fn constant(&self, c: T) -> GridFunction<T> {
        GridFunction::new(Array1::from_elem(self.len(), c))
    }

    pub fn zero_kernel(&self) -> KernelOnGrid<T> {
        KernelOnGrid::zeros(self.len())
    }

    pub fn constant_kernel(&self, c: T) -> KernelOnGrid<T> {
        KernelOnGrid::new(Array2::from_elem((self.len(), self.len()), c)).expect("square by construction")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Element of `L²(𝕐)`: one value per grid site.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    pub values: Array1<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(values: Array1<T>) -> Self {
        GridFunction { values }
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        GridFunction { values: Array1::from(values) }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    /// The rank-one kernel `(r, s) ↦ self(r) · other(s)`.
    pub fn tensor(&self, other: &GridFunction<T>) -> KernelOnGrid<T> {
        let m = self.len();
        let values = Array2::from_shape_fn((m, other.len()), |(i, j)| self.values[i] * other.values[j]);
        KernelOnGrid { values }
    }
}

/// Element of `L²(𝕐²)`: row index is the first argument `r`, column the second `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOnGrid<T> {
    pub values: Array2<T>,
}

impl<T: Real> KernelOnGrid<T> {
    pub fn new(values: Array2<T>) -> Result<Self> {
        let (r, c) = values.dim();
        check_dim(r, c)?;
        Ok(KernelOnGrid { values })
    }

    pub fn zeros(m: usize) -> Self {
        KernelOnGrid { values: Array2::zeros((m, m)) }
    }

    pub fn from_fn(m: usize, f: impl FnMut((usize, usize)) -> T) -> Self {
        KernelOnGrid { values: Array2::from_shape_fn((m, m), f) }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, r: usize, s: usize) -> T {
        self.values[(r, s)]
    }

    /// The adjoint kernel `(r, s) ↦ K(s, r)`.
    pub fn transpose(&self) -> Self {
        KernelOnGrid { values: self.values.t().to_owned() }
    }

    pub fn scale(&self, c: T) -> Self {
        KernelOnGrid { values: self.values.mapv(|v| v * c) }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(KernelOnGrid { values: &self.values + &other.values })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(KernelOnGrid { values: &self.values - &other.values })
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(KernelOnGrid { values: &self.values * &other.values })
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        Zip::from(&self.values).and(&other.values).fold(T::zero(), |a, &x, &y| a.max((x - y).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn check_grid_fn<T: Real>(f: &GridFunction<T>, space: &GridSpace<T>) -> Result<()> {
    check_dim(space.len(), f.len())
}

fn check_grid_kernel<T: Real>(k: &KernelOnGrid<T>, space: &GridSpace<T>) -> Result<()> {
    check_dim(space.len(), k.dim())
}

/// `⟨f, g⟩ = Σ_i f_i g_i w_i`.
pub fn inner_product_l2<T: Real>(f: &GridFunction<T>, g: &GridFunction<T>, space: &GridSpace<T>) -> Result<T> {
    check_grid_fn(f, space)?;
    check_grid_fn(g, space)?;
    let terms: Vec<T> = (0..space.len()).map(|i| f.values[i] * g.values[i] * space.weights[i]).collect();
    Ok(pairwise_sum(&terms))
}

pub fn norm_l2<T: Real>(f: &GridFunction<T>, space: &GridSpace<T>) -> Result<T> {
    inner_product_l2(f, f, space).map(|v| v.sqrt())
}

/// Hilbert–Schmidt pairing `Σ_{i,j} K1_{ij} K2_{ij} w_i w_j`.
pub fn hs_inner_kernel<T: Real>(k1: &KernelOnGrid<T>, k2: &KernelOnGrid<T>, space: &GridSpace<T>) -> Result<T> {
    check_grid_kernel(k1, space)?;
    check_grid_kernel(k2, space)?;
    let w = &space.weights;
    let m = space.len();
    let mut terms = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            terms.push(k1.values[(i, j)] * k2.values[(i, j)] * w[i] * w[j]);
        }
    }
    Ok(pairwise_sum(&terms))
}

/// `‖K‖ = sqrt(Σ_{i,j} K_{ij}² w_i w_j)`.
pub fn norm_l2_kernel<T: Real>(k: &KernelOnGrid<T>, space: &GridSpace<T>) -> Result<T> {
    hs_inner_kernel(k, k, space).map(|v| v.sqrt())
}

/// Kernel-operator composition `(A∘B)(r, s) = Σ_t A(r, t) B(t, s) w_t`.
pub fn compose<T: Real>(a: &KernelOnGrid<T>, b: &KernelOnGrid<T>, space: &GridSpace<T>) -> Result<KernelOnGrid<T>> {
    check_grid_kernel(a, space)?;
    check_grid_kernel(b, space)?;
    let w = Array1::from(space.weights.clone());
    let aw = &a.values * &w.view().insert_axis(ndarray::Axis(0));
    Ok(KernelOnGrid { values: aw.dot(&b.values) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_site(w0: f64, w1: f64) -> GridSpace<f64> {
        GridSpace::new(vec![0.0, 1.0], vec![w0, w1]).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let g = two_site(0.5, 0.5);
        let one = g.constant(1.0);
        assert_relative_eq!(inner_product_l2(&one, &one, &g).unwrap(), 1.0);
        let e0 = GridFunction::from_vec(vec![1.0, 0.0]);
        let e1 = GridFunction::from_vec(vec![0.0, 1.0]);
        assert_eq!(inner_product_l2(&e0, &e1, &two_site(0.3, 7.0)).unwrap(), 0.0);
        let f = GridFunction::from_vec(vec![1.0, 2.0]);
        let h = GridFunction::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(inner_product_l2(&f, &h, &two_site(0.25, 0.75)).unwrap(), 6.75, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = two_site(0.5, 0.5);
        let f = GridFunction::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(inner_product_l2(&f, &f, &g), Err(LrdError::DimensionMismatch { .. })));
        let k = KernelOnGrid::<f64>::zeros(3);
        assert!(norm_l2_kernel(&k, &g).is_err());
        assert!(hs_inner_kernel(&k, &g.zero_kernel(), &g).is_err());
    }

    #[test]
    fn kernel_norm_examples() {
        let g = two_site(0.5, 0.5);
        assert_eq!(norm_l2_kernel(&g.zero_kernel(), &g).unwrap(), 0.0);
        let id = KernelOnGrid::from_fn(2, |(i, j)| if i == j { 1.0 } else { 0.0 });
        assert_relative_eq!(norm_l2_kernel(&id, &g).unwrap(), 0.5_f64.sqrt(), epsilon = 1e-15);
        let g3 = GridSpace::new(vec![0.0, 1.0, 2.0], vec![0.2, 1.3, 0.5]).unwrap();
        assert_relative_eq!(norm_l2_kernel(&g3.constant_kernel(1.0), &g3).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn hs_pairing_of_rank_one_kernels_factorizes() {
        let g = two_site(0.3, 0.7);
        let f = GridFunction::from_vec(vec![1.0, -2.0]);
        let h = GridFunction::from_vec(vec![0.5, 3.0]);
        let u = GridFunction::from_vec(vec![2.0, 1.0]);
        let v = GridFunction::from_vec(vec![-1.0, 4.0]);
        let lhs = hs_inner_kernel(&f.tensor(&h), &u.tensor(&v), &g).unwrap();
        let rhs = inner_product_l2(&f, &u, &g).unwrap() * inner_product_l2(&h, &v, &g).unwrap();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-14);
        let k = f.tensor(&h);
        assert_relative_eq!(hs_inner_kernel(&k, &k, &g).unwrap(), norm_l2_kernel(&k, &g).unwrap().powi(2), epsilon = 1e-14);
        assert_eq!(hs_inner_kernel(&k, &g.zero_kernel(), &g).unwrap(), 0.0);
    }

    #[test]
    fn uniform_grid_and_json_round_trip() {
        let g = GridSpace::<f64>::uniform_unit(4).unwrap();
        assert_relative_eq!(g.total_mass(), 1.0);
        assert_relative_eq!(g.points()[0], 0.125);
        let s = g.to_json().unwrap();
        assert!(s.contains("\"points\"") && s.contains("\"weights\""));
        assert_eq!(GridSpace::from_json(&s).unwrap(), g);
        assert!(GridSpace::<f64>::from_json(r#"{"points":[0.0],"weights":[-1.0]}"#).is_err());
        assert!(GridSpace::<f64>::uniform_unit(0).is_err());
    }

    #[test]
    fn composition_uses_measure_weights() {
        let g = two_site(0.25, 0.75);
        let one = g.constant_kernel(1.0);
        let c = compose(&one, &one, &g).unwrap();
        assert_relative_eq!(c.get(0, 1), 1.0);
        let a = KernelOnGrid::from_fn(2, |(i, j)| (i + 2 * j) as f64);
        let b = KernelOnGrid::from_fn(2, |(i, j)| (3 * i + j) as f64 - 1.0);
        let c = compose(&a, &b, &g).unwrap();
        let expect = a.get(1, 0) * b.get(0, 1) * 0.25 + a.get(1, 1) * b.get(1, 1) * 0.75;
        assert_relative_eq!(c.get(1, 1), expect);
    }

    fn arb_grid_and_kernels() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..16).prop_flat_map(|m| {
            (
                prop::collection::vec(0.01f64..2.0, m),
                prop::collection::vec(-5.0f64..5.0, m * m),
                prop::collection::vec(-5.0f64..5.0, m * m),
            )
        })
    }

    proptest! {
        #[test]
        fn cauchy_schwarz_and_symmetry((w, a, b) in arb_grid_and_kernels()) {
            let m = w.len();
            let g = GridSpace::new((0..m).map(|i| i as f64).collect(), w).unwrap();
            let k1 = KernelOnGrid::new(Array2::from_shape_vec((m, m), a).unwrap()).unwrap();
            let k2 = KernelOnGrid::new(Array2::from_shape_vec((m, m), b).unwrap()).unwrap();
            let ip = hs_inner_kernel(&k1, &k2, &g).unwrap();
            let n1 = norm_l2_kernel(&k1, &g).unwrap();
            let n2 = norm_l2_kernel(&k2, &g).unwrap();
            prop_assert!(ip.abs() <= n1 * n2 * (1.0 + 1e-12) + 1e-12);
            prop_assert!((ip - hs_inner_kernel(&k2, &k1, &g).unwrap()).abs() <= 1e-12 * (1.0 + ip.abs()));
            // bilinearity in the first slot
            let lhs = hs_inner_kernel(&k1.scale(2.5).add(&k2).unwrap(), &k2, &g).unwrap();
            let rhs = 2.5 * ip + n2 * n2;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs() + rhs.abs()) * (m * m) as f64);
        }

        #[test]
        fn tensor_norm_is_product_of_norms(f in prop::collection::vec(-3.0f64..3.0, 5), h in prop::collection::vec(-3.0f64..3.0, 5), w in prop::collection::vec(0.05f64..1.0, 5)) {
            let g = GridSpace::new((0..5).map(|i| i as f64).collect(), w).unwrap();
            let f = GridFunction::from_vec(f);
            let h = GridFunction::from_vec(h);
            let lhs = norm_l2_kernel(&f.tensor(&h), &g).unwrap();
            let rhs = norm_l2(&f, &g).unwrap() * norm_l2(&h, &g).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}
