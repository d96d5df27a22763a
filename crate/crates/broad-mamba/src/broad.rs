//! Broad learning over block outputs: frozen random feature nodes, frozen
//! ReLU enhancement nodes, the concatenated broad representation, the
//! ridge-regularized reconstruction loss, and its closed-form solver.
//!
//! Feature node group `i` is the plain affine map `Z_i = u W_z[i] + beta_z[i]`
//! (no activation); enhancement group `j` is
//! `H_j = relu(Z W_h[j] + beta_h[j])` over the full feature concatenation.
//! The broad representation is `Y = [Z | H]`. All random maps are drawn once
//! from a seeded generator and never trained; gradients flow through `Z` and
//! `H` into the block that produced `u`.
//!
//! The output map solving `min ||F W - T||^2 + lambda ||W||^2` has the closed
//! form `W = (F'F + lambda I)^{-1} F'T`, computed here by a Cholesky
//! factorization of the (strictly positive definite) regularized Gram matrix.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Frozen random broad space for one modality.
#[derive(Debug, Clone)]
pub struct BroadSpace {
    in_width: usize,
    feature_groups: usize,
    enhance_groups: usize,
    feature_width: usize,
    enhance_width: usize,
    lambda: f64,
    // per-group maps, plus column-concatenated copies used for the actual
    // matrix products (identical results, fewer calls)
    w_z: Vec<Array2<f64>>,
    beta_z: Vec<Array1<f64>>,
    w_h: Vec<Array2<f64>>,
    beta_h: Vec<Array1<f64>>,
    w_z_cat: Array2<f64>,
    beta_z_cat: Array1<f64>,
    w_h_cat: Array2<f64>,
    beta_h_cat: Array1<f64>,
}

impl BroadSpace {
    /// Draws the frozen maps: every weight and bias `~ N(0, 1/fan_in)`.
    pub fn init<R: Rng>(
        in_width: usize,
        feature_groups: usize,
        enhance_groups: usize,
        feature_width: usize,
        enhance_width: usize,
        lambda: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if feature_groups == 0 || enhance_groups == 0 {
            return Err(Error::InvalidParameter(
                "broad space needs at least one feature and one enhancement group".into(),
            ));
        }
        if lambda <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "ridge coefficient must be positive, got {lambda}"
            )));
        }
        let z_total = feature_groups * feature_width;
        let feat = Normal::new(0.0, (1.0 / in_width as f64).sqrt()).unwrap();
        let enh = Normal::new(0.0, (1.0 / z_total as f64).sqrt()).unwrap();
        let w_z: Vec<Array2<f64>> = (0..feature_groups)
            .map(|_| Array2::from_shape_fn((in_width, feature_width), |_| feat.sample(rng)))
            .collect();
        let beta_z: Vec<Array1<f64>> = (0..feature_groups)
            .map(|_| Array1::from_shape_fn(feature_width, |_| feat.sample(rng)))
            .collect();
        let w_h: Vec<Array2<f64>> = (0..enhance_groups)
            .map(|_| Array2::from_shape_fn((z_total, enhance_width), |_| enh.sample(rng)))
            .collect();
        let beta_h: Vec<Array1<f64>> = (0..enhance_groups)
            .map(|_| Array1::from_shape_fn(enhance_width, |_| enh.sample(rng)))
            .collect();
        Ok(Self::from_parts(
            in_width,
            feature_width,
            enhance_width,
            lambda,
            w_z,
            beta_z,
            w_h,
            beta_h,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        in_width: usize,
        feature_width: usize,
        enhance_width: usize,
        lambda: f64,
        w_z: Vec<Array2<f64>>,
        beta_z: Vec<Array1<f64>>,
        w_h: Vec<Array2<f64>>,
        beta_h: Vec<Array1<f64>>,
    ) -> Self {
        let concat2 = |mats: &[Array2<f64>]| {
            let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("group widths agree")
        };
        let concat1 = |vecs: &[Array1<f64>]| {
            let views: Vec<_> = vecs.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("group widths agree")
        };
        let w_z_cat = concat2(&w_z);
        let beta_z_cat = concat1(&beta_z);
        let w_h_cat = concat2(&w_h);
        let beta_h_cat = concat1(&beta_h);
        Self {
            in_width,
            feature_groups: w_z.len(),
            enhance_groups: w_h.len(),
            feature_width,
            enhance_width,
            lambda,
            w_z,
            beta_z,
            w_h,
            beta_h,
            w_z_cat,
            beta_z_cat,
            w_h_cat,
            beta_h_cat,
        }
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn feature_groups(&self) -> usize {
        self.feature_groups
    }

    pub fn enhance_groups(&self) -> usize {
        self.enhance_groups
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn w_z(&self, group: usize) -> &Array2<f64> {
        &self.w_z[group]
    }

    pub fn w_h(&self, group: usize) -> &Array2<f64> {
        &self.w_h[group]
    }

    pub fn beta_z(&self, group: usize) -> &Array1<f64> {
        &self.beta_z[group]
    }

    pub fn beta_h(&self, group: usize) -> &Array1<f64> {
        &self.beta_h[group]
    }

    /// Width of the broad representation, `n d_z + m d_h`.
    pub fn broad_width(&self) -> usize {
        self.feature_groups * self.feature_width + self.enhance_groups * self.enhance_width
    }

    /// Concatenated feature nodes `[Z_1 .. Z_n]`, `Z_i = u W_z[i] + beta_z[i]`.
    pub fn feature_nodes(&self, u: &Array2<f64>) -> Result<Array2<f64>> {
        if u.ncols() != self.in_width {
            return Err(Error::ShapeMismatch {
                what: "feature node input width",
                expected: format!("{}", self.in_width),
                got: format!("{}", u.ncols()),
            });
        }
        Ok(u.dot(&self.w_z_cat) + &self.beta_z_cat)
    }

    /// Concatenated enhancement nodes `[H_1 .. H_m]`,
    /// `H_j = relu(Z W_h[j] + beta_h[j])`.
    pub fn enhancement_nodes(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.feature_groups * self.feature_width {
            return Err(Error::ShapeMismatch {
                what: "enhancement node input width",
                expected: format!("{}", self.feature_groups * self.feature_width),
                got: format!("{}", z.ncols()),
            });
        }
        let mut h = z.dot(&self.w_h_cat) + &self.beta_h_cat;
        h.mapv_inplace(|v| v.max(0.0));
        Ok(h)
    }

    /// Full broad representation for a block output.
    pub fn features(&self, u: &Array2<f64>) -> Result<BroadFeatures> {
        let z = self.feature_nodes(u)?;
        let h = self.enhancement_nodes(&z)?;
        BroadFeatures::new(z, h)
    }

    /// Gradient of the block output `u` for an upstream gradient on the
    /// broad representation `Y = [Z | H]`. The frozen maps take no gradient.
    pub(crate) fn backward(&self, features: &BroadFeatures, g_y: &Array2<f64>) -> Array2<f64> {
        let z_total = self.feature_groups * self.feature_width;
        let g_z_direct = g_y.slice(ndarray::s![.., ..z_total]);
        let g_h = g_y.slice(ndarray::s![.., z_total..]);
        // relu mask: enhancement entries are strictly positive exactly where
        // the pre-activation was
        let mut g_pre = g_h.to_owned();
        g_pre.zip_mut_with(&features.h, |g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
        let g_z = &g_z_direct + &g_pre.dot(&self.w_h_cat.t());
        g_z.dot(&self.w_z_cat.t())
    }

    /// Ridge reconstruction loss of Eq-style self-mapping:
    /// `||Y W - Y||^2 + lambda ||W||^2` with this space's `lambda`.
    pub fn norm_loss(&self, features: &BroadFeatures, w: &Array2<f64>) -> f64 {
        ridge_loss(&features.y, &features.y, w, self.lambda)
    }
}

/// Concatenated broad representation of one sequence: feature nodes `Z`,
/// enhancement nodes `H`, and their column concatenation `Y = [Z | H]`.
#[derive(Debug, Clone)]
pub struct BroadFeatures {
    z: Array2<f64>,
    h: Array2<f64>,
    y: Array2<f64>,
}

impl BroadFeatures {
    pub fn new(z: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        if z.nrows() != h.nrows() {
            return Err(Error::ShapeMismatch {
                what: "broad feature row counts",
                expected: format!("{}", z.nrows()),
                got: format!("{}", h.nrows()),
            });
        }
        if h.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(
                "enhancement nodes must be non-negative".into(),
            ));
        }
        let y = ndarray::concatenate(Axis(1), &[z.view(), h.view()]).expect("same row count");
        Ok(Self { z, h, y })
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }
}

/// Closed-form ridge solution of `min ||F W - T||^2 + lambda ||W||^2`:
/// `W = (F'F + lambda I)^{-1} F'T`.
pub fn ridge_solve(f: &Array2<f64>, target: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "ridge coefficient must be positive, got {lambda}"
        )));
    }
    if f.nrows() != target.nrows() {
        return Err(Error::ShapeMismatch {
            what: "ridge design/target rows",
            expected: format!("{}", f.nrows()),
            got: format!("{}", target.nrows()),
        });
    }
    if f.nrows() == 0 || f.ncols() == 0 || target.ncols() == 0 {
        return Err(Error::InvalidParameter(
            "ridge problem needs at least one row and one column".into(),
        ));
    }
    let p = f.ncols();
    let mut gram = f.t().dot(f);
    for i in 0..p {
        gram[[i, i]] += lambda;
    }
    let rhs = f.t().dot(target);
    cholesky_solve(gram, &rhs)
}

/// `||F W - T||^2 + lambda ||W||^2` (squared Frobenius norms).
pub fn ridge_loss(f: &Array2<f64>, target: &Array2<f64>, w: &Array2<f64>, lambda: f64) -> f64 {
    let residual = f.dot(w) - target;
    let fit: f64 = residual.iter().map(|v| v * v).sum();
    let reg: f64 = w.iter().map(|v| v * v).sum();
    fit + lambda * reg
}

/// Gradient of [`ridge_loss`] with respect to `F` when the target equals `F`
/// itself (self-reconstruction): `2 (F W - F)(W' - I)`.
pub(crate) fn ridge_loss_grad_self(f: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let residual = f.dot(w) - f;
    2.0 * (residual.dot(&w.t()) - &residual)
}

/// Gradient of [`ridge_loss`] with respect to `F` for a fixed external
/// target: `2 (F W - T) W'`.
pub(crate) fn ridge_loss_grad_fixed(
    f: &Array2<f64>,
    target: &Array2<f64>,
    w: &Array2<f64>,
) -> Array2<f64> {
    let residual = f.dot(w) - target;
    2.0 * residual.dot(&w.t())
}

/// Cholesky factorization solve for a symmetric positive definite system
/// with multiple right-hand sides.
fn cholesky_solve(mut gram: Array2<f64>, rhs: &Array2<f64>) -> Result<Array2<f64>> {
    let p = gram.nrows();
    // lower-triangular factor in place
    for j in 0..p {
        for k in 0..j {
            let ljk = gram[[j, k]];
            for i in j..p {
                gram[[i, j]] -= gram[[i, k]] * ljk;
            }
        }
        let diag = gram[[j, j]];
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Gram matrix is not positive definite at pivot {j} ({diag})"
            )));
        }
        let root = diag.sqrt();
        for i in j..p {
            gram[[i, j]] /= root;
        }
    }
    let q = rhs.ncols();
    let mut out = rhs.clone();
    // forward substitution L v = rhs
    for col in 0..q {
        for i in 0..p {
            let mut v = out[[i, col]];
            for k in 0..i {
                v -= gram[[i, k]] * out[[k, col]];
            }
            out[[i, col]] = v / gram[[i, i]];
        }
        // back substitution L' w = v
        for i in (0..p).rev() {
            let mut v = out[[i, col]];
            for k in i + 1..p {
                v -= gram[[k, i]] * out[[k, col]];
            }
            out[[i, col]] = v / gram[[i, i]];
        }
    }
    Ok(out)
}
