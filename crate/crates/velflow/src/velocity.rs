//! Neural velocity fields v(z): R^d -> R^d.
//!
//! A velocity field is a tanh MLP, optionally taking a context vector that is
//! concatenated to z at the input layer. The network is smooth everywhere, so
//! the flow it generates is a diffeomorphism in the limit of fine
//! discretization. Jacobians are computed exactly by propagating the layer
//! chain rule, not by finite differences.

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, Mat, ParamLayout, ParamVector, Scalar};
use crate::rng::Rng;
use crate::{Error, Result};

/// Architecture of a velocity field. Activation is tanh on every hidden
/// layer; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocitySpec {
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub context_dim: usize,
    /// Uniform init half-width is `init_scale / sqrt(fan_in)` per layer.
    pub init_scale: f64,
    /// Zero the output layer so a fresh field evaluates to exactly zero and
    /// the flow starts at the identity.
    pub zero_init_output: bool,
}

impl VelocitySpec {
    /// The default architecture: two hidden layers of two units.
    pub fn default_2d() -> Self {
        VelocitySpec {
            dim: 2,
            hidden: vec![2, 2],
            context_dim: 0,
            init_scale: 1.0,
            zero_init_output: false,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.dim + self.context_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.dim);
        w
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::mlp(&self.widths())
    }

    pub fn param_count(&self) -> usize {
        self.layout().total()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec("velocity dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidSpec("zero-width hidden layer".into()));
        }
        if self.init_scale < 0.0 {
            return Err(Error::InvalidSpec("init_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// A velocity field: spec plus flat parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub spec: VelocitySpec,
    pub params: ParamVector,
}

impl VelocityField {
    /// Deterministic initialization from a seed.
    pub fn init(spec: VelocitySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut values = vec![0.0; layout.total()];
        let mut rng = Rng::new(seed);
        let last = layout.layer_count() - 1;
        for l in 0..layout.layer_count() {
            let shape = layout.layer(l);
            if l == last && spec.zero_init_output {
                continue; // weights and bias stay zero
            }
            let half_width = spec.init_scale / (shape.input as f64).sqrt();
            for i in 0..shape.out {
                for j in 0..shape.input {
                    values[layout.flat_index(l, i, j)] = rng.uniform_in(-half_width, half_width);
                }
                values[layout.bias_index(l, i)] = rng.uniform_in(-half_width, half_width);
            }
        }
        let params = ParamVector::new(values, layout)?;
        Ok(VelocityField { spec, params })
    }

    /// Purely linear field v(z) = A z + b (no hidden layers, no context).
    pub fn linear(a: &Mat<f64>, bias: &[f64]) -> Self {
        assert_eq!(a.rows(), a.cols(), "linear field matrix must be square");
        assert_eq!(a.rows(), bias.len(), "bias length mismatch");
        let dim = a.rows();
        let spec = VelocitySpec {
            dim,
            hidden: vec![],
            context_dim: 0,
            init_scale: 0.0,
            zero_init_output: false,
        };
        let layout = spec.layout();
        let mut values = vec![0.0; layout.total()];
        for i in 0..dim {
            for j in 0..dim {
                values[layout.flat_index(0, i, j)] = a.at(i, j);
            }
            values[layout.bias_index(0, i)] = bias[i];
        }
        VelocityField { spec, params: ParamVector::new(values, layout).unwrap() }
    }

    /// Constant field v(z) = c, realized by a bias-only linear layer.
    pub fn constant(c: &[f64]) -> Self {
        let zero = Mat::zeros(c.len(), c.len());
        VelocityField::linear(&zero, c)
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// v(z), optionally conditioned on a context vector.
    pub fn eval(&self, z: &[f64], context: Option<&[f64]>) -> Result<Vec<f64>> {
        check_input(&self.spec, z.len(), context.map(|c| c.len()))?;
        Ok(eval_with(&self.spec, &self.params.layout, &self.params.values, z, context))
    }

    /// Exact Jacobian dv/dz (a d x d matrix; row i is the gradient of output
    /// component i).
    pub fn jacobian(&self, z: &[f64], context: Option<&[f64]>) -> Result<Mat<f64>> {
        check_input(&self.spec, z.len(), context.map(|c| c.len()))?;
        let (_, jac) =
            eval_jacobian_with(&self.spec, &self.params.layout, &self.params.values, z, context);
        Ok(jac)
    }

    /// Upper bound on ‖v(z)‖ over all z, available when at least one hidden
    /// layer bounds the activations: ‖W_out‖_F · sqrt(width) + ‖b_out‖.
    pub fn magnitude_bound(&self) -> Option<f64> {
        if self.spec.hidden.is_empty() {
            return None;
        }
        let layout = &self.params.layout;
        let last = layout.layer_count() - 1;
        let shape = layout.layer(last);
        let mut frob_sq = 0.0;
        for i in 0..shape.out {
            for &w in layout.weight_row(&self.params.values, last, i) {
                frob_sq += w * w;
            }
        }
        let bias_norm = layout
            .bias(&self.params.values, last)
            .iter()
            .map(|b| b * b)
            .sum::<f64>()
            .sqrt();
        Some(frob_sq.sqrt() * (shape.input as f64).sqrt() + bias_norm)
    }
}

pub(crate) fn check_input(
    spec: &VelocitySpec,
    z_len: usize,
    context_len: Option<usize>,
) -> Result<()> {
    if z_len != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: z_len,
            context: "velocity input",
        });
    }
    match (spec.context_dim, context_len) {
        (0, None) => Ok(()),
        (0, Some(got)) => Err(Error::DimensionMismatch {
            expected: 0,
            got,
            context: "unexpected context for an unconditioned field",
        }),
        (c, None) => Err(Error::DimensionMismatch {
            expected: c,
            got: 0,
            context: "missing context for a conditioned field",
        }),
        (c, Some(got)) if got != c => Err(Error::DimensionMismatch {
            expected: c,
            got,
            context: "context length",
        }),
        _ => Ok(()),
    }
}

fn weight_mat<R: Scalar>(layout: &ParamLayout, params: &[R], layer: usize, cols: usize) -> Mat<R> {
    let shape = layout.layer(layer);
    debug_assert!(cols <= shape.input);
    Mat::from_fn(shape.out, cols, |i, j| params[layout.flat_index(layer, i, j)])
}

/// Forward evaluation generic over the scalar type. Dimensions must have been
/// validated by the caller.
pub(crate) fn eval_with<R: Scalar>(
    spec: &VelocitySpec,
    layout: &ParamLayout,
    params: &[R],
    z: &[R],
    context: Option<&[R]>,
) -> Vec<R> {
    let mut current: Vec<R> = Vec::with_capacity(spec.dim + spec.context_dim);
    current.extend_from_slice(z);
    if let Some(ctx) = context {
        current.extend_from_slice(ctx);
    }
    let layers = layout.layer_count();
    for l in 0..layers {
        let shape = layout.layer(l);
        let bias = layout.bias(params, l);
        let mut next = Vec::with_capacity(shape.out);
        for i in 0..shape.out {
            let pre = dot(layout.weight_row(params, l, i), &current) + bias[i];
            next.push(if l + 1 < layers { pre.tanh() } else { pre });
        }
        current = next;
    }
    current
}

/// Forward evaluation together with the exact Jacobian dv/dz, sharing the
/// activations between the two.
pub(crate) fn eval_jacobian_with<R: Scalar>(
    spec: &VelocitySpec,
    layout: &ParamLayout,
    params: &[R],
    z: &[R],
    context: Option<&[R]>,
) -> (Vec<R>, Mat<R>) {
    let d = spec.dim;
    let mut current: Vec<R> = Vec::with_capacity(d + spec.context_dim);
    current.extend_from_slice(z);
    if let Some(ctx) = context {
        current.extend_from_slice(ctx);
    }
    let layers = layout.layer_count();
    // chain = D_l W_l ... D_1 W_1[:, :d], updated layer by layer
    let mut chain = weight_mat(layout, params, 0, d);
    for l in 0..layers {
        let shape = layout.layer(l);
        let bias = layout.bias(params, l);
        if l > 0 {
            chain = weight_mat(layout, params, l, shape.input).matmul(&chain);
        }
        let mut next = Vec::with_capacity(shape.out);
        if l + 1 < layers {
            let mut dtanh = Vec::with_capacity(shape.out);
            for i in 0..shape.out {
                let pre = dot(layout.weight_row(params, l, i), &current) + bias[i];
                let act = pre.tanh();
                dtanh.push(act.square().sub_from(1.0));
                next.push(act);
            }
            chain.scale_rows(&dtanh);
        } else {
            for i in 0..shape.out {
                next.push(dot(layout.weight_row(params, l, i), &current) + bias[i]);
            }
        }
        current = next;
    }
    (current, chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{jvp, Dual};
    use crate::oracles::finite_diff_grad;

    fn random_field(seed: u64) -> VelocityField {
        VelocityField::init(VelocitySpec::default_2d(), seed).unwrap()
    }

    #[test]
    fn zero_init_output_evaluates_to_zero() {
        let spec = VelocitySpec { zero_init_output: true, ..VelocitySpec::default_2d() };
        let field = VelocityField::init(spec, 42).unwrap();
        for z in [[5.0, -3.0], [0.0, 0.0], [100.0, 7.0]] {
            assert_eq!(field.eval(&z, None).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = random_field(7);
        let b = random_field(7);
        let c = random_field(8);
        assert_eq!(a.params.values, b.params.values);
        assert_ne!(a.params.values, c.params.values);
    }

    #[test]
    fn zero_width_layer_rejected() {
        let spec = VelocitySpec { hidden: vec![2, 0], ..VelocitySpec::default_2d() };
        assert!(VelocityField::init(spec, 1).is_err());
    }

    #[test]
    fn linear_field_matches_matrix_multiply() {
        let a = Mat::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]);
        let field = VelocityField::linear(&a, &[0.0, 0.0]);
        let v = field.eval(&[1.0, 0.0], None).unwrap();
        assert_eq!(v, vec![0.0, 1.0]);
    }

    #[test]
    fn eval_is_pure() {
        let field = random_field(3);
        let z = [0.37, -1.2];
        let a = field.eval(&z, None).unwrap();
        let b = field.eval(&z, None).unwrap();
        assert_eq!(a, b); // bitwise
    }

    #[test]
    fn context_arity_is_enforced() {
        let field = random_field(1);
        assert!(field.eval(&[0.0, 0.0], Some(&[1.0])).is_err());
        let spec = VelocitySpec { context_dim: 1, ..VelocitySpec::default_2d() };
        let cond = VelocityField::init(spec, 1).unwrap();
        assert!(cond.eval(&[0.0, 0.0], None).is_err());
        assert!(cond.eval(&[0.0, 0.0], Some(&[1.0, 2.0])).is_err());
        assert!(cond.eval(&[0.0, 0.0], Some(&[1.0])).is_ok());
    }

    #[test]
    fn jacobian_of_zero_field_is_zero() {
        let spec = VelocitySpec { zero_init_output: true, ..VelocitySpec::default_2d() };
        let field = VelocityField::init(spec, 4).unwrap();
        let j = field.jacobian(&[1.0, 2.0], None).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(j.at(i, k), 0.0);
            }
        }
    }

    #[test]
    fn jacobian_of_linear_field_is_the_matrix() {
        let a = Mat::from_rows(vec![vec![0.0, -1.0], vec![1.0, 0.0]]);
        let field = VelocityField::linear(&a, &[0.3, -0.7]);
        let j = field.jacobian(&[2.0, 5.0], None).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(j.at(i, k), a.at(i, k));
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let field = random_field(12);
        let z = [0.45, -0.8];
        let j = field.jacobian(&z, None).unwrap();
        for col in 0..2 {
            let fd = finite_diff_grad(
                |zz| field.eval(zz, None).unwrap()[col],
                &z,
                1e-6,
            );
            // fd here is the gradient of output component `col`: row `col` of J
            for row_entry in 0..2 {
                let exact = j.at(col, row_entry);
                let approx = fd[row_entry];
                let denom = approx.abs().max(1e-3);
                assert!(
                    (exact - approx).abs() / denom <= 1e-5,
                    "J[{col},{row_entry}] {exact} vs fd {approx}"
                );
            }
        }
    }

    #[test]
    fn jacobian_vector_product_consistent_with_jvp() {
        let field = random_field(77);
        let z = [0.9, 0.1];
        let w = [0.6, -1.4];
        let j = field.jacobian(&z, None).unwrap();
        let jw = j.matvec(&w);
        let spec = field.spec.clone();
        let layout = field.params.layout.clone();
        let params = field.params.values.clone();
        let via_jvp = jvp(
            |zd| {
                let p: Vec<Dual<f64>> = params.iter().map(|&v| Dual::constant(v)).collect();
                Ok(eval_with(&spec, &layout, &p, zd, None))
            },
            &z,
            &w,
        )
        .unwrap();
        for i in 0..2 {
            assert!((jw[i] - via_jvp[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn magnitude_bound_holds() {
        let field = random_field(5);
        let bound = field.magnitude_bound().unwrap();
        let mut rng = crate::rng::Rng::new(88);
        for _ in 0..200 {
            let z = [rng.uniform_in(-50.0, 50.0), rng.uniform_in(-50.0, 50.0)];
            let v = field.eval(&z, None).unwrap();
            let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!(norm <= bound + 1e-12, "norm {norm} exceeds bound {bound}");
        }
        // purely linear fields are unbounded
        let linear = VelocityField::linear(&Mat::identity(2), &[0.0, 0.0]);
        assert!(linear.magnitude_bound().is_none());
    }

    #[test]
    fn context_columns_feed_the_input_layer() {
        let spec = VelocitySpec { context_dim: 1, ..VelocitySpec::default_2d() };
        let field = VelocityField::init(spec, 21).unwrap();
        let z = [0.2, -0.4];
        let a = field.eval(&z, Some(&[0.0])).unwrap();
        let b = field.eval(&z, Some(&[1.5])).unwrap();
        assert_ne!(a, b);
    }
}
