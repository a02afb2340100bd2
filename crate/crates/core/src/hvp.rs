//! Hessian-vector products and the third-order form `vᵀ∇H(w)v`.
//!
//! Both come from pushing a directional derivative `R{·}` (and its second
//! application `RR{·}`) through the forward and backward passes of
//! [`crate::net`]. A single fused traversal carries `x, R{x}, RR{x}` forward
//! and `∂E/∂·, R{∂E/∂·}, RR{∂E/∂·}` backward. The direction `v` is a
//! constant of the pass, so no `R{v}` terms appear. Storage is a handful of
//! `batch × width` buffers per layer; no `n × n` object is ever built.

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::net::{batch_loss, backward, LossKind, Network};

/// Anything that exposes `f(w)`, `∇f(w)`, `H(w)v` and `vᵀ∇H(w)v`.
pub trait ObjectiveModel {
    fn dim(&self) -> usize;

    fn value(&self, w: &[f64]) -> Result<f64>;

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>>;

    fn hvp(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// Gradient in `w` of the scalar `vᵀH(w)v`.
    fn third_form(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// `f(w)` and `∇f(w)` together; objectives that share work override it.
    fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(w)?, self.gradient(w)?))
    }
}

fn check_dims<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], v: &[f64]) -> Result<()> {
    let n = obj.dim();
    if w.len() != n {
        return Err(Error::shape("weights", n, w.len()));
    }
    if v.len() != n {
        return Err(Error::shape("direction", n, v.len()));
    }
    Ok(())
}

/// `H(w)·v`, exact up to rounding.
pub fn hessian_vector_product<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dims(obj, w, v)?;
    if norm(v) == 0.0 {
        return Err(Error::Validation("direction must be non-zero".into()));
    }
    obj.hvp(w, v)
}

/// `vᵀ∇H(w)v`, the gradient of `vᵀH(w)v` with respect to `w`.
pub fn third_order_form<O: ObjectiveModel + ?Sized>(obj: &O, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dims(obj, w, v)?;
    if norm(v) == 0.0 {
        return Err(Error::Validation("direction must be non-zero".into()));
    }
    obj.third_form(w, v)
}

/// Per-layer `R{x}, R{y}, RR{x}, RR{y}` for one batch and one direction.
#[derive(Clone, Debug)]
pub struct DirectionalTrace {
    pub r_pre: Vec<Matrix>,
    pub r_post: Vec<Matrix>,
    pub rr_pre: Vec<Matrix>,
    pub rr_post: Vec<Matrix>,
}

impl DirectionalTrace {
    /// Number of stored scalars; `4 × batch × Σ widths`.
    pub fn stored_values(&self) -> usize {
        [&self.r_pre, &self.r_post, &self.rr_pre, &self.rr_post]
            .iter()
            .flat_map(|bufs| bufs.iter())
            .map(|m| m.rows() * m.cols())
            .sum()
    }
}

/// Result of one fused pass.
#[derive(Clone, Debug)]
pub struct DirectionalPass {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// `R{∇f} = H v`
    pub hvp: Vec<f64>,
    /// `RR{∇f} = vᵀ∇H v`, present when requested.
    pub third_form: Option<Vec<f64>>,
    pub trace: DirectionalTrace,
}

/// Mutations used by the validation harness to prove the checks bite.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Flips the sign of the `2 R{x} σ″ R{∂E/∂y}` term in the RR backward pass.
    FlipRrBackwardSign,
}

/// Runs the fused R / RR forward and backward passes.
///
/// `direction` has the same flattened layout as the network parameters and
/// covers both weights and post-activation biases.
pub fn directional_pass(
    net: &Network,
    input: &Matrix,
    target: &Matrix,
    loss: LossKind,
    direction: &[f64],
    second_order: bool,
) -> Result<DirectionalPass> {
    directional_pass_with(net, input, target, loss, direction, second_order, Fault::None)
}

#[doc(hidden)]
pub fn directional_pass_with(
    net: &Network,
    input: &Matrix,
    target: &Matrix,
    loss: LossKind,
    direction: &[f64],
    second_order: bool,
    fault: Fault,
) -> Result<DirectionalPass> {
    net.check_input(input)?;
    let n = net.num_params();
    if direction.len() != n {
        return Err(Error::shape("direction", n, direction.len()));
    }
    if target.rows() != input.rows() || target.cols() != net.output_dim() {
        return Err(Error::shape(
            "target",
            input.rows() * net.output_dim(),
            target.rows() * target.cols(),
        ));
    }
    let dir = net.with_params(direction)?;
    let layers = net.layers();
    let dlayers = dir.layers();
    let batch = input.rows();
    let nl = layers.len();

    // Forward.
    let mut pre = Vec::with_capacity(nl);
    let mut post: Vec<Matrix> = Vec::with_capacity(nl);
    let mut trace = DirectionalTrace {
        r_pre: Vec::with_capacity(nl),
        r_post: Vec::with_capacity(nl),
        rr_pre: Vec::with_capacity(nl),
        rr_post: Vec::with_capacity(nl),
    };
    for li in 0..nl {
        let (layer, dl) = (&layers[li], &dlayers[li]);
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
        let a = if li == 0 { input } else { &post[li - 1] };
        let ra = if li == 0 { None } else { Some(&trace.r_post[li - 1]) };
        let rra = if li == 0 || !second_order {
            None
        } else {
            Some(&trace.rr_post[li - 1])
        };
        let w = layer.weights();
        let v = dl.weights();
        let mut x = Matrix::zeros(batch, fan_out);
        let mut y = Matrix::zeros(batch, fan_out);
        let mut rx = Matrix::zeros(batch, fan_out);
        let mut ry = Matrix::zeros(batch, fan_out);
        let (mut rrx, mut rry) = if second_order {
            (Matrix::zeros(batch, fan_out), Matrix::zeros(batch, fan_out))
        } else {
            (Matrix::zeros(0, 0), Matrix::zeros(0, 0))
        };
        for b in 0..batch {
            let ab = a.row(b);
            for k in 0..fan_out {
                let wk = w.row(k);
                let vk = v.row(k);
                let mut xk = 0.0;
                let mut rxk = 0.0;
                for j in 0..fan_in {
                    xk += wk[j] * ab[j];
                    rxk += vk[j] * ab[j];
                }
                let mut rrxk = 0.0;
                if let Some(ra) = ra {
                    let rab = ra.row(b);
                    for j in 0..fan_in {
                        rxk += wk[j] * rab[j];
                    }
                    if second_order {
                        for j in 0..fan_in {
                            rrxk += 2.0 * vk[j] * rab[j];
                        }
                    }
                }
                if let Some(rra) = rra {
                    let rrab = rra.row(b);
                    for j in 0..fan_in {
                        rrxk += wk[j] * rrab[j];
                    }
                }
                let [s0, s1, s2, _] = layer.activation().derivs(xk);
                x[(b, k)] = xk;
                y[(b, k)] = s0 + layer.bias()[k];
                rx[(b, k)] = rxk;
                ry[(b, k)] = s1 * rxk + dl.bias()[k];
                if second_order {
                    rrx[(b, k)] = rrxk;
                    rry[(b, k)] = s1 * rrxk + s2 * rxk * rxk;
                }
            }
        }
        if !y.all_finite() || !ry.all_finite() || !rry.all_finite() {
            return Err(Error::Numerical {
                layer: li,
                quantity: "forward directional derivative",
            });
        }
        pre.push(x);
        post.push(y);
        trace.r_pre.push(rx);
        trace.r_post.push(ry);
        if second_order {
            trace.rr_pre.push(rrx);
            trace.rr_post.push(rry);
        }
    }

    // Backward.
    let out = &post[nl - 1];
    let m = out.cols();
    let scale = 1.0 / (batch * m) as f64;
    let mut loss_value = 0.0;
    let mut gy = Matrix::zeros(batch, m);
    let mut rgy = Matrix::zeros(batch, m);
    let mut rrgy = if second_order {
        Matrix::zeros(batch, m)
    } else {
        Matrix::zeros(0, 0)
    };
    for b in 0..batch {
        for k in 0..m {
            let [e0, e1, e2, e3] = loss.elem(out[(b, k)], target[(b, k)]);
            loss_value += e0;
            let ry = trace.r_post[nl - 1][(b, k)];
            gy[(b, k)] = scale * e1;
            rgy[(b, k)] = scale * e2 * ry;
            if second_order {
                let rry = trace.rr_post[nl - 1][(b, k)];
                rrgy[(b, k)] = scale * (e3 * ry * ry + e2 * rry);
            }
        }
    }
    loss_value *= scale;

    let offsets = net.param_offsets();
    let mut grad = vec![0.0; n];
    let mut hv = vec![0.0; n];
    let mut third = if second_order { vec![0.0; n] } else { Vec::new() };
    let fault_sign = if fault == Fault::FlipRrBackwardSign { -1.0 } else { 1.0 };

    for li in (0..nl).rev() {
        let (layer, dl) = (&layers[li], &dlayers[li]);
        let (fan_out, fan_in) = (layer.fan_out(), layer.fan_in());
        let a = if li == 0 { input } else { &post[li - 1] };
        let ra = if li == 0 { None } else { Some(&trace.r_post[li - 1]) };
        let rra = if li == 0 || !second_order {
            None
        } else {
            Some(&trace.rr_post[li - 1])
        };
        let x = &pre[li];
        let rx = &trace.r_pre[li];
        let nw = fan_out * fan_in;
        let off = offsets[li];

        let mut gx = Matrix::zeros(batch, fan_out);
        let mut rgx = Matrix::zeros(batch, fan_out);
        let mut rrgx = if second_order {
            Matrix::zeros(batch, fan_out)
        } else {
            Matrix::zeros(0, 0)
        };
        for b in 0..batch {
            let ab = a.row(b);
            for k in 0..fan_out {
                let [_, s1, s2, s3] = layer.activation().derivs(x[(b, k)]);
                let (g, rg) = (gy[(b, k)], rgy[(b, k)]);
                let rxk = rx[(b, k)];
                let gxk = s1 * g;
                let rgxk = s1 * rg + s2 * rxk * g;
                gx[(b, k)] = gxk;
                rgx[(b, k)] = rgxk;

                grad[off + nw + k] += g;
                hv[off + nw + k] += rg;
                let row = off + k * fan_in;
                for j in 0..fan_in {
                    grad[row + j] += gxk * ab[j];
                    hv[row + j] += rgxk * ab[j];
                }
                if let Some(ra) = ra {
                    let rab = ra.row(b);
                    for j in 0..fan_in {
                        hv[row + j] += gxk * rab[j];
                    }
                }

                if second_order {
                    let rrg = rrgy[(b, k)];
                    let rrxk = trace.rr_pre[li][(b, k)];
                    let rrgxk = s1 * rrg
                        + fault_sign * 2.0 * s2 * rxk * rg
                        + s2 * rrxk * g
                        + s3 * rxk * rxk * g;
                    rrgx[(b, k)] = rrgxk;
                    third[off + nw + k] += rrg;
                    for j in 0..fan_in {
                        third[row + j] += rrgxk * ab[j];
                    }
                    if let Some(ra) = ra {
                        let rab = ra.row(b);
                        for j in 0..fan_in {
                            third[row + j] += 2.0 * rgxk * rab[j];
                        }
                    }
                    if let Some(rra) = rra {
                        let rrab = rra.row(b);
                        for j in 0..fan_in {
                            third[row + j] += gxk * rrab[j];
                        }
                    }
                }
            }
        }

        if li > 0 {
            let w = layer.weights();
            let v = dl.weights();
            let mut ga = Matrix::zeros(batch, fan_in);
            let mut rga = Matrix::zeros(batch, fan_in);
            let mut rrga = if second_order {
                Matrix::zeros(batch, fan_in)
            } else {
                Matrix::zeros(0, 0)
            };
            for b in 0..batch {
                for k in 0..fan_out {
                    let (g, rg) = (gx[(b, k)], rgx[(b, k)]);
                    let (wk, vk) = (w.row(k), v.row(k));
                    let gar = ga.row_mut(b);
                    for j in 0..fan_in {
                        gar[j] += wk[j] * g;
                    }
                    let rgar = rga.row_mut(b);
                    for j in 0..fan_in {
                        rgar[j] += wk[j] * rg + vk[j] * g;
                    }
                    if second_order {
                        let rrg = rrgx[(b, k)];
                        let rrgar = rrga.row_mut(b);
                        for j in 0..fan_in {
                            rrgar[j] += wk[j] * rrg + 2.0 * vk[j] * rg;
                        }
                    }
                }
            }
            if !rga.all_finite() || !rrga.all_finite() {
                return Err(Error::Numerical {
                    layer: li,
                    quantity: "backward directional derivative",
                });
            }
            gy = ga;
            rgy = rga;
            rrgy = rrga;
        }
    }

    if !hv.iter().all(|v| v.is_finite()) || !third.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical {
            layer: 0,
            quantity: "parameter directional derivative",
        });
    }

    Ok(DirectionalPass {
        loss: loss_value,
        gradient: grad,
        hvp: hv,
        third_form: second_order.then_some(third),
        trace,
    })
}

/// A network architecture bound to a fixed batch: `f(w)` is the mean loss.
#[derive(Clone, Debug)]
pub struct NetObjective {
    template: Network,
    inputs: Matrix,
    targets: Matrix,
    loss: LossKind,
    fault: Fault,
}

impl NetObjective {
    pub fn new(template: Network, inputs: Matrix, targets: Matrix, loss: LossKind) -> Result<Self> {
        template.check_input(&inputs)?;
        if targets.rows() != inputs.rows() || targets.cols() != template.output_dim() {
            return Err(Error::shape(
                "objective targets",
                inputs.rows() * template.output_dim(),
                targets.rows() * targets.cols(),
            ));
        }
        if inputs.rows() == 0 {
            return Err(Error::Validation("objective batch is empty".into()));
        }
        Ok(Self {
            template,
            inputs,
            targets,
            loss,
            fault: Fault::None,
        })
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    pub fn network(&self) -> &Network {
        &self.template
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// The same objective restricted to a subset of rows.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut sub = Self::new(
            self.template.clone(),
            self.inputs.select_rows(rows),
            self.targets.select_rows(rows),
            self.loss,
        )?;
        sub.fault = self.fault;
        Ok(sub)
    }

    fn pass(&self, w: &[f64], v: &[f64], second_order: bool) -> Result<DirectionalPass> {
        let net = self.template.with_params(w)?;
        directional_pass_with(&net, &self.inputs, &self.targets, self.loss, v, second_order, self.fault)
    }
}

impl ObjectiveModel for NetObjective {
    fn dim(&self) -> usize {
        self.template.num_params()
    }

    fn value(&self, w: &[f64]) -> Result<f64> {
        let net = self.template.with_params(w)?;
        let out = net.predict(&self.inputs)?;
        batch_loss(self.loss, &out, &self.targets)
    }

    fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_gradient(w)?.1)
    }

    fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let net = self.template.with_params(w)?;
        let trace = net.forward(&self.inputs)?;
        let f = batch_loss(self.loss, trace.output(), &self.targets)?;
        let g = backward(&net, &trace, self.loss, &self.targets)?;
        Ok((f, g))
    }

    fn hvp(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.pass(w, v, false)?.hvp)
    }

    fn third_form(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .pass(w, v, true)?
            .third_form
            .expect("second-order pass requested"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> (NetObjective, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = [LayerSpec::new(3, Activation::Tanh), LayerSpec::new(1, Activation::Tanh)];
        let net = Network::init(2, &specs, &mut rng).unwrap();
        let x = Matrix::from_vec(5, 2, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let t = Matrix::from_vec(5, 1, (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = net.params();
        (NetObjective::new(net, x, t, LossKind::MeanSquaredError).unwrap(), w)
    }

    #[test]
    fn pass_gradient_matches_backward() {
        let (obj, w) = tiny(1);
        let v = vec![0.3; obj.dim()];
        let pass = obj.pass(&w, &v, true).unwrap();
        let g = obj.gradient(&w).unwrap();
        for (a, b) in pass.gradient.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn trace_storage_is_linear_in_layer_widths() {
        let (obj, w) = tiny(2);
        let v = vec![1.0; obj.dim()];
        let pass = obj.pass(&w, &v, true).unwrap();
        // batch 5, widths 3 + 1, four buffers
        assert_eq!(pass.trace.stored_values(), 4 * 5 * (3 + 1));
        let pass = obj.pass(&w, &v, false).unwrap();
        assert_eq!(pass.trace.stored_values(), 2 * 5 * (3 + 1));
        assert!(pass.third_form.is_none());
    }

    #[test]
    fn zero_direction_rejected() {
        let (obj, w) = tiny(3);
        let v = vec![0.0; obj.dim()];
        assert!(hessian_vector_product(&obj, &w, &v).is_err());
        assert!(third_order_form(&obj, &w, &v).is_err());
    }

    #[test]
    fn wrong_direction_length_is_shape_error() {
        let (obj, w) = tiny(4);
        let err = hessian_vector_product(&obj, &w, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn overflow_reports_layer() {
        let (obj, w) = tiny(5);
        let huge: Vec<f64> = w.iter().map(|_| 1e300).collect();
        let err = obj.hvp(&huge, &vec![1e300; obj.dim()]).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }), "{err:?}");
    }
}
