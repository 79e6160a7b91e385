//! Fidelity terms recorded on a [`Tape`]: least squares, back-projection and
//! the projected GSURE with a Monte-Carlo divergence. Each loss computes its
//! value and its gradient with respect to the network output in closed form
//! and records a single scalar node.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::{dot, Image};
use crate::linop::SpectralOperator;

/// Default finite-difference step of the divergence estimate (display scale).
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Random direction `g` and step `epsilon` of the Monte-Carlo divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct GsureProbe {
    g: Vec<f64>,
    epsilon: f64,
}

impl GsureProbe {
    pub fn new(g: Vec<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "probe step must be positive, got {epsilon}"
            )));
        }
        Ok(Self { g, epsilon })
    }

    /// Draws `len` i.i.d. standard normal samples.
    pub fn draw(rng: &mut impl Rng, len: usize, epsilon: f64) -> Result<Self> {
        let g = (0..len)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self::new(g, epsilon)
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `u + epsilon * g`.
    pub fn perturb(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.g.len() {
            return Err(Error::shape(
                format!("{} probe samples", self.g.len()),
                format!("{} input samples", u.len()),
            ));
        }
        Ok(u.iter()
            .zip(&self.g)
            .map(|(a, b)| a + self.epsilon * b)
            .collect())
    }

    /// `u - epsilon * g`, the mirrored half of a paired probe.
    pub fn perturb_negative(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.perturb(u)?;
        for (o, (a, b)) in out.iter_mut().zip(u.iter().zip(&self.g)) {
            *o = a - self.epsilon * b;
        }
        Ok(out)
    }
}

/// Values of the three GSURE terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GsureTerms {
    /// `||P_H f||^2`
    pub projection: f64,
    /// `-2 f^T H^+ y`
    pub cross: f64,
    /// Monte-Carlo estimate of `2 div(P_H f)`.
    pub divergence: f64,
}

impl GsureTerms {
    pub fn total(&self) -> f64 {
        self.projection + self.cross + self.divergence
    }
}

fn check_hr(tape: &Tape, op: &SpectralOperator, v: Var, what: &str) -> Result<usize> {
    let (c, h, w) = tape.value(v).chw()?;
    if (h, w) != op.hr_shape() {
        return Err(Error::shape(
            format!("{what} on a {}x{} grid", op.hr_shape().1, op.hr_shape().0),
            format!("{c}x{h}x{w} tensor"),
        ));
    }
    Ok(c)
}

fn check_y(op: &SpectralOperator, y: &Image, channels: usize) -> Result<()> {
    let (r, c) = op.lr_shape();
    if y.plane_shape() != (r, c) || y.channels() != channels {
        return Err(Error::shape(
            format!("{c}x{r}x{channels} observation"),
            y.shape_string(),
        ));
    }
    Ok(())
}

fn residual(op: &SpectralOperator, x: &[f64], y: &Image) -> Result<Vec<f64>> {
    let hx = op.h(x)?;
    Ok(y.data().iter().zip(&hx).map(|(a, b)| a - b).collect())
}

/// `||y - H x||^2`.
pub fn ls_loss(tape: &mut Tape, op: &SpectralOperator, x: Var, y: &Image) -> Result<Var> {
    let c = check_hr(tape, op, x, "estimate")?;
    check_y(op, y, c)?;
    let r = residual(op, tape.value(x).data(), y)?;
    let value = dot(&r, &r);
    let grad = op.ht(&r)?.into_iter().map(|v| -2.0 * v).collect();
    tape.scalar_fn(value, vec![(x, grad)])
}

/// `||H^+ (y - H x)||^2`.
pub fn bp_loss(tape: &mut Tape, op: &SpectralOperator, x: Var, y: &Image) -> Result<Var> {
    let c = check_hr(tape, op, x, "estimate")?;
    check_y(op, y, c)?;
    let r = residual(op, tape.value(x).data(), y)?;
    let p = op.pinv(&r)?;
    let value = dot(&p, &p);
    let grad = op
        .ht(&op.pinv_t(&p)?)?
        .into_iter()
        .map(|v| -2.0 * v)
        .collect();
    tape.scalar_fn(value, vec![(x, grad)])
}

/// Projection and cross terms plus their gradient with respect to `f`.
fn fit_terms(op: &SpectralOperator, f: &[f64], y: &Image) -> Result<(f64, f64, Vec<f64>)> {
    let pf = op.ph(f)?;
    let hy = op.pinv(y.data())?;
    let projection = dot(&pf, &pf);
    let cross = -2.0 * dot(f, &hy);
    let grad = pf.iter().zip(&hy).map(|(p, h)| 2.0 * p - 2.0 * h).collect();
    Ok((projection, cross, grad))
}

/// `||P_H f||^2 - 2 f^T H^+ y`: the GSURE objective without its divergence.
pub fn gsure_fit_loss(tape: &mut Tape, op: &SpectralOperator, f_u: Var, y: &Image) -> Result<Var> {
    let c = check_hr(tape, op, f_u, "network output")?;
    check_y(op, y, c)?;
    let (projection, cross, grad) = fit_terms(op, tape.value(f_u).data(), y)?;
    tape.scalar_fn(projection + cross, vec![(f_u, grad)])
}

/// Shared body of the single and paired estimators. `parts` lists the
/// evaluations entering `g^T P_H (sum_k w_k f_k)` with their weights.
fn gsure_with_divergence(
    tape: &mut Tape,
    op: &SpectralOperator,
    f_u: Var,
    parts: &[(Var, f64)],
    y: &Image,
    probe: &GsureProbe,
) -> Result<(Var, GsureTerms)> {
    let c = check_hr(tape, op, f_u, "network output")?;
    for &(v, _) in parts {
        if tape.value(v).shape() != tape.value(f_u).shape() {
            return Err(Error::shape(
                format!("{:?} perturbed output", tape.value(f_u).shape()),
                format!("{:?}", tape.value(v).shape()),
            ));
        }
    }
    check_y(op, y, c)?;
    if probe.g().len() != tape.value(f_u).len() {
        return Err(Error::shape(
            format!("probe of {} samples", tape.value(f_u).len()),
            format!("{} samples", probe.g().len()),
        ));
    }
    let (projection, cross, grad_f) = fit_terms(op, tape.value(f_u).data(), y)?;
    let pg = op.ph(probe.g())?;
    let scale = 2.0 / probe.epsilon();
    let mut divergence = 0.0;
    let mut parents = vec![(f_u, grad_f)];
    for &(v, w) in parts {
        divergence += w * scale * dot(&pg, tape.value(v).data());
        let g: Vec<f64> = pg.iter().map(|p| w * scale * p).collect();
        if let Some(slot) = parents.iter_mut().find(|(pv, _)| *pv == v) {
            slot.1.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        } else {
            parents.push((v, g));
        }
    }
    let terms = GsureTerms {
        projection,
        cross,
        divergence,
    };
    let var = tape.scalar_fn(terms.total(), parents)?;
    Ok((var, terms))
}

/// `||P_H f(u)||^2 - 2 f(u)^T H^+ y + 2 g^T P_H (f(u + eps g) - f(u)) / eps`.
///
/// `f_u` and `f_perturbed` must come from the same parameters; the gradient
/// flows through both evaluations.
pub fn gsure_loss(
    tape: &mut Tape,
    op: &SpectralOperator,
    f_u: Var,
    f_perturbed: Var,
    y: &Image,
    probe: &GsureProbe,
) -> Result<(Var, GsureTerms)> {
    gsure_with_divergence(tape, op, f_u, &[(f_perturbed, 1.0), (f_u, -1.0)], y, probe)
}

/// Paired-probe variant: averages the estimates for `g` and `-g`, which
/// reduces to the central difference `g^T P_H (f(u + eps g) - f(u - eps g)) / eps`.
pub fn gsure_loss_paired(
    tape: &mut Tape,
    op: &SpectralOperator,
    f_u: Var,
    f_plus: Var,
    f_minus: Var,
    y: &Image,
    probe: &GsureProbe,
) -> Result<(Var, GsureTerms)> {
    gsure_with_divergence(tape, op, f_u, &[(f_plus, 0.5), (f_minus, -0.5)], y, probe)
}

/// `||P_H x_hat - P_H x_true||^2` for evaluation against ground truth.
pub fn projected_mse(op: &SpectralOperator, x_hat: &Image, x_true: &Image) -> Result<f64> {
    x_hat.check_same_shape(x_true)?;
    let d: Vec<f64> = x_hat
        .data()
        .iter()
        .zip(x_true.data())
        .map(|(a, b)| a - b)
        .collect();
    let pd = op.apply_ph(&x_hat.with_data(d)?)?;
    Ok(pd.norm_sq())
}
