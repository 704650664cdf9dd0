use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Element, Graph, Var};

/// Norm of the reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecNorm {
    #[default]
    L1,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the uncertainty term in the total loss.
    pub lambda: f64,
    /// Weight of the attenuated residual inside the aleatoric term.
    pub alpha_w: f64,
    /// Weight of the uncertainty penalty inside the aleatoric term.
    pub beta_w: f64,
    pub rec_norm: RecNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            alpha_w: 1.0,
            beta_w: 0.5,
            rec_norm: RecNorm::L1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("alpha_w", self.alpha_w), ("beta_w", self.beta_w)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("loss weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn co_shaped<T: Element>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// Mean squared error between predicted and injected noise.
pub fn diffusion_loss<T: Element>(g: &mut Graph<T>, eps_hat: Var, eps: Var) -> Result<Var> {
    co_shaped(g, eps_hat, eps, "diffusion loss")?;
    let d = g.sub(eps_hat, eps)?;
    let sq = g.square(d);
    Ok(g.mean_all(sq))
}

/// Mean absolute (or squared) error.
pub fn rec_loss<T: Element>(g: &mut Graph<T>, target: Var, output: Var, norm: RecNorm) -> Result<Var> {
    co_shaped(g, target, output, "reconstruction loss")?;
    let d = g.sub(target, output)?;
    let r = match norm {
        RecNorm::L1 => g.abs(d),
        RecNorm::Mse => g.square(d),
    };
    Ok(g.mean_all(r))
}

/// `mean(α·exp(−U_A)·(I − J_a)² + β·U_A)`; a single-channel `U_A` is shared
/// across the image channels.
pub fn au_loss<T: Element>(g: &mut Graph<T>, input: Var, j_a: Var, u_a: Var, w: &LossWeights) -> Result<Var> {
    co_shaped(g, input, j_a, "aleatoric loss")?;
    let [n, _, h, wd] = g.shape(input);
    let [un, uc, uh, uw] = g.shape(u_a);
    if (un, uh, uw) != (n, h, wd) || (uc != 1 && uc != g.shape(input)[1]) {
        return Err(Error::shape(format!(
            "aleatoric map {:?} for image {:?}",
            g.shape(u_a),
            g.shape(input)
        )));
    }
    let d = g.sub(input, j_a)?;
    let r = g.square(d);
    let neg = g.scale(u_a, -T::one());
    let att = g.exp(neg);
    let term = g.mul(att, r)?;
    let term = g.mean_all(term);
    let term = g.scale(term, T::lit(w.alpha_w));
    let pen = g.mean_all(u_a);
    let pen = g.scale(pen, T::lit(w.beta_w));
    g.add(term, pen)
}

/// `L1(J, J_a) + au`.
pub fn un_loss<T: Element>(g: &mut Graph<T>, clean: Var, j_a: Var, au: Var) -> Result<Var> {
    let l1 = rec_loss(g, clean, j_a, RecNorm::L1)?;
    g.add(l1, au)
}

/// `rec + λ·un`.
pub fn total_loss<T: Element>(g: &mut Graph<T>, rec: Var, un: Var, lambda: f64) -> Result<Var> {
    let s = g.scale(un, T::lit(lambda));
    g.add(rec, s)
}
