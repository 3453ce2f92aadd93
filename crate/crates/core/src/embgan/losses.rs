use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lit, Graph, Real, Tensor, Var};

use super::nets::Generator;

/// Adversarial objective family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    /// `E log D(real) + E log(1 − D(fake))`, generator minimizes `E log(1 − D(fake))`.
    #[default]
    Log,
    /// As `Log` for the discriminator; generator minimizes `−E log D(fake)`.
    NonSaturating,
    /// Squared distance of the scores to 1 (real) and 0 (fake).
    LeastSquares,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
    pub lambda_emb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            lambda_idt: 5.0,
            lambda_emb: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_idt", self.lambda_idt),
            ("lambda_emb", self.lambda_emb),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Every loss component of one training step.
///
/// `d1`/`d2` are the discriminator objectives (maximized); the rest are
/// minimized by the generators. `1` is the X→Y direction (G1, D1 judging Y).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub d1: f64,
    pub d2: f64,
    pub g1: f64,
    pub g2: f64,
    pub cyc1: f64,
    pub cyc2: f64,
    pub idt: f64,
    pub emb: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("d1", self.d1),
            ("d2", self.d2),
            ("g1", self.g1),
            ("g2", self.g2),
            ("cyc1", self.cyc1),
            ("cyc2", self.cyc2),
            ("idt", self.idt),
            ("emb", self.emb),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.named().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite {
                component: format!("{name} = {v}"),
            }),
            None => Ok(()),
        }
    }
}

/// `(g_total, d_total)`: `Σ_j (g_j + λ_cyc·cyc_j) + λ_idt·idt + λ_emb·emb` and `d1 + d2`.
pub fn total_objective(c: &LossComponents, w: &LossWeights) -> Result<(f64, f64)> {
    w.validate()?;
    let g = c.g1 + c.g2 + w.lambda_cyc * (c.cyc1 + c.cyc2) + w.lambda_idt * c.idt + w.lambda_emb * c.emb;
    Ok((g, c.d1 + c.d2))
}

fn check_scores<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    match t.data().iter().find(|v| !(**v > T::zero() && **v < T::one())) {
        Some(v) => Err(Error::invalid(format!("{what} score {} outside (0, 1)", v.as_f64()))),
        None => Ok(()),
    }
}

fn mean_of<T: Real>(t: &Tensor<T>, f: impl Fn(f64) -> f64) -> f64 {
    t.data().iter().map(|v| f(v.as_f64())).sum::<f64>() / t.len() as f64
}

/// Log-form objectives from discriminator scores:
/// `(mean ln real + mean ln(1 − fake), mean ln(1 − fake))`.
pub fn adversarial_loss<T: Real>(real_scores: &Tensor<T>, fake_scores: &Tensor<T>) -> Result<(f64, f64)> {
    check_scores(real_scores, "real")?;
    check_scores(fake_scores, "fake")?;
    let fake_term = mean_of(fake_scores, |s| (-s).ln_1p());
    Ok((mean_of(real_scores, f64::ln) + fake_term, fake_term))
}

/// Discriminator objective (to be maximized) from logit maps.
pub fn d_objective<T: Real>(g: &mut Graph<T>, real_logits: Var, fake_logits: Var, kind: GanLoss) -> Result<Var> {
    match kind {
        GanLoss::Log | GanLoss::NonSaturating => {
            // ln σ(l) = −softplus(−l), ln(1 − σ(l)) = −softplus(l)
            let nr = g.scale(real_logits, lit(-1.0));
            let a = g.softplus(nr);
            let a = g.mean(a);
            let b = g.softplus(fake_logits);
            let b = g.mean(b);
            let s = g.add(a, b)?;
            Ok(g.scale(s, lit(-1.0)))
        }
        GanLoss::LeastSquares => {
            let r = g.sigmoid(real_logits);
            let r = g.add_scalar(r, lit(-1.0));
            let r = g.square(r);
            let r = g.mean(r);
            let f = g.sigmoid(fake_logits);
            let f = g.square(f);
            let f = g.mean(f);
            let s = g.add(r, f)?;
            Ok(g.scale(s, lit(-1.0)))
        }
    }
}

/// Generator adversarial objective (to be minimized) from the fake logit map.
pub fn g_objective<T: Real>(g: &mut Graph<T>, fake_logits: Var, kind: GanLoss) -> Var {
    match kind {
        GanLoss::Log => {
            let b = g.softplus(fake_logits);
            let b = g.mean(b);
            g.scale(b, lit(-1.0))
        }
        GanLoss::NonSaturating => {
            let n = g.scale(fake_logits, lit(-1.0));
            let a = g.softplus(n);
            g.mean(a)
        }
        GanLoss::LeastSquares => {
            let f = g.sigmoid(fake_logits);
            let f = g.add_scalar(f, lit(-1.0));
            let f = g.square(f);
            g.mean(f)
        }
    }
}

fn batch_mean_l1<T: Real>(a: &[Tensor<T>], b: &[Tensor<T>], what: &str) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("{what}: batches of {} and {} images", a.len(), b.len())));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.shape() != y.shape() {
            return Err(Error::shape(format!("{what}: {:?} vs {:?}", x.shape(), y.shape())));
        }
        total += x.data().iter().zip(y.data()).map(|(p, q)| (p.as_f64() - q.as_f64()).abs()).sum::<f64>()
            / x.len() as f64;
    }
    Ok(total / a.len() as f64)
}

/// Mean absolute difference over batch and pixels.
pub fn cycle_loss<T: Real>(original: &[Tensor<T>], reconstructed: &[Tensor<T>]) -> Result<f64> {
    batch_mean_l1(original, reconstructed, "cycle loss")
}

/// Appends `k` zero planes to a `c × h × w` tensor.
pub fn with_embedding<T: Real>(image: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected a CHW image, got {s:?}")));
    }
    let mut data = image.data().to_vec();
    data.resize(data.len() + k * s[1] * s[2], T::zero());
    Tensor::from_vec(&[s[0] + k, s[1], s[2]], data)
}

/// The first `c` channels of a `(c + k) × h × w` generator output.
pub fn image_channels<T: Real>(t: &Tensor<T>, c: usize) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_vec(&[c, s[1], s[2]], t.data()[..c * s[1] * s[2]].to_vec()).expect("slice of a valid tensor")
}

/// The trailing embedding channels of a generator output.
pub fn embedding_channels<T: Real>(t: &Tensor<T>, c: usize) -> Option<Tensor<T>> {
    let s = t.shape();
    let start = c * s[1] * s[2];
    (s[0] > c).then(|| Tensor::from_vec(&[s[0] - c, s[1], s[2]], t.data()[start..].to_vec()).expect("slice of a valid tensor"))
}

/// `mean|G2(x) − x| + mean|G1(y) − y|` on image channels.
pub fn identity_loss<T: Real>(g1: &Generator<T>, g2: &Generator<T>, x: &[Tensor<T>], y: &[Tensor<T>]) -> Result<f64> {
    let run = |gen: &Generator<T>, batch: &[Tensor<T>]| -> Result<Vec<Tensor<T>>> {
        batch
            .iter()
            .map(|img| {
                let out = gen.apply(&with_embedding(img, gen.config.embed_channels)?)?;
                Ok(image_channels(&out, gen.config.channels))
            })
            .collect()
    };
    identity_terms(&run(g2, x)?, x, &run(g1, y)?, y)
}

/// Identity loss from precomputed generator outputs `G2(x)` and `G1(y)`.
pub fn identity_terms<T: Real>(g2_x: &[Tensor<T>], x: &[Tensor<T>], g1_y: &[Tensor<T>], y: &[Tensor<T>]) -> Result<f64> {
    Ok(batch_mean_l1(g2_x, x, "identity loss")? + batch_mean_l1(g1_y, y, "identity loss")?)
}

/// Mean absolute embedding value per generator, summed over both generators.
pub fn embedding_loss<T: Real>(fake_y_embedding: &[Tensor<T>], fake_x_embedding: &[Tensor<T>]) -> f64 {
    let side = |b: &[Tensor<T>]| {
        if b.is_empty() {
            return 0.0;
        }
        b.iter().map(|t| mean_of(t, f64::abs)).sum::<f64>() / b.len() as f64
    };
    side(fake_y_embedding) + side(fake_x_embedding)
}
