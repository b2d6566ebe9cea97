//! Objective terms. Every term is built on a caller-owned [`Graph`] so
//! that composite objectives share forward passes and a single reverse
//! pass serves all of them.
//!
//! Sampling noise is keyed by `(seed, term, domain)` rather than by call
//! order, so a term evaluated alone sees exactly the noise it sees inside
//! [`total_objective`].

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::{Domain, ModelBundle};
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// Probability clamp applied before every GAN logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
    pub lambda7: f64,
    pub lambda8: f64,
    /// Feature-matching weight while the depth model trains.
    pub fm_weight_phase2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda0: 0.1,
            lambda1: 100.0,
            lambda2: 0.1,
            lambda3: 100.0,
            lambda4: 10.0,
            lambda5: 100.0,
            lambda6: 10_000.0,
            lambda7: 10.0,
            lambda8: 1.0,
            fm_weight_phase2: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda0: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            lambda6: 0.0,
            lambda7: 0.0,
            lambda8: 0.0,
            fm_weight_phase2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda0,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
            self.lambda6,
            self.lambda7,
            self.lambda8,
            self.fm_weight_phase2,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and non-negative".into()))
        }
    }
}

/// One training batch in normalized units.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    /// `[N, 1, H, W]` synthetic images.
    pub x_s: Tensor<S>,
    /// `[N, 3J]` poses paired with `x_s`.
    pub y_s: Tensor<S>,
    /// `[N, 1, H, W]` real images; labels unseen.
    pub x_r: Tensor<S>,
    /// Labeled real pairs drawn through the label mask.
    pub labeled: Option<(Tensor<S>, Tensor<S>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// Encoders, decoders, mapping and posterior.
    Min,
    /// Discriminators.
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Term {
    Pose = 1,
    Depth = 2,
    Cycle = 3,
    Map = 4,
}

/// Reparameterization noise. `None` evaluates every latent at its mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Noise {
    seed: Option<u64>,
}

impl Noise {
    pub const OFF: Noise = Noise { seed: None };

    pub fn seeded(seed: u64) -> Self {
        Noise { seed: Some(seed) }
    }

    fn perturb<S: Real>(&self, g: &mut Graph<'_, S>, mu: Var, std: Option<Var>, term: Term, domain: u64) -> Var {
        let Some(seed) = self.seed else { return mu };
        let mut r = rng::stream(seed, &[rng::tag::LATENT, term as u64, domain]);
        let mut eps = Tensor::<S>::zeros(g.shape(mu));
        rng::fill_normal(&mut r, eps.data_mut());
        let e = g.input(eps);
        let e = match std {
            Some(s) => g.mul(e, s),
            None => e,
        };
        g.add(mu, e)
    }
}

fn dom_key(d: Domain) -> u64 {
    match d {
        Domain::Synthetic => 0,
        Domain::Real => 1,
    }
}

/// Scalar zero that participates in the graph.
pub fn zero<S: Real>(g: &mut Graph<'_, S>) -> Var {
    g.input(Tensor::scalar(S::ZERO))
}

fn weighted_sum<S: Real>(g: &mut Graph<'_, S>, terms: &[(f64, Var)]) -> Var {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        if w == 0.0 {
            continue;
        }
        let t = g.scale(v, w);
        acc = Some(match acc {
            Some(a) => g.add(a, t),
            None => t,
        });
    }
    acc.unwrap_or_else(|| zero(g))
}

/// Batch-mean of `0.5 * sum(mu^2 + exp(lv) - 1 - lv)`.
pub fn kl_gaussian<S: Real>(g: &mut Graph<'_, S>, mu: Var, logvar: Var) -> Var {
    let m2 = g.square(mu);
    let ev = g.exp(logvar);
    let a = g.add(m2, ev);
    let a = g.sub(a, logvar);
    let a = g.add_scalar(a, -1.0);
    let s = g.row_sum(a);
    let s = g.mean(s);
    g.scale(s, 0.5)
}

/// Batch-mean of `0.5 * sum(mu^2)`: the KL to a unit-variance prior with
/// constants dropped.
pub fn kl_unit_variance<S: Real>(g: &mut Graph<'_, S>, mu: Var) -> Var {
    let m2 = g.square(mu);
    let s = g.row_sum(m2);
    let s = g.mean(s);
    g.scale(s, 0.5)
}

pub fn mean_abs_error<S: Real>(g: &mut Graph<'_, S>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

/// Batch-mean of per-sample squared Euclidean distances.
pub fn mean_sq_distance<S: Real>(g: &mut Graph<'_, S>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.square(d);
    let s = g.row_sum(d);
    g.mean(s)
}

/// Batch-mean of per-sample Euclidean distances.
pub fn mean_l2_distance<S: Real>(g: &mut Graph<'_, S>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let n = g.row_norm(d);
    g.mean(n)
}

/// Per-image score: mean patch probability clamped away from 0 and 1, `[N]`.
pub fn patch_score<S: Real>(g: &mut Graph<'_, S>, logits: Var) -> Var {
    let p = g.sigmoid(logits);
    let p = g.row_mean(p);
    g.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Batch-mean of `-ln(p)`.
pub fn neg_log<S: Real>(g: &mut Graph<'_, S>, p: Var) -> Var {
    let l = g.ln(p);
    let m = g.mean(l);
    g.scale(m, -1.0)
}

/// Batch-mean of `-ln(1 - p)`.
pub fn neg_log_complement<S: Real>(g: &mut Graph<'_, S>, p: Var) -> Var {
    let q = g.scale(p, -1.0);
    let q = g.add_scalar(q, 1.0);
    neg_log(g, q)
}

/// Unweighted discriminator-side GAN value from patch logits.
pub fn gan_discriminator_value<S: Real>(g: &mut Graph<'_, S>, native_logits: Var, fake_logits: Var) -> Var {
    let pn = patch_score(g, native_logits);
    let pf = patch_score(g, fake_logits);
    let a = neg_log(g, pn);
    let b = neg_log_complement(g, pf);
    g.add(a, b)
}

/// Unweighted non-saturating generator value.
pub fn gan_generator_value<S: Real>(g: &mut Graph<'_, S>, fake_logits: Var) -> Var {
    let pf = patch_score(g, fake_logits);
    neg_log(g, pf)
}

/// Unweighted feature-matching value from the four penultimate maps:
/// `mean|a_s - a_r| + mean|b_s - b_r|`.
pub fn feature_matching_value<S: Real>(g: &mut Graph<'_, S>, a_s: Var, a_r: Var, b_s: Var, b_r: Var) -> Var {
    let a = mean_abs_error(g, a_s, a_r);
    let b = mean_abs_error(g, b_s, b_r);
    g.add(a, b)
}

/// Shared forward pass of one domain's autoencoder.
#[derive(Clone, Copy, Debug)]
pub struct DomainPass {
    pub domain: Domain,
    pub x: Var,
    pub mu: Var,
    pub z: Var,
    /// `G_d(z)`.
    pub recon: Var,
    /// `G_other(z)`.
    pub translated: Var,
}

pub fn domain_pass<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, x: &Tensor<S>, d: Domain, noise: Noise) -> DomainPass {
    let xi = g.input(x.clone());
    domain_pass_var(g, b, xi, d, noise)
}

fn domain_pass_var<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, x: Var, d: Domain, noise: Noise) -> DomainPass {
    let mu = b.encoder(d).forward(g, x);
    let z = noise.perturb(g, mu, None, Term::Depth, dom_key(d));
    let recon = b.decoder(d).forward(g, z);
    let translated = b.decoder(d.other()).forward(g, z);
    DomainPass { domain: d, x, mu, z, recon, translated }
}

fn vae_depth_term<S: Real>(g: &mut Graph<'_, S>, p: &DomainPass, w: &LossWeights) -> Var {
    let kl = kl_unit_variance(g, p.mu);
    let rec = mean_abs_error(g, p.x, p.recon);
    weighted_sum(g, &[(w.lambda2, kl), (w.lambda3, rec)])
}

fn cycle_term<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, p: &DomainPass, w: &LossWeights, noise: Noise) -> Var {
    let d = p.domain;
    let mu2 = b.encoder(d.other()).forward(g, p.translated);
    let z2 = noise.perturb(g, mu2, None, Term::Cycle, dom_key(d));
    let back = b.decoder(d).forward(g, z2);
    let kl = kl_unit_variance(g, mu2);
    let rec = mean_abs_error(g, p.x, back);
    weighted_sum(g, &[(w.lambda2, kl), (w.lambda3, rec)])
}

/// Generator-side GAN on the translated half of `p`, judged by the target domain.
fn gan_generator_term<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, p: &DomainPass, w: &LossWeights) -> Var {
    let logits = b.discriminator(p.domain.other()).forward(g, p.translated).logits;
    let v = gan_generator_value(g, logits);
    g.scale(v, w.lambda4)
}

/// Discriminator-side GAN in domain `d`: natives of `d` against `fake`.
fn gan_discriminator_term<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, native: Var, fake: Var, d: Domain, w: &LossWeights) -> Var {
    let fake = g.detach(fake);
    let nl = b.discriminator(d).forward(g, native).logits;
    let fl = b.discriminator(d).forward(g, fake).logits;
    let v = gan_discriminator_value(g, nl, fl);
    g.scale(v, w.lambda4)
}

fn feature_matching_term<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, ps: &DomainPass, pr: &DomainPass, weight: f64) -> Var {
    if weight == 0.0 {
        return zero(g);
    }
    let imgs = [ps.recon, ps.translated, pr.translated, pr.recon];
    let [ss, sr, rs, rr] = imgs.map(|v| g.detach(v));
    let a_s = b.discriminator(Domain::Synthetic).trunk(g, ss);
    let a_r = b.discriminator(Domain::Real).trunk(g, sr);
    let b_s = b.discriminator(Domain::Synthetic).trunk(g, rs);
    let b_r = b.discriminator(Domain::Real).trunk(g, rr);
    let v = feature_matching_value(g, a_s, a_r, b_s, b_r);
    g.scale(v, weight)
}

/// Pieces of the mapping objective, all sharing one pass.
struct MapPass {
    z_x: Var,
    mapped: Var,
    rendered: Var,
}

fn map_pass<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, x: Var, y: &Tensor<S>, d: Domain, noise: Noise) -> MapPass {
    let yi = g.input(y.clone());
    let (mu_y, lv_y) = b.pose_enc.forward(g, yi);
    // Pose networks stay frozen through the depth phases.
    let mu_y = g.detach(mu_y);
    let lv_y = g.detach(lv_y);
    let half = g.scale(lv_y, 0.5);
    let std = g.exp(half);
    let z_y = noise.perturb(g, mu_y, Some(std), Term::Map, dom_key(d));
    let z_x = b.encoder(d).forward(g, x);
    let mapped = b.map.forward(g, z_y);
    let rendered = b.decoder(d).forward(g, mapped);
    MapPass { z_x, mapped, rendered }
}

fn map_term<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, x: Var, m: &MapPass, d: Domain, w: &LossWeights) -> Var {
    let align = mean_l2_distance(g, m.mapped, m.z_x);
    let rec = mean_abs_error(g, x, m.rendered);
    let logits = b.discriminator(d).forward(g, m.rendered).logits;
    let adv = gan_generator_value(g, logits);
    weighted_sum(g, &[(w.lambda5, align), (w.lambda6, rec), (w.lambda4, adv)])
}

fn labeled_or_err<'t, S: Real>(pairs: Option<(&'t Tensor<S>, &'t Tensor<S>)>) -> Result<(&'t Tensor<S>, &'t Tensor<S>)> {
    match pairs {
        Some((x, y)) if x.batch() > 0 => Ok((x, y)),
        _ => Err(Error::EmptyLabeledSet("real")),
    }
}

fn finite<S: Real>(g: &Graph<'_, S>, v: Var, what: &'static str) -> Result<Var> {
    if g.scalar(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Pose VAE: `lambda0 * KL + lambda1 * MSE(y, G_y(z_y))`.
pub fn loss_vae_pose<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, y: &Tensor<S>, w: &LossWeights, noise: Noise) -> Result<Var> {
    loss_vae_pose_terms(g, b, y, w, noise).map(|(v, _)| v)
}

/// [`loss_vae_pose`] with its unweighted `kl` and `nll` parts.
pub fn loss_vae_pose_terms<S: Real>(
    g: &mut Graph<'_, S>,
    b: &ModelBundle<S>,
    y: &Tensor<S>,
    w: &LossWeights,
    noise: Noise,
) -> Result<(Var, TermValues)> {
    let yi = g.input(y.clone());
    let (mu, lv) = b.pose_enc.forward(g, yi);
    let half = g.scale(lv, 0.5);
    let std = g.exp(half);
    let z = noise.perturb(g, mu, Some(std), Term::Pose, 0);
    let y_hat = b.pose_dec.forward(g, z);
    let kl = kl_gaussian(g, mu, lv);
    let nll = mean_sq_distance(g, yi, y_hat);
    let v = weighted_sum(g, &[(w.lambda0, kl), (w.lambda1, nll)]);
    let terms = alloc::vec![("kl", g.scalar(kl).to_f64()), ("nll", g.scalar(nll).to_f64())];
    Ok((finite(g, v, "pose VAE loss")?, terms))
}

pub fn loss_vae_depth<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, x: &Tensor<S>, d: Domain, w: &LossWeights, noise: Noise) -> Result<Var> {
    let p = domain_pass(g, b, x, d, noise);
    let v = vae_depth_term(g, &p, w);
    finite(g, v, "depth VAE loss")
}

/// GAN term in domain `d` for images translated *into* `d` from `x_other`.
pub fn loss_gan<S: Real>(
    g: &mut Graph<'_, S>,
    b: &ModelBundle<S>,
    x_native: &Tensor<S>,
    x_other: &Tensor<S>,
    d: Domain,
    side: Side,
    w: &LossWeights,
    noise: Noise,
) -> Result<Var> {
    let p = domain_pass(g, b, x_other, d.other(), noise);
    let v = match side {
        Side::Min => gan_generator_term(g, b, &p, w),
        Side::Max => {
            let n = g.input(x_native.clone());
            gan_discriminator_term(g, b, n, p.translated, d, w)
        }
    };
    finite(g, v, "GAN loss")
}

pub fn loss_cycle<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, x: &Tensor<S>, d: Domain, w: &LossWeights, noise: Noise) -> Result<Var> {
    let p = domain_pass(g, b, x, d, noise);
    let v = cycle_term(g, b, &p, w, noise);
    finite(g, v, "cycle loss")
}

/// Mapping objective on `(x, y)` pairs of domain `d`.
pub fn loss_map<S: Real>(
    g: &mut Graph<'_, S>,
    b: &ModelBundle<S>,
    pairs: Option<(&Tensor<S>, &Tensor<S>)>,
    d: Domain,
    w: &LossWeights,
    noise: Noise,
) -> Result<Var> {
    let (x, y) = labeled_or_err(pairs)?;
    let xi = g.input(x.clone());
    let m = map_pass(g, b, xi, y, d, noise);
    let v = map_term(g, b, xi, &m, d, w);
    finite(g, v, "mapping loss")
}

/// `lambda7 * mean ||P(x) - mu_y(y)||`.
pub fn loss_posterior<S: Real>(g: &mut Graph<'_, S>, b: &ModelBundle<S>, pairs: Option<(&Tensor<S>, &Tensor<S>)>, w: &LossWeights) -> Result<Var> {
    let (x, y) = labeled_or_err(pairs)?;
    let xi = g.input(x.clone());
    let yi = g.input(y.clone());
    let (mu_y, _) = b.pose_enc.forward(g, yi);
    let target = g.detach(mu_y);
    let z = b.post.forward(g, xi);
    let d = mean_l2_distance(g, z, target);
    let v = g.scale(d, w.lambda7);
    finite(g, v, "posterior loss")
}

/// Feature matching weighted by `weight` (`lambda8` or the phase-2 weight).
pub fn loss_feature_matching<S: Real>(
    g: &mut Graph<'_, S>,
    b: &ModelBundle<S>,
    x_s: &Tensor<S>,
    x_r: &Tensor<S>,
    weight: f64,
    noise: Noise,
) -> Result<Var> {
    let ps = domain_pass(g, b, x_s, Domain::Synthetic, noise);
    let pr = domain_pass(g, b, x_r, Domain::Real, noise);
    let v = feature_matching_term(g, b, &ps, &pr, weight);
    finite(g, v, "feature matching loss")
}

/// Named scalar values of the terms summed by [`total_objective`].
pub type TermValues = Vec<(&'static str, f64)>;

/// Phase objective for one side of the game.
///
/// Phase 2, min side: depth VAEs, generator GAN terms, cycles and mapping
/// terms. Phase 2, max side: discriminator GAN terms (translated and mapped
/// fakes) plus feature matching at `fm_weight_phase2`. Phase 3 has a single
/// player and ignores `side`: posterior terms plus feature matching at
/// `lambda8`.
pub fn total_objective<S: Real>(
    g: &mut Graph<'_, S>,
    b: &ModelBundle<S>,
    batch: &Batch<S>,
    w: &LossWeights,
    phase: u8,
    side: Side,
    noise: Noise,
) -> Result<(Var, TermValues)> {
    let labeled = batch.labeled.as_ref().filter(|(x, _)| x.batch() > 0).map(|(x, y)| (x, y));
    let mut terms: Vec<(&'static str, Var)> = Vec::new();
    match (phase, side) {
        (2, _) => {
            let ps = domain_pass(g, b, &batch.x_s, Domain::Synthetic, noise);
            let pr = domain_pass(g, b, &batch.x_r, Domain::Real, noise);
            let ms = map_pass(g, b, ps.x, &batch.y_s, Domain::Synthetic, noise);
            let mr = labeled.map(|(x, y)| {
                let xi = g.input(x.clone());
                (xi, map_pass(g, b, xi, y, Domain::Real, noise))
            });
            match side {
                Side::Min => {
                    terms.push(("vae_s", vae_depth_term(g, &ps, w)));
                    terms.push(("vae_r", vae_depth_term(g, &pr, w)));
                    terms.push(("gan_s", gan_generator_term(g, b, &pr, w)));
                    terms.push(("gan_r", gan_generator_term(g, b, &ps, w)));
                    terms.push(("cc_s", cycle_term(g, b, &ps, w, noise)));
                    terms.push(("cc_r", cycle_term(g, b, &pr, w, noise)));
                    terms.push(("map_s", map_term(g, b, ps.x, &ms, Domain::Synthetic, w)));
                    if let Some((xi, mr)) = &mr {
                        terms.push(("map_r", map_term(g, b, *xi, mr, Domain::Real, w)));
                    }
                }
                Side::Max => {
                    terms.push(("gan_s", gan_discriminator_term(g, b, ps.x, pr.translated, Domain::Synthetic, w)));
                    terms.push(("gan_r", gan_discriminator_term(g, b, pr.x, ps.translated, Domain::Real, w)));
                    terms.push(("gan_map_s", gan_discriminator_term(g, b, ps.x, ms.rendered, Domain::Synthetic, w)));
                    if let Some((xi, mr)) = &mr {
                        terms.push(("gan_map_r", gan_discriminator_term(g, b, *xi, mr.rendered, Domain::Real, w)));
                    }
                    terms.push(("fm", feature_matching_term(g, b, &ps, &pr, w.fm_weight_phase2)));
                }
            }
        }
        (3, _) => {
            terms.push(("pos_s", loss_posterior(g, b, Some((&batch.x_s, &batch.y_s)), w)?));
            if let Some(pairs) = labeled {
                terms.push(("pos_r", loss_posterior(g, b, Some(pairs), w)?));
            }
            let ps = domain_pass(g, b, &batch.x_s, Domain::Synthetic, noise);
            let pr = domain_pass(g, b, &batch.x_r, Domain::Real, noise);
            terms.push(("fm", feature_matching_term(g, b, &ps, &pr, w.lambda8)));
        }
        (p, _) => return Err(Error::UnknownPhase(p)),
    }
    let values = terms.iter().map(|(n, v)| (*n, g.scalar(*v).to_f64())).collect();
    let vars: Vec<(f64, Var)> = terms.iter().map(|(_, v)| (1.0, *v)).collect();
    let total = weighted_sum(g, &vars);
    Ok((finite(g, total, "total objective")?, values))
}
