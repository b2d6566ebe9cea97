use lsps_core::autodiff::Graph;
use lsps_core::losses::*;
use lsps_core::models::{ArchConfig, Domain, ModelBundle, Net};
use lsps_core::params::CellSet;
use lsps_core::rng;
use lsps_core::tensor::Tensor;
use proptest::prelude::*;

fn bundle(seed: u64) -> ModelBundle<f64> {
    ModelBundle::build(&ArchConfig::tiny(16), seed).unwrap()
}

fn images(n: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[5]);
    let mut t = Tensor::zeros(&[n, 1, 8, 8]);
    for v in t.data_mut() {
        *v = rng::uniform(&mut r, -1.0, 1.0);
    }
    t
}

fn poses(n: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[6]);
    let mut t = Tensor::zeros(&[n, 48]);
    for v in t.data_mut() {
        *v = rng::uniform(&mut r, -0.5, 0.5);
    }
    t
}

fn value<F>(b: &ModelBundle<f64>, f: F) -> f64
where
    F: FnOnce(&mut Graph<'_, f64>) -> lsps_core::error::Result<lsps_core::autodiff::Var>,
{
    let mut g = Graph::new(&b.store);
    let v = f(&mut g).unwrap();
    g.scalar(v)
}

#[test]
fn gaussian_kl_closed_form_values() {
    let store = lsps_core::params::ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let mu = g.input(Tensor::zeros(&[3, 20]));
    let lv = g.input(Tensor::zeros(&[3, 20]));
    let kl = kl_gaussian(&mut g, mu, lv);
    assert_eq!(g.scalar(kl), 0.0);
    let mu = g.input(Tensor::full(&[3, 20], 1.0));
    let kl = kl_gaussian(&mut g, mu, lv);
    assert_eq!(g.scalar(kl), 10.0);
}

#[test]
fn unit_variance_kl_of_all_ones_latent() {
    let store = lsps_core::params::ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let k = 6;
    let mu = g.input(Tensor::full(&[2, k, 16, 16], 1.0));
    let kl = kl_unit_variance(&mut g, mu);
    assert_eq!(g.scalar(kl), 0.5 * 16.0 * 16.0 * k as f64);
    let z = g.input(Tensor::zeros(&[2, k, 4, 4]));
    let kl = kl_unit_variance(&mut g, z);
    assert_eq!(g.scalar(kl), 0.0);
}

#[test]
fn gan_values_at_half_and_saturation() {
    let store = lsps_core::params::ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let half = g.input(Tensor::zeros(&[4, 1, 2, 2]));
    let d = gan_discriminator_value(&mut g, half, half);
    assert!((g.scalar(d) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    let sure = g.input(Tensor::full(&[4, 1, 2, 2], 40.0));
    let gen = gan_generator_value(&mut g, sure);
    assert!(g.scalar(gen) < 2e-7);
    // The clamp floor bounds the log terms.
    let hopeless = g.input(Tensor::full(&[4, 1, 2, 2], -800.0));
    let gen = gan_generator_value(&mut g, hopeless);
    assert!((g.scalar(gen) + PROB_FLOOR.ln()).abs() < 1e-9);
}

#[test]
fn feature_matching_plug_in_and_symmetry() {
    let store = lsps_core::params::ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let s = |g: &mut Graph<'_, f64>, v: f64| g.input(Tensor::full(&[1, 1, 1, 1], v));
    let (a, b, c, d) = (s(&mut g, 3.0), s(&mut g, 1.0), s(&mut g, 0.0), s(&mut g, 2.0));
    let fm = feature_matching_value(&mut g, a, b, c, d);
    assert_eq!(g.scalar(fm), 4.0);
    let swapped = feature_matching_value(&mut g, c, d, a, b);
    assert_eq!(g.scalar(swapped), 4.0);
    let flipped = feature_matching_value(&mut g, b, a, d, c);
    assert_eq!(g.scalar(flipped), 4.0);
}

#[test]
fn feature_matching_vanishes_for_identical_features() {
    let mut b = bundle(1);
    for i in 0..2 {
        let (s, r) = (b.discriminator(Domain::Synthetic).convs[i].clone(), b.discriminator(Domain::Real).convs[i].clone());
        *b.store.get_mut(r.w) = b.store.get(s.w).clone();
        *b.store.get_mut(r.b.unwrap()) = b.store.get(s.b.unwrap()).clone();
    }
    let x = images(2, 1);
    let mut g = Graph::new(&b.store);
    let xi = g.input(x);
    let a = b.discriminator(Domain::Synthetic).trunk(&mut g, xi);
    let c = b.discriminator(Domain::Real).trunk(&mut g, xi);
    let fm = feature_matching_value(&mut g, a, c, c, a);
    assert_eq!(g.scalar(fm), 0.0);
}

#[test]
fn map_alignment_unit_offset_is_sqrt_latent_size() {
    let store = lsps_core::params::ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let shape = [3, 8, 4, 4];
    let l = (8 * 4 * 4) as f64;
    let a = g.input(Tensor::full(&shape, 0.25));
    let c = g.input(Tensor::full(&shape, 1.25));
    let d = mean_l2_distance(&mut g, a, c);
    assert!((g.scalar(d) - l.sqrt()).abs() < 1e-12);
}

#[test]
fn posterior_unit_error_gives_lambda7_sqrt20() {
    let mut b = bundle(2);
    let y = poses(1, 3);
    let (mu, _) = b.encode_pose(&y).unwrap();
    // Zero head weights make P(x) equal to its bias everywhere.
    let (hw, hb) = (b.post.head.w, b.post.head.b.unwrap());
    b.store.get_mut(hw).data_mut().fill(0.0);
    for (dst, &m) in b.store.get_mut(hb).data_mut().iter_mut().zip(mu.data()) {
        *dst = m + 1.0;
    }
    let x = images(1, 4);
    let w = LossWeights::default();
    let v = value(&b, |g| loss_posterior(g, &b, Some((&x, &y)), &w));
    assert!((v - w.lambda7 * 20f64.sqrt()).abs() < 1e-9, "{v}");

    for (dst, &m) in b.store.get_mut(hb).data_mut().iter_mut().zip(mu.data()) {
        *dst = m;
    }
    let v = value(&b, |g| loss_posterior(g, &b, Some((&x, &y)), &w));
    assert!(v.abs() < 1e-12);
}

#[test]
fn cycle_matches_step_by_step_pipeline() {
    let b = bundle(3);
    let x = images(3, 2);
    let w = LossWeights::default();
    let loss = value(&b, |g| loss_cycle(g, &b, &x, Domain::Synthetic, &w, Noise::OFF));

    let mu = b.encode_depth(&x, Domain::Synthetic).unwrap();
    let xt = b.decode_depth(&mu, Domain::Real);
    let mu2 = b.encode_depth(&xt, Domain::Real).unwrap();
    let back = b.decode_depth(&mu2, Domain::Synthetic);
    let n = x.batch();
    let kl: f64 = (0..n).map(|i| 0.5 * mu2.row(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n as f64;
    let mae = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
    let expected = w.lambda2 * kl + w.lambda3 * mae;
    assert!((loss - expected).abs() < 1e-6 * expected.abs().max(1.0), "{loss} vs {expected}");
}

#[test]
fn depth_vae_matches_direct_reconstruction() {
    let b = bundle(4);
    let x = images(2, 9);
    let w = LossWeights::default();
    let loss = value(&b, |g| loss_vae_depth(g, &b, &x, Domain::Real, &w, Noise::OFF));
    let mu = b.encode_depth(&x, Domain::Real).unwrap();
    let rec = b.decode_depth(&mu, Domain::Real);
    let kl: f64 = (0..2).map(|i| 0.5 * mu.row(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 2.0;
    let mae = x.data().iter().zip(rec.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
    assert!((loss - (0.1 * kl + 100.0 * mae)).abs() < 1e-9);
}

fn batch(labeled: bool) -> Batch<f64> {
    Batch {
        x_s: images(2, 11),
        y_s: poses(2, 12),
        x_r: images(2, 13),
        labeled: labeled.then(|| (images(1, 14), poses(1, 15))),
    }
}

#[test]
fn phase3_without_labels_is_posterior_plus_feature_matching() {
    let b = bundle(5);
    let bt = batch(false);
    let w = LossWeights::default();
    let noise = Noise::seeded(8);
    let mut g = Graph::new(&b.store);
    let (total, _) = total_objective(&mut g, &b, &bt, &w, 3, Side::Min, noise).unwrap();
    let total = g.scalar(total);
    let pos = value(&b, |g| loss_posterior(g, &b, Some((&bt.x_s, &bt.y_s)), &w));
    let fm = value(&b, |g| loss_feature_matching(g, &b, &bt.x_s, &bt.x_r, w.lambda8, noise));
    assert_eq!(total, pos + fm);
}

#[test]
fn phase2_min_side_is_sum_of_terms() {
    let b = bundle(6);
    let w = LossWeights::default();
    let noise = Noise::seeded(21);
    for labeled in [false, true] {
        let bt = batch(labeled);
        let mut g = Graph::new(&b.store);
        let (total, named) = total_objective(&mut g, &b, &bt, &w, 2, Side::Min, noise).unwrap();
        let total = g.scalar(total);
        let mut parts = vec![
            value(&b, |g| loss_vae_depth(g, &b, &bt.x_s, Domain::Synthetic, &w, noise)),
            value(&b, |g| loss_vae_depth(g, &b, &bt.x_r, Domain::Real, &w, noise)),
            value(&b, |g| loss_gan(g, &b, &bt.x_s, &bt.x_r, Domain::Synthetic, Side::Min, &w, noise)),
            value(&b, |g| loss_gan(g, &b, &bt.x_r, &bt.x_s, Domain::Real, Side::Min, &w, noise)),
            value(&b, |g| loss_cycle(g, &b, &bt.x_s, Domain::Synthetic, &w, noise)),
            value(&b, |g| loss_cycle(g, &b, &bt.x_r, Domain::Real, &w, noise)),
            value(&b, |g| loss_map(g, &b, Some((&bt.x_s, &bt.y_s)), Domain::Synthetic, &w, noise)),
        ];
        if let Some((x, y)) = &bt.labeled {
            parts.push(value(&b, |g| loss_map(g, &b, Some((x, y)), Domain::Real, &w, noise)));
        }
        assert_eq!(named.len(), parts.len());
        for ((name, v), p) in named.iter().zip(&parts) {
            assert!((v - p).abs() <= 1e-9 * p.abs().max(1.0), "{name}: {v} vs {p}");
        }
        let sum: f64 = parts.iter().sum();
        assert!((total - sum).abs() < 1e-6 * sum.abs().max(1.0));
    }
}

#[test]
fn phase2_max_side_includes_translated_gan_terms() {
    let b = bundle(7);
    let bt = batch(false);
    let w = LossWeights::default();
    let noise = Noise::seeded(2);
    let mut g = Graph::new(&b.store);
    let (_, named) = total_objective(&mut g, &b, &bt, &w, 2, Side::Max, noise).unwrap();
    let gan_s = value(&b, |g| loss_gan(g, &b, &bt.x_s, &bt.x_r, Domain::Synthetic, Side::Max, &w, noise));
    let gan_r = value(&b, |g| loss_gan(g, &b, &bt.x_r, &bt.x_s, Domain::Real, Side::Max, &w, noise));
    let fm = value(&b, |g| loss_feature_matching(g, &b, &bt.x_s, &bt.x_r, w.fm_weight_phase2, noise));
    let get = |n: &str| named.iter().find(|(k, _)| *k == n).unwrap().1;
    assert!((get("gan_s") - gan_s).abs() < 1e-12);
    assert!((get("gan_r") - gan_r).abs() < 1e-12);
    assert!((get("fm") - fm).abs() < 1e-15);
    assert!(named.iter().any(|(k, _)| *k == "gan_map_s"));
}

#[test]
fn zero_weights_give_zero_and_unknown_phase_errors() {
    let b = bundle(8);
    let bt = batch(true);
    let w = LossWeights::zero();
    for (phase, side) in [(2, Side::Min), (2, Side::Max), (3, Side::Min)] {
        let mut g = Graph::new(&b.store);
        let (v, _) = total_objective(&mut g, &b, &bt, &w, phase, side, Noise::seeded(1)).unwrap();
        assert_eq!(g.scalar(v), 0.0);
    }
    let mut g = Graph::new(&b.store);
    assert!(total_objective(&mut g, &b, &bt, &w, 4, Side::Min, Noise::OFF).is_err());
    let mut g = Graph::new(&b.store);
    assert!(loss_map(&mut g, &b, None, Domain::Real, &w, Noise::OFF).is_err());
    let empty = (Tensor::zeros(&[0, 1, 8, 8]), Tensor::zeros(&[0, 48]));
    let mut g = Graph::new(&b.store);
    assert!(loss_posterior(&mut g, &b, Some((&empty.0, &empty.1)), &w).is_err());
}

#[test]
fn zero_weight_removes_term_gradient_exactly() {
    let b = bundle(9);
    let x = images(2, 1);
    let mut w = LossWeights::default();
    w.lambda3 = 0.0;
    let mut g = Graph::new(&b.store);
    let v = loss_vae_depth(&mut g, &b, &x, Domain::Synthetic, &w, Noise::OFF).unwrap();
    let with_zero = g.backward(v);

    let mut g = Graph::new(&b.store);
    let p = domain_pass(&mut g, &b, &x, Domain::Synthetic, Noise::OFF);
    let kl = kl_unit_variance(&mut g, p.mu);
    let only = g.scale(kl, w.lambda2);
    let reference = g.backward(only);
    let a: Vec<_> = with_zero.cells().map(|(id, t)| (id, t.data().to_vec())).collect();
    let r: Vec<_> = reference.cells().map(|(id, t)| (id, t.data().to_vec())).collect();
    assert_eq!(a, r);
    // No decoder cell sees gradient once the reconstruction weight is zero.
    for id in b.cells(&[Net::DecS]).ids() {
        assert!(with_zero.cell(id).is_none());
    }
}

#[test]
fn posterior_gradient_respects_trunk_freeze() {
    let b = bundle(10);
    let bt = batch(false);
    let w = LossWeights::default();
    let trunk = b.cells(&[Net::DiscS]);
    let head = b.posterior_head_cells();

    let mut g = Graph::with_trainable(&b.store, &head);
    let v = loss_posterior(&mut g, &b, Some((&bt.x_s, &bt.y_s)), &w).unwrap();
    let frozen = g.backward(v);
    assert!(trunk.ids().all(|id| frozen.cell(id).is_none()));
    assert!(head.ids().all(|id| frozen.cell(id).is_some()));

    let all = b.cells(&[Net::Post]);
    let mut g = Graph::with_trainable(&b.store, &all);
    let v = loss_posterior(&mut g, &b, Some((&bt.x_s, &bt.y_s)), &w).unwrap();
    let open = g.backward(v);
    let nonzero = trunk.ids().filter(|id| open.cell(*id).is_some_and(|t| t.data().iter().any(|v| *v != 0.0))).count();
    assert!(nonzero > 0);
    // Pose networks never receive gradient from the posterior term.
    let pose = b.cells(&[Net::PoseEnc, Net::PoseDec]);
    let everything = CellSet::all(b.store.cell_count());
    let mut g = Graph::with_trainable(&b.store, &everything);
    let v = loss_posterior(&mut g, &b, Some((&bt.x_s, &bt.y_s)), &w).unwrap();
    let grads = g.backward(v);
    assert!(pose.ids().all(|id| grads.cell(id).is_none()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-3.0f64..3.0, 20), lv in prop::collection::vec(-4.0f64..4.0, 20)) {
        let store = lsps_core::params::ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let m = g.input(Tensor::from_vec(&[1, 20], mu));
        let l = g.input(Tensor::from_vec(&[1, 20], lv));
        let kl = kl_gaussian(&mut g, m, l);
        prop_assert!(g.scalar(kl) >= 0.0);
    }

    #[test]
    fn reconstruction_terms_non_negative(a in prop::collection::vec(-1.0f64..1.0, 16), b in prop::collection::vec(-1.0f64..1.0, 16)) {
        let store = lsps_core::params::ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_vec(&[4, 4], a));
        let y = g.input(Tensor::from_vec(&[4, 4], b));
        let l1 = mean_abs_error(&mut g, x, y);
        let l2 = mean_sq_distance(&mut g, x, y);
        let n = mean_l2_distance(&mut g, x, y);
        prop_assert!(g.scalar(l1) >= 0.0 && g.scalar(l2) >= 0.0 && g.scalar(n) >= 0.0);
        let same = mean_abs_error(&mut g, x, x);
        prop_assert_eq!(g.scalar(same), 0.0);
    }
}
