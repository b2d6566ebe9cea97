use lsps_core::autodiff::{conv_out, Graph};
use lsps_core::gradcheck::{check_cells, GradCheckConfig};
use lsps_core::models::layers::ResBlock;
use lsps_core::models::{sample_pose_latent, ArchConfig, Domain, ModelBundle, Net};
use lsps_core::params::{CellSet, ParamStore};
use lsps_core::rng;
use lsps_core::tensor::Tensor;

fn random_images(n: usize, res: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[99]);
    let mut data = vec![0.0; n * res * res];
    for v in &mut data {
        *v = rng::uniform(&mut r, -1.0, 1.0);
    }
    Tensor::from_vec(&[n, 1, res, res], data)
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[7]);
    let mut t = Tensor::zeros(&[rows, cols]);
    rng::fill_normal(&mut r, t.data_mut());
    t
}

fn tiny() -> ArchConfig {
    ArchConfig::tiny(16)
}

fn resblock_size(cin: usize, cout: usize, card: usize) -> usize {
    let skip = if cin != cout { cin * cout } else { 0 };
    cout * (cin / card) * 9 + cout * cout + skip
}

#[test]
fn desk_encoder_latent_is_quarter_resolution() {
    let c = ArchConfig::desk(16);
    let b = ModelBundle::<f32>::build(&c, 1).unwrap();
    let x = Tensor::<f32>::full(&[1, 1, 64, 64], 1.0);
    let z = b.encode_depth(&x, Domain::Synthetic).unwrap();
    assert_eq!(z.shape(), &[1, c.depth_latent_channels, 16, 16]);
    assert_eq!(b.geometry.latent, [c.depth_latent_channels, 16, 16]);
}

#[test]
fn discriminator_geometry_matches_stride_oracle() {
    for res in [8usize, 16, 32, 64, 128] {
        let c = ArchConfig::scaled(res, 8, 16);
        let b = ModelBundle::<f32>::build(&c, 0).unwrap();
        // Independent oracle: floor((n + 2p - k) / s) + 1 five times.
        let mut n = res;
        for _ in 0..5 {
            n = (n + 2 - 3) / 2 + 1;
        }
        let k = n.min(2);
        assert_eq!(b.geometry.disc_feature, n, "res {res}");
        assert_eq!(b.geometry.disc_patch, n - k + 1, "res {res}");
        assert_eq!(conv_out(n, k, 1, 0), Some(b.geometry.disc_patch));
        let (logits, phi) = b.discriminate(&Tensor::full(&[2, 1, res, res], 1.0), Domain::Real).unwrap();
        assert_eq!(logits.shape(), &[2, 1, b.geometry.disc_patch, b.geometry.disc_patch]);
        assert_eq!(phi.shape()[2], n);
    }
}

#[test]
fn unreachable_mapping_size_is_construction_error() {
    let c = ArchConfig::scaled(24, 8, 16);
    let err = ModelBundle::<f32>::build(&c, 0).unwrap_err();
    assert!(err.to_string().contains("map"), "{err}");
    let c = ArchConfig::scaled(30, 8, 16);
    assert!(ModelBundle::<f32>::build(&c, 0).is_err());
}

#[test]
fn same_seed_builds_bitwise_identical() {
    let a = ModelBundle::<f32>::build(&tiny(), 42).unwrap();
    let b = ModelBundle::<f32>::build(&tiny(), 42).unwrap();
    let c = ModelBundle::<f32>::build(&tiny(), 43).unwrap();
    assert!(a.store.bitwise_eq(&b.store));
    assert!(!a.store.bitwise_eq(&c.store));
}

#[test]
fn shared_block_counted_once_in_storage() {
    let c = ArchConfig::scaled(16, 16, 16);
    let b = ModelBundle::<f32>::build(&c, 0).unwrap();
    let l = c.depth_latent_channels;
    let block = resblock_size(l, l, c.residual_cardinality);

    let views: usize = [Net::EncS, Net::EncR]
        .iter()
        .flat_map(|n| b.store.cells_with_prefix(n.prefix()))
        .map(|id| b.store.get(id).len())
        .sum();
    let unique: usize = b.cells(&[Net::EncS, Net::EncR]).ids().map(|id| b.store.get(id).len()).sum();
    assert_eq!(views - unique, block);

    // Whole-store oracle: every sharing group contributes its size per extra view.
    let d = [c.ch(64), c.ch(128), c.ch(256), c.ch(512), c.ch(1024)];
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let k = b.geometry.disc_head_kernel;
    let disc_shared = conv(d[1], d[2], 3) + conv(d[2], d[3], 3) + conv(d[3], d[4], 3) + conv(d[4], 1, k);
    let post_shared = conv(1, d[0], 3) + conv(d[0], d[1], 3) + conv(d[1], d[2], 3) + conv(d[2], d[3], 3) + conv(d[3], d[4], 3);
    let expected = 2 * block + disc_shared + post_shared;
    assert_eq!(b.store.view_param_count() - b.store.unique_param_count(), expected);
}

#[test]
fn collapsed_variance_sample_equals_mean() {
    let mu = random_matrix(4, 20, 1);
    let lv = Tensor::full(&[4, 20], -40.0);
    let z = sample_pose_latent(&mu, &lv, 5);
    for (a, b) in z.data().iter().zip(mu.data()) {
        assert!((a - b).abs() < 1e-8);
    }
    assert_eq!(sample_pose_latent(&mu, &lv, 5).data(), z.data());
}

#[test]
fn latent_samples_match_gaussian_moments() {
    let n = 100_000;
    let (m, lv) = (0.7f64, -0.6f64);
    let mu = Tensor::full(&[n, 1], m);
    let logvar = Tensor::full(&[n, 1], lv);
    let z = sample_pose_latent(&mu, &logvar, 11);
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma2 = lv.exp();
    let se_mean = (sigma2 / n as f64).sqrt();
    let se_var = sigma2 * (2.0 / (n - 1) as f64).sqrt();
    assert!((mean - m).abs() < 3.0 * se_mean, "mean {mean}");
    assert!((var - sigma2).abs() < 3.0 * se_var, "var {var}");
}

#[test]
fn decoder_output_strictly_inside_unit_interval() {
    let mut b = ModelBundle::<f32>::build(&tiny(), 3).unwrap();
    // Drive the output layer deep into saturation.
    let out_b = b.decoder(Domain::Real).out.b.unwrap();
    b.store.get_mut(out_b).data_mut()[0] = 1e4;
    let [c, h, w] = b.geometry.latent;
    let z = Tensor::<f32>::full(&[2, c, h, w], 3.0);
    let x = b.decode_depth(&z, Domain::Real);
    assert!(x.data().iter().all(|&v| v > -1.0 && v < 1.0));
    assert!(x.data().iter().any(|&v| v > 0.999));
    b.store.get_mut(out_b).data_mut()[0] = -1e4;
    let x = b.decode_depth(&z, Domain::Real);
    assert!(x.data().iter().all(|&v| v > -1.0 && v < 1.0));
}

#[test]
fn encode_is_deterministic_and_checks_resolution() {
    let b = ModelBundle::<f64>::build(&tiny(), 3).unwrap();
    let x = random_images(2, 8, 1);
    assert_eq!(b.encode_depth(&x, Domain::Real).unwrap().data(), b.encode_depth(&x, Domain::Real).unwrap().data());
    let wrong = random_images(1, 16, 1);
    assert!(b.encode_depth(&wrong, Domain::Synthetic).is_err());
    assert!(b.posterior(&wrong).is_err());
}

#[test]
fn shared_block_manual_forward_reproduces_real_encoder() {
    let b = ModelBundle::<f64>::build(&tiny(), 9).unwrap();
    let x = random_images(2, 8, 4);
    let (pre, out) = b.eval(|g| {
        let xi = g.input(x.clone());
        let (pre, out) = b.encoder(Domain::Real).forward_split(g, xi);
        (g.value(pre).clone(), g.value(out).clone())
    });

    // Rebuild the block standalone and copy the synthetic encoder's cells into it.
    let c = tiny();
    let l = c.depth_latent_channels;
    let mut store = ParamStore::<f64>::new();
    let fresh = ResBlock::new(&mut store, "copy", l, l, c.residual_cardinality, c.negative_slope, 12345);
    let src = b.encoder(Domain::Synthetic).blocks.last().unwrap();
    for (dst, s) in fresh.cells().into_iter().zip(src.cells()) {
        *store.get_mut(dst) = b.store.get(s).clone();
    }
    let mut g = Graph::new(&store);
    let h = g.input(pre);
    let y = fresh.forward(&mut g, h);
    assert_eq!(g.value(y).data(), out.data());
}

#[test]
fn discriminators_agree_when_private_layers_match() {
    let mut b = ModelBundle::<f64>::build(&tiny(), 2).unwrap();
    for i in 0..2 {
        let (s, r) = (b.discriminator(Domain::Synthetic).convs[i].clone(), b.discriminator(Domain::Real).convs[i].clone());
        assert_ne!(s.w, r.w);
        *b.store.get_mut(r.w) = b.store.get(s.w).clone();
        *b.store.get_mut(r.b.unwrap()) = b.store.get(s.b.unwrap()).clone();
    }
    let x = random_images(3, 8, 8);
    let (ls, ps) = b.discriminate(&x, Domain::Synthetic).unwrap();
    let (lr, pr) = b.discriminate(&x, Domain::Real).unwrap();
    assert_eq!(ps.data(), pr.data());
    assert_eq!(ls.data(), lr.data());

    let bg = Tensor::full(&[1, 1, 8, 8], 1.0);
    let (l, p) = b.discriminate(&bg, Domain::Real).unwrap();
    assert!(l.all_finite() && p.all_finite());
}

#[test]
fn zero_latent_maps_to_zero_with_zero_biases() {
    let b = ModelBundle::<f64>::build(&ArchConfig::scaled(16, 8, 16), 4).unwrap();
    let z = Tensor::zeros(&[2, 20]);
    let m = b.map_latent(&z);
    assert_eq!(m.shape()[1..], b.geometry.latent);
    assert!(m.data().iter().all(|&v| v == 0.0));
}

#[test]
fn mapping_jvp_matches_finite_differences() {
    let b = ModelBundle::<f64>::build(&ArchConfig::scaled(16, 8, 16), 4).unwrap();
    let z = random_matrix(2, 20, 1);
    let v = random_matrix(2, 20, 2);
    let shape = [2, b.config.depth_latent_channels, 4, 4];
    let mut r = rng::stream(3, &[]);
    let mut w = Tensor::<f64>::zeros(&shape);
    rng::fill_normal(&mut r, w.data_mut());

    let objective = |zz: &Tensor<f64>| -> f64 { b.map_latent(zz).data().iter().zip(w.data()).map(|(a, b)| a * b).sum() };
    let mut g = Graph::new(&b.store);
    let zi = g.input_with_grad(z.clone());
    let m = b.map.forward(&mut g, zi);
    let wi = g.input(w.clone());
    let p = g.mul(m, wi);
    let s = g.sum(p);
    let grads = g.backward(s);
    let analytic: f64 = grads.input(zi).unwrap().data().iter().zip(v.data()).map(|(a, b)| a * b).sum();

    let h = 1e-5;
    let zp = z.zip_map(&v, |a, d| a + h * d);
    let zm = z.zip_map(&v, |a, d| a - h * d);
    let numeric = (objective(&zp) - objective(&zm)) / (2.0 * h);
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
    assert!(rel < 1e-3, "analytic {analytic} numeric {numeric}");
}

#[test]
fn posterior_shares_trunk_and_owns_head() {
    let mut b = ModelBundle::<f64>::build(&tiny(), 6).unwrap();
    let x = random_images(2, 8, 3);
    let (phi_d, phi_p) = b.eval(|g| {
        let xi = g.input(x.clone());
        let a = b.discriminator(Domain::Synthetic).trunk(g, xi);
        let p = b.post.trunk.trunk(g, xi);
        (g.value(a).clone(), g.value(p).clone())
    });
    assert_eq!(phi_d.data(), phi_p.data());
    let z = b.posterior(&x).unwrap();
    assert_eq!(z.shape(), &[2, 20]);

    let before = b.discriminate(&x, Domain::Synthetic).unwrap();
    let head = b.posterior_head_cells();
    for id in head.ids().collect::<Vec<_>>() {
        for v in b.store.get_mut(id).data_mut() {
            *v += 0.5;
        }
    }
    let after = b.discriminate(&x, Domain::Synthetic).unwrap();
    assert_eq!(before.0.data(), after.0.data());
    assert_eq!(before.1.data(), after.1.data());
    assert_ne!(b.posterior(&x).unwrap().data(), z.data());
}

#[test]
fn predicted_pose_has_three_j_entries() {
    let b = ModelBundle::<f32>::build(&tiny(), 1).unwrap();
    let x = Tensor::<f32>::full(&[3, 1, 8, 8], 0.2);
    assert_eq!(b.predict_pose_raw(&x).unwrap().shape(), &[3, 48]);
    let t = b.translate(&x, Domain::Synthetic, Domain::Real).unwrap();
    assert_eq!(t.shape(), x.shape());
}

#[test]
fn render_from_pose_gradient_reaches_pose_encoder() {
    let mut b = ModelBundle::<f64>::build(&tiny(), 5).unwrap();
    let y = random_matrix(2, 48, 9).map(|v| 0.3 * v);
    let target = random_images(2, 8, 10);
    let pose_cells: Vec<_> = b.cells(&[Net::PoseEnc]).ids().collect();
    let trainable = CellSet::from_cells(b.store.cell_count(), pose_cells.iter().copied());

    let loss = |store: &ParamStore<f64>, bundle: &ModelBundle<f64>, trainable: &CellSet| {
        let mut g = Graph::with_trainable(store, trainable);
        let yi = g.input(y.clone());
        let (mu, _) = bundle.pose_enc.forward(&mut g, yi);
        let zx = bundle.map.forward(&mut g, mu);
        let x = bundle.decoder(Domain::Real).forward(&mut g, zx);
        let t = g.input(target.clone());
        let d = g.sub(x, t);
        let sq = g.square(d);
        let l = g.mean(sq);
        let v = g.scalar(l);
        (v, g.backward(l))
    };
    let (_, grads) = loss(&b.store, &b, &trainable);
    let shape = b.clone();
    let report = check_cells(&mut b.store, &pose_cells, &grads, GradCheckConfig::default(), |s| loss(s, &shape, &trainable).0);
    assert!(report.passed(), "{report:?}");
}
