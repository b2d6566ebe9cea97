use lsps::archive::{load_archive, save_archive};
use lsps::checkpoint::{decode, encode, load_checkpoint, save_checkpoint};
use lsps::config::RunConfig;
use lsps::output::{depth_to_gray, gray_to_depth, parse_pgm, pgm_grid, read_pgm_tiles, write_pgm_grid};
use lsps::Error;
use lsps_core::depth::DepthImage;
use lsps_core::models::ModelBundle;
use lsps_core::synthgen::make_dataset;
use lsps_core::tensor::Tensor;
use lsps_core::trainer::{run_schedule, ArchiveBatches, NullSink, StopAt, TrainState};
use proptest::prelude::*;

fn tiny_archive(cfg: &RunConfig) -> lsps_core::synthgen::DatasetArchive {
    make_dataset(&cfg.skeleton, &cfg.synthetic_style, &cfg.real_style, &cfg.cube, &cfg.dataset).unwrap()
}

#[test]
fn archive_round_trip_preserves_f32_content() {
    let mut cfg = RunConfig::tiny(4);
    cfg.dataset.label_fraction_percent = 25.0;
    let a = tiny_archive(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("arc");
    save_archive(&a, &path, false).unwrap();
    let b = load_archive(&path).unwrap();
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.label_mask(), b.label_mask());
    assert_eq!(a.synthetic.images, b.synthetic.images);
    assert_eq!(a.test.images, b.test.images);
    for (p, q) in a.synthetic.poses.iter().zip(&b.synthetic.poses) {
        assert_eq!(p.cube(), q.cube());
        for (x, y) in p.values.iter().zip(&q.values) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
    let mask = std::fs::read(path.join("label_mask.u8")).unwrap();
    assert_eq!(mask.len(), cfg.dataset.n_real);
    assert_eq!(mask.iter().filter(|&&m| m == 1).count(), 12);
    assert_eq!(std::fs::metadata(path.join("real_images.f32")).unwrap().len() as usize, 48 * 64 * 4);

    let e = save_archive(&a, &path, false).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    save_archive(&a, &path, true).unwrap();
}

#[test]
fn archive_with_short_file_is_rejected() {
    let cfg = RunConfig::tiny(4);
    let a = tiny_archive(&cfg);
    let dir = tempfile::tempdir().unwrap();
    save_archive(&a, dir.path(), true).unwrap();
    let f = dir.path().join("test_poses.f32");
    let bytes = std::fs::read(&f).unwrap();
    std::fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_archive(dir.path()), Err(Error::Format { .. })));
}

fn trained(cfg: &RunConfig, stop: Option<StopAt>) -> (ModelBundle<f32>, TrainState<f32>) {
    let a = tiny_archive(cfg);
    let mut b = ModelBundle::<f32>::build(&cfg.arch, cfg.train.seed).unwrap();
    let mut s = TrainState::new();
    run_schedule(&mut b, &mut s, &mut ArchiveBatches::new(&a, &cfg.train), &cfg.train, &mut NullSink, stop).unwrap();
    (b, s)
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let cfg = RunConfig::tiny(2);
    let (b, s) = trained(&cfg, Some(StopAt { phase: 2, iteration: 2 }));
    let bytes = encode(&b, &s, &cfg.train);
    let c = decode(std::path::Path::new("mem"), &bytes, Some(&cfg.digest())).unwrap();
    assert!(c.bundle.store.bitwise_eq(&b.store));
    assert_eq!(c.state, s);
    assert_eq!(encode(&c.bundle, &c.state, &cfg.train), bytes);

    let x = Tensor::<f32>::from_vec(&[1, 1, 8, 8], (0..64).map(|i| (i as f32 / 32.0) - 1.0).collect());
    let p0 = b.predict_pose_raw(&x).unwrap();
    let p1 = c.bundle.predict_pose_raw(&x).unwrap();
    assert!(p0.data().iter().zip(p1.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn truncated_or_corrupt_checkpoint_fails_checksum() {
    let cfg = RunConfig::tiny(2);
    let (b, s) = trained(&cfg, Some(StopAt { phase: 1, iteration: 1 }));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.ckpt");
    save_checkpoint(&p, &b, &s, &cfg.train).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
        std::fs::write(&p, &bytes[..cut]).unwrap();
        assert!(matches!(load_checkpoint(&p, None), Err(Error::Checksum { .. })), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    std::fs::write(&p, &flipped).unwrap();
    assert!(matches!(load_checkpoint(&p, None), Err(Error::Checksum { .. })));
}

#[test]
fn checkpoint_refuses_other_config_digest() {
    let cfg = RunConfig::tiny(2);
    let (b, s) = trained(&cfg, Some(StopAt { phase: 1, iteration: 1 }));
    let bytes = encode(&b, &s, &cfg.train);
    let mut other = cfg.clone();
    other.train.learning_rate = 1e-3;
    let e = decode(std::path::Path::new("mem"), &bytes, Some(&other.digest())).err().unwrap();
    assert!(matches!(e, Error::DigestMismatch { .. }));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn shared_cells_are_stored_once() {
    let cfg = RunConfig::tiny(2);
    let b = ModelBundle::<f32>::build(&cfg.arch, 1).unwrap();
    let bytes = encode(&b, &TrainState::new(), &cfg.train);
    let params: usize = b.store.cells().map(|(_, t)| t.len()).sum();
    assert_eq!(params, b.store.unique_param_count());
    assert!(b.store.view_param_count() > params);
    // magic + version + length + manifest + params + digest
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 20 + json_len + 4 * params + 32);
}

#[test]
fn pgm_header_and_mapping() {
    assert_eq!(depth_to_gray(-1.0), 0);
    assert_eq!(depth_to_gray(1.0), 255);
    assert_eq!(depth_to_gray(0.0), 128);
    let a = DepthImage::from_pixels(2, vec![-1.0, 1.0, 0.0, 1.0]);
    let bytes = pgm_grid(&[vec![a.clone(), a.clone(), a.clone()], vec![a.clone()]]);
    assert!(bytes.starts_with(b"P5\n6 4\n255\n"));
    let (w, h, px) = parse_pgm(std::path::Path::new("mem"), &bytes).unwrap();
    assert_eq!((w, h, px.len()), (6, 4, 24));
    assert_eq!(&px[..6], &[0, 255, 0, 255, 0, 255]);
    assert_eq!(px[4 * 6 - 1], 255);
}

proptest! {
    #[test]
    fn pgm_tiles_round_trip(vals in prop::collection::vec(0u8..=255, 3 * 16)) {
        let tiles: Vec<DepthImage> = vals.chunks(16).map(|c| DepthImage::from_pixels(4, c.iter().map(|&g| gray_to_depth(g)).collect())).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        write_pgm_grid(&p, &[tiles.clone()]).unwrap();
        let back = read_pgm_tiles(&p, 4).unwrap();
        for (t, b) in tiles.iter().zip(&back) {
            let g1: Vec<u8> = t.pixels().iter().map(|&v| depth_to_gray(v)).collect();
            let g2: Vec<u8> = b.pixels().iter().map(|&v| depth_to_gray(v)).collect();
            prop_assert_eq!(g1, g2);
        }
    }
}
