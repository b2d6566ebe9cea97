use lsps::config::RunConfig;
use lsps::loader::Prefetcher;
use lsps_core::models::ModelBundle;
use lsps_core::synthgen::make_dataset;
use lsps_core::trainer::{run_schedule, ArchiveBatches, BatchProvider, NullSink, TrainState};

#[test]
fn parallel_delivery_matches_serial_order() {
    let mut cfg = RunConfig::tiny(6);
    cfg.train.label_fraction_percent = 25.0;
    cfg.dataset.label_fraction_percent = 25.0;
    let a = make_dataset(&cfg.skeleton, &cfg.synthetic_style, &cfg.real_style, &cfg.cube, &cfg.dataset).unwrap();
    let mut serial = ArchiveBatches::new(&a, &cfg.train);
    let mut par = Prefetcher::<f32>::new(ArchiveBatches::new(&a, &cfg.train), 3, cfg.train.phase_iterations);
    for t in 0..cfg.train.phase_iterations[0] {
        let x: lsps_core::tensor::Tensor<f32> = serial.pose_batch(t).unwrap();
        assert_eq!(x, par.pose_batch(t).unwrap());
    }
    for phase in 2..=3u8 {
        for t in 0..cfg.train.phase_iterations[phase as usize - 1] {
            let x: lsps_core::losses::Batch<f32> = serial.depth_batch(phase, t).unwrap();
            let y = par.depth_batch(phase, t).unwrap();
            assert_eq!((x.x_s, x.y_s, x.x_r, x.labeled), (y.x_s, y.y_s, y.x_r, y.labeled));
        }
    }
}

#[test]
fn training_with_workers_is_bitwise_identical() {
    let cfg = RunConfig::tiny(6);
    let a = make_dataset(&cfg.skeleton, &cfg.synthetic_style, &cfg.real_style, &cfg.cube, &cfg.dataset).unwrap();
    let run = |workers| {
        let mut b = ModelBundle::<f32>::build(&cfg.arch, cfg.train.seed).unwrap();
        let mut s = TrainState::new();
        let mut p = Prefetcher::<f32>::new(ArchiveBatches::new(&a, &cfg.train), workers, cfg.train.phase_iterations);
        run_schedule(&mut b, &mut s, &mut p, &cfg.train, &mut NullSink, None).unwrap();
        b
    };
    assert!(run(1).store.bitwise_eq(&run(4).store));
}
