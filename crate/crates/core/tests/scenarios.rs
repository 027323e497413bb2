use oic_core::scenarios::{
    calibrate, draw_channel, ensemble_run, gen_indoor, gen_lognormal, sample_pose, ChannelModel, EnsembleConfig, Metric,
    ReceiverKind, RoomLayout, UePose, PITCH_MEAN_DEG, PITCH_SCALE_DEG,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn lognormal_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1_000_000;
    let h = gen_lognormal(1000, 1000, &mut rng).unwrap();
    let logs: Vec<f64> = h.matrix().iter().map(|x| x.ln()).collect();
    assert_eq!(logs.len(), n);
    let mean = logs.iter().sum::<f64>() / n as f64;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() <= 3.0 * (var / n as f64).sqrt(), "{mean}");
    assert!((var - 1.0).abs() < 0.01, "{var}");

    let mut entries: Vec<f64> = h.matrix().iter().copied().collect();
    let entry_mean = entries.iter().sum::<f64>() / n as f64;
    // standard error of a lognormal(0, 1) mean: sqrt((e − 1) e) / sqrt(n)
    let se = ((std::f64::consts::E - 1.0) * std::f64::consts::E).sqrt() / (n as f64).sqrt();
    assert!((entry_mean - 0.5f64.exp()).abs() <= 4.0 * se, "{entry_mean}");
    entries.sort_by(f64::total_cmp);
    assert!((entries[n / 2] - 1.0).abs() < 0.01);
}

#[test]
fn pitch_follows_laplace() {
    let layout = RoomLayout::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 200_000;
    let mut pitches: Vec<f64> = (0..n).map(|_| sample_pose(&layout, &mut rng).pitch.to_degrees()).collect();
    pitches.sort_by(f64::total_cmp);
    let median = pitches[n / 2];
    assert!((median - PITCH_MEAN_DEG).abs() < 0.1, "{median}");
    // mean absolute deviation of a Laplace law equals its scale
    let mad = pitches.iter().map(|p| (p - PITCH_MEAN_DEG).abs()).sum::<f64>() / n as f64;
    assert!((mad - PITCH_SCALE_DEG).abs() < 0.05, "{mad}");
}

#[test]
fn scaled_gains_stay_near_one() {
    let layout = RoomLayout::default();
    for kind in [ReceiverKind::Sr, ReceiverKind::Mdr] {
        let fresh = calibrate(&layout, kind, 20_000, 99).unwrap();
        assert!(fresh / kind.calibration_scale() <= 1.05, "{kind}");
    }
    let pose = UePose { position: [0.0, 0.0, 1.0], yaw: 0.3, pitch: 0.2, roll: 0.0 };
    let h = gen_indoor(&layout, ReceiverKind::Mdr, &pose).unwrap();
    assert!(h.iter().all(|&g| (0.0..=1.1).contains(&g)));
}

#[test]
fn zero_channels_are_flagged() {
    let layout = RoomLayout { fov_deg: 1.0, ..RoomLayout::default() };
    let mut cfg = EnsembleConfig::new(
        ChannelModel::Indoor { receiver: ReceiverKind::Sr },
        50,
        vec![0.5; 4],
        vec![Metric::EpsRank],
        4,
    );
    cfg.layout = layout;
    let out = ensemble_run(&cfg).unwrap();
    let zero = out.records.iter().filter(|r| r.zero).count();
    assert!(zero > 0);
    assert!(out.records.iter().filter(|r| r.zero).all(|r| r.values.is_empty() && r.failures.is_empty()));
    assert_eq!(out.cdfs[&Metric::EpsRank].len(), 50 - zero);
}

#[test]
fn streams_are_per_sample() {
    let cfg = EnsembleConfig::new(ChannelModel::Lognormal { n_r: 2, n_t: 3 }, 10, vec![0.5; 3], vec![], 5);
    let a = draw_channel(&cfg, 3).unwrap();
    let b = draw_channel(&EnsembleConfig { samples: 1000, ..cfg.clone() }, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, draw_channel(&cfg, 4).unwrap());
}

#[test]
fn rejects_bad_configs() {
    let cfg = EnsembleConfig::new(ChannelModel::Lognormal { n_r: 2, n_t: 3 }, 10, vec![0.5; 2], vec![], 5);
    assert!(ensemble_run(&cfg).is_err());
    let cfg = EnsembleConfig { alpha: vec![0.5, 1.5, 0.1], ..cfg };
    assert!(ensemble_run(&cfg).is_err());
    let cfg = EnsembleConfig { alpha: vec![0.5; 3], eps: 0.0, ..cfg };
    assert!(ensemble_run(&cfg).is_err());
}

#[test]
fn slopes_dominate_per_sample() {
    let cfg = EnsembleConfig::new(
        ChannelModel::Indoor { receiver: ReceiverKind::Mdr },
        200,
        vec![0.7, 0.6, 0.3, 0.2],
        vec![Metric::SlopeEc, Metric::SlopeBc, Metric::RatioRl],
        6,
    );
    let out = ensemble_run(&cfg).unwrap();
    for rec in &out.records {
        if let (Some(ec), Some(bc)) = (rec.values.get(&Metric::SlopeEc), rec.values.get(&Metric::SlopeBc)) {
            assert!(bc >= &(ec - 1e-12), "sample {}", rec.index);
        }
        if let Some(rl) = rec.values.get(&Metric::RatioRl) {
            assert!(*rl <= 1.0 + 1e-12);
        }
    }
}
