use fpaug::dataset::{Bounds, Coordinate, Fingerprint, FingerprintDataset, NormalizationParams};
use fpaug::diffusion::{
    full_sum_loss, generate_unseen_map, load_checkpoint, save_checkpoint, spatial_loss, train, vicinity_weight,
    write_loss_trace, Checkpoint, DenoiserArch, DenoiserNetwork, DiffusionTrainConfig, KernelForm, LossPair,
    NoiseSchedule, VicinityKernel,
};
use fpaug::initializer::LocationSplit;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn c(x: f64, y: f64) -> Coordinate {
    Coordinate::new(x, y).unwrap()
}

fn small_arch() -> DenoiserArch {
    DenoiserArch { hidden: vec![16, 16], cond_frequencies: 2, time_dim: 4, ..Default::default() }
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, a: usize, steps: usize) -> Vec<LossPair> {
    (0..n)
        .map(|_| LossPair {
            clean: (0..a).map(|_| rng.random_range(0.0..1.0)).collect(),
            seen: c(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
            condition: c(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
            step: rng.random_range(1..=steps),
            noise: (0..a).map(|_| rng.sample(StandardNormal)).collect(),
        })
        .collect()
}

/// Two seen locations with distinct noisy fingerprints and three unseen
/// locations between and around them.
fn toy_problem() -> (FingerprintDataset, LocationSplit) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seen = [c(0.0, 0.0), c(4.0, 0.0)];
    let base = [[0.8, 0.3, 0.0], [0.3, 0.8, 0.5]];
    let samples = (0..24)
        .map(|i| {
            let l = i % 2;
            let rss = base[l]
                .iter()
                .map(|&v: &f64| if v == 0.0 { 0.0 } else { (v + 0.02 * rng.sample::<f64, _>(StandardNormal)).clamp(0.1, 1.0) })
                .collect();
            Fingerprint::new(rss, seen[l])
        })
        .collect();
    let data = FingerprintDataset::new(samples, 3, NormalizationParams::default()).unwrap();
    let split = LocationSplit { seen: seen.to_vec(), unseen: vec![c(2.0, 0.0), c(0.0, 2.0), c(4.0, 2.0)] };
    (data, split)
}

fn toy_config() -> DiffusionTrainConfig {
    DiffusionTrainConfig {
        steps: 50,
        epochs: 20,
        batch_size: 8,
        arch: small_arch(),
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn default_schedule_terminal_value() {
    // Product of (1 - beta_t) over 200 linearly spaced betas, from an
    // independent float64 computation.
    let s = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
    assert!((s.alpha_bar(200) - 0.132_182_754_250_617_93).abs() < 1e-12);
    assert!((s.alpha_bar(50) - 0.880_104_024_777_050_5).abs() < 1e-12);
    assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let (data, split) = toy_problem();
    let cfg = toy_config();
    let a = train(&data, &split, &cfg).unwrap();
    let b = train(&data, &split, &cfg).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.network.params(), b.network.params());
    let other = train(&data, &split, &DiffusionTrainConfig { seed: 10, ..cfg.clone() }).unwrap();
    assert_ne!(a.loss_trace, other.loss_trace);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ck = Checkpoint { network: a.network.clone(), schedule: a.schedule.clone() };
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.network.params(), a.network.params());
    assert_eq!(back.network.data_sigma().to_bits(), a.network.data_sigma().to_bits());
    assert_eq!(back.schedule, a.schedule);
    assert_eq!(std::fs::read(&path).unwrap(), ck.to_bytes());

    let norm = NormalizationParams::default();
    let from_memory = generate_unseen_map(&a.network, &split, &a.schedule, 5, &norm, 3).unwrap();
    let from_disk = generate_unseen_map(&back.network, &split, &back.schedule, 5, &norm, 3).unwrap();
    assert_eq!(from_memory, from_disk);
    assert_eq!(from_memory.len(), 15);
    assert!(from_memory
        .samples()
        .iter()
        .all(|s| split.is_unseen(&s.location) && s.rss.iter().all(|&v| norm.is_valid_entry(v))));

    let trace = dir.path().join("loss.csv");
    write_loss_trace(&trace, &a.loss_trace).unwrap();
    let text = std::fs::read_to_string(&trace).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), a.loss_trace.len());
    assert!(rows[0].starts_with("1,"));
}

#[test]
fn constant_data_loss_decreases_early() {
    let split = LocationSplit { seen: vec![c(0.0, 0.0)], unseen: vec![c(1.0, 0.0)] };
    let samples = vec![Fingerprint::new(vec![0.7, 0.2, 0.0, 0.45], c(0.0, 0.0)); 32];
    let data = FingerprintDataset::new(samples, 4, NormalizationParams::default()).unwrap();
    let cfg = DiffusionTrainConfig { steps: 50, epochs: 5, batch_size: 8, arch: small_arch(), seed: 2, ..Default::default() };
    let means = train(&data, &split, &cfg).unwrap().epoch_means();
    assert_eq!(means.len(), 5);
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "epoch means {means:?}");
}

#[test]
fn wider_kernel_never_lowers_the_loss() {
    let schedule = NoiseSchedule::linear(30, 1e-4, 0.02).unwrap();
    let bounds = Bounds::new(c(0.0, 0.0), c(10.0, 10.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..20 {
        let net = DenoiserNetwork::random(small_arch(), 5, bounds, 30, trial).unwrap();
        let pairs = random_pairs(&mut rng, 16, 5, 30);
        let sigma = rng.random_range(0.5..5.0);
        let narrow = VicinityKernel::new(sigma, KernelForm::Gaussian).unwrap();
        let wide = VicinityKernel::new(2.0 * sigma, KernelForm::Gaussian).unwrap();
        let l1 = spatial_loss(&net, &pairs, &narrow, &schedule).unwrap();
        let l2 = spatial_loss(&net, &pairs, &wide, &schedule).unwrap();
        assert!(l1 >= 0.0 && l2 >= l1, "trial {trial}: {l1} then {l2}");
        for p in &pairs {
            assert!(vicinity_weight(&p.condition, &p.seen, &wide) >= vicinity_weight(&p.condition, &p.seen, &narrow));
        }
    }
}

#[test]
fn full_sum_matches_explicit_pairs() {
    let schedule = NoiseSchedule::linear(30, 1e-4, 0.02).unwrap();
    let kernel = VicinityKernel::new(3.0, KernelForm::Gaussian).unwrap();
    let net = DenoiserNetwork::random(small_arch(), 4, Bounds::new(c(0.0, 0.0), c(10.0, 10.0)).unwrap(), 30, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seen = random_pairs(&mut rng, 5, 4, 30);
    let unseen = [c(1.0, 1.0), c(8.0, 2.0), c(5.0, 5.0)];
    let mut explicit = 0.0;
    for u in &unseen {
        for p in &seen {
            let one = LossPair { condition: *u, ..p.clone() };
            explicit += spatial_loss(&net, &[one], &kernel, &schedule).unwrap();
        }
    }
    let full = full_sum_loss(&net, &seen, &unseen, &kernel, &schedule).unwrap();
    assert!((full - explicit / seen.len() as f64).abs() < 1e-12);
}

proptest! {
    #[test]
    fn nearest_seen_location_gets_the_largest_weight(
        unseen in (-20.0f64..20.0, -20.0f64..20.0),
        seen in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..10),
        sigma in 0.1f64..10.0,
        hard in any::<bool>(),
    ) {
        let form = if hard { KernelForm::Hard } else { KernelForm::Gaussian };
        let kernel = VicinityKernel::new(sigma, form).unwrap();
        let u = c(unseen.0, unseen.1);
        let mut by_distance: Vec<(f64, f64)> = seen
            .iter()
            .map(|&(x, y)| {
                let s = c(x, y);
                (u.distance(&s), vicinity_weight(&u, &s, &kernel))
            })
            .collect();
        by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));
        prop_assert!(by_distance.windows(2).all(|w| w[1].1 <= w[0].1));
        prop_assert!(by_distance.iter().all(|&(_, w)| (0.0..=1.0).contains(&w)));
    }

    #[test]
    fn spatial_loss_is_non_negative(seed in any::<u64>(), sigma in 0.1f64..10.0) {
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let net = DenoiserNetwork::random(small_arch(), 3, Bounds::new(c(0.0, 0.0), c(10.0, 10.0)).unwrap(), 20, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = random_pairs(&mut rng, 6, 3, 20);
        let kernel = VicinityKernel::new(sigma, KernelForm::Gaussian).unwrap();
        prop_assert!(spatial_loss(&net, &pairs, &kernel, &schedule).unwrap() >= 0.0);
    }
}
