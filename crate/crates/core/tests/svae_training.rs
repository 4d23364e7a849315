use proptest::prelude::*;
use sphlat::svae::{train_svae, DatasetSpec, PosteriorFamily, SvaeConfig, SvaeTrainer, ToyDataset};
use sphlat::tensor::{Checkpoint, Tensor};

fn data(n: usize) -> ToyDataset {
    ToyDataset::generate(&DatasetSpec {
        n_items: n,
        ..Default::default()
    })
}

fn small(family: PosteriorFamily, epochs: usize) -> SvaeConfig {
    SvaeConfig {
        family,
        hidden: 64,
        layers: 2,
        epochs,
        batch_size: 16,
        lr: 2e-3,
        ..Default::default()
    }
}

fn mean_recon(model: &sphlat::svae::SvaeModel, ds: &ToyDataset) -> f64 {
    ds.items.iter().map(|x| model.reconstruct(x).unwrap().1).sum::<f64>() / ds.len() as f64
}

#[test]
fn unregularised_spherical_model_beats_the_mean_predictor() {
    let ds = data(256);
    let (model, log) = train_svae(&small(PosteriorFamily::PowerSpherical { kl_weight: 0.0 }, 15), &ds).unwrap();
    let baseline = ds.mean_predictor_mse();
    let recon = mean_recon(&model, &ds);
    assert!(recon < baseline, "recon {recon} vs baseline {baseline}");
    assert_eq!(log.epochs.len(), 15);
}

#[test]
fn training_lowers_reconstruction_error() {
    let ds = data(128);
    let cfg = small(PosteriorFamily::GaussianNorm { kl_weight: 0.004 }, 6);
    let untrained = SvaeTrainer::new(cfg.clone(), 8, 8).unwrap();
    let before = mean_recon(&untrained.model, &ds);
    let (model, _) = train_svae(&cfg, &ds).unwrap();
    assert!(mean_recon(&model, &ds) < before);
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let ds = data(64);
    let cfg = small(PosteriorFamily::PowerSpherical { kl_weight: 0.004 }, 2);
    let run = || {
        let mut t = SvaeTrainer::new(cfg.clone(), 8, 8).unwrap();
        t.train(&ds, cfg.epochs).unwrap();
        t.checkpoint().to_bytes()
    };
    assert_eq!(run(), run());
    let other = SvaeConfig { seed: 1, ..cfg.clone() };
    let mut t = SvaeTrainer::new(other, 8, 8).unwrap();
    t.train(&ds, 2).unwrap();
    assert_ne!(t.checkpoint().to_bytes(), run());
}

#[test]
fn kl_sweep_is_monotone_in_the_weight() {
    let ds = data(256);
    let finals: Vec<f64> = [0.001, 0.004, 0.008]
        .iter()
        .map(|&w| {
            let (_, log) = train_svae(&small(PosteriorFamily::PowerSpherical { kl_weight: w }, 8), &ds).unwrap();
            log.epochs.last().unwrap().kl
        })
        .collect();
    assert!(finals[0] > finals[1] && finals[1] > finals[2], "{finals:?}");
}

#[test]
fn every_family_trains_to_finite_losses_over_ten_seeds() {
    let ds = data(32);
    let families = [
        PosteriorFamily::DiagGaussian { kl_weight: 0.004 },
        PosteriorFamily::SigmaVae {
            c_sigma: 1.0,
            per_model: false,
            mean_penalty: 1e-3,
        },
        PosteriorFamily::SigmaVae {
            c_sigma: 0.5,
            per_model: true,
            mean_penalty: 1e-3,
        },
        PosteriorFamily::GaussianNorm { kl_weight: 0.004 },
        PosteriorFamily::PowerSpherical { kl_weight: 0.004 },
    ];
    for fam in families {
        for seed in 0..10 {
            let cfg = SvaeConfig {
                seed,
                hidden: 32,
                ..small(fam.clone(), 1)
            };
            let (_, log) = train_svae(&cfg, &ds).unwrap();
            let e = log.epochs[0];
            assert!(e.recon.is_finite() && e.kl.is_finite() && e.total.is_finite(), "{fam:?} seed {seed}");
        }
    }
}

#[test]
fn resume_continues_the_step_counter() {
    let ds = data(48);
    let cfg = small(PosteriorFamily::DiagGaussian { kl_weight: 0.004 }, 3);
    let mut straight = SvaeTrainer::new(cfg.clone(), 8, 8).unwrap();
    straight.train(&ds, 3).unwrap();
    let mut part = SvaeTrainer::new(cfg.clone(), 8, 8).unwrap();
    part.train(&ds, 1).unwrap();
    let steps = part.opt.step_count();
    assert_eq!(steps as usize, part.steps_per_epoch(ds.len()));
    let ck = Checkpoint::from_bytes(&part.checkpoint().to_bytes()).unwrap();
    let mut resumed = SvaeTrainer::restore(cfg, 8, 8, &ck).unwrap();
    assert_eq!(resumed.opt.step_count(), steps);
    let log = resumed.train(&ds, 3).unwrap();
    assert_eq!(log.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
}

#[test]
fn empty_dataset_is_rejected() {
    let ds = data(0);
    assert!(train_svae(&small(PosteriorFamily::PowerSpherical { kl_weight: 0.004 }, 1), &ds).is_err());
}

fn arb_tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..4, 0..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(prop_oneof![any::<f64>(), Just(-0.0), Just(f64::INFINITY), Just(f64::NAN)], n)
            .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    })
}

proptest! {
    #[test]
    fn checkpoints_round_trip_bit_exactly(entries in prop::collection::vec(("[a-z./_0-9]{0,12}", arb_tensor()), 0..6)) {
        let mut ck = Checkpoint::default();
        for (name, t) in &entries {
            ck.push(name, t.clone());
        }
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.entries.len(), entries.len());
        for ((n1, t1), (n2, t2)) in back.entries.iter().zip(&entries) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let bits1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let bits2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(bits1, bits2);
        }
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
