use sphlat::ar::{decode_sequence, mean_cosine_to_process, train_ar, ArConfig, ArTrainer, CfgSchedule, DecodeOptions, MarkovSphereProcess, ProcessSpec, RefeedMode};
use sphlat::rng::stream;

fn process() -> MarkovSphereProcess {
    MarkovSphereProcess::new(ProcessSpec {
        dim: 4,
        n_classes: 2,
        kappa: 8.0,
        ..Default::default()
    })
    .unwrap()
}

fn config(steps: usize) -> ArConfig {
    ArConfig {
        token_dim: 4,
        grid_h: 1,
        grid_w: 3,
        width: 64,
        blocks: 2,
        heads: 4,
        n_classes: 2,
        cond_tokens: 4,
        batch_size: 32,
        lr: 6e-3,
        steps,
        ..Default::default()
    }
}

#[test]
fn decoded_mean_cosine_matches_the_process() {
    let p = process();
    let cfg = config(2000);
    let r = cfg.radius();
    let train = p.dataset(2000, (1, 3), r, 1).unwrap();
    let (model, _) = train_ar(&cfg, &train).unwrap();
    let opts = DecodeOptions {
        n_steps: 50,
        cfg: CfgSchedule::none(),
        refeed: RefeedMode::Projected,
        use_cache: true,
    };
    let decoded: Vec<_> = (0..400)
        .map(|i| decode_sequence(&model, Some(i % 2), &opts, &mut stream(77, i as u64)).unwrap().projected_sequence().unwrap())
        .collect();
    let gt = p.dataset(400, (1, 3), r, 99).unwrap();
    let a = mean_cosine_to_process(&p, &decoded).unwrap();
    let b = mean_cosine_to_process(&p, &gt).unwrap();
    let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!((a.value - b.value).abs() <= 4.0 * se, "decoded {a:?} vs ground truth {b:?}");
}

#[test]
fn resume_continues_the_step_counter_and_matches_a_straight_run() {
    let p = process();
    let cfg = config(12);
    let train = p.dataset(64, (1, 3), cfg.radius(), 2).unwrap();
    let mut straight = ArTrainer::new(cfg.clone()).unwrap();
    straight.train(&train, 12).unwrap();

    let mut part = ArTrainer::new(cfg.clone()).unwrap();
    part.train(&train, 5).unwrap();
    let ck = sphlat::tensor::Checkpoint::from_bytes(&part.checkpoint().to_bytes()).unwrap();
    let mut resumed = ArTrainer::restore(cfg.clone(), &ck).unwrap();
    assert_eq!(resumed.opt.step_count(), 5);
    let log = resumed.train(&train, 12).unwrap();
    assert_eq!(resumed.opt.step_count(), 12);
    assert_eq!(log.rows.last().unwrap().step, 12);
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());

    let mut again = ArTrainer::new(cfg).unwrap();
    again.train(&train, 12).unwrap();
    assert_eq!(again.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
}
