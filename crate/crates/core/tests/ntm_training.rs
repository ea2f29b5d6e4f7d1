use greg_core::corpus::BowVector;
use greg_core::ntm::*;
use greg_core::synthetic::block_corpus;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn entry(params: &mut NtmParams<f64>, layer: usize, idx: usize) -> &mut f64 {
    let l = params.layers_mut().into_iter().nth(layer).unwrap();
    let w = l.weight.len();
    if idx < w {
        let cols = l.weight.ncols();
        &mut l.weight[[idx / cols, idx % cols]]
    } else {
        &mut l.bias[idx - w]
    }
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (v, k, h) = (6, 3, 4);
    let mut params = NtmParams::<f64>::init(v, k, h, &mut rng);
    let counts = Array2::from_shape_fn((3, v), |(i, j)| ((i * 7 + j * 3) % 4) as f64);
    let noise = sample_noise::<f64, _>(3, k, &mut rng);
    let (_, grad) = elbo_batch(&params, &counts, &noise).unwrap();
    let sizes: Vec<usize> = params.layers().iter().map(|l| l.weight.len() + l.bias.len()).collect();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for (layer, &size) in sizes.iter().enumerate() {
        for idx in 0..size {
            let original = *entry(&mut params, layer, idx);
            *entry(&mut params, layer, idx) = original + step;
            let up = elbo_batch(&params, &counts, &noise).unwrap().0;
            *entry(&mut params, layer, idx) = original - step;
            let down = elbo_batch(&params, &counts, &noise).unwrap().0;
            *entry(&mut params, layer, idx) = original;
            let fd = (up - down) / (2.0 * step);
            let g = *entry(&mut grad.clone(), layer, idx);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn two_blocks_are_recovered() {
    let (corpus, emb) = block_corpus(2, 20, 400, 40, 7).unwrap();
    let cfg = TrainConfig {
        num_topics: 2,
        hidden: 50,
        gamma: 0.0,
        batch_size: 50,
        learning_rate: 1e-3,
        epochs: 60,
        seed: 1,
        ..Default::default()
    };
    let out = train(&corpus, &cfg, &emb).unwrap();
    assert!(out.diverged.is_none());
    let z = infer_corpus(&out.params, &corpus, &corpus.test).unwrap();
    let labels: Vec<usize> = corpus.test.iter().map(|&i| corpus.labels[i].unwrap()).collect();
    let hits = z
        .rows()
        .into_iter()
        .zip(&labels)
        .filter(|(r, &l)| ((r[1] > r[0]) as usize) == l)
        .count();
    let acc = hits.max(labels.len() - hits) as f64 / labels.len() as f64;
    assert!(acc > 0.9, "block recovery accuracy {acc}");
}

#[test]
fn loss_on_fixed_batch_decreases() {
    let (corpus, _) = block_corpus(2, 20, 100, 40, 3).unwrap();
    let docs: Vec<&BowVector> = corpus.docs.iter().take(50).collect();
    let counts = count_matrix::<f64>(&docs, corpus.vocabulary.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = NtmParams::<f64>::init(corpus.vocabulary.len(), 2, 50, &mut rng);
    let noise = sample_noise::<f64, _>(docs.len(), 2, &mut rng);
    let mut adam = Adam::new(&params, 1e-3);
    let first = elbo_batch(&params, &counts, &noise).unwrap().0;
    for _ in 0..50 {
        let (_, grad) = elbo_batch(&params, &counts, &noise).unwrap();
        adam.step(&mut params, &grad);
    }
    let last = elbo_batch(&params, &counts, &noise).unwrap().0;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn regulariser_off_matches_backbone_loop_bitwise() {
    let (corpus, emb) = block_corpus(2, 15, 120, 30, 9).unwrap();
    let cfg = TrainConfig {
        num_topics: 4,
        hidden: 16,
        gamma: 0.0,
        batch_size: 16,
        max_steps: Some(40),
        seed: 21,
        ..Default::default()
    };
    let out = train(&corpus, &cfg, &emb).unwrap();
    assert_eq!(out.log.len(), 40);
    assert!(out.log.iter().all(|s| s.greg == 0.0));

    let mut rngs = TrainRngs::new(cfg.seed);
    let mut params = NtmParams::<f64>::init(corpus.vocabulary.len(), cfg.num_topics, cfg.hidden, &mut rngs.init);
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut losses = Vec::new();
    'outer: loop {
        let order = epoch_order(&corpus.train, &mut rngs.data);
        for chunk in order.chunks(cfg.batch_size) {
            if losses.len() == 40 {
                break 'outer;
            }
            let docs: Vec<&BowVector> = chunk.iter().map(|&i| &corpus.docs[i]).collect();
            let counts = count_matrix::<f64>(&docs, corpus.vocabulary.len());
            let noise = sample_noise::<f64, _>(docs.len(), cfg.num_topics, &mut rngs.noise);
            let (loss, grad) = elbo_batch(&params, &counts, &noise).unwrap();
            adam.step(&mut params, &grad);
            losses.push(loss);
        }
    }
    for (s, l) in out.log.iter().zip(&losses) {
        assert_eq!(s.total.to_bits(), l.to_bits(), "step {}", s.step);
    }
    assert!(out.params.values().zip(params.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn regularised_training_runs_and_logs_both_terms() {
    let (corpus, emb) = block_corpus(2, 15, 80, 30, 2).unwrap();
    let cfg = TrainConfig {
        num_topics: 3,
        hidden: 16,
        gamma: 10.0,
        batch_size: 20,
        top_words: 5,
        max_steps: Some(6),
        seed: 5,
        ..Default::default()
    };
    let mut seen = 0;
    let out = train_with(&corpus, &cfg, &emb, None, |_| seen += 1).unwrap();
    assert_eq!(seen, 6);
    assert!(out.diverged.is_none());
    for s in &out.log {
        assert!(s.greg >= 0.0 && s.elbo > 0.0);
        assert!((s.total - (s.elbo + 10.0 * s.greg)).abs() < 1e-9 * s.total.abs());
        assert!(s.max_marginal_violation < cfg.sinkhorn.stop_threshold);
    }
    let again = train(&corpus, &cfg, &emb).unwrap();
    assert!(out.params.values().zip(again.params.values()).all(|(a, b)| a == b));
}

#[test]
fn checkpoint_survives_disk_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = NtmParams::<f64>::init(9, 3, 5, &mut rng);
    let ck = Checkpoint {
        params,
        vocab_hash: "abc".into(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.vocab_hash, "abc");
    assert_eq!(back.digest(), ck.digest());
    std::fs::write(&path, b"junk").unwrap();
    assert!(Checkpoint::<f64>::load(&path).is_err());
}
