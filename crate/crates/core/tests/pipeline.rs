use tpgn_core::data::{make_embeddings, read_dataset, sample_dataset, write_dataset};
use tpgn_core::interpret::{assign_nearest, collect_unbinding, conformity_table, kmeans};
use tpgn_core::model::{forward_caption, Decoding};
use tpgn_core::{load_checkpoint, save_checkpoint, Checkpoint, HyperParams, SceneGrammar, TrainConfig};

#[test]
fn dataset_training_checkpoint_and_analysis_fit_together() {
    let grammar = SceneGrammar::toy();
    let samples = sample_dataset(&grammar, 30, 0.05, 11).unwrap();

    let mut buf = Vec::new();
    write_dataset(&samples, grammar.vocab(), &mut buf).unwrap();
    let reread = read_dataset(buf.as_slice(), grammar.vocab()).unwrap();
    assert_eq!(reread.len(), samples.len());
    for (a, b) in samples.iter().zip(&reread) {
        assert_eq!(a.caption, b.caption);
        assert_eq!(a.pos_tags, b.pos_tags);
        assert_eq!(a.features.as_slice(), b.features.as_slice());
    }

    let hyper = HyperParams {
        d: 4,
        vocab_size: grammar.vocab().len(),
        feature_dim: grammar.feature_dim(),
        max_len: grammar.max_len(),
        start_id: grammar.start_id(),
        end_id: grammar.end_id(),
    };
    let config = TrainConfig {
        epochs: 4,
        batch_size: 5,
        learning_rate: 0.02,
        seed: 11,
        ..TrainConfig::default()
    };
    let we = make_embeddings(hyper.vocab_size, hyper.d, 11).unwrap().we;
    let outcome = tpgn_core::train::train(&reread, we, &config, &hyper).unwrap();
    assert_eq!(outcome.curve.len(), 4);
    assert!(outcome.curve[3].mean_loss < outcome.curve[0].mean_loss);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = Checkpoint {
        hyper: hyper.clone(),
        params: outcome.params,
        vocab: grammar.vocab().words().to_vec(),
        seed: 11,
    };
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    for s in &reread {
        let a = forward_caption(&s.features, &ckpt.params, &hyper, None, Decoding::Greedy).unwrap();
        let b = forward_caption(&s.features, &loaded.params, &loaded.hyper, None, Decoding::Greedy).unwrap();
        assert_eq!(a.word_ids, b.word_ids);
    }

    let records = collect_unbinding(&loaded.params, &loaded.hyper, &reread, grammar.tags()).unwrap();
    let us: Vec<_> = records.iter().map(|r| r.u.clone()).collect();
    let model = kmeans(&us, 2, 1, 100).unwrap();
    let assign = assign_nearest(&model, &us).unwrap();
    let table = conformity_table(&records, &assign, grammar.vocab(), true).unwrap();
    assert!(table.rows.iter().all(|r| r.n_r <= r.n_w));
    assert!(table.noun_cluster < 2);
}
