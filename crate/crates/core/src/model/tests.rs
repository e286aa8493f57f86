use super::*;
use crate::graph::{batch_graphs, Graph, Labels};

fn cora_settings() -> ModelSettings {
    RunConfig::default().model
}

fn cora_config() -> ModelConfig {
    ModelConfig::new(cora_settings(), 1433, 7, Task::Node).unwrap()
}

fn mlp_settings(task_dims: &[usize]) -> ModelSettings {
    let mut s = cora_settings();
    s.hidden_dims = task_dims.to_vec();
    s.heads = vec![2; task_dims.len()];
    s.head = HeadKind::Mlp;
    s.mlp_hidden = 6;
    s
}

fn ring(n: usize, feat_dim: usize, labels: Labels) -> Graph {
    let edges: Vec<(u32, u32)> = (0..n).map(|i| (i as u32, ((i + 1) % n) as u32)).collect();
    let feats = (0..n * feat_dim).map(|k| ((k * 7919) % 13) as f32 / 13.0).collect();
    Graph::from_edges(n, &edges, feats, feat_dim, 3, labels)
        .unwrap()
        .symmetrize()
        .add_self_loops()
}

#[test]
fn cora_parameter_count() {
    let m = Model::<f32>::zeros(cora_config()).unwrap();
    assert_eq!(m.num_params(), 1433 * 64 + 2 * 64 + 64 * 56 + 2 * 56);
    assert_eq!(m.num_params(), 95536);
}

#[test]
fn init_is_deterministic_and_seed_dependent() {
    let a = Model::<f32>::init_uniform(cora_config(), 7).unwrap();
    let b = Model::<f32>::init_uniform(cora_config(), 7).unwrap();
    let c = Model::<f32>::init_uniform(cora_config(), 8).unwrap();
    let bits = |m: &Model<f32>| -> Vec<u32> {
        m.params().iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn init_respects_glorot_bound() {
    let m = Model::<f64>::init_uniform(cora_config(), 0).unwrap();
    let w = &m.hidden_layers()[0].weight;
    assert_eq!(w.shape(), (1433, 64));
    let b = (6.0f64 / 1497.0).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= b));
    assert!(w.data().iter().any(|v| v.abs() > 0.9 * b));
}

#[test]
fn init_mean_within_clt_bound() {
    let mut s = cora_settings();
    s.hidden_dims = vec![64];
    s.heads = vec![1];
    let cfg = ModelConfig::new(s, 64, 7, Task::Node).unwrap();
    for seed in 0..20 {
        let m = Model::<f64>::init_uniform(cfg.clone(), seed).unwrap();
        let w = &m.hidden_layers()[0].weight;
        assert_eq!(w.len(), 4096);
        let b = (6.0f64 / 128.0).sqrt();
        let mean = w.sum() / 4096.0;
        // U[-b, b] has standard deviation 2b/sqrt(12).
        assert!(mean.abs() < 3.0 * 2.0 * b / (12.0f64 * 4096.0).sqrt(), "seed {seed}: {mean}");
    }
}

#[test]
fn zero_network_gives_zero_logits() {
    let mut s = cora_settings();
    s.hidden_dims = vec![];
    s.heads = vec![1];
    s.output_heads = 1;
    let cfg = ModelConfig::new(s, 2, 3, Task::Node).unwrap();
    let model = Model::<f64>::zeros(cfg).unwrap();
    let g = Graph::from_edges(1, &[], vec![0.5, -1.0], 2, 3, Labels::None).unwrap().add_self_loops();
    let p = model.predict(&ModelInput::from_graph(&g)).unwrap();
    assert_eq!(p.logits.shape(), (1, 3));
    assert!(p.logits.data().iter().all(|&v| v == 0.0));
    assert!(p.embeddings.is_none());
}

#[test]
fn forward_shapes_and_trace() {
    let cfg = ModelConfig::new(cora_settings(), 4, 3, Task::Node).unwrap();
    let model = Model::<f32>::init_uniform(cfg, 1).unwrap();
    let g = ring(5, 4, Labels::Node(vec![0, 1, 2, 0, 1]));
    let mut tape = Tape::new();
    let vars = model.record(&mut tape);
    let f = model.forward(&mut tape, &vars, &ModelInput::from_graph(&g), None).unwrap();
    assert_eq!(tape.shape(f.logits), (5, 3));
    assert_eq!(tape.shape(f.embeddings.unwrap()), (5, 64));
    assert_eq!(f.hidden.len(), 1);
    assert_eq!(f.hidden[0].len(), 8);
    assert_eq!(f.output.len(), 8);
    assert_eq!(f.membranes.len(), 8);
    assert_eq!(f.hidden[0][0].attention.len(), 8);
    // First-layer attention is shared across the window.
    assert_eq!(f.hidden[0][0].attention, f.hidden[0][7].attention);
}

#[test]
fn rejects_wrong_feature_width() {
    let cfg = ModelConfig::new(cora_settings(), 4, 3, Task::Node).unwrap();
    let model = Model::<f32>::zeros(cfg).unwrap();
    let g = ring(5, 3, Labels::None);
    assert!(model.predict(&ModelInput::from_graph(&g)).is_err());
}

#[test]
fn edge_and_graph_tasks_need_mlp() {
    assert!(ModelConfig::new(cora_settings(), 4, 2, Task::Edge).is_err());
    assert!(ModelConfig::new(cora_settings(), 4, 2, Task::Graph).is_err());
    assert!(ModelConfig::new(mlp_settings(&[3]), 4, 2, Task::Edge).is_ok());
}

#[test]
fn zero_mlp_gives_zero_edge_scores() {
    let cfg = ModelConfig::new(mlp_settings(&[3]), 4, 3, Task::Edge).unwrap();
    let mut model = Model::<f64>::init_uniform(cfg, 0).unwrap();
    model.mlp = Some(Mlp::zeros(12, 6, 3));
    let labels = Labels::Edge {
        pairs: vec![(0, 1), (2, 3), (4, 0)],
        classes: vec![0, 1, 2],
    };
    let g = ring(5, 4, labels);
    let p = model.predict(&ModelInput::from_graph(&g)).unwrap();
    assert_eq!(p.logits.shape(), (3, 3));
    assert!(p.logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn identical_embeddings_give_identical_edge_scores() {
    let mut tape = Tape::<f64>::new();
    let mlp = {
        let mut m = Mlp::<f64>::zeros(4, 3, 2);
        for (k, v) in m.w1.data_mut().iter_mut().enumerate() {
            *v = (k as f64 * 0.37).sin();
        }
        for (k, v) in m.w2.data_mut().iter_mut().enumerate() {
            *v = (k as f64 * 0.11).cos();
        }
        m
    };
    let vars = mlp.record(&mut tape);
    let emb = tape.constant(Tensor::from_fn(4, 2, |_, c| c as f64 + 0.5));
    let src: Arc<[u32]> = Arc::from(vec![0, 1, 2, 3]);
    let dst: Arc<[u32]> = Arc::from(vec![1, 2, 3, 0]);
    for symmetric in [false, true] {
        let s = heads::edge_scores(&mut tape, &vars, emb, &src, &dst, symmetric).unwrap();
        let v = tape.value(s);
        for r in 1..4 {
            assert_eq!(v.row(r), v.row(0));
        }
    }
}

#[test]
fn graph_head_pooling() {
    let mut tape = Tape::<f64>::new();
    let mut mlp = Mlp::<f64>::zeros(2, 2, 2);
    // ELU is the identity on non-negative inputs, so this MLP passes
    // non-negative pooled vectors through unchanged.
    mlp.w1 = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    mlp.w2 = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let vars = mlp.record(&mut tape);

    let e = tape.constant(Tensor::from_fn(3, 2, |_, c| 0.25 + c as f64));
    let one: Arc<[u32]> = Arc::from(vec![0, 0, 0]);
    let s = heads::graph_scores(&mut tape, &vars, e, &one, &[3]).unwrap();
    assert_eq!(tape.value(s).data(), &[0.25, 1.25]);

    let e = tape.constant(Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let two: Arc<[u32]> = Arc::from(vec![0, 1, 1]);
    let s = heads::graph_scores(&mut tape, &vars, e, &two, &[1, 2]).unwrap();
    assert_eq!(tape.value(s).data(), &[1.0, 2.0, 4.0, 5.0]);

    assert!(heads::graph_scores(&mut tape, &vars, e, &two, &[3, 0]).is_err());
}

#[test]
fn node_head_checks_width() {
    let t = Tensor::<f32>::zeros(4, 7);
    assert!(node_head(&t, 7).is_ok());
    assert!(node_head(&t, 3).is_err());
    assert_eq!(t.argmax_rows(), vec![0; 4]);
}

#[test]
fn masked_accuracy_by_hand() {
    let scores = Tensor::from_vec(4, 2, vec![0.9f32, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]).unwrap();
    let labels = [0u32, 1, 1, 0];
    let pred = scores.argmax_rows();
    let mask = [0usize, 1, 2];
    let correct = mask.iter().filter(|&&i| pred[i] == labels[i] as usize).count();
    assert_eq!(correct, 2);
}

#[test]
fn model_config_round_trip() {
    let cfg = ModelConfig::new(mlp_settings(&[4, 4]), 9, 5, Task::Graph).unwrap();
    assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ModelConfig::new(mlp_settings(&[3, 2]), 4, 3, Task::Edge).unwrap();
    let ck = Checkpoint {
        model: Model::init_uniform(cfg, 11).unwrap(),
        seed: 11,
        epoch: 42,
    };
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn batched_forward_matches_parts() {
    let cfg = ModelConfig::new(mlp_settings(&[3, 3]), 4, 3, Task::Graph).unwrap();
    let model = Model::<f64>::init_uniform(cfg, 5).unwrap();
    let a = ring(4, 4, Labels::Graph(vec![1]));
    let b = ring(6, 4, Labels::Graph(vec![2]));
    let batch = batch_graphs(&[a.clone(), b.clone()]).unwrap();
    let joint = model.predict(&ModelInput::from_batch(&batch)).unwrap();
    for (k, g) in [a, b].iter().enumerate() {
        let part = model.predict(&ModelInput::from_graph(g)).unwrap();
        assert!(part.logits.max_abs_diff(&joint.logits.slice_rows(k, k + 1)) < 1e-12);
        let range = batch.node_range(k);
        let e = joint.embeddings.as_ref().unwrap().slice_rows(range.start, range.end);
        assert!(part.embeddings.unwrap().max_abs_diff(&e) < 1e-12);
    }
}
