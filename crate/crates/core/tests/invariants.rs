mod common;

use common::*;
use spikinggat::attention::EdgeAttention;
use spikinggat::autodiff::Tape;
use spikinggat::config::Mode;
use spikinggat::graph::batch_graphs;
use spikinggat::model::ModelInput;

#[test]
fn attention_rows_are_distributions_at_every_step() {
    for (k, g) in random_graphs(10, 24, 4, 3, 7).iter().enumerate() {
        let model = small_model(4, 3, Mode::Spiking, 8, k as u64);
        let input = ModelInput::from_graph(g);
        let mut tape = Tape::new();
        let vars = model.record(&mut tape);
        let f = model.forward(&mut tape, &vars, &input, None).unwrap();
        for trace in f.hidden.iter().flatten().chain(&f.output) {
            let a = EdgeAttention::from_tape(&tape, &trace.attention, &input.edges);
            assert!(a.max_row_sum_error() < 1e-6);
            assert!(a.all_in_unit_interval());
        }
        for step in f.hidden.iter().flatten() {
            let spikes = tape.value(step.lif.unwrap().spikes);
            assert!(spikes.data().iter().all(|&s| s == 0.0 || s == 1.0));
        }
    }
}

#[test]
fn silent_integrator_accumulates_input_exactly() {
    // With no leak, the output membrane is the running sum of its input.
    for (k, g) in random_graphs(5, 16, 4, 3, 8).iter().enumerate() {
        let model = small_model(4, 3, Mode::Spiking, 8, k as u64);
        let input = ModelInput::from_graph(g);
        let mut tape = Tape::new();
        let vars = model.record(&mut tape);
        let f = model.forward(&mut tape, &vars, &input, None).unwrap();
        let mut sum = tape.value(f.output[0].current).clone();
        for t in 0..8 {
            if t > 0 {
                sum.add_assign(tape.value(f.output[t].current));
            }
            assert_eq!(tape.value(f.membranes[t]), &sum, "graph {k}, step {t}");
        }
    }
}

#[test]
fn batched_forward_matches_per_graph() {
    for fixture in 0..10u64 {
        let graphs = random_graphs(4, 12, 4, 3, 20 + fixture);
        let batch = batch_graphs(&graphs).unwrap();
        for mode in [Mode::Spiking, Mode::SpikeFreeOracle] {
            let model = small_model(4, 3, mode, 8, fixture).cast::<f32>();
            let joint = model.predict(&ModelInput::from_batch(&batch)).unwrap();
            for (k, g) in graphs.iter().enumerate() {
                let part = model.predict(&ModelInput::from_graph(g)).unwrap();
                let r = batch.node_range(k);
                let d = part.logits.max_abs_diff(&joint.logits.slice_rows(r.start, r.end));
                assert!(d < 1e-5, "fixture {fixture}, graph {k}: {d}");
            }
        }
    }
}
