use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use starner_core::encoder::RecurrentCellParams;
use starner_core::numerics::{sigmoid, Graph, ParamId, ParamStore, Tensor};
use starner_core::stargraph::{
    attend, baseline_gat_score, build_topology, count_attention_pairs, hybrid_score, layer_step, project,
    run_layers, run_state, window_pairs_closed_form, GraphState, HeadParams, LayerOptions, LayerParams, Neighbor,
    NodeKind, StarGraph, Topology,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_rows(r: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..width).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

fn graph_with(seed: u64, d: usize, heads: usize, depth: usize, window: usize) -> (ParamStore, StarGraph) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let graph = StarGraph::new(&mut store, d, heads, depth, window, &mut r).unwrap();
    // Non-zero biases so every map is a genuine affine map.
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
    }
    (store, graph)
}

fn zero_params(store: &mut ParamStore, ids: &[ParamId]) {
    for &id in ids {
        store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

fn state(r: &mut ChaCha8Rng, n: usize, c: usize, d: usize) -> GraphState {
    GraphState {
        text: Tensor::from_rows(&random_rows(r, n, d)).unwrap(),
        types: Tensor::from_rows(&random_rows(r, c, d)).unwrap(),
        layer: 0,
    }
}

fn step(store: &ParamStore, graph: &StarGraph, s: &GraphState, topo: &Topology, layer: usize, opts: LayerOptions) -> GraphState {
    let mut g = Graph::inference(store);
    let t = g.constant(s.text.clone());
    let y = g.constant(s.types.clone());
    let (t, y) = layer_step(&mut g, t, y, topo, &graph.layers[layer], opts).unwrap();
    GraphState {
        text: g.value(t).clone(),
        types: g.value(y).clone(),
        layer: s.layer + 1,
    }
}

fn plain_cell(store: &ParamStore, p: &RecurrentCellParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let aff = |v: &[f64], w: ParamId, b: ParamId| -> Vec<f64> {
        let w = store.tensor(w);
        let b = store.tensor(b).data();
        (0..w.cols()).map(|j| b[j] + (0..w.rows()).map(|i| v[i] * w.get(i, j)).sum::<f64>()).collect()
    };
    let (xr, hr) = (aff(x, p.w_xr, p.b_xr), aff(h, p.w_hr, p.b_hr));
    let (xz, hz) = (aff(x, p.w_xz, p.b_xz), aff(h, p.w_hz, p.b_hz));
    let (xn, hn) = (aff(x, p.w_xn, p.b_xn), aff(h, p.w_hn, p.b_hn));
    (0..h.len())
        .map(|k| {
            let r = sigmoid(xr[k] + hr[k]);
            let z = sigmoid(xz[k] + hz[k]);
            let n = (xn[k] + r * hn[k]).tanh();
            (1.0 - z) * n + z * h[k]
        })
        .collect()
}

/// One layer evaluated query by query through `attend`.
fn plain_layer(store: &ParamStore, layer: &LayerParams, s: &GraphState, topo: &Topology) -> GraphState {
    let text: Vec<Vec<f64>> = (0..topo.n).map(|i| s.text.row_slice(i).to_vec()).collect();
    let types: Vec<Vec<f64>> = (0..topo.c).map(|t| s.types.row_slice(t).to_vec()).collect();
    let mut new_text = Vec::new();
    for i in 0..topo.n {
        let keys: Vec<(&[f64], NodeKind)> = topo
            .text_neighbors(i)
            .iter()
            .map(|nb| match *nb {
                Neighbor::Text(j) => (&text[j][..], NodeKind::Text),
                Neighbor::Type(t) => (&types[t][..], NodeKind::Type),
            })
            .collect();
        let msg: Vec<f64> = layer
            .heads
            .iter()
            .flat_map(|h| attend(store, h, &text[i], NodeKind::Text, &keys).unwrap().output)
            .collect();
        new_text.push(plain_cell(store, &layer.text_update, &msg, &text[i]));
    }
    let mut new_types = Vec::new();
    for t in 0..topo.c {
        let keys: Vec<(&[f64], NodeKind)> = new_text.iter().map(|h| (&h[..], NodeKind::Text)).collect();
        let msg: Vec<f64> = layer
            .heads
            .iter()
            .flat_map(|h| attend(store, h, &types[t], NodeKind::Type, &keys).unwrap().output)
            .collect();
        new_types.push(plain_cell(store, &layer.type_update, &msg, &types[t]));
    }
    GraphState {
        text: Tensor::from_rows(&new_text).unwrap(),
        types: Tensor::from_rows(&new_types).unwrap(),
        layer: s.layer + 1,
    }
}

#[test]
fn batched_layer_matches_query_by_query_evaluation() {
    for (seed, n, c, k) in [(1, 3, 1, 1), (2, 7, 3, 2), (3, 1, 2, 0), (4, 5, 2, 1), (5, 4, 1, 6)] {
        let (store, graph) = graph_with(seed, 8, 2, 1, k);
        let topo = build_topology(n, c, k).unwrap();
        let s = state(&mut rng(seed + 50), n, c, 8);
        let got = step(&store, &graph, &s, &topo, 0, LayerOptions::default());
        let want = plain_layer(&store, &graph.layers[0], &s, &topo);
        assert!(got.text.max_abs_diff(&want.text) <= 1e-12, "seed {seed}");
        assert!(got.types.max_abs_diff(&want.types) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn zero_layer_halves_every_node() {
    let (mut store, graph) = graph_with(6, 8, 4, 1, 1);
    let ids: Vec<ParamId> = store.ids().collect();
    zero_params(&mut store, &ids);
    let topo = build_topology(4, 2, 1).unwrap();
    let s = state(&mut rng(7), 4, 2, 8);
    let out = step(&store, &graph, &s, &topo, 0, LayerOptions::default());
    assert_eq!(out.text, s.text.map(|v| 0.5 * v));
    assert_eq!(out.types, s.types.map(|v| 0.5 * v));
}

#[test]
fn single_text_node_hand_trace() {
    // n=1, c=1, k=0 with zero scores: the text node splits its attention
    // evenly between itself and the type node.
    let (mut store, graph) = graph_with(8, 4, 1, 1, 0);
    let head = graph.layers[0].heads[0].clone();
    zero_params(&mut store, &[head.a, head.w_p]);
    let topo = build_topology(1, 1, 0).unwrap();
    let s = state(&mut rng(9), 1, 1, 4);
    let out = step(&store, &graph, &s, &topo, 0, LayerOptions::default());

    let h = s.text.row_slice(0);
    let y = s.types.row_slice(0);
    let self_proj = project(&store, &head, h, NodeKind::Text, NodeKind::Text);
    let type_proj = project(&store, &head, y, NodeKind::Type, NodeKind::Text);
    let msg: Vec<f64> = self_proj.iter().zip(&type_proj).map(|(a, b)| 0.5 * (a + b)).collect();
    let text = plain_cell(&store, &graph.layers[0].text_update, &msg, h);
    assert!(out.text.max_abs_diff(&Tensor::row(&text)) <= 1e-14);

    // The type node sees only the updated text node.
    let type_msg = project(&store, &head, &text, NodeKind::Text, NodeKind::Type);
    let types = plain_cell(&store, &graph.layers[0].type_update, &type_msg, y);
    assert!(out.types.max_abs_diff(&Tensor::row(&types)) <= 1e-14);
}

#[test]
fn stacked_steps_equal_run_layers() {
    let (store, graph) = graph_with(10, 8, 2, 3, 1);
    let topo = build_topology(5, 2, 1).unwrap();
    let s = state(&mut rng(11), 5, 2, 8);
    let opts = LayerOptions::default();
    let one = step(&store, &graph, &s, &topo, 0, opts);
    let two = step(&store, &graph, &one, &topo, 1, opts);

    let via_run1 = run_state(&store, &graph, &s, &topo, 1, opts).unwrap();
    let via_run2 = run_state(&store, &graph, &s, &topo, 2, opts).unwrap();
    let via_run3 = run_state(&store, &graph, &s, &topo, 3, opts).unwrap();
    assert_eq!(via_run1, one);
    assert_eq!(via_run2, two);
    assert_eq!(via_run2.layer, 2);
    assert!(via_run2.text.max_abs_diff(&via_run3.text) > 1e-6);

    let mut g = Graph::inference(&store);
    let t = g.constant(s.text.clone());
    let y = g.constant(s.types.clone());
    assert!(run_layers(&mut g, &graph, t, y, &topo, 0, opts).is_err());
    assert!(run_layers(&mut g, &graph, t, y, &topo, 4, opts).is_err());
}

#[test]
fn layers_share_no_parameters() {
    let (store, graph) = graph_with(12, 8, 2, 3, 1);
    assert_eq!(graph.depth(), 3);
    let mut seen = std::collections::HashSet::new();
    for layer in &graph.layers {
        let mut ids: Vec<ParamId> = Vec::new();
        for h in &layer.heads {
            for target in [NodeKind::Text, NodeKind::Type] {
                for source in [NodeKind::Text, NodeKind::Type] {
                    let p = h.projection(target, source);
                    ids.extend([p.w, p.b]);
                }
            }
            ids.extend([h.a, h.w_p]);
        }
        ids.extend(layer.text_update.ids());
        ids.extend(layer.type_update.ids());
        for id in ids {
            assert!(seen.insert(id), "{} reused", store.get(id).name);
        }
    }
    assert_eq!(seen.len(), store.len());
}

#[test]
fn head_width_must_divide_node_width() {
    let mut store = ParamStore::new();
    assert!(StarGraph::new(&mut store, 10, 4, 1, 1, &mut rng(0)).is_err());
    assert!(StarGraph::new(&mut store, 8, 0, 1, 1, &mut rng(0)).is_err());
}

#[test]
fn masked_type_messages_bound_the_receptive_field() {
    let (store, graph) = graph_with(13, 8, 2, 1, 1);
    let topo = build_topology(9, 2, 1).unwrap();
    let opts = LayerOptions { type_to_text: false };
    let mut r = rng(14);
    let s = state(&mut r, 9, 2, 8);
    let base = step(&store, &graph, &s, &topo, 0, opts);
    let p = 4;
    for far in [0usize, 1, 2, 6, 7, 8] {
        let mut perturbed = s.clone();
        for k in 0..8 {
            let v = perturbed.text.get(far, k);
            perturbed.text.set(far, k, v + r.gen_range(-2.0..2.0));
        }
        perturbed.types = perturbed.types.map(|v| v * 3.0 - 1.0);
        let out = step(&store, &graph, &perturbed, &topo, 0, opts);
        assert_eq!(out.text.row_slice(p), base.text.row_slice(p), "far node {far}");
    }
    // A neighbour inside the window does move it.
    let mut near = s.clone();
    near.text.set(5, 0, near.text.get(5, 0) + 1.0);
    let out = step(&store, &graph, &near, &topo, 0, opts);
    assert_ne!(out.text.row_slice(p), base.text.row_slice(p));
}

#[test]
fn projection_examples() {
    let (mut store, graph) = graph_with(15, 4, 1, 1, 1);
    let head = graph.layers[0].heads[0].clone();
    let h = [0.3, -1.2, 0.8, 2.0];

    let before = project(&store, &head, &h, NodeKind::Text, NodeKind::Text);
    let w = store.tensor(head.projection(NodeKind::Text, NodeKind::Text).w).clone();
    let b = store.tensor(head.projection(NodeKind::Text, NodeKind::Text).b).clone();
    let want: Vec<f64> = (0..4).map(|j| b.data()[j] + (0..4).map(|i| h[i] * w.get(i, j)).sum::<f64>()).collect();
    assert_eq!(before, want);

    // Changing the text-to-type map leaves text-to-text untouched.
    let other = head.projection(NodeKind::Type, NodeKind::Text);
    store.tensor_mut(other.w).data_mut().iter_mut().for_each(|v| *v += 1.0);
    assert_eq!(project(&store, &head, &h, NodeKind::Text, NodeKind::Text), before);
    assert_ne!(project(&store, &head, &h, NodeKind::Text, NodeKind::Type), before);

    let tt = head.projection(NodeKind::Text, NodeKind::Text);
    *store.tensor_mut(tt.w) = Tensor::identity(4);
    *store.tensor_mut(tt.b) = Tensor::zeros(1, 4);
    assert_eq!(project(&store, &head, &h, NodeKind::Text, NodeKind::Text), h);
}

#[test]
fn hybrid_score_examples() {
    let (mut store, graph) = graph_with(16, 4, 1, 1, 1);
    let head = graph.layers[0].heads[0].clone();
    let mut r = rng(17);
    let qs = random_rows(&mut r, 2, 4);
    let (x, y) = (&qs[0], &qs[1]);

    let self_score = hybrid_score(&store, &head, x, x);
    assert!(self_score.is_finite());
    assert_eq!(self_score, hybrid_score(&store, &head, x, x));
    assert_ne!(hybrid_score(&store, &head, x, y), hybrid_score(&store, &head, y, x));

    zero_params(&mut store, &[head.a, head.w_p]);
    assert_eq!(hybrid_score(&store, &head, x, y), 0.0);
    assert_eq!(hybrid_score(&store, &head, y, y), 0.0);
}

#[test]
fn baseline_score_examples() {
    assert_eq!(baseline_gat_score(&[0.0; 4], &[1.0, 2.0], &[3.0, -4.0]), 0.0);
    // a = [1, 0 | 0, 2]: 1*0.5 + 2*(-1.5) = -2.5, leaked to -0.025.
    let s = baseline_gat_score(&[1.0, 0.0, 0.0, 2.0], &[0.5, 9.0], &[7.0, -1.5]);
    assert!((s - -0.025).abs() < 1e-15);
    let s = baseline_gat_score(&[1.0, 1.0, 1.0, 1.0], &[0.5, 0.25], &[1.0, 0.0]);
    assert_eq!(s, 1.75);
}

fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

#[test]
fn baseline_ranks_keys_identically_for_every_query() {
    for draw in 0..100 {
        let mut r = rng(1000 + draw);
        let d = 8;
        let a: Vec<f64> = (0..2 * d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let keys = random_rows(&mut r, 6, d);
        let queries = random_rows(&mut r, 2, d);
        let rank = |q: &[f64]| argsort(&keys.iter().map(|k| baseline_gat_score(&a, q, k)).collect::<Vec<_>>());
        assert_eq!(rank(&queries[0]), rank(&queries[1]), "draw {draw}");
    }
}

/// Seed under which two queries over one key set rank the keys differently.
const HYBRID_WITNESS_SEED: u64 = 21;

#[test]
fn hybrid_score_ranks_keys_per_query() {
    let (store, graph) = graph_with(HYBRID_WITNESS_SEED, 8, 1, 1, 1);
    let head: &HeadParams = &graph.layers[0].heads[0];
    let mut r = rng(HYBRID_WITNESS_SEED);
    let keys = random_rows(&mut r, 6, 8);
    let queries = random_rows(&mut r, 2, 8);
    let rank = |q: &[f64]| argsort(&keys.iter().map(|k| hybrid_score(&store, head, k, q)).collect::<Vec<_>>());
    assert_ne!(rank(&queries[0]), rank(&queries[1]));
}

#[test]
fn attention_examples() {
    let (mut store, graph) = graph_with(22, 4, 1, 1, 1);
    let head = graph.layers[0].heads[0].clone();
    let mut r = rng(23);
    let q = random_rows(&mut r, 1, 4).remove(0);
    let ks = random_rows(&mut r, 3, 4);
    let keys: Vec<(&[f64], NodeKind)> =
        vec![(&ks[0][..], NodeKind::Text), (&ks[1][..], NodeKind::Text), (&ks[2][..], NodeKind::Type)];

    assert!(attend(&store, &head, &q, NodeKind::Text, &[]).is_err());

    let one = attend(&store, &head, &q, NodeKind::Text, &keys[2..]).unwrap();
    assert_eq!(one.weights, vec![1.0]);
    assert_eq!(one.output, project(&store, &head, &ks[2], NodeKind::Type, NodeKind::Text));

    // Brute-force softmax over explicitly projected neighbours.
    let full = attend(&store, &head, &q, NodeKind::Text, &keys).unwrap();
    let qp = project(&store, &head, &q, NodeKind::Text, NodeKind::Text);
    let kp: Vec<Vec<f64>> = keys.iter().map(|(k, kind)| project(&store, &head, k, *kind, NodeKind::Text)).collect();
    let e: Vec<f64> = kp.iter().map(|k| hybrid_score(&store, &head, k, &qp).exp()).collect();
    let z: f64 = e.iter().sum();
    for j in 0..3 {
        assert!((full.weights[j] - e[j] / z).abs() < 1e-15);
        assert!(full.weights[j] >= 0.0);
    }
    assert!((full.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    for c in 0..4 {
        let want: f64 = (0..3).map(|j| e[j] / z * kp[j][c]).sum();
        assert!((full.output[c] - want).abs() < 1e-14);
    }

    zero_params(&mut store, &[head.a, head.w_p]);
    let uniform = attend(&store, &head, &q, NodeKind::Text, &keys).unwrap();
    for w in &uniform.weights {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
    for c in 0..4 {
        let mean = kp.iter().map(|k| k[c]).sum::<f64>() / 3.0;
        assert!((uniform.output[c] - mean).abs() < 1e-14);
    }
}

#[test]
fn pair_counts_follow_the_closed_form() {
    for (c, k) in [(1, 0), (2, 1), (3, 2), (4, 3)] {
        for n in [8usize, 16, 32, 64] {
            let pc = count_attention_pairs(&build_topology(n, c, k).unwrap());
            assert_eq!(pc.total, n * (2 * k + 1) - k * (k + 1) + 2 * c * n, "n={n} c={c} k={k}");
            assert_eq!(pc.text_to_text, window_pairs_closed_form(n, k));
            assert!(pc.formula.contains('='));
        }
        let small = count_attention_pairs(&build_topology(512, c, k).unwrap()).total as f64;
        let large = count_attention_pairs(&build_topology(1024, c, k).unwrap()).total as f64;
        assert!((large / small - 2.0).abs() / 2.0 < 0.01);
    }
}
