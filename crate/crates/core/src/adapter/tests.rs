use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::lm_head::LmHead;
use crate::numerics::{finite_diff_check, softmax, DenseMatrix, DEFAULT_FD_EPS};
use crate::tag::MaskedTokenRecord;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            scale * x
        })
        .collect()
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, normal_vec(rng, rows * cols, scale)).unwrap()
}

struct Fixture {
    adapter: GraphAdapter,
    head: LmHead,
    embeddings: DenseMatrix,
    records: Vec<MaskedTokenRecord>,
}

/// Small random instance with every parameter (including the MLP output
/// layer) drawn away from zero.
fn fixture(seed: u64, ablation: Ablation) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d_z, d, t) = (4, 3, 4, 5);
    let config = AdapterConfig {
        d_a: 3,
        mlp_depth: 2,
        mlp_hidden: 5,
        ablation,
        ..AdapterConfig::default()
    };
    let mut params = AdapterParams::init(&config, d_z, d, &mut rng);
    let mut flat = params.to_flat();
    for v in &mut flat {
        let x: f64 = StandardNormal.sample(&mut rng);
        *v = 0.6 * x;
    }
    params.assign_flat(&flat);
    let head = LmHead::new(normal_matrix(&mut rng, t, d, 0.7), normal_vec(&mut rng, t, 0.3)).unwrap();
    let embeddings = normal_matrix(&mut rng, n, d_z, 1.0);
    let records = (0..6)
        .map(|r| MaskedTokenRecord {
            node: r % n,
            position: r as u32,
            token: rng.random_range(0..t as u32),
            hidden: normal_vec(&mut rng, d, 1.0),
        })
        .collect();
    Fixture {
        adapter: GraphAdapter::new(config, params).unwrap(),
        head,
        embeddings,
        records,
    }
}

fn all_pairs(f: &Fixture) -> Vec<(usize, usize)> {
    let n = f.embeddings.rows();
    (0..f.records.len())
        .flat_map(|r| (0..n).filter(move |j| (r + j) % 3 != 0).map(move |j| (r, j)))
        .collect()
}

fn identity_gate_adapter(ablation: Ablation) -> GraphAdapter {
    let config = AdapterConfig {
        d_a: 2,
        mlp_depth: 1,
        mlp_hidden: 0,
        ablation,
        ..AdapterConfig::default()
    };
    let params = AdapterParams {
        w_q: DenseMatrix::identity(2),
        w_k: DenseMatrix::identity(2),
        mlp: vec![Linear::zeros(2, 2)],
    };
    GraphAdapter::new(config, params).unwrap()
}

#[test]
fn gate_examples() {
    let a = identity_gate_adapter(Ablation::Full);
    assert_eq!(a.gate(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
    assert_abs_diff_eq!(a.gate(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 0.880797, epsilon = 1e-6);
    let ng = identity_gate_adapter(Ablation::NoGate);
    assert_eq!(ng.gate(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 0.5);
    assert!(a.gate(&[1.0], &[1.0, 0.0]).is_err());
}

#[test]
fn gate_stays_in_open_interval() {
    let f = fixture(1, Ablation::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let a = f
            .adapter
            .gate(&normal_vec(&mut rng, 3, 1.0), &normal_vec(&mut rng, 3, 1.0))
            .unwrap();
        assert!(a > 0.0 && a < 1.0);
    }
}

#[test]
fn influence_is_zero_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = AdapterConfig {
        d_a: 4,
        mlp_hidden: 6,
        ..AdapterConfig::default()
    };
    let adapter = GraphAdapter::new(cfg.clone(), AdapterParams::init(&cfg, 3, 5, &mut rng)).unwrap();
    for _ in 0..20 {
        let g = adapter.influence(&normal_vec(&mut rng, 3, 2.0)).unwrap();
        assert_eq!(g, vec![0.0; 5]);
    }
}

#[test]
fn single_layer_identity_influence() {
    let mut a = identity_gate_adapter(Ablation::Full);
    a.params.mlp[0].weight = DenseMatrix::identity(2);
    assert_eq!(a.influence(&[0.3, -1.5]).unwrap(), vec![0.3, -1.5]);
}

#[test]
fn influence_matches_naive_loops() {
    let f = fixture(2, Ablation::Full);
    let z = [0.4, -1.1, 0.7];
    let l0 = &f.adapter.params.mlp[0];
    let l1 = &f.adapter.params.mlp[1];
    let mut hidden = vec![0.0; l0.output_dim()];
    for (o, h) in hidden.iter_mut().enumerate() {
        let mut s = l0.bias[o];
        for (i, zi) in z.iter().enumerate() {
            s += zi * l0.weight.get(i, o);
        }
        *h = s.max(0.0);
    }
    let got = f.adapter.influence(&z).unwrap();
    for (o, g) in got.iter().enumerate() {
        let mut s = l1.bias[o];
        for (i, h) in hidden.iter().enumerate() {
            s += h * l1.weight.get(i, o);
        }
        assert_abs_diff_eq!(*g, s, epsilon = 1e-12);
    }
}

#[test]
fn fuse_examples() {
    let mut a = identity_gate_adapter(Ablation::Full);
    a.params.mlp[0].bias = vec![0.0, 1.0];
    // orthogonal embeddings give a = 0.5
    let h = a.fuse(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert_eq!(h, vec![0.5, 0.5]);
    // a large gate logit returns the context state
    let h = a.fuse(&[1.0, 0.0], &[40.0, 0.0], &[40.0, 0.0]).unwrap();
    assert_abs_diff_eq!(h[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(h[1], 0.0, epsilon = 1e-12);
}

#[test]
fn fused_state_lies_on_segment() {
    let f = fixture(3, Ablation::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let hidden = normal_vec(&mut rng, 4, 2.0);
        let (zi, zj) = (normal_vec(&mut rng, 3, 1.0), normal_vec(&mut rng, 3, 1.0));
        let a = f.adapter.gate(&zi, &zj).unwrap();
        let g = f.adapter.influence(&zj).unwrap();
        let fused = f.adapter.fuse(&hidden, &zi, &zj).unwrap();
        for ((x, h), gv) in fused.iter().zip(&hidden).zip(&g) {
            assert_abs_diff_eq!(*x, a * h + (1.0 - a) * gv, epsilon = 1e-12);
            assert!(*x >= h.min(*gv) - 1e-12 && *x <= h.max(*gv) + 1e-12);
        }
    }
}

#[test]
fn edge_predict_composes_head_and_fusion() {
    let f = fixture(5, Ablation::Full);
    let h = &f.records[0].hidden;
    let (zi, zj) = (f.embeddings.row(0), f.embeddings.row(2));
    let fused = f.adapter.fuse(h, zi, zj).unwrap();
    let logits = f.head.logits(&fused).unwrap();
    let expected = softmax(&logits).unwrap();
    let got = f.adapter.edge_predict(&f.head, h, zi, zj).unwrap();
    for (a, b) in got.iter().zip(&expected) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
    }
    assert_abs_diff_eq!(got.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
}

#[test]
fn untrained_self_edge_keeps_head_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = AdapterConfig {
        d_a: 4,
        mlp_hidden: 8,
        ..AdapterConfig::default()
    };
    let adapter = GraphAdapter::new(cfg.clone(), AdapterParams::init(&cfg, 3, 4, &mut rng)).unwrap();
    let head = LmHead::new(normal_matrix(&mut rng, 6, 4, 1.0), vec![0.0; 6]).unwrap();
    for _ in 0..50 {
        let h = normal_vec(&mut rng, 4, 1.0);
        let z = normal_vec(&mut rng, 3, 1.0);
        let p = adapter.edge_predict(&head, &h, &z, &z).unwrap();
        let base = head.predict(&h).unwrap();
        assert_eq!(crate::numerics::argmax(&p), crate::numerics::argmax(&base));
    }
}

#[test]
fn node_predict_single_neighbor_is_edge_predict() {
    let f = fixture(7, Ablation::Full);
    let h = &f.records[1].hidden;
    let node = f
        .adapter
        .node_predict(&f.head, &f.embeddings, h, 1, &[3], Pooling::Arithmetic)
        .unwrap();
    let edge = f
        .adapter
        .edge_predict(&f.head, h, f.embeddings.row(1), f.embeddings.row(3))
        .unwrap();
    assert_eq!(node, edge);
}

#[test]
fn node_predict_identical_edges() {
    let f = fixture(8, Ablation::Full);
    let h = &f.records[2].hidden;
    let once = f
        .adapter
        .node_predict(&f.head, &f.embeddings, h, 2, &[0], Pooling::Arithmetic)
        .unwrap();
    let thrice = f
        .adapter
        .node_predict(&f.head, &f.embeddings, h, 2, &[0, 0, 0], Pooling::Arithmetic)
        .unwrap();
    for (a, b) in once.iter().zip(&thrice) {
        assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
    }
}

#[test]
fn node_predict_under_no_graph_ignores_neighbors() {
    let f = fixture(9, Ablation::NoGraph);
    let h = &f.records[0].hidden;
    let a = f
        .adapter
        .node_predict(&f.head, &f.embeddings, h, 0, &[1, 2, 3], Pooling::Arithmetic)
        .unwrap();
    let b = f
        .adapter
        .node_predict(&f.head, &f.embeddings, h, 0, &[0], Pooling::Arithmetic)
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn node_predict_empty_neighborhood_is_an_error() {
    let f = fixture(9, Ablation::Full);
    let err = f
        .adapter
        .node_predict(
            &f.head,
            &f.embeddings,
            &f.records[0].hidden,
            0,
            &[],
            Pooling::Arithmetic,
        )
        .unwrap_err();
    assert!(matches!(err, crate::Error::EmptyNeighborhood(0)));
}

#[test]
fn pooling_examples() {
    let dists = vec![vec![0.9, 0.1], vec![0.5, 0.5]];
    let p = pool(&dists, Pooling::Arithmetic).unwrap();
    assert_abs_diff_eq!(p[0], 0.7, epsilon = 1e-15);
    assert_abs_diff_eq!(p[1], 0.3, epsilon = 1e-15);
    let g = pool(&dists, Pooling::Geometric).unwrap();
    assert_abs_diff_eq!(g.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(g[0], 0.75, epsilon = 1e-12);
    assert!(pool(&[], Pooling::Arithmetic).is_err());
    assert!(pool(&[vec![1.0], vec![0.5, 0.5]], Pooling::Arithmetic).is_err());
}

/// T = 2, d = 1, no gate, depth-1 MLP: edge j yields `p_0 = σ(g(z_j) / 2)`.
fn two_edge_fixture(w: f64) -> (GraphAdapter, LmHead, DenseMatrix, MaskedTokenRecord) {
    let config = AdapterConfig {
        d_a: 1,
        mlp_depth: 1,
        mlp_hidden: 0,
        ablation: Ablation::NoGate,
        ..AdapterConfig::default()
    };
    let params = AdapterParams {
        w_q: DenseMatrix::zeros(1, 1),
        w_k: DenseMatrix::zeros(1, 1),
        mlp: vec![Linear {
            weight: DenseMatrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        }],
    };
    let head = LmHead::new(DenseMatrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap(), vec![0.0, 0.0]).unwrap();
    let emb = DenseMatrix::from_vec(3, 1, vec![0.0, 1.0, -1.0]).unwrap();
    let rec = MaskedTokenRecord {
        node: 0,
        position: 0,
        token: 0,
        hidden: vec![0.0],
    };
    (GraphAdapter::new(config, params).unwrap(), head, emb, rec)
}

#[test]
fn geometric_loss_examples() {
    let (a, head, emb, rec) = two_edge_fixture(0.0);
    assert_abs_diff_eq!(
        a.loss_geometric(&head, &emb, &rec, &[1]).unwrap(),
        std::f64::consts::LN_2,
        epsilon = 1e-12
    );
    let (a, head, emb, rec) = two_edge_fixture(2.0 * 9f64.ln());
    let loss = a.loss_geometric(&head, &emb, &rec, &[1, 2]).unwrap();
    assert_abs_diff_eq!(loss, 1.203973, epsilon = 1e-6);
    let (p1, p2) = (
        a.edge_predict(&head, &rec.hidden, emb.row(0), emb.row(1)).unwrap()[0],
        a.edge_predict(&head, &rec.hidden, emb.row(0), emb.row(2)).unwrap()[0],
    );
    assert_abs_diff_eq!(p1, 0.9, epsilon = 1e-12);
    assert_abs_diff_eq!(p2, 0.1, epsilon = 1e-12);
    assert!(a.loss_geometric(&head, &emb, &rec, &[]).is_err());
}

#[test]
fn geometric_loss_dominates_pooled_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..1000 {
        let f = fixture(1000 + case, Ablation::Full);
        let rec = &f.records[rng.random_range(0..f.records.len())];
        let k = rng.random_range(1..=4);
        let nbrs: Vec<usize> = (0..k).map(|_| rng.random_range(0..4)).collect();
        let geo = f.adapter.loss_geometric(&f.head, &f.embeddings, rec, &nbrs).unwrap();
        let pooled = f
            .adapter
            .node_predict(
                &f.head,
                &f.embeddings,
                &rec.hidden,
                rec.node,
                &nbrs,
                Pooling::Arithmetic,
            )
            .unwrap();
        let arith = -pooled[rec.token as usize].ln();
        assert!(geo >= arith - 1e-12, "case {case}: {geo} < {arith}");
        if nbrs.iter().all(|&j| j == nbrs[0]) {
            assert_abs_diff_eq!(geo, arith, epsilon = 1e-12);
        }
    }
}

#[test]
fn equal_gate_logit_pooling_commutes_with_fusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let f = fixture(2000 + case, Ablation::NoGate);
        let rec = &f.records[case as usize % f.records.len()];
        let k = rng.random_range(1..=4);
        let nbrs: Vec<usize> = (0..k).map(|_| rng.random_range(0..4)).collect();
        let z_i = f.embeddings.row(rec.node);
        let fused: Vec<Vec<f64>> = nbrs
            .iter()
            .map(|&j| f.adapter.fuse(&rec.hidden, z_i, f.embeddings.row(j)).unwrap())
            .collect();
        let t = f.head.vocab_size();
        let mut mean_logits = vec![0.0; t];
        for h in &fused {
            for (m, l) in mean_logits.iter_mut().zip(f.head.logits(h).unwrap()) {
                *m += l / k as f64;
            }
        }
        let mut mean_state = vec![0.0; rec.hidden.len()];
        for h in &fused {
            mean_state.iter_mut().zip(h).for_each(|(m, x)| *m += x / k as f64);
        }
        let lhs = softmax(&mean_logits).unwrap();
        let rhs = f.head.predict(&mean_state).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
        }
    }
}

fn grad_check(f: &Fixture) -> f64 {
    let pairs = all_pairs(f);
    let template = f.adapter.clone();
    let eval = |theta: &[f64]| {
        let mut a = template.clone();
        a.params.assign_flat(theta);
        let (loss, g) = a.loss_and_grads(&f.head, &f.embeddings, &f.records, &pairs).unwrap();
        (loss, g.to_flat())
    };
    finite_diff_check(eval, &f.adapter.params.to_flat(), DEFAULT_FD_EPS).unwrap()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..5 {
        let err = grad_check(&fixture(300 + seed, Ablation::Full));
        assert!(err <= 1e-6, "seed {seed}: relative error {err}");
    }
}

#[test]
fn no_gate_gradients_skip_projections() {
    let f = fixture(12, Ablation::NoGate);
    let (_, g) = f
        .adapter
        .loss_and_grads(&f.head, &f.embeddings, &f.records, &all_pairs(&f))
        .unwrap();
    assert!(g.w_q.as_slice().iter().all(|&v| v == 0.0));
    assert!(g.w_k.as_slice().iter().all(|&v| v == 0.0));
    assert!(grad_check(&f) <= 1e-6);
}

#[test]
fn output_layer_gradient_is_nonzero_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f = fixture(13, Ablation::Full);
    let cfg = f.adapter.config.clone();
    let init = AdapterParams::init(&cfg, 3, 4, &mut rng);
    let adapter = GraphAdapter::new(cfg, init).unwrap();
    let (_, g) = adapter
        .loss_and_grads(&f.head, &f.embeddings, &f.records, &all_pairs(&f))
        .unwrap();
    assert!(g.mlp.last().unwrap().bias.iter().any(|&v| v != 0.0));
    // with a zero output layer no signal reaches earlier layers
    assert!(g.mlp[0].weight.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_reduction_is_thread_independent() {
    let f = fixture(14, Ablation::Full);
    let mut pairs = Vec::new();
    for _ in 0..200 {
        pairs.extend(all_pairs(&f));
    }
    let one = f
        .adapter
        .loss_and_grads_threaded(&f.head, &f.embeddings, &f.records, &pairs, 1)
        .unwrap();
    let many = f
        .adapter
        .loss_and_grads_threaded(&f.head, &f.embeddings, &f.records, &pairs, 3)
        .unwrap();
    assert_eq!(one.0.to_bits(), many.0.to_bits());
    assert_eq!(one.1, many.1);
}

#[test]
fn loss_and_grads_rejects_bad_pairs() {
    let f = fixture(15, Ablation::Full);
    assert!(f
        .adapter
        .loss_and_grads(&f.head, &f.embeddings, &f.records, &[])
        .is_err());
    assert!(f
        .adapter
        .loss_and_grads(&f.head, &f.embeddings, &f.records, &[(99, 0)])
        .is_err());
    assert!(f
        .adapter
        .loss_and_grads(&f.head, &f.embeddings, &f.records, &[(0, 99)])
        .is_err());
}
