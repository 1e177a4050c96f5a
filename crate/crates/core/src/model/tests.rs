use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::Vocab;
use crate::ndiff::{sigmoid, Graph, GruVars, Mode, SparseRows, Tensor};

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

struct RefGru {
    w_x: Tensor,
    u_zr: Tensor,
    u_n: Tensor,
    b: Tensor,
}

impl RefGru {
    fn random(d_in: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_x: rand_tensor(&[d_in, 3 * d], rng, 0.5),
            u_zr: rand_tensor(&[d, 2 * d], rng, 0.5),
            u_n: rand_tensor(&[d, d], rng, 0.5),
            b: rand_tensor(&[3 * d], rng, 0.5),
        }
    }

    fn bind<'g>(&self, g: &'g Graph) -> GruVars<'g> {
        GruVars {
            w_x: g.param(self.w_x.clone()),
            u_zr: g.param(self.u_zr.clone()),
            u_n: g.param(self.u_n.clone()),
            b: g.param(self.b.clone()),
        }
    }

    /// Scalar recurrence, one coordinate at a time.
    fn step(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d = h.len();
        let pre = |gate: usize, j: usize| {
            let mut s = self.b.data()[gate * d + j];
            for (i, xi) in x.iter().enumerate() {
                s += xi * self.w_x.get2(i, gate * d + j);
            }
            s
        };
        let mut z = vec![0.0; d];
        let mut r = vec![0.0; d];
        for j in 0..d {
            let mut sz = pre(0, j);
            let mut sr = pre(1, j);
            for (k, hk) in h.iter().enumerate() {
                sz += hk * self.u_zr.get2(k, j);
                sr += hk * self.u_zr.get2(k, d + j);
            }
            z[j] = sigmoid(sz);
            r[j] = sigmoid(sr);
        }
        (0..d)
            .map(|j| {
                let mut s = pre(2, j);
                for k in 0..d {
                    s += r[k] * h[k] * self.u_n.get2(k, j);
                }
                (1.0 - z[j]) * h[j] + z[j] * s.tanh()
            })
            .collect()
    }

    fn run(&self, xs: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; d];
        xs.iter()
            .map(|x| {
                h = self.step(x, &h);
                h.clone()
            })
            .collect()
    }
}

fn zero_gru(g: &Graph, d_in: usize, d: usize) -> GruVars<'_> {
    GruVars {
        w_x: g.param(Tensor::zeros(&[d_in, 3 * d])),
        u_zr: g.param(Tensor::zeros(&[d, 2 * d])),
        u_n: g.param(Tensor::zeros(&[d, d])),
        b: g.param(Tensor::zeros(&[3 * d])),
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn text_encoder_zero_params() {
    let g = Graph::new(Mode::Eval, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let emb = g.param(rand_tensor(&[5, 3], &mut rng, 1.0));
    let (f, b) = (zero_gru(&g, 3, 2), zero_gru(&g, 3, 2));
    let h = encode_text(&g, emb, &f, &b, &[1, 4, 2], 0.0).unwrap();
    assert_eq!(h.shape(), vec![3, 4]);
    assert!(h.value().data().iter().all(|&x| x == 0.0));
    let h1 = encode_text(&g, emb, &f, &b, &[3], 0.0).unwrap();
    assert_eq!(h1.shape(), vec![1, 4]);
    assert!(matches!(
        encode_text(&g, emb, &f, &b, &[], 0.0),
        Err(ModelError::EmptyDocument)
    ));
}

#[test]
fn text_encoder_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = rand_tensor(&[6, 3], &mut rng, 1.0);
    let (rf, rb) = (
        RefGru::random(3, 2, &mut rng),
        RefGru::random(3, 2, &mut rng),
    );
    let ids = [2, 5, 0, 3];
    let g = Graph::new(Mode::Eval, 0);
    let h = encode_text(
        &g,
        g.param(table.clone()),
        &rf.bind(&g),
        &rb.bind(&g),
        &ids,
        0.3,
    )
    .unwrap();
    let xs: Vec<Vec<f64>> = ids.iter().map(|&i| table.row(i).to_vec()).collect();
    let fw = rf.run(&xs, 2);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut bw = rb.run(&rev, 2);
    bw.reverse();
    let h = h.tensor();
    for t in 0..ids.len() {
        let expect: Vec<f64> = fw[t].iter().chain(&bw[t]).copied().collect();
        assert!(
            close(h.row(t), &expect, 1e-12),
            "row {t}: {:?} vs {expect:?}",
            h.row(t)
        );
    }
}

fn dense(adj: &SparseRows) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; adj.n_src]; adj.rows.len()];
    for (i, row) in adj.rows.iter().enumerate() {
        for &(j, w) in row {
            a[i][j] += w;
        }
    }
    a
}

/// Dense-matrix oracle of one sub-layer.
fn sublayer_oracle(hat: &[Vec<f64>], a: &[Vec<f64>], w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let (out, width) = (w.rows(), w.cols());
    let wh: Vec<Vec<f64>> = hat
        .iter()
        .map(|h| {
            (0..out)
                .map(|o| (0..width).map(|c| w.get2(o, c) * h[c]).sum())
                .collect()
        })
        .collect();
    a.iter()
        .map(|ai| {
            (0..out)
                .map(|o| {
                    let s: f64 = ai.iter().zip(&wh).map(|(aij, whj)| aij * whj[o]).sum();
                    (s + b.data()[o]).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn block_oracle(
    x: &Tensor,
    adj: &SparseRows,
    subs: &[(Tensor, Tensor)],
    out_w: &Tensor,
    out_b: &Tensor,
) -> Tensor {
    let a = dense(adj);
    let t_n = x.rows();
    let mut hats: Vec<Vec<f64>> = (0..t_n).map(|t| x.row(t).to_vec()).collect();
    let mut cat: Vec<Vec<f64>> = vec![Vec::new(); t_n];
    for (w, b) in subs {
        let o = sublayer_oracle(&hats, &a, w, b);
        for t in 0..t_n {
            hats[t].extend_from_slice(&o[t]);
            cat[t].extend_from_slice(&o[t]);
        }
    }
    let d = x.cols();
    let mut data = Vec::new();
    for t in 0..t_n {
        let s: Vec<f64> = (0..d).map(|c| x.get2(t, c) + cat[t][c]).collect();
        for o in 0..out_w.rows() {
            data.push((0..d).map(|c| out_w.get2(o, c) * s[c]).sum::<f64>() + out_b.data()[o]);
        }
    }
    Tensor::matrix(t_n, out_w.rows(), data).unwrap()
}

fn chain_adjacency(n: usize) -> SparseRows {
    SparseRows {
        n_src: n,
        rows: (0..n)
            .map(|i| {
                (i.saturating_sub(1)..(i + 2).min(n))
                    .map(|j| (j, 1.0))
                    .collect()
            })
            .collect(),
    }
}

#[test]
fn sublayer_zero_and_width() {
    let g = Graph::new(Mode::Eval, 0);
    let x = g.param(Tensor::filled(&[3, 4], 0.7));
    let adj = Rc::new(chain_adjacency(3));
    let out = dcgcn_sublayer(
        x,
        &[],
        &adj,
        g.param(Tensor::zeros(&[2, 4])),
        g.param(Tensor::zeros(&[2])),
        0.0,
    )
    .unwrap();
    assert!(out.value().data().iter().all(|&v| v == 0.0));
    assert_eq!(out.shape(), vec![3, 2]);
    // Wrong width for l = 2.
    assert!(dcgcn_sublayer(
        x,
        &[out],
        &adj,
        g.param(Tensor::zeros(&[2, 4])),
        g.param(Tensor::zeros(&[2])),
        0.0
    )
    .is_err());

    let c = CferConfig::full_size(96);
    assert_eq!(c.sublayer_input_width(3), 450);
    assert_eq!(c.sublayer_width(), 75);
    let g = Graph::new(Mode::Eval, 0);
    let x = g.constant(Tensor::zeros(&[2, 300]));
    let prev = [
        g.constant(Tensor::zeros(&[2, 75])),
        g.constant(Tensor::zeros(&[2, 75])),
    ];
    let adj = Rc::new(chain_adjacency(2));
    let w = g.constant(Tensor::zeros(&[75, 450]));
    let out = dcgcn_sublayer(x, &prev, &adj, w, g.constant(Tensor::zeros(&[75])), 0.0).unwrap();
    assert_eq!(out.shape(), vec![2, 75]);
}

#[test]
fn sublayer_locality_with_self_loops_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&[2, 4], &mut rng, 1.0);
    let w = rand_tensor(&[2, 4], &mut rng, 1.0);
    let b = rand_tensor(&[2], &mut rng, 0.1);
    let adj = SparseRows {
        n_src: 2,
        rows: vec![vec![(0, 1.0)], vec![(1, 1.0)]],
    };
    let run = |x: &Tensor| {
        let g = Graph::new(Mode::Eval, 0);
        let v = dcgcn_sublayer(
            g.param(x.clone()),
            &[],
            &Rc::new(adj.clone()),
            g.param(w.clone()),
            g.param(b.clone()),
            0.0,
        )
        .unwrap();
        v.tensor()
    };
    let base = run(&x);
    let hats: Vec<Vec<f64>> = (0..2).map(|t| x.row(t).to_vec()).collect();
    let oracle = sublayer_oracle(&hats, &dense(&adj), &w, &b);
    assert!(close(base.row(0), &oracle[0], 1e-12));
    let mut x2 = x.clone();
    x2.data_mut()[4..].iter_mut().for_each(|v| *v += 1.0);
    assert_eq!(run(&x2).row(0), base.row(0));
}

#[test]
fn block_identity_and_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&[3, 4], &mut rng, 1.0);
    let adj = chain_adjacency(3);
    let g = Graph::new(Mode::Eval, 0);
    let zero_block = BlockVars {
        sub: vec![
            (
                g.param(Tensor::zeros(&[2, 4])),
                g.param(Tensor::zeros(&[2])),
            ),
            (
                g.param(Tensor::zeros(&[2, 6])),
                g.param(Tensor::zeros(&[2])),
            ),
        ],
        out_w: g.param(Tensor::identity(4)),
        out_b: g.param(Tensor::zeros(&[4])),
    };
    let o = dcgcn_block(g.param(x.clone()), &Rc::new(adj.clone()), &zero_block, 0.0).unwrap();
    assert_eq!(o.tensor(), x);

    let subs = vec![
        (
            rand_tensor(&[2, 4], &mut rng, 1.0),
            rand_tensor(&[2], &mut rng, 0.5),
        ),
        (
            rand_tensor(&[2, 6], &mut rng, 1.0),
            rand_tensor(&[2], &mut rng, 0.5),
        ),
    ];
    let out_w = rand_tensor(&[4, 4], &mut rng, 1.0);
    let out_b = rand_tensor(&[4], &mut rng, 0.5);
    let block = BlockVars {
        sub: subs
            .iter()
            .map(|(w, b)| (g.param(w.clone()), g.param(b.clone())))
            .collect(),
        out_w: g.param(out_w.clone()),
        out_b: g.param(out_b.clone()),
    };
    let o = dcgcn_block(g.param(x.clone()), &Rc::new(adj.clone()), &block, 0.0).unwrap();
    assert!(
        o.tensor()
            .max_abs_diff(&block_oracle(&x, &adj, &subs, &out_w, &out_b))
            < 1e-12
    );

    // Chaining equals nested calls; disabled DCGCN is the identity.
    let xv = g.param(x.clone());
    let radj = Rc::new(adj);
    let blocks = [block, zero_block];
    let chained = coarse_encode(xv, &radj, &blocks, true, 0.0).unwrap();
    let nested = dcgcn_block(
        dcgcn_block(xv, &radj, &blocks[0], 0.0).unwrap(),
        &radj,
        &blocks[1],
        0.0,
    )
    .unwrap();
    assert_eq!(chained.tensor(), nested.tensor());
    assert_eq!(
        coarse_encode(xv, &radj, &blocks, false, 0.0).unwrap().id(),
        xv.id()
    );
}

#[test]
fn residual_width_identity() {
    for (d_h, m_k) in [(8, 2), (12, 3), (300, 4), (300, 5), (16, 16), (6, 1)] {
        let c = CferConfig {
            d_h,
            sublayers_per_block: m_k,
            ..CferConfig::full_size(3)
        };
        c.validate().unwrap();
        assert_eq!(m_k * c.sublayer_width(), d_h);
    }
}

#[test]
fn entity_representation_averages() {
    use crate::corpus::{Document, Entity, Mention, Sentence};
    let m = |s, e| Mention {
        sent_id: 0,
        span_start: s,
        span_end: e,
        surface: "x".into(),
    };
    let doc = Document {
        doc_id: "d".into(),
        sentences: vec![Sentence {
            tokens: vec!["a".into(); 4],
            dep_heads: vec![-1, 0, 0, 0],
        }],
        entities: vec![
            Entity {
                entity_id: 0,
                mentions: vec![m(2, 3)],
                entity_type: None,
            },
            Entity {
                entity_id: 1,
                mentions: vec![m(0, 1), m(3, 4)],
                entity_type: None,
            },
            Entity {
                entity_id: 2,
                mentions: vec![m(1, 3)],
                entity_type: None,
            },
        ],
        facts: vec![],
    };
    let o = Tensor::from_rows(&[&[1.0, 0.0], &[2.0, 4.0], &[3.0, 8.0], &[5.0, -2.0]]);
    let g = Graph::new(Mode::Eval, 0);
    let e = coarse_entity(g.constant(o), &Rc::new(entity_rows(&doc)))
        .unwrap()
        .tensor();
    assert_eq!(e.row(0), &[3.0, 8.0]);
    assert_eq!(e.row(1), &[3.0, -1.0]);
    assert_eq!(e.row(2), &[2.5, 6.0]);
}

#[test]
fn path_encoder_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let o = rand_tensor(&[5, 3], &mut rng, 1.0);
    let g = Graph::new(Mode::Eval, 0);
    let ov = g.constant(o.clone());
    let (zf, zb) = (zero_gru(&g, 3, 3), zero_gru(&g, 3, 3));
    let (mh, mt) = encode_paths(ov, &[vec![0, 2, 4]], &zf, &zb).unwrap();
    assert!(mh
        .value()
        .data()
        .iter()
        .chain(mt.value().data())
        .all(|&v| v == 0.0));

    let (rf, rb) = (
        RefGru::random(3, 3, &mut rng),
        RefGru::random(3, 3, &mut rng),
    );
    let (f, b) = (rf.bind(&g), rb.bind(&g));
    let paths = vec![vec![4], vec![0, 2, 4], vec![1, 3], vec![3, 1, 0, 2]];
    let (mh, mt) = encode_paths(ov, &paths, &f, &b).unwrap();
    let (mh, mt) = (mh.tensor(), mt.tensor());
    for (i, p) in paths.iter().enumerate() {
        let xs: Vec<Vec<f64>> = p.iter().map(|&t| o.row(t).to_vec()).collect();
        let fw = rf.run(&xs, 3);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let bw = rb.run(&rev, 3);
        assert!(close(mt.row(i), fw.last().unwrap(), 1e-12), "path {i}");
        assert!(close(mh.row(i), bw.last().unwrap(), 1e-12), "path {i}");
    }
    // Length-1 path: single steps over the same input.
    assert!(close(mt.row(0), &rf.step(o.row(4), &[0.0; 3]), 1e-12));
    assert!(close(mh.row(0), &rb.step(o.row(4), &[0.0; 3]), 1e-12));
}

fn attend_fixture<'g>(
    g: &'g Graph,
    m_h: Tensor,
    m_t: Tensor,
    counts: &[usize],
    attn_w: Tensor,
    aggregator: Aggregator,
) -> Attended<'g> {
    let n = m_h.rows();
    let d = m_h.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hr = g.constant(rand_tensor(&[n, d], &mut rng, 1.0));
    let tr = g.constant(rand_tensor(&[n, d], &mut rng, 1.0));
    attend_paths(
        hr,
        tr,
        g.constant(m_h),
        g.constant(m_t),
        &segments_from_counts(counts),
        g.constant(attn_w),
        g.constant(Tensor::new(vec![1], vec![0.3]).unwrap()),
        aggregator,
    )
    .unwrap()
}

#[test]
fn attention_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = Graph::new(Mode::Eval, 0);
    let w = rand_tensor(&[1, 8], &mut rng, 1.0);

    let mh = rand_tensor(&[1, 2], &mut rng, 1.0);
    let a = attend_fixture(
        &g,
        mh.clone(),
        rand_tensor(&[1, 2], &mut rng, 1.0),
        &[1],
        w.clone(),
        Aggregator::Attention,
    );
    assert_eq!(a.alpha.value().data(), &[1.0]);
    assert!(close(a.h.value().data(), mh.data(), 1e-15));

    // Identical reps in one segment, with identical entity rows.
    let g2 = Graph::new(Mode::Eval, 0);
    let rep = Tensor::from_rows(&[&[0.2, -0.4], &[0.2, -0.4]]);
    let ent = g2.constant(Tensor::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
    let a = attend_paths(
        ent,
        ent,
        g2.constant(rep.clone()),
        g2.constant(rep),
        &segments_from_counts(&[2]),
        g2.constant(w.clone()),
        g2.constant(Tensor::zeros(&[1])),
        Aggregator::Attention,
    )
    .unwrap();
    assert!(close(a.alpha.value().data(), &[0.5, 0.5], 1e-15));

    let mh = rand_tensor(&[5, 2], &mut rng, 1.0);
    let mt = rand_tensor(&[5, 2], &mut rng, 1.0);
    let zero_w = Tensor::zeros(&[1, 8]);
    let a = attend_fixture(
        &g,
        mh.clone(),
        mt.clone(),
        &[2, 3],
        zero_w,
        Aggregator::Attention,
    );
    assert!(close(
        a.alpha.value().data(),
        &[0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        1e-15
    ));

    let a = attend_fixture(
        &g,
        mh.clone(),
        mt.clone(),
        &[2, 3],
        w.clone(),
        Aggregator::Mean,
    );
    assert_eq!(
        a.alpha.value().data(),
        &[0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]
    );

    let a = attend_fixture(&g, mh, mt, &[4, 1], w, Aggregator::Attention);
    let al = a.alpha.tensor();
    assert!((al.data()[..4].iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(al.data()[4], 1.0);
}

#[test]
fn scorer_examples() {
    let flags = AblationFlags::default();
    let g = Graph::new(Mode::Eval, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = g.constant(rand_tensor(&[2, 3], &mut rng, 1.0));
    let t = g.constant(rand_tensor(&[2, 3], &mut rng, 1.0));
    let p = score_pairs(
        h,
        t,
        Some((h, t)),
        g.constant(Tensor::zeros(&[6, 4, 6])),
        g.constant(Tensor::zeros(&[4])),
        &flags,
        0.0,
    )
    .unwrap();
    assert!(p.value().data().iter().all(|&v| v == 0.5));

    let mut w = Tensor::zeros(&[2, 1, 2]);
    w.data_mut()[0] = 1.0;
    let one = g.constant(Tensor::from_rows(&[&[1.0]]));
    let zero = g.constant(Tensor::from_rows(&[&[0.0]]));
    let p = score_pairs(
        one,
        one,
        Some((zero, zero)),
        g.constant(w),
        g.constant(Tensor::zeros(&[1])),
        &flags,
        0.0,
    )
    .unwrap();
    assert!((p.value().data()[0] - 0.731_058_578_630_004_9).abs() < 1e-15);

    let b = Tensor::new(vec![3], vec![0.0, 3.0, 0.0]).unwrap();
    let p = score_pairs(
        h,
        t,
        None,
        g.constant(Tensor::zeros(&[6, 3, 6])),
        g.constant(b),
        &flags,
        0.0,
    )
    .unwrap();
    assert!((p.value().get2(1, 1) - 0.952_574_126_822_433_3).abs() < 1e-15);
}

fn tiny_setup(flags: AblationFlags) -> (PreparedDoc, CferParams, CferConfig) {
    let config = CferConfig {
        ablation: flags,
        ..tiny_config()
    };
    let (doc, rv) = tiny_document();
    let vocab = Vocab::from_tokens(doc.flat_tokens().map(String::from));
    let prepared = prepare(&doc, &vocab, &rv, &config).unwrap();
    let params = CferParams::init(&config, vocab.len(), None, 11).unwrap();
    (prepared, params, config)
}

#[test]
fn zero_params_give_half_and_n_r_ln2() {
    let (prepared, mut params, config) = tiny_setup(AblationFlags::default());
    for (_, t) in params.store.iter_mut() {
        t.scale_assign(0.0);
    }
    let out = forward(&prepared, &params, &config, Mode::Eval, 0).unwrap();
    assert_eq!(out.pairs.len(), 2);
    for p in &out.pairs {
        assert!(p.probabilities.iter().all(|&v| v == 0.5));
        assert_eq!(p.attention.len(), 2);
    }
    assert!((out.loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn forward_is_deterministic() {
    let (prepared, params, config) = tiny_setup(AblationFlags::default());
    let bits = |o: &ForwardOutput| -> Vec<u64> {
        o.pairs
            .iter()
            .flat_map(|p| p.probabilities.iter().chain(&p.attention))
            .map(|v| v.to_bits())
            .collect()
    };
    let a = forward(&prepared, &params, &config, Mode::Train, 99).unwrap();
    let b = forward(&prepared, &params, &config, Mode::Train, 99).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    let (la, ga) = loss_and_grads(&prepared, &params, &config, Mode::Train, 99).unwrap();
    let (lb, gb) = loss_and_grads(&prepared, &params, &config, Mode::Train, 99).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(ga, gb);
    assert_eq!(la.to_bits(), a.loss.to_bits());
    for p in &a.pairs {
        assert!(p.probabilities.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!((p.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn no_fine_ignores_paths() {
    let (mut prepared, params, config) = tiny_setup(Variant::NoFine.flags());
    assert!(prepared.paths.is_empty());
    let base = forward(&prepared, &params, &config, Mode::Eval, 0).unwrap();
    assert!(base.pairs.iter().all(|p| p.attention.is_empty()));
    let (full, _, _) = tiny_setup(AblationFlags::default());
    prepared.paths = full
        .paths
        .iter()
        .map(|ps| ps.iter().rev().cloned().collect())
        .collect();
    let permuted = forward(&prepared, &params, &config, Mode::Eval, 0).unwrap();
    assert_eq!(base, permuted);
}

#[test]
fn ablated_variants_run() {
    for v in Variant::ABLATIONS {
        let (prepared, params, config) = tiny_setup(v.flags());
        let out = forward(&prepared, &params, &config, Mode::Train, 5).unwrap();
        assert!(out.loss.is_finite(), "{v}");
        match v {
            Variant::SinglePath => assert!(out.pairs.iter().all(|p| p.attention == [1.0])),
            Variant::MeanAggregator => assert!(out.pairs.iter().all(|p| p.attention == [0.5, 0.5])),
            Variant::NoFine | Variant::NoBoth => {
                assert!(out.pairs.iter().all(|p| p.attention.is_empty()))
            }
            _ => {}
        }
    }
}

#[test]
fn no_both_is_sequence_baseline() {
    // Only the embedding, text encoder and scorer influence the output.
    let (prepared, params, config) = tiny_setup(Variant::NoBoth.flags());
    let base = forward(&prepared, &params, &config, Mode::Eval, 0).unwrap();
    let mut other = params.clone();
    for (name, t) in other.store.iter_mut() {
        if name.starts_with("dcgcn.") || name.starts_with("path.") || name.starts_with("attn.") {
            t.scale_assign(3.0);
        }
    }
    assert_eq!(
        base,
        forward(&prepared, &other, &config, Mode::Eval, 0).unwrap()
    );
    // Unused parameters get zero gradients.
    let (_, grads) = loss_and_grads(&prepared, &params, &config, Mode::Eval, 0).unwrap();
    for (name, g) in params.store.names().iter().zip(&grads) {
        if name.starts_with("dcgcn.") {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn end_to_end_gradient_check() {
    let report = gradcheck_tiny(GRADCHECK_SEED, crate::ndiff::DEFAULT_EPS, false).unwrap();
    let names: Vec<&str> = report.per_param.iter().map(|(n, _)| n.as_str()).collect();
    for must in [
        "bilinear.w",
        "attn.w",
        "dcgcn.0.1.w",
        "dcgcn.1.2.w",
        "text.fwd.u_n",
        "path.bwd.w_x",
        "embedding",
    ] {
        assert!(names.contains(&must), "{must}");
    }
    assert!(report.passes(1e-4), "{}", report.to_tsv());
    let corrupted = gradcheck_tiny(GRADCHECK_SEED, crate::ndiff::DEFAULT_EPS, true).unwrap();
    assert!(!corrupted.passes(1e-4));
}

#[test]
fn shift_invariant_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = Graph::new(Mode::Eval, 0);
    let scores = rand_tensor(&[4, 1], &mut rng, 2.0);
    let mut shifted = scores.clone();
    shifted.data_mut().iter_mut().for_each(|v| *v += 17.5);
    let seg = Rc::new(vec![0..4]);
    let a = g
        .segment_softmax(g.constant(scores), seg.clone())
        .unwrap()
        .tensor();
    let b = g
        .segment_softmax(g.constant(shifted), seg)
        .unwrap()
        .tensor();
    assert!(a.max_abs_diff(&b) < 1e-12);
}
