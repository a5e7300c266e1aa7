//! Finite-difference validation of reverse-mode gradients.
//!
//! Every differentiable building block — and the full teacher-forced pair
//! graph — is checked against central differences on randomly chosen
//! parameter coordinates across many seeds. Relative error must stay below
//! 1e-4 with a unit floor in the denominator.

use attentrack_core::attention::{CrossAttentionLayer, HeadingEmbed, Mlp2};
use attentrack_core::da::{associate, association_loss, DaModule};
use attentrack_core::model::{ModelConfig, TrackerModel};
use attentrack_core::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Value};
use attentrack_core::qem::QemModule;
use attentrack_core::simworld::{generate_scenario, Scenario, ScenarioConfig};
use attentrack_core::train::build_pair;

const SEEDS: u64 = 24;
const PICKS: usize = 6;
const REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs())
}

fn random_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal()).collect();
    Tensor::from_vec(vec![rows, cols], data).unwrap()
}

/// Moves every parameter to a generic point. Freshly built modules put
/// biases exactly at zero, which parks the relu behind the appended
/// dead-target row exactly on its kink — a point where central differences
/// are meaningless.
fn jitter_params(store: &mut ParamStore, rng: &mut Rng) {
    for id in store.ids() {
        for v in &mut store.get_mut(id).data {
            *v += 0.05 * rng.normal();
        }
    }
}

/// Analytic gradients for `ids`, then central differences on random
/// coordinates of those parameters.
fn fd_check_store(
    store: &mut ParamStore,
    ids: &[ParamId],
    rng: &mut Rng,
    label: &str,
    forward: &dyn Fn(&ParamStore, &mut Tape) -> Value,
) {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = forward(store, &mut tape);
    tape.backward(loss).unwrap();
    tape.accumulate_param_grads(store);
    let grads: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            let t = store.get(*id);
            t.grad.clone().unwrap_or_else(|| vec![0.0; t.data.len()])
        })
        .collect();

    let eval = |store: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let v = forward(store, &mut tape);
        tape.data(v)[0]
    };

    for _ in 0..PICKS {
        let gi = rng.below(ids.len());
        let id = ids[gi];
        let j = rng.below(store.get(id).data.len());
        let x = store.get(id).data[j];
        let h = 1e-6 * (1.0 + x.abs());
        store.get_mut(id).data[j] = x + h;
        let fp = eval(store);
        store.get_mut(id).data[j] = x - h;
        let fm = eval(store);
        store.get_mut(id).data[j] = x;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grads[gi][j];
        let err = rel_err(analytic, numeric);
        assert!(
            err < REL_TOL,
            "{label}: param {} coord {j}: analytic {analytic} vs numeric {numeric} (rel {err:.3e})",
            store.name(id)
        );
    }
}

/// Mean of elementwise squares: a smooth scalar head for matrix outputs.
fn square_mean(tape: &mut Tape, v: Value) -> Value {
    let s = tape.mul(v, v).unwrap();
    tape.mean_all(s).unwrap()
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(1000 + seed);
        let mut store = ParamStore::new();
        let mlp = Mlp2::new(&mut store, "m", 6, 10, 5, &mut rng);
        let x = random_tensor(4, 6, &mut rng);
        let ids = store.ids();
        fd_check_store(&mut store, &ids, &mut rng, "mlp", &move |store, tape| {
            let xin = tape.input(x.clone());
            let y = mlp.forward(store, tape, xin).unwrap();
            square_mean(tape, y)
        });
    }
}

#[test]
fn cross_attention_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(2000 + seed);
        let mut store = ParamStore::new();
        let attn = CrossAttentionLayer::new(&mut store, "a", 8, &mut rng);
        let q = random_tensor(3, 8, &mut rng);
        let kv = random_tensor(5, 8, &mut rng);
        let ids = store.ids();
        fd_check_store(&mut store, &ids, &mut rng, "attention", &move |store, tape| {
            let qv = tape.input(q.clone());
            let kvv = tape.input(kv.clone());
            let y = attn.forward(store, tape, qv, kvv).unwrap();
            square_mean(tape, y)
        });
    }
}

#[test]
fn heading_embedding_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(3000 + seed);
        let mut store = ParamStore::new();
        let emb = HeadingEmbed::new(&mut store, "h", 8, &mut rng);
        let headings: Vec<f64> = (0..4).map(|_| rng.uniform_in(0.0, std::f64::consts::TAU)).collect();
        let ids = store.ids();
        fd_check_store(&mut store, &ids, &mut rng, "heading", &move |store, tape| {
            let y = emb.forward(store, tape, &headings).unwrap();
            square_mean(tape, y)
        });
    }
}

#[test]
fn cross_entropy_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(4000 + seed);
        let mut store = ParamStore::new();
        let w = store.add("w".to_string(), Tensor::xavier(5, 6, &mut rng));
        let x = random_tensor(4, 5, &mut rng);
        let targets: Vec<usize> = (0..4).map(|_| rng.below(6)).collect();
        fd_check_store(&mut store, &[w], &mut rng, "cross-entropy", &move |store, tape| {
            let xin = tape.input(x.clone());
            let wv = tape.param(store, w);
            let logits = tape.matmul(xin, wv).unwrap();
            tape.cross_entropy_rows(logits, &targets).unwrap()
        });
    }
}

#[test]
fn elementwise_and_structural_op_gradients_match_finite_differences() {
    // Covers relu, concat_rows, layer_norm_rows, select_rows, sub, mul,
    // scale, sum_all in one composite graph.
    for seed in 0..SEEDS {
        let mut rng = Rng::new(5000 + seed);
        let mut store = ParamStore::new();
        let a = store.add("a".to_string(), random_tensor(5, 7, &mut rng));
        let b = store.add("b".to_string(), random_tensor(5, 7, &mut rng));
        let gamma_data: Vec<f64> = (0..7).map(|_| 1.0 + 0.2 * rng.normal()).collect();
        let beta_data: Vec<f64> = (0..7).map(|_| 0.1 * rng.normal()).collect();
        let gamma = store.add("g".to_string(), Tensor::from_vec(vec![7], gamma_data).unwrap());
        let beta = store.add("be".to_string(), Tensor::from_vec(vec![7], beta_data).unwrap());
        let mask: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let ids = [a, b, gamma, beta];
        fd_check_store(&mut store, &ids, &mut rng, "structural", &move |store, tape| {
            let av = tape.param(store, a);
            let bv = tape.param(store, b);
            let gv = tape.param(store, gamma);
            let bev = tape.param(store, beta);
            let ra = tape.relu(av).unwrap();
            let cat = tape.concat_rows(ra, bv).unwrap();
            let ln = tape.layer_norm_rows(cat, gv, bev).unwrap();
            let half = tape.scale(cat, 0.5).unwrap();
            let sel = tape.select_rows(&mask, ln, half).unwrap();
            let diff = tape.sub(sel, cat).unwrap();
            let sq = tape.mul(diff, diff).unwrap();
            let s = tape.sum_all(sq).unwrap();
            tape.scale(s, 1.0 / 70.0).unwrap()
        });
    }
}

#[test]
fn association_module_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(6000 + seed);
        let mut store = ParamStore::new();
        let da = DaModule::new(&mut store, "da", 8, 12, &mut rng);
        let prev_feat = random_tensor(3, 8, &mut rng);
        let prev_ctx = random_tensor(3, 8, &mut rng);
        let curr = random_tensor(3, 8, &mut rng);
        let headings: Vec<f64> = (0..3).map(|_| rng.uniform_in(0.0, std::f64::consts::TAU)).collect();
        let labels = vec![1, 0, 3]; // third object leaves (dead column)
        jitter_params(&mut store, &mut rng);
        let ids = store.ids();
        fd_check_store(&mut store, &ids, &mut rng, "association", &move |store, tape| {
            let pf = tape.input(prev_feat.clone());
            let pc = tape.input(prev_ctx.clone());
            let cq = tape.input(curr.clone());
            let upd = da.update_query_features(store, tape, pf, pc, &headings).unwrap();
            let tgt = da.refine_targets(store, tape, cq).unwrap();
            let scores = associate(tape, upd, tgt).unwrap();
            association_loss(tape, scores, &labels).unwrap()
        });
    }
}

#[test]
fn enhancement_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(7000 + seed);
        let mut store = ParamStore::new();
        let qem = QemModule::new(&mut store, "qem", 8, &mut rng);
        let curr = random_tensor(4, 8, &mut rng);
        let prev = random_tensor(2, 8, &mut rng);
        let mask = vec![true, false, false, true];
        let ids = store.ids();
        fd_check_store(&mut store, &ids, &mut rng, "enhancement", &move |store, tape| {
            let cq = tape.input(curr.clone());
            let pf = tape.input(prev.clone());
            let (out, _) = qem.enhance(store, tape, cq, Some(pf), &mask).unwrap();
            square_mean(tape, out)
        });
    }
}

fn tiny_pair(seed: u64) -> Scenario {
    let cfg = ScenarioConfig {
        frames: 2,
        initial_objects: 3,
        birth_rate: 0.2,
        death_rate: 0.05,
        clutter_rate: 0.5,
        sigma_pos: 0.1,
        ..ScenarioConfig::default()
    };
    generate_scenario(&cfg, seed).unwrap()
}

/// End-to-end: the whole teacher-forced pair graph (encoder, enhancement,
/// refinement, detection head, both association streams).
#[test]
fn full_pair_graph_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Rng::new(8000 + seed);
        let cfg = ModelConfig {
            d_model: 8,
            hidden: 12,
            ..ModelConfig::default()
        };
        let mut model = TrackerModel::new(&cfg, 9000 + seed).unwrap();
        jitter_params(&mut model.store, &mut rng);
        let scenario = tiny_pair(100 + seed);
        let (prev, curr) = (scenario.frames[0].clone(), scenario.frames[1].clone());
        if prev.dets.is_empty() {
            continue;
        }

        let eval = |model: &TrackerModel| -> f64 {
            let mut tape = Tape::new();
            let g = build_pair(model, &mut tape, &prev, &curr).unwrap();
            let assoc = g.assoc.expect("assoc loss");
            let total = match g.det {
                Some(d) => tape.add(assoc, d).unwrap(),
                None => assoc,
            };
            tape.data(total)[0]
        };

        model.store.zero_grads();
        let mut tape = Tape::new();
        let g = build_pair(&model, &mut tape, &prev, &curr).unwrap();
        let assoc = g.assoc.expect("assoc loss");
        let total = match g.det {
            Some(d) => tape.add(assoc, d).unwrap(),
            None => assoc,
        };
        tape.backward(total).unwrap();
        tape.accumulate_param_grads(&mut model.store);

        let ids = model.store.ids();
        let grads: Vec<Vec<f64>> = ids
            .iter()
            .map(|id| {
                let t = model.store.get(*id);
                t.grad.clone().unwrap_or_else(|| vec![0.0; t.data.len()])
            })
            .collect();

        for _ in 0..PICKS {
            let gi = rng.below(ids.len());
            let id = ids[gi];
            let j = rng.below(model.store.get(id).data.len());
            let x = model.store.get(id).data[j];
            let h = 1e-6 * (1.0 + x.abs());
            model.store.get_mut(id).data[j] = x + h;
            let fp = eval(&model);
            model.store.get_mut(id).data[j] = x - h;
            let fm = eval(&model);
            model.store.get_mut(id).data[j] = x;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads[gi][j];
            let err = rel_err(analytic, numeric);
            assert!(
                err < REL_TOL,
                "pair graph seed {seed}: param {} coord {j}: analytic {analytic} vs numeric {numeric} (rel {err:.3e})",
                model.store.name(id)
            );
        }
    }
}
