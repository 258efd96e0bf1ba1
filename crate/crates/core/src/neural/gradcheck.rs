//! Central-difference checks of every tape operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{AttnGroup, AttnSpec};
use super::layers::{LayerNorm, Linear, MultiHeadAttention};
use super::{ParamStore, Tape, Tensor, Var};

const H: f64 = 1e-5;
const PROBES: usize = 100;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds the graph on fresh leaves for `inputs`, reduces any non-scalar
/// output with fixed random weights, and compares analytic and numeric
/// gradients at randomly chosen input coordinates.
fn check<F>(inputs: Vec<Tensor>, seed: u64, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |inputs: &[Tensor], weights: &mut Option<Vec<f64>>, rng: &mut ChaCha8Rng| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let n = tape.value(out).len();
        let w = weights.get_or_insert_with(|| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let root = tape.weighted_sum(out, w.clone()).unwrap();
        (tape, vars, root)
    };
    let mut weights = None;
    let (mut tape, vars, root) = eval(&inputs, &mut weights, &mut rng);
    tape.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(v, t)| tape.grad(*v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    for _ in 0..PROBES {
        let i = rng.random_range(0..inputs.len());
        let j = rng.random_range(0..inputs[i].len());
        let mut shifted = inputs.clone();
        shifted[i].data[j] += H;
        let (t, _, r) = eval(&shifted, &mut weights, &mut rng);
        let up = t.value(r).data[0];
        shifted[i].data[j] -= 2.0 * H;
        let (t, _, r) = eval(&shifted, &mut weights, &mut rng);
        let down = t.value(r).data[0];
        let numeric = (up - down) / (2.0 * H);
        let a = analytic[i][j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-4, "input {i}[{j}]: analytic {a} numeric {numeric}");
    }
}

#[test]
fn matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random(vec![4, 5], &mut rng), random(vec![5, 3], &mut rng)];
    check(inputs, 11, |t, v| t.matmul(v[0], v[1]).unwrap());
}

#[test]
fn add_and_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = vec![
        random(vec![3, 4], &mut rng),
        random(vec![3, 4], &mut rng),
        random(vec![4], &mut rng),
    ];
    check(inputs, 12, |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        t.add_bias(s, v[2]).unwrap()
    });
}

#[test]
fn relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(vec![random(vec![6, 5], &mut rng)], 13, |t, v| t.relu(v[0]));
}

#[test]
fn layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![
        random(vec![3, 8], &mut rng),
        random(vec![8], &mut rng),
        random(vec![8], &mut rng),
    ];
    check(inputs, 14, |t, v| t.layer_norm(v[0], v[1], v[2]).unwrap());
}

#[test]
fn gather_rows_with_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(vec![random(vec![5, 3], &mut rng)], 15, |t, v| {
        t.gather_rows(v[0], vec![4, 0, 4, 2, 4]).unwrap()
    });
}

#[test]
fn dropout_with_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(vec![random(vec![4, 6], &mut rng)], 16, |t, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
        t.dropout(v[0], 0.3, &mut mask_rng)
    });
}

#[test]
fn grouped_masked_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![
        random(vec![5, 8], &mut rng),
        random(vec![7, 8], &mut rng),
        random(vec![7, 4], &mut rng),
    ];
    let spec = AttnSpec {
        heads: 2,
        groups: vec![
            AttnGroup {
                q_start: 0,
                q_len: 2,
                k_start: 0,
                k_len: 4,
            },
            AttnGroup {
                q_start: 2,
                q_len: 3,
                k_start: 2,
                k_len: 5,
            },
        ],
        key_mask: Some(vec![true, true, false, true, true, true, false]),
    };
    check(inputs, 17, move |t, v| t.attention(v[0], v[1], v[2], spec.clone()).unwrap());
}

#[test]
fn place_into_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    check(vec![random(vec![5, 1], &mut rng)], 18, |t, v| {
        t.place(v[0], vec![2, 4], vec![0, 1, 2, 4, 5]).unwrap()
    });
}

#[test]
fn cross_entropy_with_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = random(vec![3, 4], &mut rng);
    let allowed = vec![
        true, true, true, false, //
        true, false, true, true, //
        false, true, true, false,
    ];
    let severity: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
    check(vec![logits], 19, move |t, v| {
        t.cross_entropy(v[0], vec![1, 3, 2], allowed.clone(), Some(severity.clone()), 0.7)
            .unwrap()
    });
}

#[test]
fn three_layer_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    for (name, fan_in, fan_out) in [("l1", 6, 10), ("l2", 10, 8), ("l3", 8, 4)] {
        Linear::new(&mut store, name, fan_in, fan_out, &mut rng);
    }
    for t in store.tensors_mut() {
        t.data.iter_mut().for_each(|w| *w += rng.random_range(-0.1..0.1));
    }
    let x = random(vec![5, 6], &mut rng);
    // every parameter becomes an input so all of them are probed
    let mut inputs = vec![x];
    inputs.extend(store.tensors().iter().cloned());
    check(inputs, 20, |t, v| {
        let h = t.linear(v[0], v[1], v[2]).unwrap();
        let h = t.relu(h);
        let h = t.linear(h, v[3], v[4]).unwrap();
        let h = t.relu(h);
        let logits = t.linear(h, v[5], v[6]).unwrap();
        t.cross_entropy(logits, vec![0, 1, 2, 3, 1], vec![true; 20], None, 0.0)
            .unwrap()
    });
}

#[test]
fn attention_block_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut rng);
    let ln = LayerNorm::new(&mut store, "ln", 8);
    let x = random(vec![4, 8], &mut rng);
    let mem = random(vec![6, 8], &mut rng);

    let run = |store: &ParamStore| {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let mv = tape.leaf(mem.clone());
        let a = mha
            .forward(&mut tape, store, xv, mv, AttnSpec::single(4, 6, 2))
            .unwrap();
        let r = tape.add(xv, a).unwrap();
        let y = ln.forward(&mut tape, store, r).unwrap();
        let w: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let root = tape.weighted_sum(y, w).unwrap();
        tape.backward(root).unwrap();
        (tape.value(root).data[0], tape.param_grads(store))
    };
    let grads = run(&store).1;

    for _ in 0..PROBES {
        let i = rng.random_range(0..store.len());
        let j = rng.random_range(0..store.tensors()[i].len());
        let mut s = store.clone();
        s.tensors_mut()[i].data[j] += H;
        let up = run(&s).0;
        s.tensors_mut()[i].data[j] -= 2.0 * H;
        let down = run(&s).0;
        let numeric = (up - down) / (2.0 * H);
        let a = grads[i][j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-4, "{}[{j}]: analytic {a} numeric {numeric}", store.names()[i]);
    }
}

#[test]
fn dropout_zero_is_identity_and_forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(vec![3, 3], &mut rng);
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let d = tape.dropout(v, 0.0, &mut rng);
    assert_eq!(d, v);
    assert_eq!(tape.value(d), &x);
}
