use egossl::numerics::{
    forward_backward, load_checkpoint, save_checkpoint, FreezeMask, Graph, OptimizerConfig, OptimizerState, ParamStore,
    Tensor, Var,
};
use egossl::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn store(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    for (name, shape) in [("enc.w", vec![3, 4]), ("enc.b", vec![4]), ("head.w", vec![4, 2])] {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.insert(name, Tensor::new(shape, data).unwrap()).unwrap();
    }
    p
}

fn x_input() -> Tensor {
    Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.9, 1.1, 0.4, -0.7]).unwrap()
}

fn f(g: &mut Graph, p: &ParamStore) -> Result<Var> {
    let x = g.input(x_input());
    let w = g.param(p, "enc.w")?;
    let b = g.param(p, "enc.b")?;
    let h = g.matmul(x, w)?;
    let h = g.add_row_broadcast(h, b)?;
    let h = g.tanh(h);
    let v = g.param(p, "head.w")?;
    let y = g.matmul(h, v)?;
    g.softmax_cross_entropy(y, &[1, 0])
}

fn h(g: &mut Graph, p: &ParamStore) -> Result<Var> {
    let w = g.param(p, "enc.w")?;
    let sq = g.square(w);
    let v = g.param(p, "head.w")?;
    let a = g.abs(v);
    let s1 = g.sum(sq);
    let s2 = g.mean(a);
    g.add(s1, s2)
}

#[test]
fn gradients_of_a_sum_add_up() {
    for seed in 0..5 {
        let p = store(seed);
        let mut both = p.clone();
        forward_backward(&mut both, |g, p| {
            let a = f(g, p)?;
            let b = h(g, p)?;
            g.add(a, b)
        })
        .unwrap();
        let mut only_f = p.clone();
        forward_backward(&mut only_f, f).unwrap();
        let mut only_h = p.clone();
        forward_backward(&mut only_h, h).unwrap();
        for (name, g) in both.grads() {
            let sum: Vec<f64> = only_f
                .grad(name)
                .unwrap()
                .data()
                .iter()
                .zip(only_h.grad(name).unwrap().data())
                .map(|(a, b)| a + b)
                .collect();
            for (x, y) in g.data().iter().zip(&sum) {
                assert!((x - y).abs() < 1e-10, "{name}: {x} vs {y}");
            }
        }
    }
}

fn train(mut p: ParamStore, cfg: OptimizerConfig, freeze: &[&str], steps: usize) -> ParamStore {
    let mask = FreezeMask::new(&p, freeze).unwrap();
    let mut opt = OptimizerState::new(cfg, &p).unwrap();
    for _ in 0..steps {
        forward_backward(&mut p, f).unwrap();
        opt.step(&mut p, &mask).unwrap();
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn steps_are_bit_reproducible(seed in any::<u64>(), steps in 1usize..20, adam in any::<bool>()) {
        let cfg = if adam { OptimizerConfig::adam(1e-2) } else { OptimizerConfig::sgd(1e-1) };
        let a = train(store(seed), cfg, &[], steps);
        let b = train(store(seed), cfg, &[], steps);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn frozen_parameters_never_move(seed in any::<u64>(), steps in 1usize..30) {
        let start = store(seed);
        let end = train(start.clone(), OptimizerConfig::adam(5e-2), &["enc."], steps);
        for name in ["enc.w", "enc.b"] {
            prop_assert_eq!(start.value(name), end.value(name));
        }
        prop_assert_ne!(start.value("head.w"), end.value("head.w"));
    }
}

#[test]
fn training_lowers_the_loss() {
    let p = store(3);
    let before = egossl::numerics::evaluate(&p, f).unwrap();
    let after = egossl::numerics::evaluate(&train(p, OptimizerConfig::adam(1e-2), &[], 200), f).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.egos");
    let mut p = store(9);
    p.round_to_f32();
    save_checkpoint(&p, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.names().collect::<Vec<_>>(), p.names().collect::<Vec<_>>());
    for (name, v) in p.iter() {
        assert_eq!(back.value(name).unwrap(), v);
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = 0x7f;
    std::fs::write(&path, bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
