//! The tensor/autodiff core: record a small conv network on a graph, check
//! one gradient against a central difference in f64, then fit it with Adam.
//!
//! cargo run --release --example autodiff

use diffdp::numerics::{AdamConfig, AdamState, Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Net {
    w1: ParamId,
    b1: ParamId,
    gamma: ParamId,
    beta: ParamId,
    w2: ParamId,
    b2: ParamId,
}

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

impl Net {
    fn new(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: store.add("w1", random(&[8, 1, 3, 3], 0.5, rng)),
            b1: store.add("b1", Tensor::zeros(&[8])),
            gamma: store.add("gamma", Tensor::full(&[8], 1.0)),
            beta: store.add("beta", Tensor::zeros(&[8])),
            w2: store.add("w2", random(&[1, 8, 3, 3], 0.2, rng)),
            b2: store.add("b2", Tensor::zeros(&[1])),
        }
    }

    fn loss(&self, g: &mut Graph<f64>, p: &ParamStore<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Var {
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let (w1, b1, gm, bt, w2, b2) = (
            g.param(p, self.w1),
            g.param(p, self.b1),
            g.param(p, self.gamma),
            g.param(p, self.beta),
            g.param(p, self.w2),
            g.param(p, self.b2),
        );
        let h = g.conv2d(xv, w1, b1, 1, 1).unwrap();
        let h = g.group_norm(h, 4, gm, bt, 1e-5).unwrap();
        let h = g.swish(h);
        let out = g.conv2d(h, w2, b2, 1, 1).unwrap();
        g.mean_abs_diff(out, yv).unwrap()
    }
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let net = Net::new(&mut store, &mut rng);

    // Target: a 3×3 box blur of the input.
    let x = random(&[4, 1, 12, 12], 1.0, &mut rng);
    let y = Tensor::from_fn(&[4, 1, 12, 12], |i| {
        let (n, r, c) = (i / 144, (i / 12) % 12, i % 12);
        let mut s = 0.0;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if (0..12).contains(&rr) && (0..12).contains(&cc) {
                    s += x.data()[n * 144 + rr as usize * 12 + cc as usize];
                }
            }
        }
        s / 9.0
    });

    let mut g = Graph::new();
    let loss = net.loss(&mut g, &store, &x, &y);
    let grads = g.backward(loss).unwrap();
    let analytic = grads.param(net.w1).unwrap().data()[4];
    let h = 1e-5;
    let probe = |delta: f64| {
        let mut s = store.clone();
        s.get_mut(net.w1).data_mut()[4] += delta;
        let mut g = Graph::new();
        let l = net.loss(&mut g, &s, &x, &y);
        g.value(l).item().unwrap()
    };
    let numeric = (probe(h) - probe(-h)) / (2.0 * h);
    println!("d loss / d w1[4]: backward {analytic:.6e}, central difference {numeric:.6e}");

    let mut opt = AdamState::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });
    for step in 0..=300 {
        let mut g = Graph::new();
        let loss = net.loss(&mut g, &store, &x, &y);
        let value = g.value(loss).item().unwrap();
        let grads = g.backward(loss).unwrap();
        store.set_grads(&grads);
        opt.step(&mut store).unwrap();
        if step % 50 == 0 {
            println!("step {step:3}: L1 {value:.5}");
        }
    }
}
