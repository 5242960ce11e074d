#![allow(dead_code)]

use descpress::data::{describe_patches, split_dataset, DescriptorSet, SynthConfig, Tier};
use descpress::losses::{
    combine, distance_loss, reconstruction_loss, triplet_loss_hardest, LossValue,
};
use descpress::nn::{build_decoder, build_encoder, Layer, MlpModel, Mode, Parameterized};
use descpress::numerics::Matrix;
use descpress::train::ClassifierHead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Hidden-layer settings of the ablation grid; zero layers is a single cell.
pub fn ablation_architectures() -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for layers in 1..=2 {
        for size in [96, 128, 256, 512, 1024] {
            out.push(vec![size; layers]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Reconstruction,
    Distance,
    Triplet,
    CrossEntropy,
    /// Reconstruction plus 0.1 × distance.
    ReconstructionWithDistance,
    /// Triplet plus 3 × distance on the anchors.
    TripletWithDistance,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::Reconstruction,
        Objective::Distance,
        Objective::Triplet,
        Objective::CrossEntropy,
        Objective::ReconstructionWithDistance,
        Objective::TripletWithDistance,
    ];
}

/// An encoder plus whatever sits on top of it for one objective.
pub struct Net {
    pub encoder: MlpModel,
    pub decoder: Option<MlpModel>,
    pub head: Option<ClassifierHead>,
    pub objective: Objective,
    pub targets: Vec<usize>,
}

impl Parameterized for Net {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.encoder.visit_params(f);
        if let Some(d) = &mut self.decoder {
            d.visit_params(f);
        }
        if let Some(h) = &mut self.head {
            h.visit_params(f);
        }
    }
}

fn rows_grad(total: usize, part: LossValue, rows: std::ops::Range<usize>, cols: usize) -> LossValue {
    let mut grad = Matrix::zeros(total, cols);
    for (r, i) in rows.enumerate() {
        grad.row_mut(i).copy_from_slice(part.grad.row(r));
    }
    LossValue { value: part.value, grad }
}

impl Net {
    pub fn new(objective: Objective, input: usize, output: usize, hidden: &[usize], batch: usize, seed: u64) -> Net {
        let encoder = build_encoder(input, output, hidden, seed).unwrap();
        let decoder = matches!(objective, Objective::Reconstruction | Objective::ReconstructionWithDistance)
            .then(|| build_decoder(output, input, hidden, seed + 1).unwrap());
        let classes = 3;
        let head = (objective == Objective::CrossEntropy)
            .then(|| ClassifierHead::new(output, classes, &mut ChaCha8Rng::seed_from_u64(seed + 2)));
        Net {
            encoder,
            decoder,
            head,
            objective,
            targets: (0..batch).map(|i| i % classes).collect(),
        }
    }

    /// Loss value; parameter gradients are left in the modules and the gradient
    /// with respect to the encoder input is returned. `target` plays the role of
    /// the original descriptors in reconstruction and distance terms and is
    /// held fixed.
    pub fn loss_and_backward(&mut self, input: &Matrix, target: &Matrix) -> (f64, Matrix) {
        let x = target;
        let e = self.encoder.forward(input).unwrap();
        let n = x.rows();
        let (value, grad_e) = match self.objective {
            Objective::Reconstruction | Objective::ReconstructionWithDistance => {
                let dec = self.decoder.as_mut().unwrap();
                let r = dec.forward(&e).unwrap();
                let rec = reconstruction_loss(x, &r).unwrap();
                let g = dec.backward(&rec.grad).unwrap();
                let main = LossValue { value: rec.value, grad: g };
                let total = if self.objective == Objective::Reconstruction {
                    main
                } else {
                    combine(&main, &distance_loss(x, &e).unwrap(), 0.1).unwrap()
                };
                (total.value, total.grad)
            }
            Objective::Distance => {
                let l = distance_loss(x, &e).unwrap();
                (l.value, l.grad)
            }
            Objective::Triplet => {
                let l = triplet_loss_hardest(&e, 1.0).unwrap();
                (l.value, l.grad)
            }
            Objective::TripletWithDistance => {
                let trip = triplet_loss_hardest(&e, 1.0).unwrap();
                let half = n / 2;
                let idx: Vec<usize> = (0..half).collect();
                let part = distance_loss(&x.select_rows(&idx), &e.select_rows(&idx)).unwrap();
                let dist = rows_grad(n, part, 0..half, e.cols());
                let total = combine(&trip, &dist, 3.0).unwrap();
                (total.value, total.grad)
            }
            Objective::CrossEntropy => {
                let l = self.head.as_mut().unwrap().loss(&e, &self.targets).unwrap();
                (l.value, l.grad)
            }
        };
        let gx = self.encoder.backward(&grad_e).unwrap();
        (value, gx)
    }

    /// Smallest |pre-activation| over every ReLU of the encoder and decoder on
    /// this batch, in training mode.
    pub fn relu_margin(&self, x: &Matrix) -> f64 {
        let mut margin = f64::INFINITY;
        let mut input = x.clone();
        for model in [Some(&self.encoder), self.decoder.as_ref()].into_iter().flatten() {
            for (k, layer) in model.layers.iter().enumerate() {
                if let Layer::Relu(_) = layer {
                    let mut prefix = MlpModel::from_layers(model.layers[..k].to_vec()).unwrap();
                    prefix.set_mode(Mode::Train);
                    let z = prefix.forward(&input).unwrap();
                    margin = z.data().iter().fold(margin, |m, v| m.min(v.abs()));
                }
            }
            let mut m = model.clone();
            m.set_mode(Mode::Train);
            input = m.forward(&input).unwrap();
        }
        margin
    }

    fn tensor_sizes(&mut self) -> Vec<usize> {
        let mut sizes = Vec::new();
        self.visit_params(&mut |p, _| sizes.push(p.len()));
        sizes
    }

    fn grads(&mut self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, g| out.push(g.to_vec()));
        out
    }

    fn nudge(&mut self, tensor: usize, index: usize, delta: f64) {
        let mut t = 0;
        self.visit_params(&mut |p, _| {
            if t == tensor {
                p[index] += delta;
            }
            t += 1;
        });
    }
}

/// Relative error, with gradients below `floor` compared on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Magnitude below which a central difference of a loss of size `loss` is
/// dominated by rounding: a few ulps of the loss divided by the step.
pub fn difference_floor(loss: f64, h: f64) -> f64 {
    (4e4 * f64::EPSILON * loss.abs() / h).max(1e-6)
}

/// Largest relative error between analytic and central-difference gradients
/// over sampled inputs and sampled entries of every parameter tensor.
pub fn max_gradient_error(net: &mut Net, x: &Matrix, per_tensor: usize, inputs: usize, seed: u64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (loss, gx) = net.loss_and_backward(x, x);
    let floor = difference_floor(loss, h);
    let grads = net.grads();
    let mut worst = 0.0f64;

    for _ in 0..inputs {
        let i = rng.random_range(0..x.data().len());
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let numeric = (net.loss_and_backward(&xp, x).0 - net.loss_and_backward(&xm, x).0) / (2.0 * h);
        worst = worst.max(relative_error(gx.data()[i], numeric, floor));
    }
    for (t, &size) in net.tensor_sizes().iter().enumerate() {
        for _ in 0..per_tensor.min(size) {
            let i = rng.random_range(0..size);
            net.nudge(t, i, h);
            let up = net.loss_and_backward(x, x).0;
            net.nudge(t, i, -2.0 * h);
            let down = net.loss_and_backward(x, x).0;
            net.nudge(t, i, h);
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grads[t][i], numeric, floor));
        }
    }
    worst
}

/// Central differences are meaningless across a ReLU kink, so batches with a
/// pre-activation closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-5;

/// A random batch on which every ReLU pre-activation is at least
/// [`KINK_MARGIN`] away from zero.
pub fn differentiable_batch(net: &Net, rows: usize, cols: usize, seed: u64) -> Matrix {
    (0..100)
        .map(|k| random_matrix(rows, cols, seed + 1_000_003 * k))
        .find(|x| net.relu_margin(x) >= KINK_MARGIN)
        .expect("a batch away from ReLU kinks")
}

/// Worst gradient error for each (objective, architecture) pair on a random
/// batch of 8 (8 anchor/positive pairs for triplet objectives).
pub fn gradient_grid() -> Vec<(Objective, Vec<usize>, f64)> {
    let (input, output) = (128, 64);
    let mut out = Vec::new();
    for (oi, objective) in Objective::ALL.into_iter().enumerate() {
        for (ai, hidden) in ablation_architectures().into_iter().enumerate() {
            let seed = (oi * 100 + ai) as u64;
            let rows = match objective {
                Objective::Triplet | Objective::TripletWithDistance => 16,
                _ => 8,
            };
            let mut net = Net::new(objective, input, output, &hidden, rows, seed);
            let x = differentiable_batch(&net, rows, input, seed);
            let err = max_gradient_error(&mut net, &x, 6, 24, seed + 7);
            out.push((objective, hidden, err));
        }
    }
    out
}

/// Train and test descriptors of the synthetic benchmark used by the acceptance
/// suite: 2000 classes × 4 patches over all tiers, split 80/10/10 by class.
pub struct Benchmark {
    pub train: DescriptorSet,
    pub test: DescriptorSet,
}

pub fn benchmark(seed: u64) -> Benchmark {
    let patches = SynthConfig::new(2000, 4, Tier::ALL.to_vec(), seed).generate().unwrap();
    let all = describe_patches(&patches).unwrap();
    let (train, _, test) = split_dataset(&all, [0.8, 0.1, 0.1], seed).unwrap();
    Benchmark { train, test }
}
