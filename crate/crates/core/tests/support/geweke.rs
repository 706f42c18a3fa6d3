//! Joint-distribution check of the sampler on a tiny model: draws from the
//! prior-predictive must match a chain that alternates Gibbs sweeps with
//! regenerating the data from the current parameters.

use mps_core::gibbs::gibbs_sweep;
use mps_core::rng::Streams;
use mps_core::{stick_to_probs, AssignmentUpdate, MpsConfig, MpsState, ResponseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

const N: usize = 3;
const J: usize = 2;
const K: usize = 2;
pub const SWEEPS: usize = 50_000;

fn summaries(s: &MpsState) -> [f64; 3] {
    let theta = s.theta.iter().sum::<f64>() / s.theta.len() as f64;
    let beta = s.beta.iter().sum::<f64>() / s.beta.len() as f64;
    [theta, beta, s.alpha]
}

/// Responses and latents drawn from the likelihood given the parameters.
fn regenerate(s: &mut MpsState, rng: &mut ChaCha8Rng) -> ResponseMatrix {
    let mut cells = Vec::with_capacity(N * J);
    for i in 0..N {
        for j in 0..J {
            let z: f64 = rng.sample(StandardNormal);
            let ys = s.linear_predictor(i, s.assign[i], j) + z;
            s.ystar[i * J + j] = ys;
            cells.push(Some(ys > 0.0));
        }
    }
    ResponseMatrix::from_cells(N, J, cells).unwrap()
}

fn prior_draw(rng: &mut ChaCha8Rng) -> MpsState {
    let mut s = MpsState::zeros(N, J, 1, K);
    s.alpha = Gamma::new(1.0, 1.0).unwrap().sample(rng);
    s.pi = (0..K - 1)
        .map(|_| {
            Beta::new(1.0, s.alpha)
                .unwrap()
                .sample(rng)
                .clamp(1e-300, 1.0 - 1e-16)
        })
        .collect();
    let p = stick_to_probs(&s.pi).unwrap();
    for i in 0..N {
        let u: f64 = rng.random();
        s.assign[i] = if u < p[0] { 0 } else { 1 };
        s.theta[i] = rng.sample(StandardNormal);
    }
    for v in s.beta.iter_mut().chain(s.gamma.iter_mut()) {
        *v = rng.sample(StandardNormal);
    }
    s
}

fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let size = xs.len() / batches;
    let means: Vec<f64> = xs
        .chunks(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

pub fn geweke_z(update: AssignmentUpdate, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = MpsConfig::new(1, K).with_iterations(2, 1).with_seed(seed);
    cfg.assignment = update;

    let marginal: Vec<[f64; 3]> = (0..SWEEPS)
        .map(|_| summaries(&prior_draw(&mut rng)))
        .collect();

    let streams = Streams::new(seed);
    let mut state = prior_draw(&mut rng);
    let mut y = regenerate(&mut state, &mut rng);
    let mut successive = Vec::with_capacity(SWEEPS);
    for t in 0..SWEEPS {
        gibbs_sweep(&y, &mut state, &cfg, &streams, t as u64).unwrap();
        y = regenerate(&mut state, &mut rng);
        successive.push(summaries(&state));
    }

    let mut z = [0.0; 3];
    for (c, zc) in z.iter_mut().enumerate() {
        let a: Vec<f64> = marginal.iter().map(|s| s[c]).collect();
        let b: Vec<f64> = successive.iter().map(|s| s[c]).collect();
        let (ma, sa) = batch_mean_se(&a, 50);
        let (mb, sb) = batch_mean_se(&b, 50);
        *zc = (ma - mb) / (sa * sa + sb * sb).sqrt();
    }
    z
}
