//! Finite-difference verification suites for the collaborative-head and
//! feature-network gradients, shared by the `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collab::{collab_cost, grad_a, grad_w, grad_x, grad_y, CollabState, PartitionPair};
use crate::data::Image;
use crate::error::Result;
use crate::featnet::{FeatNet, LayerSpec, NetSpec};
use crate::linalg::Mat;

/// Verdict for one gradient, reported as the worst relative error seen
/// across all trials.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: &'static str,
    pub max_rel_err: f64,
}

pub const PASS_TOLERANCE: f64 = 1e-5;

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= PASS_TOLERANCE
    }
}

fn rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let denom = reference.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    diff / denom
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

const FD_STEP: f64 = 1e-6;

/// Central finite differences of the halved collaborative cost with respect
/// to one entry of a cloneable target.
fn fd_cost<F>(eval: F) -> f64
where
    F: Fn(f64) -> f64,
{
    (eval(FD_STEP) - eval(-FD_STEP)) / (4.0 * FD_STEP)
}

/// Check the four analytic collaborative gradients against central finite
/// differences on `trials` random instances with dimensions up to
/// (d, m, n). When `corrupt` is set, the analytic gradients are deliberately
/// perturbed so the suite must fail (a negative control).
pub fn collab_suite(
    seed: u64,
    d: usize,
    m: usize,
    n: usize,
    trials: usize,
    corrupt: bool,
) -> Result<Vec<GradReport>> {
    let mut worst = [0.0f64; 4];
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let dd = rng.gen_range(2..=d.max(2));
        let mm = rng.gen_range(2..=m.max(2));
        let nn = rng.gen_range(2..=n.max(2));
        let pp = PartitionPair::new(
            random_mat(&mut rng, dd, mm),
            random_mat(&mut rng, dd, nn),
            vec![0; mm],
            vec![0; nn],
        )?;
        let w: Vec<f64> = (0..nn).map(|_| rng.gen_range(0.2..2.0)).collect();
        let st = CollabState::new(random_mat(&mut rng, mm, nn), w, 0.4, 0.25)?;

        let corruption = if corrupt { 1.05 } else { 1.0 };

        // W
        let mut analytic = grad_w(&pp, &st)?;
        for v in analytic.iter_mut() {
            *v *= corruption;
        }
        let fd: Vec<f64> = (0..nn)
            .map(|i| {
                fd_cost(|h| {
                    let mut s2 = st.clone();
                    s2.w[i] += h;
                    collab_cost(&pp, &s2).unwrap()
                })
            })
            .collect();
        worst[0] = worst[0].max(rel_err(&analytic, &fd));

        // A
        let mut ga = grad_a(&pp, &st)?;
        if corrupt {
            ga = ga.scale(corruption);
        }
        let mut fd_a = Mat::zeros(mm, nn);
        for c in 0..nn {
            for r in 0..mm {
                let v = fd_cost(|h| {
                    let mut s2 = st.clone();
                    s2.a.set(r, c, s2.a.get(r, c) + h);
                    collab_cost(&pp, &s2).unwrap()
                });
                fd_a.set(r, c, v);
            }
        }
        worst[1] = worst[1].max(rel_err(ga.data(), fd_a.data()));

        // X
        let mut gx = grad_x(&pp, &st)?;
        if corrupt {
            gx = gx.scale(corruption);
        }
        let mut fd_x = Mat::zeros(dd, mm);
        for c in 0..mm {
            for r in 0..dd {
                let v = fd_cost(|h| {
                    let mut p2 = pp.clone();
                    p2.x.set(r, c, p2.x.get(r, c) + h);
                    collab_cost(&p2, &st).unwrap()
                });
                fd_x.set(r, c, v);
            }
        }
        worst[2] = worst[2].max(rel_err(gx.data(), fd_x.data()));

        // Y
        let mut gy = grad_y(&pp, &st)?;
        if corrupt {
            gy = gy.scale(corruption);
        }
        let mut fd_y = Mat::zeros(dd, nn);
        for c in 0..nn {
            for r in 0..dd {
                let v = fd_cost(|h| {
                    let mut p2 = pp.clone();
                    p2.y.set(r, c, p2.y.get(r, c) + h);
                    collab_cost(&p2, &st).unwrap()
                });
                fd_y.set(r, c, v);
            }
        }
        worst[3] = worst[3].max(rel_err(gy.data(), fd_y.data()));
    }
    Ok(vec![
        GradReport { name: "grad_W", max_rel_err: worst[0] },
        GradReport { name: "grad_A", max_rel_err: worst[1] },
        GradReport { name: "grad_X", max_rel_err: worst[2] },
        GradReport { name: "grad_Y", max_rel_err: worst[3] },
    ])
}

/// Check every parameter gradient of a small two-layer network against
/// central finite differences of a probe loss.
pub fn featnet_suite(seed: u64, seeds: usize, corrupt: bool) -> Result<GradReport> {
    let mut worst = 0.0f64;
    for trial in 0..seeds {
        let trial_seed = seed.wrapping_add(trial as u64);
        let spec = NetSpec {
            input: (8, 8, 1),
            layers: vec![
                LayerSpec::Conv3x3 { channels: 2 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 6 },
            ],
        };
        let mut net = FeatNet::new(spec, trial_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed.wrapping_add(1000));
        let mut img = Image::zeros(8, 8, 1);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let probe: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let images = [img];
        let (_, cache) = net.forward(&images)?;
        let mut g = Mat::zeros(6, 1);
        g.set_col(0, &probe);
        let mut analytic = net.backward(&cache, &g)?.flat();
        if corrupt {
            for v in analytic.iter_mut() {
                *v = *v * 1.05 + 1e-3;
            }
        }

        let loss = |net: &FeatNet| -> f64 {
            let feats = net.extract(&images).unwrap();
            feats.col(0).iter().zip(&probe).map(|(f, p)| f * p).sum()
        };
        let mut fd = vec![0.0; net.param_count()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let orig = net.param(i);
            net.set_param(i, orig + FD_STEP);
            let plus = loss(&net);
            net.set_param(i, orig - FD_STEP);
            let minus = loss(&net);
            net.set_param(i, orig);
            *slot = (plus - minus) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &fd));
    }
    Ok(GradReport {
        name: "featnet",
        max_rel_err: worst,
    })
}
