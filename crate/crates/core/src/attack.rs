//! White-box adversarial attacks and robustness evaluation.
//!
//! FGSM takes one signed-gradient step under an ℓ∞ budget; the sweep runs
//! it over an ascending ε grid and reports the first ε where accuracy drops
//! below one half (the break point). DeepFool iteratively linearizes the
//! decision boundaries, steps to the nearest one, and applies an overshoot
//! factor. Both use the network's exact input gradients.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::norm2;
use crate::nn::{argmax, backward_from_logits, cross_entropy, forward, Network, Tensor};

/// Pixel clip range for FGSM outputs.
#[derive(Debug, Clone, Copy)]
pub struct ClipRange {
    pub lo: f64,
    pub hi: f64,
}

impl ClipRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "clip range [{lo}, {hi}] is empty"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Unit pixel range; sweeps to ε = 1 assume normalized pixels.
    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// One attack configuration for `evaluate_robustness`.
#[derive(Debug, Clone)]
pub enum AttackConfig {
    Fgsm { epsilon: f64, clip: ClipRange },
    DeepFool {
        overshoot: f64,
        max_iters: usize,
        /// Stop once a step's norm falls below this (stalled attack).
        tol: f64,
    },
}

impl AttackConfig {
    pub fn name(&self) -> String {
        match self {
            Self::Fgsm { epsilon, .. } => format!("fgsm(eps={epsilon})"),
            Self::DeepFool { .. } => "deepfool".to_string(),
        }
    }

    pub fn deepfool_defaults() -> Self {
        Self::DeepFool {
            overshoot: 0.02,
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

/// `x' = clip(x + ε·sign(∇ₓ CE(f(x), label)))`; the perturbation never
/// exceeds ε in the ∞-norm.
pub fn fgsm(
    net: &Network,
    x: &Tensor,
    label: usize,
    epsilon: f64,
    clip: ClipRange,
) -> Result<Tensor> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
    }
    let pass = forward(net, x)?;
    let (_, dlogits) = cross_entropy(pass.logits(), label)?;
    let grads = backward_from_logits(net, &pass, &dlogits)?;
    let mut out = x.clone();
    for (pixel, g) in out.data.iter_mut().zip(&grads.input.data) {
        *pixel = clip.clamp(*pixel + epsilon * sign(*g));
    }
    Ok(out)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Accuracy under FGSM across an ascending ε grid starting at 0.
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// (ε, accuracy) per grid point.
    pub points: Vec<(f64, f64)>,
    /// Smallest grid ε with accuracy below 0.5, if any.
    pub break_epsilon: Option<f64>,
}

pub fn fgsm_sweep(
    net: &Network,
    testset: &Dataset,
    eps_grid: &[f64],
    clip: ClipRange,
) -> Result<SweepResult> {
    if eps_grid.is_empty() || eps_grid[0] != 0.0 {
        return Err(Error::InvalidArgument(
            "epsilon grid must start at 0".into(),
        ));
    }
    if eps_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "epsilon grid must be ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(eps_grid.len());
    let mut break_epsilon = None;
    for &eps in eps_grid {
        let mut correct = 0;
        for i in 0..testset.len() {
            let (x, label) = testset.example(i);
            let adv = fgsm(net, x, label, eps, clip)?;
            let pass = forward(net, &adv)?;
            if argmax(pass.logits()) == label {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / testset.len() as f64;
        if break_epsilon.is_none() && accuracy < 0.5 {
            break_epsilon = Some(eps);
        }
        points.push((eps, accuracy));
    }
    Ok(SweepResult {
        points,
        break_epsilon,
    })
}

#[derive(Debug, Clone)]
pub struct DeepFoolResult {
    pub adversarial: Tensor,
    pub perturbation_norm: f64,
    pub iterations: usize,
}

/// Minimal-perturbation attack by iterative linearization.
///
/// Per iteration, for each class k ≠ label the boundary distance is
/// |f_k − f_label| / ‖∇f_k − ∇f_label‖; the step projects onto the nearest
/// boundary. The accumulated perturbation is applied with a (1 + overshoot)
/// factor. Returns the first misclassifying input, or `MaxItersReached` if
/// the budget is exhausted or the steps stall below `tol`.
pub fn deepfool(
    net: &Network,
    x: &Tensor,
    label: usize,
    overshoot: f64,
    max_iters: usize,
    tol: f64,
) -> Result<DeepFoolResult> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let classes = net.num_classes();
    if label >= classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {classes} classes"
        )));
    }

    let make_adv = |r_total: &[f64]| {
        let mut adv = x.clone();
        for (pixel, r) in adv.data.iter_mut().zip(r_total) {
            *pixel += (1.0 + overshoot) * r;
        }
        adv
    };

    let pass = forward(net, x)?;
    if argmax(pass.logits()) != label {
        return Ok(DeepFoolResult {
            adversarial: x.clone(),
            perturbation_norm: 0.0,
            iterations: 0,
        });
    }

    let mut r_total = vec![0.0; x.len()];
    let mut current = x.clone();
    for iteration in 1..=max_iters {
        let pass = forward(net, &current)?;
        let logits = pass.logits().to_vec();
        // input gradient of each logit
        let mut grads = Vec::with_capacity(classes);
        for k in 0..classes {
            let mut seed = vec![0.0; classes];
            seed[k] = 1.0;
            grads.push(backward_from_logits(net, &pass, &seed)?.input.data);
        }
        let mut best: Option<(f64, Vec<f64>, f64)> = None; // (distance, w_k, f_k)
        for k in 0..classes {
            if k == label {
                continue;
            }
            let w: Vec<f64> = grads[k]
                .iter()
                .zip(&grads[label])
                .map(|(a, b)| a - b)
                .collect();
            let f = logits[k] - logits[label];
            let wn = norm2(&w);
            if wn == 0.0 {
                continue;
            }
            let dist = f.abs() / wn;
            if best.as_ref().is_none_or(|(d, _, _)| dist < *d) {
                best = Some((dist, w, f));
            }
        }
        let Some((_, w, f)) = best else {
            // all boundary gradients vanish; nothing to follow
            return Err(Error::MaxItersReached { iterations: iteration });
        };
        let wn2 = w.iter().map(|v| v * v).sum::<f64>();
        // minimal step onto the linearized boundary; the overshoot factor
        // applied to the accumulated perturbation pushes past it
        let scale = f.abs() / wn2;
        let dir = if f <= 0.0 { 1.0 } else { -1.0 };
        let step: Vec<f64> = w.iter().map(|v| scale * dir * v).collect();
        let step_norm = norm2(&step);
        for ((r, s), c) in r_total.iter_mut().zip(&step).zip(current.data.iter_mut()) {
            *r += s;
            *c += s;
        }
        let adv = make_adv(&r_total);
        let adv_pass = forward(net, &adv)?;
        if argmax(adv_pass.logits()) != label {
            return Ok(DeepFoolResult {
                perturbation_norm: norm2(&r_total) * (1.0 + overshoot),
                adversarial: adv,
                iterations: iteration,
            });
        }
        if step_norm < tol {
            return Err(Error::MaxItersReached { iterations: iteration });
        }
    }
    Err(Error::MaxItersReached {
        iterations: max_iters,
    })
}

/// Accuracy per attack plus the clean baseline.
#[derive(Debug, Clone)]
pub struct AttackRow {
    pub name: String,
    pub accuracy: f64,
    pub mean_perturbation_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub clean_accuracy: f64,
    pub rows: Vec<AttackRow>,
    /// Populated by sweep-based callers; `evaluate_robustness` leaves it
    /// empty.
    pub break_epsilon: Option<f64>,
}

/// Evaluate the model against each configured attack. A DeepFool run that
/// exhausts its budget counts as a correct (robust) classification.
pub fn evaluate_robustness(
    net: &Network,
    testset: &Dataset,
    configs: &[AttackConfig],
) -> Result<RobustnessReport> {
    if testset.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let mut clean_correct = 0;
    for i in 0..testset.len() {
        let (x, label) = testset.example(i);
        let pass = forward(net, x)?;
        if argmax(pass.logits()) == label {
            clean_correct += 1;
        }
    }
    let clean_accuracy = clean_correct as f64 / testset.len() as f64;

    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let mut correct = 0;
        let mut norm_sum = 0.0;
        for i in 0..testset.len() {
            let (x, label) = testset.example(i);
            match config {
                AttackConfig::Fgsm { epsilon, clip } => {
                    let adv = fgsm(net, x, label, *epsilon, *clip)?;
                    norm_sum += l2_diff(&adv.data, &x.data);
                    let pass = forward(net, &adv)?;
                    if argmax(pass.logits()) == label {
                        correct += 1;
                    }
                }
                AttackConfig::DeepFool {
                    overshoot,
                    max_iters,
                    tol,
                } => match deepfool(net, x, label, *overshoot, *max_iters, *tol) {
                    // Ok means the point ends up misclassified (either the
                    // attack succeeded or it was wrong to begin with).
                    Ok(result) => norm_sum += result.perturbation_norm,
                    // budget exhausted without flipping: robust, stays correct
                    Err(Error::MaxItersReached { .. }) => correct += 1,
                    Err(err) => return Err(err),
                },
            }
        }
        rows.push(AttackRow {
            name: config.name(),
            accuracy: correct as f64 / testset.len() as f64,
            mean_perturbation_norm: norm_sum / testset.len() as f64,
        });
    }
    Ok(RobustnessReport {
        clean_accuracy,
        rows,
        break_epsilon: None,
    })
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Build an inclusive ascending grid `lo, lo+step, …, hi`.
pub fn epsilon_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || hi < lo {
        return Err(Error::InvalidArgument(format!(
            "bad grid {lo}:{hi}:{step}"
        )));
    }
    let count = ((hi - lo) / step + 0.5).floor() as usize;
    let mut grid: Vec<f64> = (0..=count).map(|k| lo + k as f64 * step).collect();
    if let Some(last) = grid.last_mut() {
        if (*last - hi).abs() < step * 1e-9 {
            *last = hi;
        }
    }
    Ok(grid)
}
