//! Central finite differences against the analytic gradients.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::rng::rng_for;

use super::Agent;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_tensor: &'static str,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Fraction of all parameters sampled.
    pub fraction: f64,
    /// Extra indices sampled from every tensor so none goes unchecked.
    pub per_tensor: usize,
    /// Denominator floor for the relative error; gradients below it are
    /// compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            fraction: 0.05,
            per_tensor: 2,
            floor: 1e-6,
            seed: 0,
        }
    }
}

/// `loss` evaluates the objective and adds its gradient into the buffer.
pub fn finite_difference_check<F>(agent: &Agent, loss: F, opts: GradCheckOptions) -> GradCheckReport
where
    F: Fn(&Agent, &mut [f64]) -> f64,
{
    let layout = agent.layout().clone();
    let mut analytic = vec![0.0; layout.total];
    loss(agent, &mut analytic);

    let mut rng = rng_for(opts.seed, &[0x4744]);
    let mut indices: Vec<usize> = (0..layout.total)
        .filter(|_| rng.random_bool(opts.fraction))
        .collect();
    let tensors = [
        layout.enc_w1,
        layout.enc_b1,
        layout.enc_w2,
        layout.enc_b2,
        layout.embedding,
        layout.out_bias,
        layout.writer.wx,
        layout.writer.wh,
        layout.writer.bias,
        layout.reader.wx,
        layout.reader.wh,
        layout.reader.bias,
        layout.proj_w,
        layout.proj_b,
    ];
    for block in tensors.iter().filter(|b| !b.is_empty()) {
        let k = opts.per_tensor.min(block.len());
        indices.extend(sample(&mut rng, block.len(), k).into_iter().map(|i| block.offset + i));
    }
    indices.sort_unstable();
    indices.dedup();

    let mut probe = agent.clone();
    let mut scratch = vec![0.0; layout.total];
    let mut eval = |probe: &Agent| {
        scratch.fill(0.0);
        loss(probe, &mut scratch)
    };
    let mut report = GradCheckReport {
        checked: indices.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        worst_tensor: "",
        analytic: 0.0,
        numeric: 0.0,
    };
    for &i in &indices {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + opts.step;
        let up = eval(&probe);
        probe.params_mut()[i] = orig - opts.step;
        let down = eval(&probe);
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || report.worst_tensor.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst_index = i;
            report.worst_tensor = layout.name_of(i);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}
