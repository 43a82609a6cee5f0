use crate::data::CovariateDistribution;

fn expected_cumhaz(alpha: &[f64], beta: &[f64], p: f64, z: &[f64]) -> f64 {
    let la: f64 = alpha.iter().zip(z).map(|(a, v)| a * v).sum();
    let lb: f64 = beta.iter().zip(z).map(|(b, v)| b * v).sum();
    p * (-la).exp() + (1.0 - p) * (-lb).exp()
}

/// Expected working-model log likelihood under the two-trial mixture, up to
/// terms free of `theta`: `Σ π_z [θ'z - e^{θ'z}(p e^{-α'z} + (1-p) e^{-β'z})]`.
pub fn kl_objective(theta: &[f64], alpha: &[f64], beta: &[f64], p: f64, dist: &CovariateDistribution) -> f64 {
    dist.support()
        .iter()
        .map(|s| {
            let lt: f64 = theta.iter().zip(&s.z).map(|(t, v)| t * v).sum();
            s.prob * (lt - lt.exp() * expected_cumhaz(alpha, beta, p, &s.z))
        })
        .sum()
}

/// Gradient of [`kl_objective`]; its zero is the harmonic-mean effect.
pub fn kl_gradient(theta: &[f64], alpha: &[f64], beta: &[f64], p: f64, dist: &CovariateDistribution) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for s in dist.support() {
        let lt: f64 = theta.iter().zip(&s.z).map(|(t, v)| t * v).sum();
        let w = s.prob * (1.0 - lt.exp() * expected_cumhaz(alpha, beta, p, &s.z));
        for (gj, zj) in g.iter_mut().zip(&s.z) {
            *gj += w * zj;
        }
    }
    g
}
