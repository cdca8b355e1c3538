//! Quick invariant checks behind `qrkd selftest`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distill::Objective;
use crate::error::Result;
use crate::kernels::{
    fidelity_kernel, kernel_gradient, kernel_matrix, kernel_value_and_gradient, projected_kernel, projected_kernel_trace,
    GradientMethod, KernelConfig, KernelKind,
};
use crate::losses::Variant;
use crate::nn::{adam_step, softmax_rows, AdamConfig, AdamState, Model, ModelSpec, Tensor};
use crate::qsim::{encode_features, reduced_density_matrix, EncodingSpec};
use crate::rng::seeded;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Result<Vec<Check>> {
    let mut rng = seeded(20_240_601);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for n in 1..=6 {
        let spec = EncodingSpec::raw(n, 3);
        let x = random_vec(&mut rng, 3 * n, 1.0);
        worst = worst.max((encode_features(&x, &spec)?.norm_sqr() - 1.0).abs());
    }
    out.push(check("encoded states have unit norm", worst, 1e-12));

    let spec = EncodingSpec::raw(3, 2);
    let (mut sym, mut range, mut paths) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let a = random_vec(&mut rng, 6, 1.5);
        let b = random_vec(&mut rng, 6, 1.5);
        for k in [fidelity_kernel(&a, &b, &spec)?, projected_kernel(&a, &b, &spec)?] {
            range = range.max(-k).max(k - 1.0);
        }
        sym = sym.max((fidelity_kernel(&a, &b, &spec)? - fidelity_kernel(&b, &a, &spec)?).abs());
        paths = paths.max((projected_kernel(&a, &b, &spec)? - projected_kernel_trace(&a, &b, &spec)?).abs());
    }
    out.push(check("kernels are symmetric", sym, 1e-12));
    out.push(check("kernel values lie in [0, 1]", range.max(0.0), 1e-12));
    out.push(check("projected kernel: Pauli path equals trace path", paths, 1e-10));

    let samples: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, 6, 1.0)).collect();
    let m = kernel_matrix(&samples, &KernelConfig::Fidelity, &spec)?;
    let diag = (0..m.size()).map(|i| (m.get(i, i) - 1.0).abs()).fold(0.0, f64::max);
    out.push(check("fidelity matrix has unit diagonal", diag, 1e-12));

    let mut rdm = 0.0f64;
    for _ in 0..10 {
        let state = encode_features(&random_vec(&mut rng, 6, 1.0), &spec)?;
        for q in 0..3 {
            let r = reduced_density_matrix(&state, q)?;
            rdm = rdm.max((r.trace().re - 1.0).abs());
            let p = r.purity();
            rdm = rdm.max((0.5 - p).max(p - 1.0).max(0.0));
        }
    }
    out.push(check("reduced states have unit trace and valid purity", rdm, 1e-12));

    let mut grad = 0.0f64;
    for kind in [KernelKind::Fidelity, KernelKind::Projected] {
        let a = random_vec(&mut rng, 5, 1.0);
        let b = random_vec(&mut rng, 5, 1.0);
        let spec = EncodingSpec::raw(2, 3);
        let (gi, gj) = kernel_gradient(&a, &b, &spec, kind)?;
        let (_, ai, aj) = kernel_value_and_gradient(&a, &b, &spec, kind, GradientMethod::Adjoint)?;
        for (x, y) in gi.iter().chain(&gj).zip(ai.iter().chain(&aj)) {
            grad = grad.max((x - y).abs());
        }
    }
    out.push(check("adjoint gradients equal parameter-shift gradients", grad, 1e-10));

    let logits = random_vec(&mut rng, 40, 5.0);
    let p = softmax_rows(&logits, 10);
    let soft = p.chunks(10).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    out.push(check("softmax rows sum to one", soft, 1e-9));

    let mut params = vec![Tensor::new(vec![4], random_vec(&mut rng, 4, 1.0))?];
    let before = params[0].values.clone();
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    adam_step(&mut params, &mut adam)?;
    let moved = before.iter().zip(&params[0].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.push(check("Adam leaves parameters alone at zero gradient", moved, 0.0));

    let teacher = Model::new(ModelSpec::mlp(vec![6], 8, 3), 1)?;
    let x = Tensor::new(vec![8, 6], (0..48).map(|_| rng.random::<f64>()).collect())?;
    let (h, f) = teacher.infer(&x)?;
    let h = crate::distill::rows(&h);
    let f = crate::distill::rows(&f);
    let objective = Objective {
        coefficients: Variant::Qrkd.coefficients(),
        encoding: EncodingSpec::fitting(4, 8, true),
        kernel: KernelConfig::Fidelity,
        gradient: GradientMethod::Adjoint,
        normalize_distance: false,
        group_count: 4,
    };
    let pairs = crate::distill::draw_pairs(4, 16, &mut rng)?;
    let labels = vec![0; 8];
    let l = objective.evaluate(&h, &f, Some((&h, &f)), &labels, &pairs)?.losses;
    let clone = [l.kd, l.dr, l.ar, l.qr].into_iter().fold(0.0f64, |a, v| a.max(v.abs()));
    out.push(check("student equal to teacher gives zero distillation losses", clone, 1e-10));

    Ok(out)
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        for c in super::run_all().unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
