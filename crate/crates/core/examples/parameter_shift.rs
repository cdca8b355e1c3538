//! Kernel gradients by the parameter-shift rule, checked against finite
//! differences and the adjoint sweep used during training.
//!
//!     cargo run --example parameter_shift

use qrkd::kernels::{kernel_value_and_gradient, GradientMethod, KernelConfig, KernelKind};
use qrkd::kernels::kernel_value;
use qrkd::qsim::EncodingSpec;

fn main() -> qrkd::Result<()> {
    let spec = EncodingSpec::raw(3, 2);
    let x = [0.3, -1.1, 0.8, 0.05, 1.7, -0.4];
    let y = [-0.6, 0.2, 1.3, -0.9, 0.1, 0.75];

    for (kind, config) in [(KernelKind::Fidelity, KernelConfig::Fidelity), (KernelKind::Projected, KernelConfig::Projected)] {
        let (k, shift, _) = kernel_value_and_gradient(&x, &y, &spec, kind, GradientMethod::ParameterShift)?;
        let (_, adjoint, _) = kernel_value_and_gradient(&x, &y, &spec, kind, GradientMethod::Adjoint)?;
        println!("{kind} kernel = {k:.6}");
        println!("  {:>3}  {:>12}  {:>12}  {:>12}", "m", "shift", "adjoint", "central fd");
        let h = 1e-5;
        for m in 0..x.len() {
            let mut up = x;
            let mut down = x;
            up[m] += h;
            down[m] -= h;
            let fd = (kernel_value(&up, &y, &config, &spec)? - kernel_value(&down, &y, &config, &spec)?) / (2.0 * h);
            println!("  {m:>3}  {:>12.8}  {:>12.8}  {:>12.8}", shift[m], adjoint[m], fd);
        }
    }
    Ok(())
}
