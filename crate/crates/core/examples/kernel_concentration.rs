//! Off-diagonal kernel variance for random features as the qubit count grows.
//!
//!     cargo run --release --example kernel_concentration

use qrkd::cli::gaussian_features;
use qrkd::kernels::{kernel_matrix, offdiag_variance, KernelConfig};
use qrkd::qsim::EncodingSpec;

fn main() -> qrkd::Result<()> {
    let samples = gaussian_features(1, 100, 192);
    println!("{:>6}  {:>12}  {:>12}", "qubits", "fidelity", "projected");
    for n in [2, 4, 6, 8, 10] {
        let spec = EncodingSpec::fitting(n, 192, true);
        let f = offdiag_variance(&kernel_matrix(&samples, &KernelConfig::Fidelity, &spec)?)?;
        let p = offdiag_variance(&kernel_matrix(&samples, &KernelConfig::Projected, &spec)?)?;
        println!("{n:>6}  {:>12.4e}  {:>12.4e}", f.variance, p.variance);
    }
    Ok(())
}
