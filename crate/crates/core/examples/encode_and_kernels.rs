//! Encode two feature vectors as 4-qubit states and compare them with the
//! fidelity, projected and Gaussian kernels.
//!
//!     cargo run --example encode_and_kernels

use qrkd::kernels::{gaussian_kernel, kernel_matrix, projected_kernel, projected_kernel_trace, fidelity_kernel, KernelConfig};
use qrkd::qsim::{encode_features, pauli_expectations, reduced_density_matrix, EncodingSpec};

fn main() -> qrkd::Result<()> {
    let spec = EncodingSpec::normalized(4, 2);
    let x = [0.9, -0.2, 0.4, 0.1, 0.0, 0.3, -0.5, 0.8];
    let y = [0.7, -0.1, 0.5, 0.2, 0.1, 0.2, -0.6, 0.6];

    let state = encode_features(&x, &spec)?;
    println!("|psi(x)|^2 = {:.15}", state.norm_sqr());
    for q in 0..spec.n_qubits {
        let rdm = reduced_density_matrix(&state, q)?;
        let bloch = pauli_expectations(&state, q)?.as_array();
        println!("qubit {q}: purity {:.4}  bloch ({:+.3}, {:+.3}, {:+.3})", rdm.purity(), bloch[0], bloch[1], bloch[2]);
    }

    println!("fidelity   k(x, y) = {:.6}", fidelity_kernel(&x, &y, &spec)?);
    println!("projected  k(x, y) = {:.6}", projected_kernel(&x, &y, &spec)?);
    println!("  via partial traces {:.6}", projected_kernel_trace(&x, &y, &spec)?);
    println!("gaussian   k(x, y) = {:.6}  (sigma 0.5)", gaussian_kernel(&x, &y, 0.5)?);

    let samples = vec![x.to_vec(), y.to_vec(), x.iter().map(|v| -v).collect()];
    let m = kernel_matrix(&samples, &KernelConfig::Fidelity, &spec)?;
    println!("fidelity matrix:");
    for row in m.rows() {
        println!("  {}", row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("  "));
    }
    Ok(())
}
