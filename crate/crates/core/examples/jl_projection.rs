//! Random projection of 12-qubit states: kernel error shrinks with the target
//! dimension and the pairwise kernel-difference bound holds.
//!
//!     cargo run --release --example jl_projection

use qrkd::cli::{jl_features, jl_projector_seed};
use qrkd::kernels::{bound_check, JLProjector};
use qrkd::qsim::EncodingSpec;

fn main() -> qrkd::Result<()> {
    let spec = EncodingSpec::fitting(12, 192, true);
    let (teacher, student) = jl_features(7, 12, 192, 0.3);
    println!("{:>6}  {:>9}  {:>9}  {:>10}  bound", "k", "eps_t", "eps_s", "min slack");
    for k in [64, 128, 256, 512, 1024] {
        let projector = JLProjector::new(k, 1 << 12, jl_projector_seed(7, k))?;
        let r = bound_check(&student, &teacher, &spec, &projector)?;
        println!(
            "{k:>6}  {:>9.4}  {:>9.4}  {:>10.4}  {}",
            r.eps_teacher,
            r.eps_student,
            r.min_slack(),
            if r.passed { "holds" } else { "violated" }
        );
    }
    Ok(())
}
