//! Classifies rectangles of increasing aspect ratio by whether the branch
//! reaches `λ = 8π` with bounded solutions.

use std::sync::Arc;

use mfcont::continuation::{trace_branch, ContinuationControls};
use mfcont::{build_mesh, DomainSpec};

fn main() -> mfcont::Result<()> {
    let controls = ContinuationControls::default();
    for aspect in [1.0, 2.0, 3.0, 4.0] {
        let spec = DomainSpec::rectangle(aspect, 1.0);
        let mesh = Arc::new(build_mesh(spec, 24)?);
        let branch = trace_branch(&mesh, &controls)?;
        let fold = branch.critical_points.first().map(|c| c.lambda);
        println!(
            "aspect {aspect}: isoperimetric ratio {:.3}, kind {:?}, first critical λ {:?}, {:?}",
            spec.isoperimetric_ratio(),
            branch.kind,
            fold,
            branch.termination
        );
    }
    Ok(())
}
