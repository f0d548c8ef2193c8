//! Compare the analytic actor and critic gradients with central differences.

use shrinkground::agent::check_gradients;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = check_gradients(5, 40, 1e-5)?;
    println!("{report:#?}");
    println!("largest relative error {:.3e}", report.max());
    Ok(())
}
