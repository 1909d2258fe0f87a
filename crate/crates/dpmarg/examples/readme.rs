//! Compile check for the README library sketch.

use dpmarg::mechanism::{measure_all, NoiseSource};
use dpmarg::planner::{build_cost_model, solve_sum_of_variances};
use dpmarg::reconstruct::reconstruct_all;
use dpmarg::schema::{AttrSet, Dataset, Schema, Workload};

fn main() -> Result<(), dpmarg::Error> {
    let schema = Schema::from_sizes(&[2, 2, 3])?;
    let workload = Workload::from_attr_sets(vec![
        AttrSet::new(vec![0]),
        AttrSet::new(vec![0, 1]),
        AttrSet::new(vec![1, 2]),
    ])?;
    let model = build_cost_model(&schema, &workload)?;
    let plan = solve_sum_of_variances(&model, &[1.0, 1.0, 1.0], 1.0)?;

    let mut data = Dataset::new(schema.clone());
    data.push(&[0, 1, 1])?;

    let residuals = measure_all(&data, &plan, &NoiseSource::new(42))?
        .into_iter()
        .map(|r| (r.attrset.clone(), r))
        .collect();
    let estimates = reconstruct_all(&schema, &workload, &residuals)?;
    for est in &estimates {
        println!(
            "{}: {:?} (±{:.3} per cell)",
            est.attrset,
            est.values,
            est.cell_variance.sqrt()
        );
    }
    Ok(())
}
