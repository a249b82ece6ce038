//! Welch's unequal-variance t-test, its Student reduction and the
//! one-sided p-value.
use cofuse::analysis::{student_t, welch_t};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = welch_t(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0, 5.0])?;
    println!("t = {:.6}, dof = {:.6}, one-sided p = {:.6}", r.t, r.dof, r.p_one_sided);

    let (a, b) = ([0.3, 1.1, 2.0, 2.4], [1.0, 1.9, 2.3, 3.6]);
    let w = welch_t(&a, &b)?;
    let (ts, dofs) = student_t(&a, &b)?;
    println!("equal sizes: welch t {:.12} vs student t {:.12} (dof {:.3} vs {dofs})", w.t, ts, w.dof);

    let same = welch_t(&a, &a)?;
    println!("identical samples: t = {}, p = {}", same.t, same.p_one_sided);
    Ok(())
}
