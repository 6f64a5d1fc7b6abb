//! The two scalar integral oracles and the final bound evaluator.
use afwave::dispersive::{default_r_grid, holder_tail_oracle, kernel_integral};
use afwave::grid::japanese;
use afwave::norms::{theorem_bound, BoundInputs};

fn main() -> afwave::Result<()> {
    for a in [1.0, 10.0, 100.0, 1000.0] {
        let k = kernel_integral(a, 0.1, 1)?;
        println!("a {a:6}: I {:.6e} +- {:.1e}, I <a> = {:.4}", k.value, k.error_bound, k.value * japanese(a));
    }
    for w in [10.0, 100.0] {
        let t = 4.0 * w;
        let h = holder_tail_oracle(t, 2.0 * w, w, 0.2, &default_r_grid(t, 801))?;
        println!("T {w}: sup {:.4e} at r = {:.2}, times <T>^0.8 = {:.4}", h.sup, h.argmax_r, h.sup * japanese(w).powf(0.8));
    }
    let b = theorem_bound(BoundInputs { e: 1.0, a: 1.0, c: 1.0 })?;
    println!("bound(1, 1, 1) = {} (log {})", b.value, b.log_bound);
    Ok(())
}
