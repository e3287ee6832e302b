//! Dense arrays, seeded randomness, the AdamW optimizer and finite-difference
//! gradient checking.

mod array;
mod gradcheck;
mod optim;
mod rng;

pub use array::Array;
pub use gradcheck::{grad_check, numeric_grad, relative_error};
pub use optim::{adam_step_reference, adamw_step, AdamWConfig, OptimState};
pub use rng::{gauss, sub_seed, Rng};

/// Scientific notation with 9 significant digits, the interchange format of
/// every CSV this crate writes. Non-finite values print as `NaN`, `inf` or
/// `-inf`.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        format!("{x}")
    }
}

/// `x` rounded to what [`fmt_sig9`] preserves.
pub fn round_sig9(x: f64) -> f64 {
    fmt_sig9(x).parse().unwrap_or(x)
}
