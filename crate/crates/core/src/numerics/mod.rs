//! Log-domain scalars, compensated sums, combinatorics, rotation kernels and grids.

pub mod accumulator;
pub mod combinatorics;
pub mod grid;
pub mod logscalar;
pub mod rotation;

pub use accumulator::{ordered_sum, ordered_sum_f64, Accumulator};
pub use combinatorics::{
    binomial_pmf_window, binomial_support, bs_amplitude, ln_binomial, ln_binomial_pmf, ln_factorial,
    log_factorial, PmfWindow,
};
pub use grid::{bhattacharyya_overlap, gaussian_smooth, product_overlap, smooth_1d, Grid2};
pub use logscalar::{LogScalar, Sign};
pub use rotation::{rotation_kernel, RotationKernel};
