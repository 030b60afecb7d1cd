//! Three-dimensional FFT on row-major cubic arrays, built from rustfft line
//! transforms.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Unnormalized transform of `data`, laid out as `[[[_; n2]; n1]; n0]`.
pub fn fft3(data: &mut [Complex64], dims: [usize; 3], dir: Direction) {
    let [n0, n1, n2] = dims;
    assert_eq!(data.len(), n0 * n1 * n2);
    let mut planner = FftPlanner::<f64>::new();
    let plan = |planner: &mut FftPlanner<f64>, n: usize| match dir {
        Direction::Forward => planner.plan_fft_forward(n),
        Direction::Inverse => planner.plan_fft_inverse(n),
    };

    // Innermost axis is contiguous.
    let f2 = plan(&mut planner, n2);
    f2.process(data);

    let f1 = plan(&mut planner, n1);
    let mut line = vec![Complex64::new(0.0, 0.0); n1.max(n0)];
    for i in 0..n0 {
        for k in 0..n2 {
            for j in 0..n1 {
                line[j] = data[(i * n1 + j) * n2 + k];
            }
            f1.process(&mut line[..n1]);
            for j in 0..n1 {
                data[(i * n1 + j) * n2 + k] = line[j];
            }
        }
    }

    let f0 = plan(&mut planner, n0);
    for j in 0..n1 {
        for k in 0..n2 {
            for i in 0..n0 {
                line[i] = data[(i * n1 + j) * n2 + k];
            }
            f0.process(&mut line[..n0]);
            for i in 0..n0 {
                data[(i * n1 + j) * n2 + k] = line[i];
            }
        }
    }
}

/// Signed frequency index for position `i` of an `n`-point transform.
pub fn freq_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
