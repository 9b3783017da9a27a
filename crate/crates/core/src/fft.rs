//! Multi-dimensional FFT over row-major periodic grids, with per-thread plan caching.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

thread_local! {
    static PLANS: RefCell<HashMap<(TypeId, usize, bool), Box<dyn Any>>> = RefCell::new(HashMap::new());
}

fn plan<T: Real>(n: usize, inverse: bool) -> Arc<dyn Fft<T>> {
    PLANS.with(|cell| {
        let mut map = cell.borrow_mut();
        let entry = map.entry((TypeId::of::<T>(), n, inverse)).or_insert_with(|| {
            let mut planner = FftPlanner::<T>::new();
            let fft = if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            };
            Box::new(fft)
        });
        entry
            .downcast_ref::<Arc<dyn Fft<T>>>()
            .expect("plan cache keyed by scalar type")
            .clone()
    })
}

/// Unnormalised in-place transform of a `dim`-dimensional array with `n` points per axis.
pub(crate) fn transform<T: Real>(data: &mut [Complex<T>], dim: usize, n: usize, inverse: bool) {
    debug_assert_eq!(data.len(), n.pow(dim as u32));
    let fft = plan::<T>(n, inverse);
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let total = data.len();
    // last axis is contiguous
    fft.process_with_scratch(data, &mut scratch);
    let mut line = vec![Complex::new(T::zero(), T::zero()); n];
    for axis in 0..dim.saturating_sub(1) {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..total).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for (i, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, value) in line.iter().enumerate() {
                    data[base + i * stride] = *value;
                }
            }
        }
    }
}

/// Fourier coefficients `c_k = N^{-1} Σ_x f(x) e^{-2πik·x}` of real grid values.
pub(crate) fn forward_real<T: Real>(values: &[T], dim: usize, n: usize) -> Vec<Complex<T>> {
    let mut data: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
    transform(&mut data, dim, n, false);
    let scale = T::one() / T::from_usize(data.len()).unwrap();
    for c in data.iter_mut() {
        *c = *c * scale;
    }
    data
}

/// Real part of `Σ_k c_k e^{2πik·x}` on the grid.
pub(crate) fn inverse_real<T: Real>(coeffs: &[Complex<T>], dim: usize, n: usize) -> Vec<T> {
    let mut data = coeffs.to_vec();
    transform(&mut data, dim, n, true);
    data.into_iter().map(|c| c.re).collect()
}
