//! Central finite differences, for checking analytic gradients in tests.

use crate::Tensor;

/// Numerical gradient of a scalar function at `x` with step `h`.
pub fn central_difference(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
    let mut out = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape(), out)
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    let scale = numeric.data().iter().fold(floor, |m, v| m.max(v.abs()));
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}
