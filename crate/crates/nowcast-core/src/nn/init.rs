//! Parameter initialization.

use super::RngState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fan counts for a weight shape. For a 5-axis kernel
/// `[kt, kh, kw, cin, cout]`, fan_in is `kt*kh*kw*cin` and fan_out is
/// `kt*kh*kw*cout`; for a 2-axis `[in, out]` matrix they are `in` and `out`.
fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [kt, kh, kw, cin, cout] => {
            let kernel = kt * kh * kw;
            Ok((kernel * cin, kernel * cout))
        }
        [fan_in, fan_out] => Ok((*fan_in, *fan_out)),
        _ => Err(Error::Config(format!(
            "no identifiable fan-in/fan-out for shape {:?}",
            shape
        ))),
    }
}

/// Uniform Glorot initialization: entries drawn from
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`, which keeps the
/// variance of activations and gradients comparable across layers.
pub fn xavier_init(shape: &[usize], rng: &mut RngState) -> Result<Tensor> {
    let (fan_in, fan_out) = fans(shape)?;
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Config(format!(
            "zero fan for shape {:?} (fan_in={}, fan_out={})",
            shape, fan_in, fan_out
        )));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data)
}
