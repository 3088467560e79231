//! Parameter initializers.

use ndarray::ArrayD;
use rand::Rng;

use crate::nnkit::Arr;
use crate::{P4dError, Result};

/// Xavier-uniform initialization on `+- sqrt(6 / (fan_in + fan_out))`.
///
/// For a 2-D weight `(fan_in, fan_out)` the fans are the two dims; higher-rank
/// shapes treat the last dim as fan_out and the product of the rest as fan_in.
pub fn xavier_init<R: Rng>(shape: &[usize], rng: &mut R) -> Result<Arr> {
    if shape.len() < 2 {
        return Err(P4dError::InvalidArgument(
            "xavier_init needs rank >= 2; use zero_init for biases".into(),
        ));
    }
    let fan_out = shape[shape.len() - 1];
    let fan_in: usize = shape[..shape.len() - 1].iter().product();
    if fan_in == 0 || fan_out == 0 {
        return Err(P4dError::InvalidArgument("xavier_init: zero fan".into()));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Ok(ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).unwrap())
}

pub fn zero_init(shape: &[usize]) -> Arr {
    ArrayD::zeros(ndarray::IxDyn(shape))
}
