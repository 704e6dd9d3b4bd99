use rand::Rng;

use super::tensor::Tensor;

/// He-uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`, where
/// fan-in is the product of all but the leading dimension.
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("sized")
}
