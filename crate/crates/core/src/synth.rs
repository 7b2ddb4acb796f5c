//! Synthetic datasets for demos and tests.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sequence::Sequence;

fn std_normal() -> Normal<f64> {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// One Cylinder-Bell-Funnel series. `class` is 1 (cylinder), 2 (bell) or 3 (funnel).
pub fn cbf_series<R: Rng + ?Sized>(class: i64, length: usize, rng: &mut R) -> Result<Sequence> {
    if !(1..=3).contains(&class) {
        return Err(Error::InvalidParameter(format!(
            "CBF class must be 1, 2 or 3, got {class}"
        )));
    }
    if length < 2 {
        return Err(Error::InvalidParameter("CBF length must be at least 2".into()));
    }
    let n = std_normal();
    // onset and duration scale with the canonical 128-step layout
    let scale = length as f64 / 128.0;
    let a = (rng.random_range(16.0..=32.0) * scale).round();
    let b = a + (rng.random_range(32.0..=96.0) * scale).round();
    let amp = 6.0 + n.sample(rng);
    let values: Vec<f64> = (0..length)
        .map(|t| {
            let t = t as f64;
            let inside = t >= a && t <= b;
            let shape = if !inside {
                0.0
            } else {
                match class {
                    1 => 1.0,
                    2 => (t - a) / (b - a),
                    _ => (b - t) / (b - a),
                }
            };
            amp * shape + n.sample(rng)
        })
        .collect();
    Sequence::from_scalars(&values)
}

/// Balanced CBF sample: `per_class` series of each class, classes interleaved.
pub fn cbf<R: Rng + ?Sized>(per_class: usize, length: usize, rng: &mut R) -> Result<Vec<(Sequence, i64)>> {
    let mut out = Vec::with_capacity(3 * per_class);
    for _ in 0..per_class {
        for class in 1..=3 {
            out.push((cbf_series(class, length, rng)?, class));
        }
    }
    Ok(out)
}

/// Sine of random phase with a unit step at a random point in the last
/// 40 % of the series, plus light noise.
pub fn sine_with_step<R: Rng + ?Sized>(count: usize, length: usize, rng: &mut R) -> Result<Vec<Sequence>> {
    if length < 5 {
        return Err(Error::InvalidParameter(
            "sine-with-step length must be at least 5".into(),
        ));
    }
    let n = Normal::new(0.0, 0.05).expect("valid normal");
    (0..count)
        .map(|_| {
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let onset = rng.random_range((0.6 * length as f64)..(0.9 * length as f64)).floor();
            let values: Vec<f64> = (0..length)
                .map(|t| {
                    let x = t as f64;
                    let step = if x >= onset { 1.0 } else { 0.0 };
                    (std::f64::consts::TAU * 2.0 * x / length as f64 + phase).sin() + step + n.sample(rng)
                })
                .collect();
            Sequence::from_scalars(&values)
        })
        .collect()
}

/// Gaussian bumps with randomly shifted centres and light noise.
pub fn shifted_bell<R: Rng + ?Sized>(count: usize, length: usize, rng: &mut R) -> Result<Vec<Sequence>> {
    if length < 8 {
        return Err(Error::InvalidParameter("shifted-bell length must be at least 8".into()));
    }
    let n = Normal::new(0.0, 0.05).expect("valid normal");
    let len = length as f64;
    (0..count)
        .map(|_| {
            let centre = len / 2.0 + rng.random_range(-0.15 * len..0.15 * len);
            let width = len / 10.0;
            let values: Vec<f64> = (0..length)
                .map(|t| {
                    let z = (t as f64 - centre) / width;
                    3.0 * (-0.5 * z * z).exp() + n.sample(rng)
                })
                .collect();
            Sequence::from_scalars(&values)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_seeded_and_shaped() {
        let a = cbf(2, 128, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = cbf(2, 128, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a.iter().map(|x| x.1).collect::<Vec<_>>(), vec![1, 2, 3, 1, 2, 3]);
        assert!(a.iter().all(|(s, _)| s.len() == 128));
        let s = sine_with_step(3, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.len(), 3);
        let b = shifted_bell(10, 40, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(b.iter().all(|s| s.len() == 40));
        assert!(cbf_series(4, 128, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
