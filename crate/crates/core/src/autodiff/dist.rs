//! Diagonal Gaussian helpers built from tape primitives.

use super::tape::{Axis, Tape, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

fn same_shape(tape: &Tape, a: Var, b: Var, context: &'static str) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(Error::DimMismatch {
            context,
            expected: sa.0 * sa.1,
            got: sb.0 * sb.1,
        });
    }
    Ok(())
}

/// Log density per row: `[rows, 1]`.
pub fn gaussian_log_prob(tape: &mut Tape, mean: Var, log_std: Var, value: Var) -> Result<Var> {
    same_shape(tape, mean, log_std, "gaussian_log_prob(log_std)")?;
    same_shape(tape, mean, value, "gaussian_log_prob(value)")?;
    let diff = tape.sub(value, mean);
    let sq = tape.square(diff);
    let m2 = tape.scale(log_std, -2.0);
    let inv_var = tape.exp(m2);
    let quad = tape.mul(sq, inv_var);
    let quad = tape.scale(quad, -0.5);
    let t = tape.sub(quad, log_std);
    let t = tape.add_scalar(t, -HALF_LN_2PI);
    Ok(tape.sum(t, Some(Axis::Cols)))
}

/// Entropy per row: `[rows, 1]`.
pub fn gaussian_entropy(tape: &mut Tape, log_std: Var) -> Var {
    let t = tape.add_scalar(log_std, HALF_LN_2PI_E);
    tape.sum(t, Some(Axis::Cols))
}

/// `mean + exp(log_std) * noise`; `noise` should be a constant.
pub fn reparam_sample(tape: &mut Tape, mean: Var, log_std: Var, noise: Var) -> Result<Var> {
    same_shape(tape, mean, log_std, "reparam_sample(log_std)")?;
    same_shape(tape, mean, noise, "reparam_sample(noise)")?;
    let std = tape.exp(log_std);
    let eps = tape.mul(std, noise);
    Ok(tape.add(mean, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }

    fn lp(m: f64, s: f64, v: f64) -> f64 {
        let mut t = Tape::new();
        let m = t.constant(Tensor::scalar(m));
        let s = t.constant(Tensor::scalar(s));
        let v = t.constant(Tensor::scalar(v));
        let r = gaussian_log_prob(&mut t, m, s, v).unwrap();
        t.value(r).item()
    }

    #[test]
    fn log_prob_values() {
        approx(lp(0.0, 0.0, 0.0), -0.918_938_5);
        approx(lp(0.0, 0.0, 1.0), -1.418_938_5);
    }

    #[test]
    fn log_prob_batched_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, d) = (10, 3);
        let gen = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (0..n * d).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
        let (m, s, v) = (gen(&mut rng, -2.0, 2.0), gen(&mut rng, -1.5, 1.0), gen(&mut rng, -3.0, 3.0));
        let mut t = Tape::new();
        let mv = t.constant(Tensor::matrix(n, d, m.clone()));
        let sv = t.constant(Tensor::matrix(n, d, s.clone()));
        let vv = t.constant(Tensor::matrix(n, d, v.clone()));
        let r = gaussian_log_prob(&mut t, mv, sv, vv).unwrap();
        let batched = t.value(r).clone();
        for i in 0..n {
            // Independent oracle: the closed form evaluated per component.
            let mut expect = 0.0;
            for j in 0..d {
                let k = i * d + j;
                let sigma = s[k].exp();
                expect += -(v[k] - m[k]).powi(2) / (2.0 * sigma * sigma) - s[k] - 0.5 * (2.0 * std::f64::consts::PI).ln();
            }
            assert!((batched.at(i, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn log_prob_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::row(vec![0.0; 2]));
        let b = t.constant(Tensor::row(vec![0.0; 3]));
        assert!(gaussian_log_prob(&mut t, a, a, b).is_err());
        assert!(reparam_sample(&mut t, a, b, a).is_err());
    }

    #[test]
    fn entropy_values() {
        let ent = |s: f64, d: usize| {
            let mut t = Tape::new();
            let v = t.constant(Tensor::row(vec![s; d]));
            let e = gaussian_entropy(&mut t, v);
            t.value(e).item()
        };
        approx(ent(0.0, 1), 1.418_938_5);
        approx(ent(0.0, 3), 4.256_815_6);
        approx(ent(-1.0, 1), 0.418_938_5);
    }

    #[test]
    fn reparam_values_and_gradient() {
        let mut t = Tape::new();
        let m = t.param(Tensor::row(vec![1.0, -2.0]));
        let s = t.param(Tensor::row(vec![0.0, 0.5]));
        let n = t.constant(Tensor::row(vec![0.5, 0.0]));
        let a = reparam_sample(&mut t, m, s, n).unwrap();
        assert_eq!(t.value(a).data(), &[1.5, -2.0]);
        let total = t.sum(a, None);
        let g = t.backward(total).unwrap();
        assert_eq!(g.get(m).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.get(s).unwrap().data(), &[0.5, 0.0]);
        assert!(g.get(n).is_none());
    }
}
