//! Seeded RNG streams and the small set of discrete draws the samplers need.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};

pub type SeededRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(logistic(x)) without overflow.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Index drawn proportionally to non-negative `weights`; they need not sum to one.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

/// Multinomial counts via sequential conditional binomials. `probs` must sum to one.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R, out: &mut [u64]) {
    debug_assert_eq!(probs.len(), out.len());
    out.iter_mut().for_each(|c| *c = 0);
    let mut left = n;
    let mut mass = 1.0;
    let k = probs.len();
    for i in 0..k {
        if left == 0 {
            break;
        }
        if i + 1 == k || mass <= 0.0 {
            out[i] = left;
            break;
        }
        let p = (probs[i] / mass).clamp(0.0, 1.0);
        let c = if p >= 1.0 {
            left
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(left, p).expect("valid binomial").sample(rng)
        };
        out[i] = c;
        left -= c;
        mass -= probs[i];
    }
}

/// log of a Gamma(shape, 1) draw, stable for very small shapes.
pub fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("valid gamma").sample(rng).ln()
    } else {
        // Gamma(a) = Gamma(a + 1) * U^(1/a)
        let g = Gamma::new(shape + 1.0, 1.0).expect("valid gamma").sample(rng).ln();
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g + u.ln() / shape
    }
}

/// Dirichlet draw written into `out`; every concentration must be positive.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R, out: &mut [f64]) {
    debug_assert_eq!(alpha.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = log_gamma_draw(a, rng);
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
