//! List-wise objectives for fitting quality experts: a pairwise rank hinge
//! plus a centered-cosine linear term, with analytic gradients.
//!
//! The rank term sums over unordered pairs `i < j`. Summing over all ordered
//! pairs gives exactly twice the value, which is a rescaling of `lambda`.

use super::QualityError;

/// Rank-term weight used when none is configured.
pub const DEFAULT_LAMBDA: f64 = 0.3;

/// Predicted scores, ground-truth labels and the rank-term weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLists<'a> {
    pred: &'a [f64],
    gt: &'a [f64],
    lambda: f64,
}

impl<'a> ScoreLists<'a> {
    pub fn new(pred: &'a [f64], gt: &'a [f64], lambda: f64) -> Result<Self, QualityError> {
        if pred.len() != gt.len() {
            return Err(QualityError::LengthMismatch(pred.len(), gt.len()));
        }
        if pred.len() < 2 {
            return Err(QualityError::TooShort(pred.len()));
        }
        if lambda.is_nan() || lambda < 0.0 {
            return Err(QualityError::NegativeLambda(lambda));
        }
        Ok(Self { pred, gt, lambda })
    }

    pub fn pred(&self) -> &[f64] {
        self.pred
    }

    pub fn gt(&self) -> &[f64] {
        self.gt
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum over `i < j` of `max((p_i - p_j) * sgn(g_j - g_i), 0)`.
pub fn rank_loss(l: &ScoreLists<'_>) -> f64 {
    let (p, g) = (l.pred, l.gt);
    let mut total = 0.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            total += ((p[i] - p[j]) * sgn(g[j] - g[i])).max(0.0);
        }
    }
    total
}

/// Distance from +-1 below which the cosine counts as exactly collinear.
const COLLINEAR_EPS: f64 = 16.0 * f64::EPSILON;

struct Centered {
    u: Vec<f64>,
    v: Vec<f64>,
    nu: f64,
    nv: f64,
    cos: f64,
}

fn centered(p: &[f64], g: &[f64]) -> Option<Centered> {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    let u: Vec<f64> = p.iter().map(|x| x - mp).collect();
    let v: Vec<f64> = g.iter().map(|x| x - mg).collect();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let mut cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
    // collinear lists land within a few ulps of +-1
    if 1.0 - cos.abs() <= COLLINEAR_EPS {
        cos = cos.signum();
    }
    Some(Centered { u, v, nu, nv, cos })
}

/// `(1 - cos(pred - mean, gt - mean)) / 2`, in `[0, 1]`.
///
/// Undefined when either list is constant; that case returns 0.5 and logs a
/// warning.
pub fn linear_loss(l: &ScoreLists<'_>) -> f64 {
    match centered(l.pred, l.gt) {
        Some(c) => (1.0 - c.cos) / 2.0,
        None => {
            log::warn!("linear loss undefined for a constant list; using 0.5");
            0.5
        }
    }
}

/// `linear_loss + lambda * rank_loss`.
pub fn total_loss(l: &ScoreLists<'_>) -> f64 {
    linear_loss(l) + l.lambda * rank_loss(l)
}

/// Gradient of [`total_loss`] with respect to the predictions.
///
/// Hinge kinks take the zero subgradient; the constant-list case of the linear
/// term contributes zero.
pub fn loss_gradients(l: &ScoreLists<'_>) -> Vec<f64> {
    let (p, g) = (l.pred, l.gt);
    let mut grad = vec![0.0; p.len()];

    if let Some(c) = centered(p, g) {
        // d cos / d u = v/(|u||v|) - cos * u/|u|^2, already mean-free
        for (k, d) in grad.iter_mut().enumerate() {
            let dcos = c.v[k] / (c.nu * c.nv) - c.cos * c.u[k] / (c.nu * c.nu);
            *d = -0.5 * dcos;
        }
    }

    if l.lambda != 0.0 {
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let s = sgn(g[j] - g[i]);
                if (p[i] - p[j]) * s > 0.0 {
                    grad[i] += l.lambda * s;
                    grad[j] -= l.lambda * s;
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lists<'a>(p: &'a [f64], g: &'a [f64], lambda: f64) -> ScoreLists<'a> {
        ScoreLists::new(p, g, lambda).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_loss(&lists(&[0.2, 0.8], &[0.0, 1.0], 0.3)), 0.0);
        let r = rank_loss(&lists(&[0.8, 0.2], &[0.0, 1.0], 0.3));
        assert!((r - 0.6).abs() < 1e-15);
        assert_eq!(rank_loss(&lists(&[0.3, 0.9, 0.1], &[2.0, 2.0, 2.0], 0.3)), 0.0);
    }

    #[test]
    fn linear_examples() {
        let g = [1.0, 2.0, 3.0, 5.0];
        let p: Vec<f64> = g.iter().map(|x| 2.0 * x + 3.0).collect();
        assert_eq!(linear_loss(&lists(&p, &g, 0.0)), 0.0);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        assert_eq!(linear_loss(&lists(&neg, &g, 0.0)), 1.0);
        // centered pred (-4/3,-1/3,5/3), gt (-1,0,1): dot 3, norms sqrt(14/3), sqrt(2)
        let cos = 3.0 / ((14.0f64 / 3.0).sqrt() * 2f64.sqrt());
        let v = linear_loss(&lists(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0], 0.0));
        assert!((v - (1.0 - cos) / 2.0).abs() < 1e-15);
        assert!((v - 0.0090).abs() < 1e-4);
        assert_eq!(linear_loss(&lists(&[1.0, 1.0], &[1.0, 2.0], 0.0)), 0.5);
    }

    #[test]
    fn total_examples() {
        let l = lists(&[0.8, 0.2, 0.5], &[0.0, 1.0, 0.7], 0.0);
        assert_eq!(total_loss(&l), linear_loss(&l));
        assert!(total_loss(&lists(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], 0.3)).abs() < 1e-15);
        let l = lists(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0], 0.3);
        assert_eq!(rank_loss(&l), 0.0);
        assert!((total_loss(&l) - 0.0090).abs() < 1e-4);
    }

    #[test]
    fn gradient_at_minimum_and_flat_gt() {
        let g = [0.1, 0.4, 0.2, 0.9];
        let p: Vec<f64> = g.iter().map(|x| 3.0 * x - 1.0).collect();
        assert!(loss_gradients(&lists(&p, &g, 0.3)).iter().all(|d| d.abs() < 1e-12));
        let flat = [1.0; 4];
        let grad = loss_gradients(&lists(&[0.3, 0.1, 0.7, 0.2], &flat, 1.0));
        assert!(grad.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn input_validation() {
        assert!(matches!(
            ScoreLists::new(&[1.0], &[1.0], 0.3),
            Err(QualityError::TooShort(1))
        ));
        assert!(matches!(
            ScoreLists::new(&[1.0, 2.0], &[1.0], 0.3),
            Err(QualityError::LengthMismatch(2, 1))
        ));
        assert!(ScoreLists::new(&[1.0, 2.0], &[1.0, 2.0], -0.1).is_err());
    }
}
