//! Stationary distributions of finite chains.
//!
//! The matching chain mixes on a time scale of roughly `eps^-kappa` rounds,
//! so plain power iteration stalls at small `eps`. The default solver runs
//! Grassmann-Taksar-Heyman elimination (subtraction-free, hence accurate for
//! badly conditioned chains) on the chain's single closed class; states
//! outside it are transient and get zero mass. Power iteration remains
//! available as an independent cross-check.

use super::classify::communicating_classes;
use super::OracleError;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const POWER_ITERATION_CAP: u64 = 10_000_000;

/// `||pi P - pi||_1`.
pub fn residual(transitions: &[Vec<f64>], pi: &[f64]) -> f64 {
    let next = left_multiply(transitions, pi);
    next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
}

fn left_multiply(transitions: &[Vec<f64>], pi: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; pi.len()];
    for (row, &w) in transitions.iter().zip(pi) {
        if w == 0.0 {
            continue;
        }
        for (acc, &p) in next.iter_mut().zip(row) {
            *acc += w * p;
        }
    }
    next
}

/// Stationary vector of an irreducible stochastic matrix by GTH elimination.
pub fn gth(transitions: &[Vec<f64>]) -> Vec<f64> {
    let n = transitions.len();
    if n == 0 {
        return Vec::new();
    }
    let mut a: Vec<Vec<f64>> = transitions.to_vec();
    for k in (1..n).rev() {
        let s: f64 = a[k][..k].iter().sum();
        for row in a.iter_mut().take(k) {
            row[k] /= s;
        }
        for i in 0..k {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..k {
                let akj = a[k][j];
                a[i][j] += aik * akj;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for j in 1..n {
        pi[j] = (0..j).map(|i| pi[i] * a[i][j]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    pi
}

/// The unique stationary distribution of a chain with exactly one closed
/// communicating class.
pub fn stationary_distribution(transitions: &[Vec<f64>], tol: f64) -> Result<Vec<f64>, OracleError> {
    let classes = communicating_classes(transitions);
    let closed: Vec<&Vec<usize>> = classes.iter().filter(|c| c.closed).map(|c| &c.states).collect();
    if closed.len() != 1 {
        return Err(OracleError::NotErgodic { closed_classes: closed.len() });
    }
    let members = closed[0];
    let sub: Vec<Vec<f64>> = members
        .iter()
        .map(|&i| members.iter().map(|&j| transitions[i][j]).collect())
        .collect();
    let local = gth(&sub);
    let mut pi = vec![0.0; transitions.len()];
    for (&i, &p) in members.iter().zip(&local) {
        pi[i] = p;
    }
    let r = residual(transitions, &pi);
    if r > tol {
        return Err(OracleError::NoConvergence { iterations: 0, residual: r });
    }
    Ok(pi)
}

/// Power iteration from the uniform vector until `||pi P - pi||_1 <= tol`.
pub fn power_iteration(transitions: &[Vec<f64>], tol: f64, max_iterations: u64) -> Result<Vec<f64>, OracleError> {
    let n = transitions.len();
    let sparse: Vec<Vec<(usize, f64)>> = transitions
        .iter()
        .map(|r| r.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, &p)| (j, p)).collect())
        .collect();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut r = f64::INFINITY;
    for _ in 0..max_iterations {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (row, &w) in sparse.iter().zip(&pi) {
            for &(j, p) in row {
                next[j] += w * p;
            }
        }
        r = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        let total: f64 = next.iter().sum();
        for (dst, &src) in pi.iter_mut().zip(&next) {
            *dst = src / total;
        }
        if r <= tol {
            return Ok(pi);
        }
    }
    Err(OracleError::NoConvergence {
        iterations: max_iterations,
        residual: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_state() {
        let p = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        for pi in [
            stationary_distribution(&p, 1e-12).unwrap(),
            power_iteration(&p, 1e-12, 10_000).unwrap(),
        ] {
            assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let p = vec![
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.2, 0.5],
            vec![0.5, 0.3, 0.2],
        ];
        let pi = stationary_distribution(&p, 1e-12).unwrap();
        assert!(pi.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn birth_death_closed_form() {
        // pi_i proportional to (p/q)^i
        let (p, q) = (0.3, 0.5);
        let n = 6;
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            if i + 1 < n {
                m[i][i + 1] = p;
            }
            if i > 0 {
                m[i][i - 1] = q;
            }
            m[i][i] = 1.0 - m[i].iter().sum::<f64>();
        }
        let pi = stationary_distribution(&m, 1e-12).unwrap();
        let weights: Vec<f64> = (0..n).map(|i| (p / q).powi(i as i32)).collect();
        let z: f64 = weights.iter().sum();
        for (a, w) in pi.iter().zip(&weights) {
            assert!((a - w / z).abs() < 1e-12);
        }
    }

    #[test]
    fn transient_states_get_no_mass() {
        let p = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.6, 0.4], vec![0.0, 0.4, 0.6]];
        let pi = stationary_distribution(&p, 1e-12).unwrap();
        assert_eq!(pi[0], 0.0);
        assert!((pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_closed_classes_are_rejected() {
        let p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            stationary_distribution(&p, 1e-12),
            Err(OracleError::NotErgodic { closed_classes: 2 })
        ));
    }

    #[test]
    fn power_iteration_reports_cap() {
        // periodic: never converges from a non-uniform start, but uniform is
        // already stationary, so use a slowly mixing chain instead
        let p = vec![vec![1.0 - 1e-9, 1e-9], vec![1e-3, 1.0 - 1e-3]];
        assert!(matches!(
            power_iteration(&p, 1e-15, 10),
            Err(OracleError::NoConvergence { iterations: 10, .. })
        ));
    }
}
