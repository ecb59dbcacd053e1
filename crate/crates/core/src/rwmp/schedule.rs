use crate::error::{Error, Result};

/// Ordered potentials visited by the loop. Consecutive potentials differ by
/// at most `bound` in the max norm, so each state is a usable start for the
/// next.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSchedule {
    potentials: Vec<Vec<f64>>,
    bound: f64,
}

pub(crate) fn inf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

impl PotentialSchedule {
    /// Keeps the given order and checks every increment against `bound`.
    pub fn new(potentials: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidInput(format!(
                "increment bound must be positive, got {bound}"
            )));
        }
        if let Some(first) = potentials.first() {
            let n = first.len();
            if n == 0 {
                return Err(Error::InvalidInput(
                    "potentials must have at least one site".into(),
                ));
            }
            for (k, v) in potentials.iter().enumerate() {
                if v.len() != n {
                    return Err(Error::Shape {
                        expected: n,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("potential {k}")));
                }
            }
        }
        for (k, w) in potentials.windows(2).enumerate() {
            let d = inf_distance(&w[0], &w[1]);
            if d > bound {
                return Err(Error::InvalidInput(format!(
                    "increment {} -> {} is {d} in the max norm, above the bound {bound}",
                    k,
                    k + 1
                )));
            }
        }
        Ok(Self { potentials, bound })
    }

    /// Greedy chain from the first potential: each step moves to the
    /// nearest unvisited one (lowest index on ties).
    pub fn nearest_neighbor(potentials: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        let mut left: Vec<Option<Vec<f64>>> = potentials.into_iter().map(Some).collect();
        let mut chain = Vec::with_capacity(left.len());
        if let Some(first) = left.first_mut().and_then(Option::take) {
            chain.push(first);
        }
        while chain.len() < left.len() {
            let last = chain.last().expect("chain is non-empty");
            let next = left
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.as_ref().map(|v| (i, inf_distance(last, v))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("an unvisited potential remains");
            chain.push(left[next].take().expect("unvisited"));
        }
        Self::new(chain, bound)
    }

    /// `points` evenly spaced potentials from `from` to `to` inclusive.
    pub fn sweep(from: &[f64], to: &[f64], points: usize, bound: f64) -> Result<Self> {
        if from.len() != to.len() {
            return Err(Error::Shape {
                expected: from.len(),
                actual: to.len(),
            });
        }
        let potentials = (0..points)
            .map(|k| {
                let s = if points > 1 {
                    k as f64 / (points - 1) as f64
                } else {
                    0.0
                };
                from.iter().zip(to).map(|(a, b)| a + s * (b - a)).collect()
            })
            .collect();
        Self::new(potentials, bound)
    }

    /// Two-site sweep of the offset `v = (-delta/2, delta/2)`.
    pub fn dimer_sweep(delta_from: f64, delta_to: f64, points: usize, bound: f64) -> Result<Self> {
        Self::sweep(
            &[-delta_from / 2.0, delta_from / 2.0],
            &[-delta_to / 2.0, delta_to / 2.0],
            points,
            bound,
        )
    }

    pub fn potentials(&self) -> &[Vec<f64>] {
        &self.potentials
    }

    pub fn len(&self) -> usize {
        self.potentials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potentials.is_empty()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Max-norm size of each consecutive increment.
    pub fn increments(&self) -> Vec<f64> {
        self.potentials
            .windows(2)
            .map(|w| inf_distance(&w[0], &w[1]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oversized_increment_is_rejected() {
        let err = PotentialSchedule::new(vec![vec![0.0, 0.0], vec![0.5, -0.5]], 0.1).unwrap_err();
        assert!(err.to_string().contains("above the bound"));
    }

    #[test]
    fn nearest_neighbor_orders_a_shuffled_line() {
        let pts = [0.0, 0.4, 0.1, 0.3, 0.2];
        let s =
            PotentialSchedule::nearest_neighbor(pts.iter().map(|&x| vec![x, -x]).collect(), 0.15)
                .unwrap();
        let order: Vec<f64> = s.potentials().iter().map(|v| v[0]).collect();
        assert_eq!(order, vec![0.0, 0.1, 0.2, 0.3, 0.4]);
        assert!(s.increments().iter().all(|&d| d <= 0.15));
    }

    #[test]
    fn sweep_endpoints() {
        let s = PotentialSchedule::dimer_sweep(0.0, 1.0, 20, 0.1).unwrap();
        assert_eq!(s.len(), 20);
        assert_eq!(s.potentials()[0], vec![0.0, 0.0]);
        assert_eq!(s.potentials()[19], vec![-0.5, 0.5]);
        assert!(PotentialSchedule::sweep(&[0.0], &[1.0], 0, 1.0)
            .unwrap()
            .is_empty());
    }
}
