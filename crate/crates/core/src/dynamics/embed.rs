use crate::error::{Error, Result};

/// Delay vectors `[x(i), x(i + tau), ..., x(i + (dim - 1) tau)]`, one row per
/// start index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpace {
    vectors: Vec<f64>,
    tau_d: usize,
    dim: usize,
}

impl PhaseSpace {
    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn tau_d(&self) -> usize {
        self.tau_d
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.vectors.chunks_exact(self.dim)
    }
}

pub fn delay_embed(samples: &[f64], tau_d: usize, dim: usize) -> Result<PhaseSpace> {
    if tau_d == 0 || dim == 0 {
        return Err(Error::ConfigInvalid("delay and dimension must be at least 1".into()));
    }
    let span = (dim - 1) * tau_d;
    if samples.len() < span + 1 {
        return Err(Error::SeriesTooShort {
            len: samples.len(),
            needed: span + 1,
        });
    }
    let count = samples.len() - span;
    let mut vectors = Vec::with_capacity(count * dim);
    for i in 0..count {
        vectors.extend((0..dim).map(|d| samples[i + d * tau_d]));
    }
    Ok(PhaseSpace { vectors, tau_d, dim })
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_delay_pairs() {
        let p = delay_embed(&[1.0, 2.0, 3.0, 4.0, 5.0], 1, 2).unwrap();
        let rows: Vec<_> = p.rows().map(|r| r.to_vec()).collect();
        assert_eq!(
            rows,
            vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0], vec![4.0, 5.0]]
        );
    }

    #[test]
    fn delay_two_pairs() {
        let p = delay_embed(&[1.0, 2.0, 3.0, 4.0, 5.0], 2, 2).unwrap();
        let rows: Vec<_> = p.rows().map(|r| r.to_vec()).collect();
        assert_eq!(rows, vec![vec![1.0, 3.0], vec![2.0, 4.0], vec![3.0, 5.0]]);
    }

    #[test]
    fn dim_one_is_identity() {
        let s = [0.5, -1.0, 2.0];
        let p = delay_embed(&s, 3, 1).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.rows().zip(&s).all(|(r, x)| r == [*x]));
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            delay_embed(&[1.0, 2.0, 3.0], 2, 3),
            Err(Error::SeriesTooShort { len: 3, needed: 5 })
        ));
    }

    proptest! {
        #[test]
        fn row_count_formula(t in 1usize..200, tau in 1usize..10, dim in 1usize..8) {
            let s: Vec<f64> = (0..t).map(|i| i as f64).collect();
            let span = (dim - 1) * tau;
            match delay_embed(&s, tau, dim) {
                Ok(p) => {
                    prop_assert_eq!(p.len(), t - span);
                    for i in 0..p.len() {
                        for d in 0..dim {
                            prop_assert_eq!(p.row(i)[d], (i + d * tau) as f64);
                        }
                    }
                }
                Err(_) => prop_assert!(t < span + 1),
            }
        }
    }
}
