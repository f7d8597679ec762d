use crate::error::{Error, Result};

/// Largest neighbor count [`brute_force_sensitivity`] will enumerate per dataset.
pub const MAX_NEIGHBOR_PAIRS: usize = 1000;

/// Exhaustive L2 sensitivity under single-record substitution.
///
/// For each base dataset, every position is replaced in turn by every
/// element of `replacement_pool`, and the L2 distance between the query on
/// the base and on the neighbor is measured. Returns the maximum.
pub fn brute_force_sensitivity<T, Q>(
    query: Q,
    base_datasets: &[Vec<T>],
    replacement_pool: &[T],
) -> Result<f64>
where
    T: Clone,
    Q: Fn(&[T]) -> Vec<f64>,
{
    if base_datasets.is_empty() {
        return Err(Error::invalid("no base datasets to enumerate"));
    }
    let mut worst: f64 = 0.0;
    for base in base_datasets {
        if base.is_empty() {
            return Err(Error::invalid("empty dataset has no neighbors"));
        }
        let pairs = base.len() * replacement_pool.len();
        if pairs > MAX_NEIGHBOR_PAIRS {
            return Err(Error::invalid(format!(
                "{pairs} neighbor pairs exceeds the enumeration limit {MAX_NEIGHBOR_PAIRS}"
            )));
        }
        let reference = query(base);
        let mut neighbor = base.clone();
        for pos in 0..base.len() {
            for replacement in replacement_pool {
                neighbor[pos] = replacement.clone();
                let out = query(&neighbor);
                if out.len() != reference.len() {
                    return Err(Error::invalid("query output dimension changed between neighbors"));
                }
                let dist = reference
                    .iter()
                    .zip(&out)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(dist);
            }
            neighbor[pos] = base[pos].clone();
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn histogram(labels: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; 3];
        for &l in labels {
            h[l] += 1.0;
        }
        h
    }

    #[test]
    fn histogram_sum_attains_sqrt_two() {
        let s = brute_force_sensitivity(histogram, &[vec![0, 1, 2, 0]], &[0, 1, 2]).unwrap();
        assert_eq!(s, std::f64::consts::SQRT_2);
    }

    #[test]
    fn same_class_pool_gives_zero() {
        let s = brute_force_sensitivity(histogram, &[vec![1, 1]], &[1]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn constant_query_is_insensitive() {
        let s = brute_force_sensitivity(|_: &[u8]| vec![1.0, 2.0], &[vec![1, 2, 3]], &[9, 8])
            .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(brute_force_sensitivity(histogram, &[vec![]], &[0]).is_err());
        assert!(brute_force_sensitivity(histogram, &[], &[0]).is_err());
    }

    #[test]
    fn enumeration_limit() {
        let big = vec![0usize; 600];
        assert!(brute_force_sensitivity(histogram, &[big], &[1, 2]).is_err());
    }
}
