use std::collections::BTreeSet;

use thiserror::Error;

use super::dist::{
    check_probabilities, kl_divergence, surprisal_term, DiscreteDistribution, DistributionError, LogBase,
};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JointError {
    #[error("no axis named `{0}`")]
    UnknownAxis(String),
    #[error("axis `{0}` appears twice")]
    DuplicateAxis(String),
    #[error("axis `{0}` has no values")]
    EmptyAxis(String),
    #[error("table has {got} cells, axes require {expected}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Axis {
    pub name: String,
    pub size: usize,
}

/// A joint distribution over named finite variables, stored row-major with
/// the last axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable<T> {
    axes: Vec<Axis>,
    table: Vec<T>,
}

fn make_axes(axes: &[(&str, usize)]) -> Result<Vec<Axis>, JointError> {
    let mut seen = BTreeSet::new();
    axes.iter()
        .map(|&(name, size)| {
            if !seen.insert(name) {
                return Err(JointError::DuplicateAxis(name.into()));
            }
            if size == 0 {
                return Err(JointError::EmptyAxis(name.into()));
            }
            Ok(Axis {
                name: name.into(),
                size,
            })
        })
        .collect()
}

/// Calls `f` with every multi-index of `sizes` in row-major order.
fn for_each_index(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; sizes.len()];
    if sizes.contains(&0) {
        return;
    }
    loop {
        f(&idx);
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

impl<T: Real> JointTable<T> {
    pub fn new(axes: &[(&str, usize)], table: Vec<T>) -> Result<Self, JointError> {
        let axes = make_axes(axes)?;
        let expected = axes.iter().map(|a| a.size).product();
        if table.len() != expected {
            return Err(JointError::Shape {
                expected,
                got: table.len(),
            });
        }
        check_probabilities(&table)?;
        Ok(Self { axes, table })
    }

    /// Normalises `f(index)` over all cells.
    pub fn from_fn(axes: &[(&str, usize)], mut f: impl FnMut(&[usize]) -> T) -> Result<Self, JointError> {
        let sizes: Vec<usize> = make_axes(axes)?.iter().map(|a| a.size).collect();
        let mut w = Vec::with_capacity(sizes.iter().product());
        for_each_index(&sizes, |i| w.push(f(i)));
        let table = DiscreteDistribution::from_weights(&w)?.probs().to_vec();
        Self::new(axes, table)
    }

    pub fn from_counts(axes: &[(&str, usize)], counts: &[u64]) -> Result<Self, JointError> {
        let table = DiscreteDistribution::<T>::from_counts(counts)?.probs().to_vec();
        Self::new(axes, table)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn table(&self) -> &[T] {
        &self.table
    }

    fn axis_positions(&self, names: &[&str]) -> Result<Vec<usize>, JointError> {
        let mut seen = BTreeSet::new();
        names
            .iter()
            .map(|&n| {
                if !seen.insert(n) {
                    return Err(JointError::DuplicateAxis(n.into()));
                }
                self.axes
                    .iter()
                    .position(|a| a.name == n)
                    .ok_or_else(|| JointError::UnknownAxis(n.into()))
            })
            .collect()
    }

    /// Marginal over the given groups of axes, flattening each group into a
    /// single index. Returns the group sizes and the dense table.
    fn grouped(&self, groups: &[&[&str]]) -> Result<(Vec<usize>, Vec<T>), JointError> {
        let all: Vec<&str> = groups.iter().flat_map(|g| g.iter().copied()).collect();
        self.axis_positions(&all)?;
        let pos: Vec<Vec<usize>> = groups
            .iter()
            .map(|g| self.axis_positions(g))
            .collect::<Result<_, _>>()?;
        let gsizes: Vec<usize> = pos
            .iter()
            .map(|p| p.iter().map(|&k| self.axes[k].size).product())
            .collect();
        let mut out = vec![T::zero(); gsizes.iter().product()];
        let sizes: Vec<usize> = self.axes.iter().map(|a| a.size).collect();
        let mut cell = 0;
        for_each_index(&sizes, |idx| {
            let mut flat = 0;
            for (p, &gs) in pos.iter().zip(&gsizes) {
                let mut g = 0;
                for &k in p {
                    g = g * sizes[k] + idx[k];
                }
                flat = flat * gs + g;
            }
            out[flat] = out[flat] + self.table[cell];
            cell += 1;
        });
        Ok((gsizes, out))
    }

    /// Joint table of the named axes, in the given order.
    pub fn marginal(&self, names: &[&str]) -> Result<JointTable<T>, JointError> {
        let pos = self.axis_positions(names)?;
        let groups: Vec<&[&str]> = names.iter().map(std::slice::from_ref).collect();
        let (_, table) = self.grouped(&groups)?;
        Ok(JointTable {
            axes: pos.iter().map(|&k| self.axes[k].clone()).collect(),
            table,
        })
    }

    /// Marginal of the named axes as a flat distribution.
    pub fn distribution(&self, names: &[&str]) -> Result<DiscreteDistribution<T>, JointError> {
        let (_, table) = self.grouped(&[names])?;
        Ok(DiscreteDistribution::new(table)?)
    }
}

/// `H(A)` for a group of axes.
pub fn joint_entropy<T: Real>(j: &JointTable<T>, a: &[&str], base: LogBase) -> Result<T, JointError> {
    let (_, t) = j.grouped(&[a])?;
    Ok(base.from_nats(t.iter().fold(T::zero(), |s, &p| s + surprisal_term(p))))
}

/// `H(A | C) = H(AC) − H(C)`.
pub fn conditional_entropy<T: Real>(j: &JointTable<T>, a: &[&str], c: &[&str], base: LogBase) -> Result<T, JointError> {
    let ac: Vec<&str> = a.iter().chain(c).copied().collect();
    Ok(joint_entropy(j, &ac, base)? - joint_entropy(j, c, base)?)
}

pub fn mutual_information<T: Real>(j: &JointTable<T>, a: &[&str], b: &[&str], base: LogBase) -> Result<T, JointError> {
    conditional_mutual_information(j, a, b, &[], base)
}

/// `I(A;B|C) = E_{(b,c)} D(μ(a|bc) ‖ μ(a|c))`; cells `(b,c)` of zero mass
/// contribute nothing.
pub fn conditional_mutual_information<T: Real>(
    j: &JointTable<T>,
    a: &[&str],
    b: &[&str],
    c: &[&str],
    base: LogBase,
) -> Result<T, JointError> {
    let (s, t) = j.grouped(&[a, b, c])?;
    let (na, nb, nc) = (s[0], s[1], s[2]);
    let at = |x: usize, y: usize, z: usize| t[(x * nb + y) * nc + z];
    let mut acc = T::zero();
    for z in 0..nc {
        let ac: Vec<T> = (0..na)
            .map(|x| (0..nb).fold(T::zero(), |s, y| s + at(x, y, z)))
            .collect();
        let pc = ac.iter().fold(T::zero(), |s, &p| s + p);
        if pc <= T::zero() {
            continue;
        }
        let a_given_c = DiscreteDistribution::from_weights(&ac)?;
        for y in 0..nb {
            let abc: Vec<T> = (0..na).map(|x| at(x, y, z)).collect();
            let pbc = abc.iter().fold(T::zero(), |s, &p| s + p);
            if pbc <= T::zero() {
                continue;
            }
            let a_given_bc = DiscreteDistribution::from_weights(&abc)?;
            acc = acc + pbc * kl_divergence(&a_given_bc, &a_given_c, LogBase::Nats)?;
        }
    }
    Ok(base.from_nats(acc))
}

/// The same quantity as `H(A|C) − H(A|BC)`, for cross-checking.
pub fn conditional_mutual_information_by_entropies<T: Real>(
    j: &JointTable<T>,
    a: &[&str],
    b: &[&str],
    c: &[&str],
    base: LogBase,
) -> Result<T, JointError> {
    let bc: Vec<&str> = b.iter().chain(c).copied().collect();
    Ok(conditional_entropy(j, a, c, base)? - conditional_entropy(j, a, &bc, base)?)
}

/// The product of the marginals of groups `a` and `b`, over axes named
/// `"a"` and `"b"` holding the flattened group indices.
pub fn product_of_marginals<T: Real>(
    j: &JointTable<T>,
    a: &[&str],
    b: &[&str],
) -> Result<(JointTable<T>, JointTable<T>), JointError> {
    let (s, t) = j.grouped(&[a, b])?;
    let pa = j.distribution(a)?;
    let pb = j.distribution(b)?;
    let axes = [("a", s[0]), ("b", s[1])];
    let joint = JointTable::new(&axes, t)?;
    let prod = JointTable::new(
        &axes,
        pa.probs()
            .iter()
            .flat_map(|&x| pb.probs().iter().map(move |&y| x * y))
            .collect(),
    )?;
    Ok((joint, prod))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_table(rng: &mut impl Rng, axes: &[(&str, usize)]) -> JointTable<f64> {
        JointTable::from_fn(axes, |_| {
            if rng.random_bool(0.15) {
                0.0
            } else {
                rng.random::<f64>() + 1e-3
            }
        })
        .unwrap()
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            JointTable::new(&[("a", 2), ("a", 2)], vec![0.25; 4]),
            Err(JointError::DuplicateAxis(_))
        ));
        assert!(matches!(
            JointTable::new(&[("a", 2)], vec![0.25; 4]),
            Err(JointError::Shape { .. })
        ));
        assert!(matches!(
            JointTable::<f64>::new(&[("a", 0)], vec![]),
            Err(JointError::EmptyAxis(_))
        ));
        let j = JointTable::new(&[("a", 2)], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            mutual_information(&j, &["a"], &["z"], LogBase::Nats),
            Err(JointError::UnknownAxis(_))
        ));
    }

    #[test]
    fn perfect_correlation_is_ln2() {
        let j = JointTable::new(&[("a", 2), ("b", 2)], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let i = mutual_information(&j, &["a"], &["b"], LogBase::Nats).unwrap();
        assert!((i - 2f64.ln()).abs() < 1e-15);
        assert!((mutual_information(&j, &["a"], &["b"], LogBase::Bits).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn product_table_has_zero_information() {
        let pa = [0.2, 0.3, 0.5];
        let pb = [0.6, 0.4];
        let j = JointTable::<f64>::from_fn(&[("a", 3), ("b", 2)], |i| pa[i[0]] * pb[i[1]]).unwrap();
        assert!(mutual_information(&j, &["a"], &["b"], LogBase::Nats).unwrap().abs() < 1e-15);
    }

    #[test]
    fn marginals_are_valid_and_ordered() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let j = random_table(&mut rng, &[("a", 2), ("b", 3), ("c", 2)]);
        let m = j.marginal(&["c", "a"]).unwrap();
        assert_eq!(m.axes()[0].name, "c");
        let direct = |c: usize, a: usize| (0..3).map(|b| j.table()[(a * 3 + b) * 2 + c]).sum::<f64>();
        for c in 0..2 {
            for a in 0..2 {
                assert!((m.table()[c * 2 + a] - direct(c, a)).abs() < 1e-15);
            }
        }
        for axes in [&["a"][..], &["b", "c"], &["a", "b", "c"]] {
            assert!(j.distribution(axes).is_ok());
        }
    }

    #[test]
    fn cmi_formulas_agree_on_random_tables() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let j = random_table(&mut rng, &[("a", 2), ("b", 2), ("c", 2)]);
            let x = conditional_mutual_information(&j, &["a"], &["b"], &["c"], LogBase::Nats).unwrap();
            let y = conditional_mutual_information_by_entropies(&j, &["a"], &["b"], &["c"], LogBase::Nats).unwrap();
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            assert!(x >= 0.0);
        }
    }

    #[test]
    fn mi_is_divergence_from_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let j = random_table(&mut rng, &[("a", 3), ("b", 2), ("c", 2)]);
            let i = mutual_information(&j, &["a"], &["b", "c"], LogBase::Nats).unwrap();
            let (joint, prod) = product_of_marginals(&j, &["a"], &["b", "c"]).unwrap();
            let kl = kl_divergence(
                &DiscreteDistribution::new(joint.table().to_vec()).unwrap(),
                &DiscreteDistribution::new(prod.table().to_vec()).unwrap(),
                LogBase::Nats,
            )
            .unwrap();
            assert!((i - kl).abs() < 1e-10);
        }
    }

    #[test]
    fn single_precision_tables() {
        let j = JointTable::<f32>::new(&[("a", 2), ("b", 2)], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let i = mutual_information(&j, &["a"], &["b"], LogBase::Bits).unwrap();
        assert!((i - 1.0).abs() < 1e-6);
    }
}
