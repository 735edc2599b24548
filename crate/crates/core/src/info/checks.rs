//! Randomised numeric checks of the finite information-theory facts the
//! lower-bound argument relies on.
//!
//! Where a fact has a hypothesis (an independence or a Markov chain), the
//! random tables are built from kernels that satisfy it exactly.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dist::{entropy, kl_divergence, statistical_distance, DiscreteDistribution, LogBase};
use super::joint::{
    conditional_entropy, conditional_mutual_information as cmi, conditional_mutual_information_by_entropies,
    joint_entropy, mutual_information, JointTable,
};
use crate::rng::{Rng, SeedPath};

pub const INEQUALITY_TOLERANCE: f64 = 1e-9;
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `lhs ≤ rhs`
    AtMost,
    /// `lhs = rhs`
    Equal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactResult {
    pub name: String,
    pub relation: Relation,
    pub trials: usize,
    /// Smallest `rhs − lhs` seen (for identities, `−max |lhs − rhs|`).
    pub worst_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub seed: u64,
    pub trials: usize,
    pub facts: Vec<FactResult>,
    pub pass: bool,
}

impl InequalityReport {
    pub fn violations(&self) -> impl Iterator<Item = &FactResult> {
        self.facts.iter().filter(|f| !f.pass)
    }
}

const N: LogBase = LogBase::Nats;

fn axis_size(rng: &mut Rng) -> usize {
    rng.random_range(2..=3)
}

/// Random non-negative weights with occasional zeros and at least one
/// positive entry.
fn weights(rng: &mut Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k)
        .map(|_| {
            if rng.random_bool(0.15) {
                0.0
            } else {
                rng.random::<f64>() + 1e-3
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..k)] = 1.0;
    }
    w
}

fn dist(rng: &mut Rng, k: usize) -> Vec<f64> {
    let w = weights(rng, k);
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// `kernel[context][x]`: one random conditional distribution per context.
fn kernel(rng: &mut Rng, contexts: usize, k: usize) -> Vec<Vec<f64>> {
    (0..contexts).map(|_| dist(rng, k)).collect()
}

fn free_table(rng: &mut Rng, names: &[&str]) -> JointTable<f64> {
    let axes: Vec<(&str, usize)> = names.iter().map(|&n| (n, axis_size(rng))).collect();
    let w = weights(rng, axes.iter().map(|a| a.1).product());
    let mut it = w.into_iter();
    JointTable::from_fn(&axes, |_| it.next().unwrap()).expect("valid random table")
}

type Sides = (f64, f64);

fn pinsker(rng: &mut Rng) -> Sides {
    let k = axis_size(rng) + rng.random_range(0..=3);
    let p = DiscreteDistribution::new(dist(rng, k)).unwrap();
    let q =
        DiscreteDistribution::from_weights(&(0..k).map(|_| rng.random::<f64>() + 1e-3).collect::<Vec<_>>()).unwrap();
    let tv = statistical_distance(&p, &q).unwrap();
    (tv * tv, 0.5 * kl_divergence(&p, &q, N).unwrap())
}

fn chain_rule(rng: &mut Rng) -> Sides {
    let j = free_table(rng, &["a", "b", "c", "d"]);
    let lhs = cmi(&j, &["a", "b"], &["c"], &["d"], N).unwrap();
    let rhs = cmi(&j, &["a"], &["c"], &["d"], N).unwrap() + cmi(&j, &["b"], &["c"], &["a", "d"], N).unwrap();
    (lhs, rhs)
}

fn cmi_two_formulas(rng: &mut Rng) -> Sides {
    let j = free_table(rng, &["a", "b", "c"]);
    (
        cmi(&j, &["a"], &["b"], &["c"], N).unwrap(),
        conditional_mutual_information_by_entropies(&j, &["a"], &["b"], &["c"], N).unwrap(),
    )
}

fn mi_is_divergence_from_product(rng: &mut Rng) -> Sides {
    let j = free_table(rng, &["a", "b"]);
    let (joint, prod) = super::joint::product_of_marginals(&j, &["a"], &["b"]).unwrap();
    let kl = kl_divergence(
        &DiscreteDistribution::new(joint.table().to_vec()).unwrap(),
        &DiscreteDistribution::new(prod.table().to_vec()).unwrap(),
        N,
    )
    .unwrap();
    (mutual_information(&j, &["a"], &["b"], N).unwrap(), kl)
}

/// A ⊥ D | C by construction: μ(c) μ(a|c) μ(d|c) μ(b|acd).
fn conditioning_on_independent_increases(rng: &mut Rng) -> Sides {
    let (na, nb, nc, nd) = (axis_size(rng), axis_size(rng), axis_size(rng), axis_size(rng));
    let pc = dist(rng, nc);
    let a_c = kernel(rng, nc, na);
    let d_c = kernel(rng, nc, nd);
    let b_acd = kernel(rng, na * nc * nd, nb);
    let j = JointTable::from_fn(&[("a", na), ("b", nb), ("c", nc), ("d", nd)], |i| {
        let (a, b, c, d) = (i[0], i[1], i[2], i[3]);
        pc[c] * a_c[c][a] * d_c[c][d] * b_acd[(a * nc + c) * nd + d][b]
    })
    .unwrap();
    debug_assert!(cmi(&j, &["a"], &["d"], &["c"], N).unwrap() < 1e-12);
    (
        cmi(&j, &["a"], &["b"], &["c"], N).unwrap(),
        cmi(&j, &["a"], &["b"], &["c", "d"], N).unwrap(),
    )
}

/// B ⊥ D | AC by construction: μ(acd) μ(b|ac).
fn conditioning_decreases(rng: &mut Rng) -> Sides {
    let (na, nb, nc, nd) = (axis_size(rng), axis_size(rng), axis_size(rng), axis_size(rng));
    let acd = dist(rng, na * nc * nd);
    let b_ac = kernel(rng, na * nc, nb);
    let j = JointTable::from_fn(&[("a", na), ("b", nb), ("c", nc), ("d", nd)], |i| {
        let (a, b, c, d) = (i[0], i[1], i[2], i[3]);
        acd[(a * nc + c) * nd + d] * b_ac[a * nc + c][b]
    })
    .unwrap();
    debug_assert!(cmi(&j, &["b"], &["d"], &["a", "c"], N).unwrap() < 1e-12);
    (
        cmi(&j, &["a"], &["b"], &["c", "d"], N).unwrap(),
        cmi(&j, &["a"], &["b"], &["c"], N).unwrap(),
    )
}

/// X → Y → Z: μ(xy) μ(z|y).
fn data_processing_markov(rng: &mut Rng) -> Sides {
    let (nx, ny, nz) = (axis_size(rng), axis_size(rng) + 1, axis_size(rng));
    let xy = dist(rng, nx * ny);
    let z_y = kernel(rng, ny, nz);
    let j = JointTable::from_fn(&[("x", nx), ("y", ny), ("z", nz)], |i| {
        xy[i[0] * ny + i[1]] * z_y[i[1]][i[2]]
    })
    .unwrap();
    (
        mutual_information(&j, &["x"], &["z"], N).unwrap(),
        mutual_information(&j, &["x"], &["y"], N).unwrap(),
    )
}

/// `I(A; f(B) | C) ≤ I(A; B | C)` with `f` a random map onto a smaller range.
fn data_processing_function(rng: &mut Rng) -> Sides {
    let (na, nb, nc) = (axis_size(rng), axis_size(rng) + 2, axis_size(rng));
    let nf = rng.random_range(1..nb);
    let f: Vec<usize> = (0..nb).map(|_| rng.random_range(0..nf)).collect();
    let abc = dist(rng, na * nb * nc);
    let j = JointTable::from_fn(&[("a", na), ("b", nb), ("c", nc), ("fb", nf)], |i| {
        if f[i[1]] == i[3] {
            abc[(i[0] * nb + i[1]) * nc + i[2]]
        } else {
            0.0
        }
    })
    .unwrap();
    (
        cmi(&j, &["a"], &["fb"], &["c"], N).unwrap(),
        cmi(&j, &["a"], &["b"], &["c"], N).unwrap(),
    )
}

fn expectation_shift(rng: &mut Rng) -> Sides {
    let k = axis_size(rng) + rng.random_range(0..=4);
    let mu = DiscreteDistribution::new(dist(rng, k)).unwrap();
    let nu = DiscreteDistribution::new(dist(rng, k)).unwrap();
    let x_max = rng.random_range(0.1..10.0);
    let x: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..=x_max)).collect();
    (
        nu.expectation(&x),
        mu.expectation(&x) + statistical_distance(&mu, &nu).unwrap() * x_max,
    )
}

fn cmi_at_most_conditional_entropy(rng: &mut Rng) -> Sides {
    let j = free_table(rng, &["a", "c", "d"]);
    (
        cmi(&j, &["a"], &["c"], &["d"], N).unwrap(),
        conditional_entropy(&j, &["a"], &["d"], N).unwrap(),
    )
}

fn conditioning_reduces_entropy(rng: &mut Rng) -> Sides {
    let j = free_table(rng, &["a", "d"]);
    (
        conditional_entropy(&j, &["a"], &["d"], N).unwrap(),
        joint_entropy(&j, &["a"], N).unwrap(),
    )
}

fn entropy_at_most_log_support(rng: &mut Rng) -> Sides {
    let k = axis_size(rng) + rng.random_range(0..=6);
    let p = DiscreteDistribution::new(dist(rng, k)).unwrap();
    (entropy(&p, N), (p.support_size() as f64).ln())
}

struct Fact {
    name: &'static str,
    relation: Relation,
    sides: fn(&mut Rng) -> Sides,
}

const FACTS: &[Fact] = &[
    Fact {
        name: "pinsker",
        relation: Relation::AtMost,
        sides: pinsker,
    },
    Fact {
        name: "chain_rule",
        relation: Relation::Equal,
        sides: chain_rule,
    },
    Fact {
        name: "cmi_divergence_vs_entropy_form",
        relation: Relation::Equal,
        sides: cmi_two_formulas,
    },
    Fact {
        name: "mi_is_divergence_from_product",
        relation: Relation::Equal,
        sides: mi_is_divergence_from_product,
    },
    Fact {
        name: "conditioning_on_independent_increases_information",
        relation: Relation::AtMost,
        sides: conditioning_on_independent_increases,
    },
    Fact {
        name: "conditioning_decreases_information",
        relation: Relation::AtMost,
        sides: conditioning_decreases,
    },
    Fact {
        name: "data_processing_markov_chain",
        relation: Relation::AtMost,
        sides: data_processing_markov,
    },
    Fact {
        name: "data_processing_function",
        relation: Relation::AtMost,
        sides: data_processing_function,
    },
    Fact {
        name: "expectation_shift_by_distance",
        relation: Relation::AtMost,
        sides: expectation_shift,
    },
    Fact {
        name: "cmi_at_most_conditional_entropy",
        relation: Relation::AtMost,
        sides: cmi_at_most_conditional_entropy,
    },
    Fact {
        name: "conditioning_reduces_entropy",
        relation: Relation::AtMost,
        sides: conditioning_reduces_entropy,
    },
    Fact {
        name: "entropy_at_most_log_support",
        relation: Relation::AtMost,
        sides: entropy_at_most_log_support,
    },
];

pub fn fact_names() -> impl Iterator<Item = &'static str> {
    FACTS.iter().map(|f| f.name)
}

fn run_fact(fact: &Fact, trials: usize, seed: u64) -> FactResult {
    let mut rng = SeedPath::root(seed).child(fact.name, 0).rng();
    let tolerance = match fact.relation {
        Relation::AtMost => INEQUALITY_TOLERANCE,
        Relation::Equal => IDENTITY_TOLERANCE,
    };
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let (lhs, rhs) = (fact.sides)(&mut rng);
        let margin = match fact.relation {
            Relation::AtMost => rhs - lhs,
            Relation::Equal => -(lhs - rhs).abs(),
        };
        // a NaN side counts as a violation
        worst = worst.min(if margin.is_nan() { f64::NEG_INFINITY } else { margin });
    }
    FactResult {
        name: fact.name.into(),
        relation: fact.relation,
        trials,
        worst_margin: worst,
        tolerance,
        pass: worst >= -tolerance,
    }
}

/// Every fact on `trials` random instances each.
pub fn check_inequalities(trials: usize, seed: u64) -> InequalityReport {
    use rayon::prelude::*;
    let trials = trials.max(1);
    let facts: Vec<FactResult> = FACTS.par_iter().map(|f| run_fact(f, trials, seed)).collect();
    InequalityReport {
        seed,
        trials,
        pass: facts.iter().all(|f| f.pass),
        facts,
    }
}
