//! Sparse affine expressions over decision variables.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(i: usize) -> Self {
        Self::term(i, 1.0)
    }

    pub fn term(i: usize, c: f64) -> Self {
        let mut e = Self::default();
        e.add_term(i, c);
        e
    }

    pub fn add_term(&mut self, i: usize, c: f64) {
        if c != 0.0 {
            *self.terms.entry(i).or_insert(0.0) += c;
        }
    }

    pub fn add(&mut self, other: &LinExpr, scale: f64) {
        for (&i, &c) in &other.terms {
            self.add_term(i, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn plus(mut self, other: &LinExpr, scale: f64) -> Self {
        self.add(other, scale);
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(|&c| c == 0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&i, &c)| c * x[i]).sum::<f64>()
    }
}
