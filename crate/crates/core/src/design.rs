//! Test structure: which items belong to which testlet, and the binary
//! response matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mapping of items to testlets. Items not in any testlet are independent.
///
/// Testlet indices are contiguous `0..n_testlets` and every testlet holds at
/// least two items (a single-item testlet has an unidentified variance).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestletDesign {
    n_items: usize,
    n_testlets: usize,
    testlet_of: Vec<Option<usize>>,
}

impl TestletDesign {
    /// Build from explicit item lists, one per testlet.
    pub fn new(n_items: usize, testlets: &[Vec<usize>]) -> Result<Self> {
        if n_items == 0 {
            return Err(Error::InvalidDesign("n_items must be positive".into()));
        }
        let mut testlet_of = vec![None; n_items];
        for (d, items) in testlets.iter().enumerate() {
            if items.len() < 2 {
                return Err(Error::InvalidDesign(format!(
                    "testlet {d} has {} item(s); at least 2 are required",
                    items.len()
                )));
            }
            for &j in items {
                if j >= n_items {
                    return Err(Error::InvalidDesign(format!(
                        "testlet {d} references item {j} out of range 0..{n_items}"
                    )));
                }
                if testlet_of[j].is_some() {
                    return Err(Error::InvalidDesign(format!(
                        "item {j} assigned to more than one testlet"
                    )));
                }
                testlet_of[j] = Some(d);
            }
        }
        Ok(Self {
            n_items,
            n_testlets: testlets.len(),
            testlet_of,
        })
    }

    /// Contiguous blocks of `items_per` items forming `n_testlets` testlets.
    /// The paper's layout is `blocks(6, 5)`: 30 items, testlet d holding
    /// items 5d..5d+5.
    pub fn blocks(n_testlets: usize, items_per: usize) -> Self {
        let lists: Vec<Vec<usize>> = (0..n_testlets)
            .map(|d| (d * items_per..(d + 1) * items_per).collect())
            .collect();
        Self::new(n_testlets * items_per, &lists).expect("block design is always valid")
    }

    /// A design with no testlets at all (plain unidimensional 2PL).
    pub fn independent(n_items: usize) -> Self {
        Self::new(n_items, &[]).expect("independent design is always valid")
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_testlets(&self) -> usize {
        self.n_testlets
    }

    /// Testlet index of an item, or `None` for an independent item.
    pub fn testlet_of(&self, item: usize) -> Option<usize> {
        self.testlet_of[item]
    }

    pub fn items_in(&self, testlet: usize) -> Vec<usize> {
        (0..self.n_items)
            .filter(|&j| self.testlet_of[j] == Some(testlet))
            .collect()
    }

    pub fn independent_items(&self) -> Vec<usize> {
        (0..self.n_items)
            .filter(|&j| self.testlet_of[j].is_none())
            .collect()
    }

    /// Per-item testlet assignments (None = independent), for serialization.
    pub fn assignments(&self) -> &[Option<usize>] {
        &self.testlet_of
    }

    /// Rebuild from per-item assignments.
    pub fn from_assignments(assignments: &[Option<usize>]) -> Result<Self> {
        let n_testlets = assignments
            .iter()
            .flatten()
            .copied()
            .max()
            .map_or(0, |m| m + 1);
        let mut lists = vec![Vec::new(); n_testlets];
        for (j, a) in assignments.iter().enumerate() {
            if let Some(d) = a {
                if *d >= n_testlets {
                    return Err(Error::InvalidDesign(format!("testlet index {d} out of range")));
                }
                lists[*d].push(j);
            }
        }
        for (d, l) in lists.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::InvalidDesign(format!(
                    "testlet indices not contiguous: testlet {d} empty"
                )));
            }
        }
        Self::new(assignments.len(), &lists)
    }

    /// Apply an item permutation: item `perm[j]` of the new design is item
    /// `j` of the old one.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_items {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let mut assigns = vec![None; self.n_items];
        for (old, &new) in perm.iter().enumerate() {
            assigns[new] = self.testlet_of[old];
        }
        Self::from_assignments(&assigns)
    }
}

/// Persons x items matrix of binary responses, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    n_persons: usize,
    n_items: usize,
    data: Vec<u8>,
}

impl ResponseMatrix {
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let n_persons = rows.len();
        if n_persons == 0 {
            return Err(Error::DegenerateData("zero persons".into()));
        }
        let n_items = rows[0].len();
        if n_items == 0 {
            return Err(Error::DegenerateData("zero items".into()));
        }
        let mut data = Vec::with_capacity(n_persons * n_items);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_items {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {n_items}",
                    row.len()
                )));
            }
            for &v in row {
                if v > 1 {
                    return Err(Error::DegenerateData(format!(
                        "non-binary entry {v} in row {i}"
                    )));
                }
                data.push(v);
            }
        }
        Ok(Self {
            n_persons,
            n_items,
            data,
        })
    }

    pub fn from_flat(n_persons: usize, n_items: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n_persons * n_items {
            return Err(Error::DimensionMismatch("flat response buffer".into()));
        }
        if n_persons == 0 || n_items == 0 {
            return Err(Error::DegenerateData("empty response matrix".into()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::DegenerateData("non-binary entry".into()));
        }
        Ok(Self {
            n_persons,
            n_items,
            data,
        })
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> u8 {
        self.data[person * self.n_items + item]
    }

    #[inline]
    pub fn row(&self, person: usize) -> &[u8] {
        &self.data[person * self.n_items..(person + 1) * self.n_items]
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Proportion of 1-responses on an item.
    pub fn proportion_correct(&self, item: usize) -> f64 {
        let mut s = 0usize;
        for i in 0..self.n_persons {
            s += self.get(i, item) as usize;
        }
        s as f64 / self.n_persons as f64
    }

    /// Items whose column is constant (all 0 or all 1).
    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.n_items)
            .filter(|&j| {
                let first = self.get(0, j);
                (1..self.n_persons).all(|i| self.get(i, j) == first)
            })
            .collect()
    }

    /// Reorder columns: new item `perm[j]` holds old item `j`.
    pub fn permute_items(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_items {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let mut data = vec![0u8; self.data.len()];
        for i in 0..self.n_persons {
            for (old, &new) in perm.iter().enumerate() {
                data[i * self.n_items + new] = self.get(i, old);
            }
        }
        Ok(Self {
            n_persons: self.n_persons,
            n_items: self.n_items,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_design_layout() {
        let d = TestletDesign::blocks(6, 5);
        assert_eq!(d.n_items(), 30);
        assert_eq!(d.n_testlets(), 6);
        assert_eq!(d.testlet_of(0), Some(0));
        assert_eq!(d.testlet_of(14), Some(2));
        assert_eq!(d.items_in(5), vec![25, 26, 27, 28, 29]);
        assert!(d.independent_items().is_empty());
    }

    #[test]
    fn rejects_singleton_testlet() {
        let err = TestletDesign::new(4, &[vec![0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidDesign(_)));
    }

    #[test]
    fn rejects_double_assignment() {
        assert!(TestletDesign::new(4, &[vec![0, 1], vec![1, 2]]).is_err());
    }

    #[test]
    fn response_matrix_validation() {
        assert!(ResponseMatrix::from_rows(vec![]).is_err());
        assert!(ResponseMatrix::from_rows(vec![vec![0, 1], vec![1]]).is_err());
        assert!(ResponseMatrix::from_rows(vec![vec![0, 2]]).is_err());
        let m = ResponseMatrix::from_rows(vec![vec![0, 1], vec![1, 1]]).unwrap();
        assert_eq!(m.proportion_correct(1), 1.0);
        assert_eq!(m.constant_columns(), vec![1]);
    }
}
