//! Periodic chains and rectangular lattices with nearest-neighbor bonds.
//!
//! Sites are indexed row-major: site `(x, y)` has index `x + lx * y`. This
//! index is also the bit position of the site in computational basis states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default largest lattice the builders accept.
pub const DEFAULT_MAX_SITES: usize = 16;

/// How coincident periodic bonds are counted when a lattice extent is 2.
///
/// On a periodic extent of 2 the wrap-around bond joins the same pair of
/// sites as the internal bond. `Merge` keeps one bond; `Count` keeps one bond
/// entry with multiplicity 2 so the Hamiltonian sees the coupling twice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondMultiplicity {
    #[default]
    Merge,
    Count,
}

/// An unordered nearest-neighbor pair with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    /// Number of times the pair occurs as a nearest-neighbor link.
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGeometry {
    lx: usize,
    ly: usize,
    periodic: bool,
    bonds: Vec<Bond>,
}

impl LatticeGeometry {
    /// A 1D array of `length` sites.
    pub fn chain(length: usize, periodic: bool) -> Result<Self> {
        if length < 2 {
            return Err(Error::InvalidGeometry(format!(
                "chain length must be at least 2, got {length}"
            )));
        }
        Self::rect(length, 1, periodic)
    }

    /// An `lx` by `ly` rectangle, row-major indexed.
    pub fn rect(lx: usize, ly: usize, periodic: bool) -> Result<Self> {
        Self::rect_with(lx, ly, periodic, BondMultiplicity::Merge, DEFAULT_MAX_SITES)
    }

    /// A lone spin with no bonds.
    pub fn single_site() -> Self {
        Self {
            lx: 1,
            ly: 1,
            periodic: false,
            bonds: Vec::new(),
        }
    }

    pub fn rect_with(
        lx: usize,
        ly: usize,
        periodic: bool,
        multiplicity: BondMultiplicity,
        max_sites: usize,
    ) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::InvalidGeometry(format!(
                "lattice extents must be positive, got {lx}x{ly}"
            )));
        }
        let n_sites = lx * ly;
        if n_sites > max_sites {
            return Err(Error::Size {
                n_sites,
                max: max_sites,
            });
        }

        let index = |x: usize, y: usize| x + lx * y;
        let mut links: Vec<(usize, usize)> = Vec::with_capacity(2 * n_sites);
        for y in 0..ly {
            for x in 0..lx {
                let here = index(x, y);
                if x + 1 < lx {
                    links.push((here, index(x + 1, y)));
                } else if periodic {
                    links.push((here, index(0, y)));
                }
                if y + 1 < ly {
                    links.push((here, index(x, y + 1)));
                } else if periodic {
                    links.push((here, index(x, 0)));
                }
            }
        }

        let mut bonds: Vec<Bond> = Vec::with_capacity(links.len());
        for (a, b) in links {
            if a == b {
                continue;
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            match bonds.iter_mut().find(|bond| bond.i == i && bond.j == j) {
                Some(bond) => {
                    if multiplicity == BondMultiplicity::Count {
                        bond.multiplicity += 1;
                    }
                }
                None => bonds.push(Bond {
                    i,
                    j,
                    multiplicity: 1,
                }),
            }
        }
        bonds.sort();

        Ok(Self {
            lx,
            ly,
            periodic,
            bonds,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.lx, self.ly)
    }

    pub fn n_sites(&self) -> usize {
        self.lx * self.ly
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Bond endpoints without multiplicities.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bonds.iter().map(|b| (b.i, b.j))
    }

    /// Number of bonds touching each site.
    pub fn degrees(&self) -> Vec<usize> {
        let mut degree = vec![0; self.n_sites()];
        for bond in &self.bonds {
            degree[bond.i] += 1;
            degree[bond.j] += 1;
        }
        degree
    }

    /// Site permutation induced by translating the lattice by `(dx, dy)`.
    pub fn translation(&self, dx: usize, dy: usize) -> Vec<usize> {
        (0..self.n_sites())
            .map(|site| {
                let (x, y) = (site % self.lx, site / self.lx);
                (x + dx) % self.lx + self.lx * ((y + dy) % self.ly)
            })
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.lx, self.ly)
    }
}
