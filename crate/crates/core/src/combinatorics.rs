//! K-subset enumeration in lexicographic order.

use crate::error::{Error, Result};

/// Largest subset count any enumerating routine will accept.
pub const MAX_SUBSETS: u64 = 1_000_000;

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    let mut acc: u64 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

pub(crate) fn check_capacity(n: usize, k: usize) -> Result<u64> {
    match binomial(n, k) {
        Some(c) if c <= MAX_SUBSETS => Ok(c),
        _ => Err(Error::Capacity(format!(
            "C({n}, {k}) exceeds the enumeration limit of {MAX_SUBSETS}"
        ))),
    }
}

/// Iterates over all `k`-subsets of `0..n` in lexicographic order.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        let current = (k <= n).then(|| (0..k).collect());
        Self { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        // Rightmost position that can still be incremented.
        let pivot = (0..k).rev().find(|&i| next[i] < self.n - k + i);
        self.current = pivot.map(|i| {
            next[i] += 1;
            for j in i + 1..k {
                next[j] = next[j - 1] + 1;
            }
            next
        });
        Some(out)
    }
}
