//! Label-skewed allocations of a 10-class dataset across devices.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::CLASSES;
use crate::rng::{self, Purpose};

/// `counts[i][c]` samples of class `c` on device `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAllocation {
    pub counts: Vec<[usize; CLASSES]>,
    pub h: Option<i64>,
    pub m0: Option<i64>,
    pub total: usize,
}

impl LabelAllocation {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn per_device(&self) -> usize {
        self.total / self.n()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> [usize; CLASSES] {
        let mut sums = [0; CLASSES];
        for row in &self.counts {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// Rows sum to `M/n` and columns to `M/10`.
    pub fn check(&self) -> Result<()> {
        let n = self.n();
        let (row_target, col_target) = (self.total / n, self.total / CLASSES);
        if let Some((i, s)) = self.row_sums().into_iter().enumerate().find(|&(_, s)| s != row_target) {
            return Err(Error::InfeasibleAllocation(format!(
                "row constraint: device {} holds {s}, expected M/n = {row_target}",
                i + 1
            )));
        }
        if let Some((c, s)) = self.col_sums().into_iter().enumerate().find(|&(_, s)| s != col_target) {
            return Err(Error::InfeasibleAllocation(format!(
                "column constraint: class {} totals {s}, expected M/10 = {col_target}",
                c + 1
            )));
        }
        Ok(())
    }

    /// Table layout: header `node,1,...,10`, one row per device (1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node");
        for c in 1..=CLASSES {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_total(n: usize, total: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("device count must be positive".into()));
    }
    if total % CLASSES != 0 || total % n != 0 || total % (CLASSES * n) != 0 {
        return Err(Error::InfeasibleAllocation(format!(
            "M = {total} must be divisible by 10, by n = {n} and by 10n"
        )));
    }
    Ok(())
}

/// Cyclic arithmetic allocation `m_ic = m0 + h * ((i + c - 2) mod p)`.
///
/// For `n <= 10` the cycle `p = n` covers the first `n` classes and the rest are
/// uniform at `M/(10n)`; for `n > 10` every class cycles with `p = 10`. When `m0`
/// is omitted it is solved from the row constraint; a half-integer solution is
/// floored and the missing units go to the cells with the largest cycle index,
/// which keeps both constraints exact.
pub fn allocation_counts(n: usize, total: usize, h: i64, m0: Option<i64>) -> Result<LabelAllocation> {
    check_total(n, total)?;
    let uniform = (total / (CLASSES * n)) as i64;
    let cycle = if n <= CLASSES {
        n
    } else if n % CLASSES == 0 {
        CLASSES
    } else {
        return Err(Error::InfeasibleAllocation(format!(
            "n = {n} > 10 must be a multiple of 10 for the mod-10 cycle"
        )));
    };
    // 2 * m0 = 2 * M/(10n) - h * (p - 1)
    let twice = 2 * uniform - h * (cycle as i64 - 1);
    let (base, bump) = match m0 {
        Some(v) => (v, 0),
        None => {
            let floor = twice.div_euclid(2);
            // an odd `twice` needs `h * (p - 1)` odd, so `p` is even here
            let bump = if twice.rem_euclid(2) == 1 { cycle / 2 } else { 0 };
            (floor, bump)
        }
    };
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = [0usize; CLASSES];
        for (c, cell) in row.iter_mut().enumerate() {
            let v = if c < cycle {
                let idx = (i + c) % cycle;
                base + h * idx as i64 + i64::from(idx >= cycle - bump)
            } else {
                uniform
            };
            if v < 0 {
                return Err(Error::InfeasibleAllocation(format!(
                    "nonnegativity: m[{}][{}] = {v} with m0 = {base}, h = {h}",
                    i + 1,
                    c + 1
                )));
            }
            *cell = v as usize;
        }
        counts.push(row);
    }
    let alloc = LabelAllocation {
        counts,
        h: Some(h),
        m0: Some(base),
        total,
    };
    alloc.check()?;
    Ok(alloc)
}

/// The banded "h_max" pattern for 8 devices: device `i` lacks the three classes
/// following it cyclically among the first eight, holds `M/50` of the other five
/// and `M/80` of classes 9 and 10.
pub fn allocation_hmax(n: usize, total: usize) -> Result<LabelAllocation> {
    const BAND: usize = 8;
    if n != BAND {
        return Err(Error::InvalidArgument(format!("h_max pattern is only defined for n = 8, got {n}")));
    }
    check_total(n, total)?;
    if total % 50 != 0 {
        return Err(Error::InfeasibleAllocation(format!("M = {total} must be divisible by 50")));
    }
    let (band, uniform) = (total / 50, total / (CLASSES * n));
    let counts = (0..n)
        .map(|i| {
            let mut row = [uniform; CLASSES];
            for (c, cell) in row.iter_mut().enumerate().take(BAND) {
                let offset = (c + BAND - i) % BAND;
                *cell = if (1..=3).contains(&offset) { 0 } else { band };
            }
            row
        })
        .collect();
    let alloc = LabelAllocation {
        counts,
        h: None,
        m0: None,
        total,
    };
    alloc.check()?;
    Ok(alloc)
}

/// Assigns dataset rows to devices so that device `i` holds exactly
/// `counts[i][c]` rows of class `c`. Rows of each class are shuffled with a
/// stream keyed by `(seed, class)`, then dealt out in device order. Each
/// device's list is returned sorted.
pub fn partition(labels: &[u8], alloc: &LabelAllocation, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (row, &y) in labels.iter().enumerate() {
        let c = y as usize;
        if c >= CLASSES {
            return Err(Error::InvalidArgument(format!("label {y} at row {row} outside 0..10")));
        }
        by_class[c].push(row);
    }
    let col = alloc.col_sums();
    let mut devices = vec![Vec::with_capacity(alloc.per_device()); alloc.n()];
    for (c, mut rows) in by_class.into_iter().enumerate() {
        if rows.len() < col[c] {
            return Err(Error::InsufficientSamples {
                class: c,
                needed: col[c],
                available: rows.len(),
            });
        }
        rows.shuffle(&mut rng::stream(seed, c as u64, Purpose::Aux));
        let mut it = rows.into_iter();
        for (dev, counts) in devices.iter_mut().zip(&alloc.counts) {
            dev.extend(it.by_ref().take(counts[c]));
        }
    }
    for dev in &mut devices {
        dev.sort_unstable();
    }
    Ok(devices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_when_h_is_zero() {
        let a = allocation_counts(8, 50_000, 0, None).unwrap();
        assert!(a.counts.iter().flatten().all(|&v| v == 625));
    }

    #[test]
    fn derived_m0_matches_table_case() {
        let a = allocation_counts(8, 50_000, 20, None).unwrap();
        assert_eq!(a.m0, Some(555));
        assert_eq!(a.counts[0], [555, 575, 595, 615, 635, 655, 675, 695, 625, 625]);
        assert_eq!(a.counts[7], [695, 555, 575, 595, 615, 635, 655, 675, 625, 625]);
    }

    #[test]
    fn odd_h_is_repaired() {
        let a = allocation_counts(8, 60_000, 125, None).unwrap();
        a.check().unwrap();
        let a = allocation_counts(20, 60_000, 3, None).unwrap();
        a.check().unwrap();
        let a = allocation_counts(8, 60_000, 124, None).unwrap();
        assert!(a.row_sums().iter().all(|&s| s == 7500));
        assert!(a.col_sums().iter().all(|&s| s == 6000));
    }

    #[test]
    fn infeasible_cases_name_the_constraint() {
        let err = allocation_counts(8, 50_000, 200, None).unwrap_err().to_string();
        assert!(err.contains("nonnegativity"), "{err}");
        let err = allocation_counts(8, 50_000, 20, Some(500)).unwrap_err().to_string();
        assert!(err.contains("row constraint"), "{err}");
        assert!(allocation_counts(7, 50_000, 0, None).is_err());
        assert!(allocation_counts(15, 60_000, 0, None).is_err());
        assert!(allocation_counts(3, 50_000, 0, None).is_err());
    }

    #[test]
    fn hmax_shape() {
        let a = allocation_hmax(8, 50_000).unwrap();
        assert_eq!(a.counts[0], [1000, 0, 0, 0, 1000, 1000, 1000, 1000, 625, 625]);
        assert_eq!(a.counts[5], [0, 1000, 1000, 1000, 1000, 1000, 0, 0, 625, 625]);
        assert!(allocation_hmax(4, 50_000).is_err());
    }

    #[test]
    fn partition_matches_counts_and_is_deterministic() {
        let labels: Vec<u8> = (0..1200).map(|r| (r % 10) as u8).collect();
        let alloc = allocation_counts(4, 1000, 5, None).unwrap();
        let parts = partition(&labels, &alloc, 3).unwrap();
        for (dev, want) in parts.iter().zip(&alloc.counts) {
            let mut got = [0usize; CLASSES];
            for &r in dev {
                got[labels[r] as usize] += 1;
            }
            assert_eq!(&got, want);
        }
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 1000);
        assert_eq!(parts, partition(&labels, &alloc, 3).unwrap());
        assert_ne!(parts, partition(&labels, &alloc, 4).unwrap());
        let short: Vec<u8> = labels[..900].to_vec();
        let big = allocation_counts(4, 1200, 0, None).unwrap();
        assert!(matches!(partition(&short, &big, 0), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn csv_layout() {
        let a = allocation_counts(2, 200, 0, None).unwrap();
        let csv = a.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "node,1,2,3,4,5,6,7,8,9,10");
        assert_eq!(csv.lines().nth(1).unwrap(), "1,10,10,10,10,10,10,10,10,10,10");
    }
}
