//! Projection onto `{y : sum_{i in base} y_i + sum_g max_q sum_{i in col(g,q)} y_i <= c}`.
//!
//! Fixed coordinates are zero and never move. A column with no free entry
//! therefore has a constant sum of zero.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub(crate) struct Group {
    /// Free indices of every column that has at least one.
    pub cols: Vec<Vec<usize>>,
    /// Some column of the group has only fixed entries.
    pub has_fixed_col: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SumMax {
    pub base: Vec<usize>,
    pub groups: Vec<Group>,
}

struct Prepared {
    /// (column sum, free count) sorted by decreasing sum.
    cols: Vec<(f64, f64)>,
    floor: f64,
}

impl Prepared {
    /// Level `tau` of the column-sum prox at multiplier `mu`.
    fn tau(&self, mu: f64) -> f64 {
        let mut sum_cm = 0.0;
        let mut sum_inv = 0.0;
        let mut tau = f64::NEG_INFINITY;
        for (i, &(c, m)) in self.cols.iter().enumerate() {
            sum_cm += c / m;
            sum_inv += 1.0 / m;
            tau = (sum_cm - mu) / sum_inv;
            if i + 1 == self.cols.len() || tau >= self.cols[i + 1].0 {
                break;
            }
        }
        tau.max(self.floor)
    }

    fn breakpoints(&self, out: &mut Vec<f64>) {
        let at = |level: f64| -> f64 {
            self.cols
                .iter()
                .map(|&(c, m)| (c - level).max(0.0) / m)
                .sum()
        };
        for &(c, _) in &self.cols {
            out.push(at(c));
        }
        if self.floor.is_finite() {
            out.push(at(self.floor));
        }
    }
}

impl SumMax {
    pub fn value(&self, y: &[f64]) -> f64 {
        let mut v: f64 = self.base.iter().map(|&i| y[i]).sum();
        for g in &self.groups {
            let mut best = if g.has_fixed_col { 0.0 } else { f64::NEG_INFINITY };
            for col in &g.cols {
                best = best.max(col.iter().map(|&i| y[i]).sum());
            }
            if best.is_finite() {
                v += best;
            }
        }
        v
    }

    /// Projects `y` in place onto the sublevel set `value <= c`.
    pub fn project(&self, y: &mut [f64], c: f64) -> Result<()> {
        if self.value(y) <= c {
            return Ok(());
        }
        let base_sum: f64 = self.base.iter().map(|&i| y[i]).sum();
        let nb = self.base.len() as f64;
        let prepared: Vec<Prepared> = self
            .groups
            .iter()
            .filter(|g| !g.cols.is_empty())
            .map(|g| {
                let mut cols: Vec<(f64, f64)> = g
                    .cols
                    .iter()
                    .map(|col| (col.iter().map(|&i| y[i]).sum(), col.len() as f64))
                    .collect();
                cols.sort_by(|a, b| b.0.total_cmp(&a.0));
                Prepared {
                    cols,
                    floor: if g.has_fixed_col { 0.0 } else { f64::NEG_INFINITY },
                }
            })
            .collect();
        let phi = |mu: f64| base_sum - nb * mu + prepared.iter().map(|p| p.tau(mu)).sum::<f64>();

        let mut bps = vec![0.0];
        for p in &prepared {
            p.breakpoints(&mut bps);
        }
        bps.sort_by(f64::total_cmp);
        bps.dedup();

        // phi is non-increasing and linear between breakpoints
        let first_ok = bps.partition_point(|&mu| phi(mu) > c);
        let mu = if first_ok < bps.len() {
            if first_ok == 0 {
                0.0
            } else {
                let (m0, m1) = (bps[first_ok - 1], bps[first_ok]);
                let (f0, f1) = (phi(m0), phi(m1));
                if f0 - f1 <= 0.0 {
                    m1
                } else {
                    m0 + (f0 - c) * (m1 - m0) / (f0 - f1)
                }
            }
        } else {
            let last = *bps.last().unwrap();
            let f_last = phi(last);
            let step = 1.0 + last;
            let slope = (phi(last + step) - f_last) / step;
            if !(slope < -1e-14) {
                return Err(Error::EmptySet(format!(
                    "sum-of-max constraint cannot reach level {c} (minimum {f_last})"
                )));
            }
            last + (f_last - c) / -slope
        };

        for &i in &self.base {
            y[i] -= mu;
        }
        let active = self.groups.iter().filter(|g| !g.cols.is_empty());
        for (g, prep) in active.zip(&prepared) {
            let tau = prep.tau(mu);
            for col in &g.cols {
                let sum: f64 = col.iter().map(|&i| y[i]).sum();
                let shift = (sum - tau).max(0.0) / col.len() as f64;
                if shift > 0.0 {
                    for &i in col {
                        y[i] -= shift;
                    }
                }
            }
        }
        Ok(())
    }
}
