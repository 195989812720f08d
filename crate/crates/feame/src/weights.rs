//! Class weights that turn observed history frequencies into the average
//! one-period state-dependence effect for the binary lag model.
//!
//! For a window of length T, every sufficiency class `s = (y_1, y_T, n_1)`
//! receives a weight `w_s(β)` such that, for every heterogeneity value α and
//! conditional on the first-period choice,
//!
//! ```text
//!   Σ_s w_s(β) · P(class s | y_1, α)  =  Λ(α + β) − Λ(α).
//! ```
//!
//! Averaging the same weights against empirical class frequencies therefore
//! averages the effect over the (unknown) heterogeneity distribution, giving
//! a point estimator with no integration and no distributional assumption.
//!
//! The weights solve a small linear system obtained by clearing denominators
//! in α: writing `a = e^α` and `b = e^β`, each block `y_1 ∈ {0, 1}` matches
//! polynomial coefficients of
//!
//! ```text
//!   Σ_s m_s · a^{n_1} (1+a)^{n_1 − y_T} (1+ab)^{T−2−n_1+y_T}
//!     = (b − 1) · a · (1+a)^{T−2−y_1} (1+ab)^{T−3+y_1}
//! ```
//!
//! over powers `a^0 … a^{2T−3}`, where `m_s = w_s · Σ_{y∈s} e^{β n_11(y)}`.
//! The system is solved by Gaussian elimination with partial pivoting, with
//! a pivot-ratio condition estimate; closed-form tables for T ≤ 7 are kept
//! alongside as an independent cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sufficiency_classes, AlphaSignature, ModelSpec};
use crate::panel::HistoryDistribution;

/// Largest supported window length for weight solving; binomial
/// coefficients stay exactly representable and the system well-scaled.
pub const MAX_WEIGHT_WINDOW: usize = 30;

/// Pivot-ratio threshold above which a conditioning warning is attached.
const CONDITION_WARN: f64 = 1e10;

/// One class weight: the signature `(first, last, ones)`, the raw solution
/// `m`, the class partition sum `Σ e^{β n_11}`, and the weight `m / Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    /// First-period choice of the class.
    pub first: u8,
    /// Last-period choice of the class.
    pub last: u8,
    /// Count of 1s after the first period.
    pub ones: u32,
    /// Numerator-scale solution of the linear system.
    pub m: f64,
    /// Partition sum `Σ_{y∈s} e^{β n_11(y)}` over class members.
    pub partition: f64,
    /// The class weight `w_s = m / partition`.
    pub weight: f64,
    /// Number of member histories.
    pub class_size: usize,
}

/// All class weights for one window length and slope value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightTable {
    /// Window length T.
    pub window_length: usize,
    /// Slope β the weights were built for.
    pub beta: f64,
    /// Entries sorted by `(first, last, ones)`.
    pub entries: Vec<WeightEntry>,
    /// Pivot-ratio condition estimate (max over the two blocks).
    pub condition: f64,
    /// Non-fatal diagnostics.
    pub warnings: Vec<String>,
}

impl WeightTable {
    /// Look up the weight of a signature; `None` if absent.
    pub fn weight(&self, first: u8, last: u8, ones: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.first == first && e.last == last && e.ones == ones)
            .map(|e| e.weight)
    }
}

/// Exact binomial coefficient as f64 (exact for all arguments used here).
fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut out = 1.0;
    for i in 0..k {
        out = out * (n - i) as f64 / (i + 1) as f64;
    }
    out.round()
}

/// LU factorization with partial pivoting, kept so the same factors can
/// re-solve against a residual during iterative refinement.
struct LuFactors {
    /// Packed factors: `U` on and above the diagonal, unit-diagonal `L`
    /// multipliers below it, in pivoted row order.
    lu: Vec<Vec<f64>>,
    /// Pivot row swapped into position `col` at elimination step `col`.
    pivots: Vec<usize>,
    /// Pivot-ratio condition estimate.
    condition: f64,
}

impl LuFactors {
    fn factor(mut a: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        let mut pivots = Vec::with_capacity(n);
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
                .expect("non-empty pivot range");
            let magnitude = a[pivot_row][col].abs();
            if magnitude == 0.0 || !magnitude.is_finite() {
                return Err(Error::identification(
                    "weight system is singular; no valid class weights exist at \
                     this window length and slope".to_string(),
                ));
            }
            a.swap(col, pivot_row);
            pivots.push(pivot_row);
            max_pivot = max_pivot.max(magnitude);
            min_pivot = min_pivot.min(magnitude);
            for row in col + 1..n {
                let factor = a[row][col] / a[col][col];
                a[row][col] = factor;
                if factor == 0.0 {
                    continue;
                }
                for k in col + 1..n {
                    let delta = factor * a[col][k];
                    a[row][k] -= delta;
                }
            }
        }
        Ok(LuFactors {
            lu: a,
            pivots,
            condition: max_pivot / min_pivot,
        })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut x = rhs.to_vec();
        // The factorization swaps whole rows (stored multipliers included),
        // so the interchanges must all be applied before the forward solve.
        for col in 0..n {
            x.swap(col, self.pivots[col]);
        }
        for col in 0..n {
            for row in col + 1..n {
                let factor = self.lu[row][col];
                if factor != 0.0 {
                    x[row] -= factor * x[col];
                }
            }
        }
        for row in (0..n).rev() {
            let mut acc = x[row];
            for k in row + 1..n {
                acc -= self.lu[row][k] * x[k];
            }
            x[row] = acc / self.lu[row][row];
        }
        x
    }
}

/// `rhs − A·x` with each product split into value + rounding error
/// (fused multiply-add) and both accumulated by compensated summation, so
/// the residual keeps roughly twice working precision.
fn compensated_residual(a: &[Vec<f64>], x: &[f64], rhs: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(rhs)
        .map(|(row, &b)| {
            let mut sum = b;
            let mut comp = 0.0;
            for (&aik, &xk) in row.iter().zip(x) {
                let term = -(aik * xk);
                comp += (-aik).mul_add(xk, -term);
                let t = sum + term;
                comp += if sum.abs() >= term.abs() {
                    (sum - t) + term
                } else {
                    (term - t) + sum
                };
                sum = t;
            }
            sum + comp
        })
        .collect()
}

/// Solve `A x = rhs` by LU factorization with partial pivoting, plus one
/// step of iterative refinement against a compensated residual — near the
/// slope where the system turns singular, the refinement recovers the
/// digits plain elimination loses. Returns the solution and the
/// pivot-ratio condition estimate.
fn solve_linear(a: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let factors = LuFactors::factor(a.clone())?;
    let mut x = factors.solve(&rhs);
    let residual = compensated_residual(&a, &x, &rhs);
    let correction = factors.solve(&residual);
    for (xi, di) in x.iter_mut().zip(correction) {
        *xi += di;
    }
    Ok((x, factors.condition))
}

/// Partition sum `Σ_{y∈s} e^{β·n_11(y)}` and member count of the class with
/// signature `(first, last, ones)` at window length `t`, by run counting:
/// a history with `m` total ones arranged in `r` maximal runs has
/// `n_11 = m − r`, and the number of such histories is the product of two
/// compositions — ones into `r` runs, zeros into the gaps the boundary
/// pattern dictates.
fn class_partition(t: usize, first: u8, last: u8, ones: u32, beta: f64) -> (f64, usize) {
    let m = usize::from(first) + ones as usize;
    let zeros = t - m;
    if m == 0 {
        return (1.0, 1);
    }
    if zeros == 0 {
        return ((beta * (t as f64 - 1.0)).exp(), 1);
    }
    let b = beta.exp();
    let mut z = 0.0f64;
    let mut size = 0.0f64;
    for runs in 1..=m {
        let zero_runs = runs - 1 + usize::from(first == 0) + usize::from(last == 0);
        if zero_runs == 0 {
            continue; // needs zeros == 0, handled above
        }
        let count = binomial(m - 1, runs - 1) * binomial(zeros - 1, zero_runs - 1);
        if count == 0.0 {
            continue;
        }
        size += count;
        z += count * b.powi((m - runs) as i32);
    }
    (z, size as usize)
}

/// The signatures of one `y_1` block in deterministic order:
/// `(last, ones)` with `ones ∈ {last, …, T−2+last}`.
fn block_signatures(t: usize) -> Vec<(u8, u32)> {
    let mut sigs = Vec::new();
    for last in 0..=1u8 {
        for ones in u32::from(last)..=(t as u32 - 2 + u32::from(last)) {
            sigs.push((last, ones));
        }
    }
    sigs
}

/// Coefficient of `a^power` in `a^{shift} (1+a)^{p} (1+ab)^{q}`.
fn lhs_coefficient(power: usize, shift: usize, p: usize, q: usize, b: f64) -> f64 {
    if power < shift {
        return 0.0;
    }
    let target = power - shift;
    let mut out = 0.0;
    for i in 0..=target.min(p) {
        let l = target - i;
        if l > q {
            continue;
        }
        out += binomial(p, i) * binomial(q, l) * b.powi(l as i32);
    }
    out
}

/// Solve the weight system for window length `t` at slope `beta`.
pub fn solve_weights(t: usize, beta: f64) -> Result<WeightTable> {
    if !(3..=MAX_WEIGHT_WINDOW).contains(&t) {
        return Err(Error::invalid(format!(
            "window length must be in 3..={MAX_WEIGHT_WINDOW}, got {t}"
        )));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("slope must be finite".into()));
    }
    let b = beta.exp();
    let n = 2 * t - 2;
    let sigs = block_signatures(t);
    debug_assert_eq!(sigs.len(), n);

    let mut entries = Vec::new();
    let mut condition = 0.0f64;
    for first in 0..=1u8 {
        if b == 1.0 {
            // β = 0: the target Λ(α+β) − Λ(α) vanishes identically, the
            // system is homogeneous (and singular — column pairs coincide),
            // and the zero solution is the continuous β → 0 limit.
            for &(last, ones) in &sigs {
                entries.push(WeightEntry {
                    first,
                    last,
                    ones,
                    m: 0.0,
                    partition: f64::NAN, // filled below
                    weight: f64::NAN,
                    class_size: 0,
                });
            }
            continue;
        }
        // The raw system Σ_s m_s · col_s(b) = (b−1)·c(b) turns singular at
        // b = 1: the two columns sharing an `ones` count coincide there,
        // because col_{last=1,k} − col_{last=0,k} factors exactly as
        // (b−1) · a^{k+1} (1+a)^{k−1} (1+ab)^{t−2−k}. Solving it directly
        // loses ~κ(b) digits near b = 1 no matter how carefully, since the
        // rounded matrix entries themselves get amplified. Instead divide
        // the whole system by (b−1) and change basis on each column pair to
        // (sum, difference/(b−1)): the transformed matrix has a nonsingular
        // limit at b = 1, so entries stay accurate uniformly in β. The
        // transformed unknowns are
        //   x[last=0, k] = (m_{0,k} + m_{1,k}) / (b−1)   (paired, k ∈ 1..t−2)
        //   x[last=1, k] = m_{1,k}                        (paired)
        //   x[unpaired]  = m / (b−1)                      (ones = 0 or t−1)
        // recovered below.
        let d = b - 1.0;
        let mut matrix = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        for (col, &(last, ones)) in sigs.iter().enumerate() {
            let k = ones as usize;
            let paired = (1..=t - 2).contains(&k);
            let (shift, p, q) = if paired && last == 1 {
                // Difference column with the (b−1) factor divided out.
                (k + 1, k - 1, t - 2 - k)
            } else {
                (k, k - usize::from(last), t - 2 + usize::from(last) - k)
            };
            for (row, slot) in matrix.iter_mut().enumerate() {
                slot[col] = lhs_coefficient(row, shift, p, q, b);
            }
        }
        let p_rhs = t - 2 - usize::from(first);
        let q_rhs = t - 3 + usize::from(first);
        for (row, slot) in rhs.iter_mut().enumerate() {
            *slot = lhs_coefficient(row, 1, p_rhs, q_rhs, b);
        }
        let (x, cond) = solve_linear(matrix, rhs)?;
        condition = condition.max(cond);
        for (col, &(last, ones)) in sigs.iter().enumerate() {
            let k = ones as usize;
            let paired = (1..=t - 2).contains(&k);
            let m_val = if !paired {
                d * x[col]
            } else if last == 1 {
                x[col]
            } else {
                // m_{0,k} = (b−1)·sum − m_{1,k}; both terms are O(b−1), so
                // the subtraction costs no relative accuracy near b = 1.
                let pair_col = (t - 1) + (k - 1);
                debug_assert_eq!(sigs[pair_col], (1, ones));
                d * x[col] - x[pair_col]
            };
            entries.push(WeightEntry {
                first,
                last,
                ones,
                m: m_val,
                partition: f64::NAN, // filled below
                weight: f64::NAN,
                class_size: 0,
            });
        }
    }

    // Partition sums and class sizes by run combinatorics (no enumeration,
    // so large window lengths stay cheap).
    for entry in &mut entries {
        let (z, size) = class_partition(t, entry.first, entry.last, entry.ones, beta);
        if entry.m == 0.0 {
            entry.m = 0.0; // canonicalize −0.0 from the elimination
        }
        entry.partition = z;
        entry.class_size = size;
        entry.weight = entry.m / z;
    }
    debug_assert!(entries.iter().all(|e| e.partition.is_finite()));
    entries.sort_by_key(|e| (e.first, e.last, e.ones));

    let mut warnings = Vec::new();
    if condition > CONDITION_WARN {
        warnings.push(format!(
            "weight system condition estimate {condition:.3e} exceeds {CONDITION_WARN:.0e}; \
             weights may lose precision at this window length"
        ));
    }
    Ok(WeightTable {
        window_length: t,
        beta,
        entries,
        condition,
        warnings,
    })
}

/// Closed-form weights for window lengths 3 through 7, kept as an
/// independent check on the linear-system solution.
pub fn closed_form_weights(t: usize, beta: f64) -> Result<WeightTable> {
    if !(3..=7).contains(&t) {
        return Err(Error::invalid(format!(
            "closed forms cover window lengths 3..=7, got {t}"
        )));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("slope must be finite".into()));
    }
    let b = beta.exp();
    let d = b - 1.0;
    // Non-zero weights w_s by (first, last, ones), per window length.
    let named: Vec<((u8, u8, u32), f64)> = match t {
        3 => vec![(((0, 0, 1)), d), (((1, 1, 1)), d)],
        4 => vec![
            ((0, 0, 1), d / 2.0),
            ((0, 1, 2), d / (1.0 + b)),
            ((1, 0, 1), d / (1.0 + b)),
            ((1, 1, 2), d / 2.0),
        ],
        5 => vec![
            ((0, 0, 1), d / 3.0),
            ((0, 1, 2), d / (2.0 + b)),
            ((0, 0, 2), d / (1.0 + 2.0 * b)),
            ((0, 1, 3), d / (2.0 + b)),
            ((1, 0, 1), d / (2.0 + b)),
            ((1, 1, 2), d / (1.0 + 2.0 * b)),
            ((1, 0, 2), d / (2.0 + b)),
            ((1, 1, 3), d / 3.0),
        ],
        6 => vec![
            ((0, 0, 1), d / 4.0),
            ((0, 1, 2), d / (3.0 + b)),
            ((0, 0, 2), 2.0 * d / (3.0 + 3.0 * b)),
            ((0, 1, 3), d * (1.0 + b) / (1.0 + 4.0 * b + b * b)),
            ((0, 0, 3), d / (2.0 + 2.0 * b)),
            ((0, 1, 4), d / (3.0 + b)),
            ((1, 0, 1), d / (3.0 + b)),
            ((1, 1, 2), d / (2.0 + 2.0 * b)),
            ((1, 0, 2), d * (1.0 + b) / (1.0 + 4.0 * b + b * b)),
            ((1, 1, 3), 2.0 * d / (3.0 + 3.0 * b)),
            ((1, 0, 3), d / (3.0 + b)),
            ((1, 1, 4), d / 4.0),
        ],
        7 => vec![
            ((0, 0, 1), d / 5.0),
            ((0, 1, 2), d / (4.0 + b)),
            ((0, 0, 2), 3.0 * d / (6.0 + 4.0 * b)),
            ((0, 1, 3), d * (2.0 + b) / (3.0 + 6.0 * b + b * b)),
            ((0, 0, 3), d * (1.0 + 2.0 * b) / (1.0 + 6.0 * b + 3.0 * b * b)),
            ((0, 1, 4), d * (2.0 + b) / (3.0 + 6.0 * b + b * b)),
            ((0, 0, 4), d / (3.0 + 2.0 * b)),
            ((0, 1, 5), d / (4.0 + b)),
            ((1, 0, 1), d / (4.0 + b)),
            ((1, 1, 2), d / (3.0 + 2.0 * b)),
            ((1, 0, 2), d * (2.0 + b) / (3.0 + 6.0 * b + b * b)),
            ((1, 1, 3), d * (1.0 + 2.0 * b) / (1.0 + 6.0 * b + 3.0 * b * b)),
            ((1, 0, 3), d * (2.0 + b) / (3.0 + 6.0 * b + b * b)),
            ((1, 1, 4), 3.0 * d / (6.0 + 4.0 * b)),
            ((1, 0, 4), d / (4.0 + b)),
            ((1, 1, 5), d / 5.0),
        ],
        _ => unreachable!(),
    };

    let spec = ModelSpec::binary_lag();
    let mut entries = Vec::new();
    for class in sufficiency_classes(&spec, t, 0, None)? {
        let AlphaSignature::BinaryLag { first, last, ones } = class.signature else {
            unreachable!("binary lag model produces binary lag signatures");
        };
        let z: f64 = class.stats.iter().map(|s| (beta * s[0]).exp()).sum();
        let weight = named
            .iter()
            .find(|((f, l, o), _)| *f == first && *l == last && *o == ones)
            .map_or(0.0, |(_, w)| *w);
        entries.push(WeightEntry {
            first,
            last,
            ones,
            m: weight * z,
            partition: z,
            weight,
            class_size: class.members.len(),
        });
    }
    entries.sort_by_key(|e| (e.first, e.last, e.ones));
    Ok(WeightTable {
        window_length: t,
        beta,
        entries,
        condition: f64::NAN,
        warnings: Vec::new(),
    })
}

/// Average one-period effect implied by a weight table and an observed
/// (unconditional, covariate-free) history distribution of matching length:
/// `Σ_s w_s · P̂(class s)`.
pub fn ame1_from_weights(table: &WeightTable, dist: &HistoryDistribution) -> Result<f64> {
    if dist.window_length() != table.window_length {
        return Err(Error::invalid(format!(
            "weight table is for window length {} but the distribution has {}",
            table.window_length,
            dist.window_length()
        )));
    }
    if dist.is_conditional() {
        return Err(Error::invalid(
            "class weights apply to covariate-free history distributions".into(),
        ));
    }
    let mut total = 0.0;
    for (_x, y, freq) in dist.entries() {
        let first = y[0];
        let last = y[y.len() - 1];
        let ones = y[1..].iter().map(|&v| u32::from(v)).sum::<u32>();
        let w = table.weight(first, last, ones).ok_or_else(|| {
            Error::data(format!(
                "history with signature ({first},{last},{ones}) does not \
                 belong to any weight class; is the panel binary?"
            ))
        })?;
        total += w * freq;
    }
    Ok(total)
}
