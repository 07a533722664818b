//! Levenshtein alignment and error-rate scoring.

/// Minimal edit counts between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.insertions += rhs.insertions;
        self.deletions += rhs.deletions;
    }
}

/// One step of an optimal edit alignment. Indices point into ref / hyp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match(usize, usize),
    Substitute(usize, usize),
    Insert(usize),
    Delete(usize),
}

/// Computes one optimal alignment. On cost ties the backtrace prefers
/// match/substitution, then deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<EditOp> {
    let (n, m) = (reference.len(), hyp.len());
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        cost[i * width] = i;
    }
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = cost[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = cost[(i - 1) * width + j] + 1;
            let ins = cost[i * width + j - 1] + 1;
            cost[i * width + j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == cost[(i - 1) * width + j - 1] + usize::from(!same) {
                ops.push(if same {
                    EditOp::Match(i - 1, j - 1)
                } else {
                    EditOp::Substitute(i - 1, j - 1)
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * width + j] + 1 {
            ops.push(EditOp::Delete(i - 1));
            i -= 1;
        } else {
            ops.push(EditOp::Insert(j - 1));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let mut counts = EditCounts::default();
    for op in align(reference, hyp) {
        match op {
            EditOp::Match(..) => {}
            EditOp::Substitute(..) => counts.substitutions += 1,
            EditOp::Insert(_) => counts.insertions += 1,
            EditOp::Delete(_) => counts.deletions += 1,
        }
    }
    counts
}

/// Error rate `(S+I+D)/|ref|`. An empty reference uses a denominator of 1
/// and sets `empty_reference` so reports can flag it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRate {
    pub counts: EditCounts,
    pub reference_len: usize,
    pub rate: f64,
    pub empty_reference: bool,
}

impl ErrorRate {
    pub fn from_counts(counts: EditCounts, reference_len: usize) -> Self {
        let empty_reference = reference_len == 0;
        let denom = reference_len.max(1) as f64;
        Self {
            counts,
            reference_len,
            rate: counts.total() as f64 / denom,
            empty_reference,
        }
    }
}

pub fn error_rate<T: PartialEq>(reference: &[T], hyp: &[T]) -> ErrorRate {
    ErrorRate::from_counts(edit_distance(reference, hyp), reference.len())
}

/// Corpus-level accumulator: sums edits and reference lengths.
#[derive(Debug, Clone, Copy, Default)]
pub struct ErrorAccumulator {
    pub counts: EditCounts,
    pub reference_len: usize,
    pub empty_references: usize,
}

impl ErrorAccumulator {
    pub fn add<T: PartialEq>(&mut self, reference: &[T], hyp: &[T]) {
        self.counts += edit_distance(reference, hyp);
        self.reference_len += reference.len();
        if reference.is_empty() {
            self.empty_references += 1;
        }
    }

    pub fn finish(&self) -> ErrorRate {
        let mut r = ErrorRate::from_counts(self.counts, self.reference_len);
        r.empty_reference = self.empty_references > 0;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deletion_example() {
        let r = error_rate(&[1, 2, 3], &[1, 3]);
        assert_eq!(
            r.counts,
            EditCounts {
                substitutions: 0,
                insertions: 0,
                deletions: 1
            }
        );
        assert!((r.rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_is_zero() {
        assert_eq!(edit_distance(&[4, 5, 6], &[4, 5, 6]).total(), 0);
    }

    #[test]
    fn swap_costs_two() {
        let c = edit_distance(&['a', 'b'], &['b', 'a']);
        assert_eq!(c.total(), 2);
    }

    #[test]
    fn empty_reference_is_flagged() {
        let r = error_rate::<u8>(&[], &[1, 2]);
        assert!(r.empty_reference);
        assert_eq!(r.counts.insertions, 2);
        assert_eq!(r.rate, 2.0);
        let r = error_rate::<u8>(&[], &[]);
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn alignment_covers_both_sides() {
        let ops = align(&[1, 2, 3, 4], &[1, 9, 4, 5]);
        let refs: usize = ops
            .iter()
            .filter(|op| !matches!(op, EditOp::Insert(_)))
            .count();
        let hyps: usize = ops
            .iter()
            .filter(|op| !matches!(op, EditOp::Delete(_)))
            .count();
        assert_eq!((refs, hyps), (4, 4));
    }
}
