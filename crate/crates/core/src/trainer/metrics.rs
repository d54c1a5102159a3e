/// Levenshtein distance with unit costs, in O(min(|a|,|b|)) memory.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let (long, short) =
        if reference.len() >= hypothesis.len() { (reference, hypothesis) } else { (hypothesis, reference) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, a) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, b) in short.iter().enumerate() {
            let sub = diag + usize::from(a != b);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[short.len()]
}

/// Corpus-level error rate: total edits over total reference length.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorTally {
    pub edits: usize,
    pub reference_len: usize,
}

impl ErrorTally {
    pub fn add<T: PartialEq>(&mut self, reference: &[T], hypothesis: &[T]) {
        self.edits += edit_distance(reference, hypothesis);
        self.reference_len += reference.len();
    }

    pub fn rate(&self) -> f64 {
        if self.reference_len == 0 {
            0.0
        } else {
            self.edits as f64 / self.reference_len as f64
        }
    }
}
