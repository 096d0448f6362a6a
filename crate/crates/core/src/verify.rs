//! Structural checks on a decoded checkpoint.
//!
//! The deployable weight of a layer is `w0` once merged and the student
//! weight otherwise. Checks: every tensor is finite; every mask matches its
//! weight; deployable weights are exactly zero wherever the mask is zero; and
//! layers declared N:M have at least `n` zeros in every aligned block of `m`
//! along each row.

use std::fmt;

use crate::io::Checkpoint;
use crate::numeric::Matrix;
use crate::pruning::SparsityPattern;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail(String),
    Skip(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| !matches!(c.status, Status::Fail(_)))
    }

    fn push(&mut self, name: &'static str, failures: Vec<String>) {
        let status = match failures.first() {
            None => Status::Pass,
            Some(first) if failures.len() == 1 => Status::Fail(first.clone()),
            Some(first) => Status::Fail(format!("{first} (and {} more)", failures.len() - 1)),
        };
        self.checks.push(Check { name, status });
    }

    fn skip(&mut self, name: &'static str, why: &str) {
        self.checks.push(Check {
            name,
            status: Status::Skip(why.to_string()),
        });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match &c.status {
                Status::Pass => writeln!(f, "PASS {}", c.name)?,
                Status::Fail(d) => writeln!(f, "FAIL {}: {d}", c.name)?,
                Status::Skip(d) => writeln!(f, "SKIP {}: {d}", c.name)?,
            }
        }
        Ok(())
    }
}

fn position(w: &Matrix, k: usize) -> String {
    format!("[{}, {}] (index {k})", k / w.cols(), k % w.cols())
}

pub fn verify(ck: &Checkpoint) -> VerifyReport {
    let mut report = VerifyReport::default();

    let mut bad = Vec::new();
    for l in &ck.layers {
        for (name, t) in l.tensors() {
            if let Some(k) = t.first_non_finite() {
                bad.push(format!("{name} index {k} is {}", t.data[k]));
            }
        }
    }
    let finite = bad.is_empty();
    report.push("finite", bad);

    let mut bad = Vec::new();
    for l in &ck.layers {
        let (r, c) = (l.weight.rows, l.weight.cols);
        if l.mask.shape() != (r, c) {
            bad.push(format!(
                "{}: mask is {}x{} but weight is {r}x{c}",
                l.name,
                l.mask.rows(),
                l.mask.cols()
            ));
        }
    }
    let shapes = bad.is_empty();
    report.push("mask-shape", bad);

    let model = if finite && shapes {
        match ck.to_model() {
            Ok(m) => Some(m),
            Err(e) => {
                report.push("structure", vec![e.to_string()]);
                None
            }
        }
    } else {
        None
    };
    let Some(model) = model else {
        report.skip("masked-zero", "checkpoint cannot be loaded");
        report.skip("n:m", "checkpoint cannot be loaded");
        return report;
    };

    let deployed: Vec<Matrix> = model
        .layers()
        .iter()
        .map(|l| if l.merged { l.w0.clone() } else { l.effective_weight() })
        .collect();

    let mut bad = Vec::new();
    for (l, w) in model.layers().iter().zip(&deployed) {
        for (k, (v, keep)) in w.as_slice().iter().zip(l.mask.iter()).enumerate() {
            if !keep && *v != 0.0 {
                bad.push(format!("{} {} = {v} at a pruned position", l.name, position(w, k)));
            }
        }
    }
    report.push("masked-zero", bad);

    let mut bad = Vec::new();
    let mut any_nm = false;
    for (l, w) in model.layers().iter().zip(&deployed) {
        let Some(SparsityPattern::NofM { n, m }) = l.declared else {
            continue;
        };
        any_nm = true;
        if w.cols() % m != 0 {
            bad.push(format!("{}: {} columns are not a multiple of {m}", l.name, w.cols()));
            continue;
        }
        for i in 0..w.rows() {
            for (b, block) in w.row(i).chunks(m).enumerate() {
                let zeros = block.iter().filter(|v| **v == 0.0).count();
                if zeros < n {
                    bad.push(format!(
                        "{} row {i} block {b} (columns {}..{}): {zeros} zeros, {n}:{m} needs {n}",
                        l.name,
                        b * m,
                        (b + 1) * m
                    ));
                }
            }
        }
    }
    if any_nm {
        report.push("n:m", bad);
    } else {
        report.skip("n:m", "no layer declares an N:M pattern");
    }
    report
}
