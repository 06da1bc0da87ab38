use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::Model;

/// One teacher/student feature pairing, by tap index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapPair {
    pub teacher: usize,
    pub student: usize,
    pub teacher_label: String,
    pub student_label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTapSet {
    pub pairs: Vec<TapPair>,
}

impl FeatureTapSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Maps student tap `j` (1-based) to teacher tap `round(j * T / S)`.
///
/// Equal tap counts give the identity pairing. Every student tap is paired
/// exactly once.
pub fn pair_tap_indices(teacher_taps: usize, student_taps: usize) -> Result<Vec<(usize, usize)>> {
    if teacher_taps == 0 || student_taps == 0 {
        return Err(Error::Config(format!(
            "cannot pair {student_taps} student taps with {teacher_taps} teacher taps"
        )));
    }
    Ok((1..=student_taps)
        .map(|j| {
            let t = ((j * teacher_taps) as f64 / student_taps as f64).round() as usize;
            (t.clamp(1, teacher_taps) - 1, j - 1)
        })
        .collect())
}

/// Pairs the feature taps of `teacher` and `student` for distillation.
pub fn pair_taps(teacher: &Model, student: &Model) -> Result<FeatureTapSet> {
    if teacher.scale() != student.scale() {
        return Err(Error::Config(format!(
            "teacher scale x{} differs from student scale x{}",
            teacher.scale(),
            student.scale()
        )));
    }
    let (tl, sl) = (teacher.tap_points(), student.tap_points());
    let pairs = pair_tap_indices(tl.len(), sl.len())?
        .into_iter()
        .map(|(t, s)| TapPair {
            teacher: t,
            student: s,
            teacher_label: tl[t].clone(),
            student_label: sl[s].clone(),
        })
        .collect();
    Ok(FeatureTapSet { pairs })
}
