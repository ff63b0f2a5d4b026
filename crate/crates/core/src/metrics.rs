//! Confusion matrix, per-class precision/recall/F1, macro averages and the
//! false-alarm rate.

use std::fmt;

use crate::dastrace::ThreatClass;

/// Field-data reference row: P_ave, R_ave, F1_ave, FAR (all in %).
pub const REFERENCE_ROW: (&str, f64, f64, f64, f64) = ("reference(field)", 97.82, 97.67, 97.69, 0.99);

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Rows are true classes, columns predicted classes.
    pub confusion: [[u64; 3]; 3],
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub p_ave: f64,
    pub r_ave: f64,
    pub f1_ave: f64,
    /// Fraction of non-Alarm samples predicted Alarm.
    pub far: f64,
    pub wall_time_s: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: [[u64; 3]; 3], wall_time_s: f64) -> Self {
        let mut precision = [0.0; 3];
        let mut recall = [0.0; 3];
        let mut f1 = [0.0; 3];
        for c in 0..3 {
            let tp = confusion[c][c];
            let predicted: u64 = (0..3).map(|t| confusion[t][c]).sum();
            let actual: u64 = confusion[c].iter().sum();
            precision[c] = ratio(tp, predicted);
            recall[c] = ratio(tp, actual);
            let s = precision[c] + recall[c];
            f1[c] = if s > 0.0 { 2.0 * precision[c] * recall[c] / s } else { 0.0 };
        }
        let alarm = ThreatClass::Alarm.index();
        let non_alarm: u64 = (0..3).filter(|&t| t != alarm).map(|t| confusion[t].iter().sum::<u64>()).sum();
        let false_alarms: u64 = (0..3).filter(|&t| t != alarm).map(|t| confusion[t][alarm]).sum();
        let mean = |v: &[f64; 3]| v.iter().sum::<f64>() / 3.0;
        Self {
            confusion,
            precision,
            recall,
            f1,
            p_ave: mean(&precision),
            r_ave: mean(&recall),
            f1_ave: mean(&f1),
            far: ratio(false_alarms, non_alarm),
            wall_time_s,
        }
    }

    pub fn from_predictions(truth: &[ThreatClass], predicted: &[ThreatClass], wall_time_s: f64) -> Self {
        assert_eq!(truth.len(), predicted.len(), "one prediction per sample");
        let mut confusion = [[0u64; 3]; 3];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        Self::from_confusion(confusion, wall_time_s)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio((0..3).map(|c| self.confusion[c][c]).sum(), self.total())
    }

    /// Among misclassified Alarm and NoThreat samples, the fraction
    /// predicted Tracking. `None` when there are no such errors.
    pub fn tracking_share_of_errors(&self) -> Option<f64> {
        let (a, t, n) = (
            ThreatClass::Alarm.index(),
            ThreatClass::Tracking.index(),
            ThreatClass::NoThreat.index(),
        );
        let wrong = self.confusion[a][t] + self.confusion[a][n] + self.confusion[n][a] + self.confusion[n][t];
        (wrong > 0).then(|| (self.confusion[a][t] + self.confusion[n][t]) as f64 / wrong as f64)
    }

    /// `variant,P_ave,R_ave,F1_ave,FAR,wall_time_s` (rates as fractions).
    pub fn csv_line(&self, variant: &str) -> String {
        format!(
            "{variant},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.p_ave, self.r_ave, self.f1_ave, self.far, self.wall_time_s
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1")?;
        for c in ThreatClass::ALL {
            let i = c.index();
            writeln!(
                f,
                "{:<10} {:>9.4} {:>9.4} {:>9.4}",
                c.name(),
                self.precision[i],
                self.recall[i],
                self.f1[i]
            )?;
        }
        writeln!(f, "confusion (rows true, cols predicted): {:?}", self.confusion)?;
        write!(
            f,
            "P_ave {:.4}  R_ave {:.4}  F1_ave {:.4}  FAR {:.4}  time {:.1}s",
            self.p_ave, self.r_ave, self.f1_ave, self.far, self.wall_time_s
        )
    }
}

/// Table with one row per variant plus the field-data reference row,
/// values in percent.
pub fn ablation_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!(
        "{:<18} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
        "method", "P_ave", "R_ave", "F1_ave", "FAR", "time_s"
    );
    for (name, m) in rows {
        out.push_str(&format!(
            "{:<18} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>10.1}\n",
            name,
            100.0 * m.p_ave,
            100.0 * m.r_ave,
            100.0 * m.f1_ave,
            100.0 * m.far,
            m.wall_time_s
        ));
    }
    let (name, p, r, f1, far) = REFERENCE_ROW;
    out.push_str(&format!("{name:<18} {p:>8.2} {r:>8.2} {f1:>8.2} {far:>8.2} {:>10}\n", "-"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = MetricsReport::from_confusion([[5, 0, 0], [0, 5, 0], [0, 0, 5]], 0.0);
        assert_eq!((m.p_ave, m.r_ave, m.f1_ave, m.far), (1.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn worked_confusion_example() {
        let m = MetricsReport::from_confusion([[90, 10, 0], [5, 95, 0], [0, 20, 80]], 0.0);
        assert!((m.far - 0.025).abs() < 1e-15);
        assert!((m.precision[0] - 90.0 / 95.0).abs() < 1e-12);
        assert_eq!(m.total(), 300);
        assert!((m.accuracy() - m.r_ave).abs() < 1e-15);
    }

    #[test]
    fn empty_columns_give_zero_precision() {
        let m = MetricsReport::from_confusion([[0, 3, 0], [0, 3, 0], [0, 3, 0]], 0.0);
        assert_eq!(m.precision[0], 0.0);
        assert_eq!(m.far, 0.0);
    }
}
