//! Per-series summary statistics.

use serde::Serialize;

use crate::panel::ReturnsPanel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    /// Divisor `n - 1`.
    pub sd: f64,
    pub max: f64,
    pub min: f64,
    /// `m3 / m2^1.5` with central moments over `n`.
    pub skewness: f64,
    /// `m4 / m2^2` (not excess).
    pub kurtosis: f64,
}

pub fn summarize(panel: &ReturnsPanel) -> Vec<SeriesSummary> {
    (0..panel.d())
        .map(|j| {
            let col: Vec<f64> = panel.values.column(j).iter().copied().collect();
            series_summary(&panel.series_names[j], &col)
        })
        .collect()
}

pub fn series_summary(name: &str, xs: &[f64]) -> SeriesSummary {
    let n = xs.len();
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let central = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / nf;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    SeriesSummary {
        name: name.to_string(),
        n,
        mean,
        sd: if n > 1 { (m2 * nf / (nf - 1.0)).sqrt() } else { f64::NAN },
        max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        min: xs.iter().cloned().fold(f64::INFINITY, f64::min),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    }
}

/// Fixed-width table with one column per series; the mean row is scaled by 1000.
pub fn summary_table(rows: &[SeriesSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12}", "statistic"));
    for r in rows {
        out.push_str(&format!(" {:>12}", r.name));
    }
    out.push('\n');
    type Get = fn(&SeriesSummary) -> f64;
    let lines: [(&str, Get); 7] = [
        ("n", |r| r.n as f64),
        ("mean_x1000", |r| 1000.0 * r.mean),
        ("sd", |r| r.sd),
        ("max", |r| r.max),
        ("min", |r| r.min),
        ("skewness", |r| r.skewness),
        ("kurtosis", |r| r.kurtosis),
    ];
    for (label, get) in lines {
        out.push_str(&format!("{label:<12}"));
        for r in rows {
            if label == "n" {
                out.push_str(&format!(" {:>12}", r.n));
            } else {
                out.push_str(&format!(" {:>12.4}", get(r)));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_a_small_sample() {
        let s = series_summary("x", &[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert!((s.sd - (50.0f64 / 3.0).sqrt()).abs() < 1e-14);
        // central moments: m2 = 12.5, m3 = 45, m4 = 348.5
        assert!((s.skewness - 45.0 / 12.5f64.powf(1.5)).abs() < 1e-14);
        assert!((s.kurtosis - 348.5 / 156.25).abs() < 1e-14);
        assert_eq!((s.min, s.max), (1.0, 10.0));
    }
}
