use std::fmt::Write as _;

use super::BenchError;

/// Samples from one scenario, in milliseconds or Mbps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub samples: Vec<f64>,
    /// Round trips per sample where the scenario counts them.
    pub rtt_counts: Vec<Option<u32>>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single sample.
    pub std_dev: f64,
    /// Delivered over sent, for UDP throughput.
    pub delivery_ratio: Option<f64>,
}

impl RunReport {
    pub fn new(scenario: &str, samples: Vec<f64>, rtt_counts: Vec<Option<u32>>) -> Result<Self, BenchError> {
        if samples.is_empty() {
            return Err(BenchError::Invalid("a report needs at least one sample".into()));
        }
        if rtt_counts.len() != samples.len() {
            return Err(BenchError::Invalid("one round-trip entry per sample".into()));
        }
        let (mean, std_dev) = mean_std(&samples);
        Ok(RunReport {
            scenario: scenario.to_string(),
            samples,
            rtt_counts,
            mean,
            std_dev,
            delivery_ratio: None,
        })
    }

    pub fn median(&self) -> f64 {
        percentile(&self.samples, 50.0)
    }

    pub fn percentile(&self, p: f64) -> f64 {
        percentile(&self.samples, p)
    }

    pub fn max_rtt_count(&self) -> Option<u32> {
        self.rtt_counts.iter().flatten().copied().max()
    }

    /// `scenario,sample_index,value_ms_or_mbps,rtt_count`, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,sample_index,value_ms_or_mbps,rtt_count\n");
        for (i, (v, r)) in self.samples.iter().zip(&self.rtt_counts).enumerate() {
            let r = r.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{i},{v},{r}", self.scenario);
        }
        out
    }

    /// Parses what [`RunReport::to_csv`] wrote (one scenario).
    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let bad = |line: usize, what: &str| BenchError::Invalid(format!("csv line {line}: {what}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "scenario,sample_index,value_ms_or_mbps,rtt_count")) => {}
            _ => return Err(bad(1, "unexpected header")),
        }
        let mut scenario = None;
        let mut samples = Vec::new();
        let mut rtts = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            let [name, idx, value, rtt] = f[..] else {
                return Err(bad(i + 1, "expected four fields"));
            };
            if *scenario.get_or_insert(name) != name {
                return Err(bad(i + 1, "mixed scenarios"));
            }
            if idx.parse::<usize>().ok() != Some(samples.len()) {
                return Err(bad(i + 1, "sample index out of sequence"));
            }
            samples.push(value.parse().map_err(|_| bad(i + 1, "bad value"))?);
            rtts.push(match rtt {
                "" => None,
                r => Some(r.parse().map_err(|_| bad(i + 1, "bad rtt_count"))?),
            });
        }
        RunReport::new(scenario.unwrap_or_default(), samples, rtts)
    }

    /// Samples by index with the mean and median marked, as SVG.
    pub fn to_svg(&self) -> Result<String, BenchError> {
        use plotters::prelude::*;
        let plot = |e: &dyn std::fmt::Display| BenchError::Invalid(format!("plot: {e}"));
        let mut svg = String::new();
        {
            let root = SVGBackend::with_string(&mut svg, (800, 480)).into_drawing_area();
            root.fill(&WHITE).map_err(|e| plot(&e))?;
            let lo = self.percentile(0.0).min(0.0);
            let hi = self.percentile(100.0) * 1.1 + f64::EPSILON;
            let n = self.samples.len();
            let mut chart = ChartBuilder::on(&root)
                .caption(self.summary(), ("sans-serif", 14))
                .margin(12)
                .x_label_area_size(36)
                .y_label_area_size(56)
                .build_cartesian_2d(0f64..(n.max(2) - 1) as f64, lo..hi)
                .map_err(|e| plot(&e))?;
            chart
                .configure_mesh()
                .x_desc("sample")
                .y_desc("ms or Mbps")
                .draw()
                .map_err(|e| plot(&e))?;
            let points = self.samples.iter().enumerate().map(|(i, v)| (i as f64, *v));
            chart
                .draw_series(LineSeries::new(points.clone(), &BLUE))
                .map_err(|e| plot(&e))?;
            chart
                .draw_series(points.map(|p| Circle::new(p, 2, BLUE.filled())))
                .map_err(|e| plot(&e))?;
            for (y, color, label) in [(self.mean, RED, "mean"), (self.median(), GREEN, "median")] {
                chart
                    .draw_series(LineSeries::new([(0.0, y), ((n.max(2) - 1) as f64, y)], &color))
                    .map_err(|e| plot(&e))?
                    .label(label)
                    .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
            }
            chart
                .configure_series_labels()
                .border_style(BLACK)
                .background_style(WHITE)
                .draw()
                .map_err(|e| plot(&e))?;
            root.present().map_err(|e| plot(&e))?;
        }
        Ok(svg)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: n={} mean={:.3} std={:.3} min={:.3} median={:.3} p95={:.3} max={:.3}",
            self.scenario,
            self.samples.len(),
            self.mean,
            self.std_dev,
            self.percentile(0.0),
            self.median(),
            self.percentile(95.0),
            self.percentile(100.0),
        );
        if let Some(r) = self.max_rtt_count() {
            let _ = write!(s, " max_rtt_count={r}");
        }
        if let Some(d) = self.delivery_ratio {
            let _ = write!(s, " delivered={d:.6}");
        }
        s
    }
}

pub(crate) fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Nearest-rank percentile with linear interpolation between ranks.
fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample_has_zero_spread() {
        let r = RunReport::new("echo", vec![101.5], vec![None]).unwrap();
        assert_eq!((r.mean, r.std_dev, r.median()), (101.5, 0.0, 101.5));
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(RunReport::new("x", vec![], vec![]), Err(BenchError::Invalid(_))));
    }

    #[test]
    fn known_statistics() {
        // numpy: mean 5, std(ddof=1) 2.138089935299395
        let r = RunReport::new("s", vec![2., 4., 4., 4., 5., 5., 7., 9.], vec![None; 8]).unwrap();
        assert_eq!(r.mean, 5.0);
        assert!((r.std_dev - 2.138089935299395).abs() < 1e-12);
        assert_eq!(r.median(), 4.5);
    }

    #[test]
    fn csv_layout() {
        let r = RunReport::new("session", vec![312.25, 300.0], vec![Some(3), None]).unwrap();
        assert_eq!(
            r.to_csv(),
            "scenario,sample_index,value_ms_or_mbps,rtt_count\nsession,0,312.25,3\nsession,1,300,\n"
        );
    }

    #[test]
    fn svg_marks_every_sample() {
        let r = RunReport::new("echo", vec![101.0, 103.5, 99.0], vec![None; 3]).unwrap();
        let svg = r.to_svg().unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("median"));
        let one = RunReport::new("one", vec![5.0], vec![None]).unwrap();
        assert!(one.to_svg().is_ok());
    }

    proptest! {
        #[test]
        fn csv_is_reproducible(samples in proptest::collection::vec(0.0f64..1e6, 1..50), rtt in proptest::option::of(0u32..10)) {
            let n = samples.len();
            let r = RunReport::new("p", samples, vec![rtt; n]).unwrap();
            let csv = r.to_csv();
            let back = RunReport::from_csv(&csv).unwrap();
            prop_assert_eq!(&back, &r);
            prop_assert_eq!(back.to_csv(), csv);
        }
    }
}
