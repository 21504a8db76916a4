use ringsim::trace::TraceRow;

/// Points on the shared time axis used for aggregation.
pub const CURVE_POINTS: usize = 200;

/// `‖∇f(x(t))‖²` where `x(t)` is the iterate current at time `t`: row `k`
/// holds `xᵏ`, which is current until update `k` fires. Past the last row
/// the last recorded value is held.
pub fn value_at(rows: &[TraceRow], t: f64) -> f64 {
    let fired = rows.partition_point(|r| r.virtual_time <= t);
    rows[fired.min(rows.len() - 1)].grad_norm_sq
}

/// `points` evenly spaced times on `[0, end]`.
pub fn time_grid(end: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| end * i as f64 / (points - 1) as f64).collect()
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and interquartile range across runs at each grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub times: Vec<f64>,
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

impl Band {
    /// Aggregates the non-empty runs; `None` when there are none.
    pub fn aggregate(runs: &[&[TraceRow]], times: &[f64]) -> Option<Band> {
        let runs: Vec<&[TraceRow]> = runs.iter().copied().filter(|r| !r.is_empty()).collect();
        if runs.is_empty() {
            return None;
        }
        let mut band = Band { times: times.to_vec(), median: vec![], q25: vec![], q75: vec![] };
        for &t in times {
            let mut v: Vec<f64> = runs.iter().map(|r| value_at(r, t)).collect();
            v.sort_by(f64::total_cmp);
            band.median.push(quantile(&v, 0.5));
            band.q25.push(quantile(&v, 0.25));
            band.q75.push(quantile(&v, 0.75));
        }
        Some(band)
    }

    pub fn smoothed(&self, window: usize) -> Band {
        Band {
            times: self.times.clone(),
            median: smooth(&self.median, window),
            q25: smooth(&self.q25, window),
            q75: smooth(&self.q75, window),
        }
    }
}

/// Centered moving average over `window` points, truncated at the ends.
/// Index 0 is left as is.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let back = (window - 1) / 2;
    let ahead = window / 2;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == 0 || window == 1 {
                return v;
            }
            let lo = i.saturating_sub(back);
            let hi = (i + ahead).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}
