//! Polarity-aware peak detection and fixed-length cycle extraction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::class::EyeClass;
use crate::error::{Error, Result};
use crate::synthgen::{fmt_f64, parse_f64, SignalRecord};

/// Peak-detection thresholds and the half-width of the extracted cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakParams {
    pub height_v: f64,
    pub prominence_v: f64,
    pub min_distance_samples: usize,
    pub half_window_samples: usize,
}

impl Default for PeakParams {
    fn default() -> Self {
        PeakParams {
            height_v: 0.10,
            prominence_v: 0.13,
            min_distance_samples: 140,
            half_window_samples: 140,
        }
    }
}

impl PeakParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.height_v > 0.0) || !(self.prominence_v > 0.0) {
            return Err(Error::config("peak height and prominence must be positive"));
        }
        if self.min_distance_samples < 1 || self.half_window_samples < 1 {
            return Err(Error::config(
                "peak distance and half window must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        2 * self.half_window_samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
    /// Stare segments, which are cut on a fixed grid rather than at a peak.
    None,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::None => "none",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "none" => Ok(Polarity::None),
            other => Err(Error::format(format!("unknown polarity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Horizontal,
    Vertical,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Horizontal => "horizontal",
            Channel::Vertical => "vertical",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "horizontal" => Ok(Channel::Horizontal),
            "vertical" => Ok(Channel::Vertical),
            other => Err(Error::format(format!("unknown channel `{other}`"))),
        }
    }
}

/// A fixed-length two-channel window centered on one ocular event.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub label: EyeClass,
    pub trial_id: u64,
    pub ch_h: Vec<f64>,
    pub ch_v: Vec<f64>,
    /// Index of the peak (or segment center for Stare) in the source trial.
    pub peak_index_global: usize,
    pub polarity: Polarity,
    /// Signed value at the peak on the owning channel. For Stare segments,
    /// the largest absolute value in the window.
    pub peak_amplitude_v: f64,
    pub peak_channel: Channel,
}

impl Cycle {
    pub fn len(&self) -> usize {
        self.ch_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ch_h.is_empty()
    }

    /// Local index of the peak (the window center).
    pub fn peak_local_index(&self) -> usize {
        self.ch_h.len() / 2
    }
}

/// Topographic prominence of the sample at `peak`.
///
/// Walks outward on each side until a strictly higher sample (or the signal
/// edge) is met, takes the minimum along each walk, and measures the peak's
/// height above the higher of the two minima.
pub fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Indices `i` with `x[i-1] < x[i] >= x[i+1]`; on a plateau only the leftmost
/// sample qualifies.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    if x.len() < 3 {
        return Vec::new();
    }
    (1..x.len() - 1)
        .filter(|&i| x[i - 1] < x[i] && x[i] >= x[i + 1])
        .collect()
}

/// Keeps the highest peaks so that survivors are at least `distance` apart.
/// Candidates are visited by descending height; equal heights go left first.
pub fn enforce_distance(x: &[f64], peaks: &[usize], distance: usize) -> Vec<usize> {
    let mut order = peaks.to_vec();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in order {
        if kept.iter().all(|&k| p.abs_diff(k) >= distance) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

/// Local maxima passing the height threshold, then the prominence threshold,
/// then the minimum-distance rule.
pub fn find_peaks(x: &[f64], params: &PeakParams) -> Vec<usize> {
    let candidates: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&i| x[i] >= params.height_v)
        .filter(|&i| prominence(x, i) >= params.prominence_v)
        .collect();
    enforce_distance(x, &candidates, params.min_distance_samples.max(1))
}

/// Samples `[center - half, center + half)`.
pub fn extract_window(x: &[f64], center: usize, half: usize) -> Result<Vec<f64>> {
    if center < half || center + half > x.len() {
        return Err(Error::input(format!(
            "window of half-width {half} around {center} does not fit in {} samples",
            x.len()
        )));
    }
    Ok(x[center - half..center + half].to_vec())
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: usize,
    amplitude: f64,
    channel: Channel,
    polarity: Polarity,
}

/// Detects cycles on both channels and both polarities.
///
/// Peaks are searched on `ch_h`, `ch_v`, `-ch_h` and `-ch_v`. Candidates
/// closer than `min_distance_samples` are merged, keeping the largest
/// absolute amplitude (ties: vertical channel, then earliest index). Each
/// survivor yields a window from both channels; peaks too close to an edge
/// are dropped.
pub fn detect_cycles(record: &SignalRecord, params: &PeakParams) -> Result<Vec<Cycle>> {
    params.validate()?;
    if record.ch_h.len() != record.ch_v.len() {
        return Err(Error::input("channel lengths differ"));
    }
    let mut candidates = Vec::new();
    for (channel, signal) in [
        (Channel::Horizontal, &record.ch_h),
        (Channel::Vertical, &record.ch_v),
    ] {
        for i in find_peaks(signal, params) {
            candidates.push(Candidate {
                index: i,
                amplitude: signal[i],
                channel,
                polarity: Polarity::Positive,
            });
        }
        let negated: Vec<f64> = signal.iter().map(|v| -v).collect();
        for i in find_peaks(&negated, params) {
            candidates.push(Candidate {
                index: i,
                amplitude: signal[i],
                channel,
                polarity: Polarity::Negative,
            });
        }
    }

    candidates.sort_by(|a, b| {
        b.amplitude
            .abs()
            .total_cmp(&a.amplitude.abs())
            .then_with(|| (b.channel == Channel::Vertical).cmp(&(a.channel == Channel::Vertical)))
            .then(a.index.cmp(&b.index))
    });
    let mut kept: Vec<Candidate> = Vec::new();
    for c in candidates {
        if kept
            .iter()
            .all(|k| k.index.abs_diff(c.index) >= params.min_distance_samples)
        {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| c.index);

    let half = params.half_window_samples;
    let mut cycles = Vec::with_capacity(kept.len());
    for c in kept {
        let (Ok(ch_h), Ok(ch_v)) = (
            extract_window(&record.ch_h, c.index, half),
            extract_window(&record.ch_v, c.index, half),
        ) else {
            continue;
        };
        cycles.push(Cycle {
            label: record.label,
            trial_id: record.trial_id,
            ch_h,
            ch_v,
            peak_index_global: c.index,
            polarity: c.polarity,
            peak_amplitude_v: c.amplitude,
            peak_channel: c.channel,
        });
    }
    Ok(cycles)
}

fn stare_cycle(record: &SignalRecord, start: usize, length: usize) -> Cycle {
    let ch_h = record.ch_h[start..start + length].to_vec();
    let ch_v = record.ch_v[start..start + length].to_vec();
    let max_h = ch_h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_v = ch_v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (peak_channel, peak_amplitude_v) = if max_h > max_v {
        (Channel::Horizontal, max_h)
    } else {
        (Channel::Vertical, max_v)
    };
    Cycle {
        label: record.label,
        trial_id: record.trial_id,
        ch_h,
        ch_v,
        peak_index_global: start + length / 2,
        polarity: Polarity::None,
        peak_amplitude_v,
        peak_channel,
    }
}

/// Fixed windows `[k*stride, k*stride + length)` tiling a peak-free trial.
pub fn stare_segments(record: &SignalRecord, length: usize, stride: usize) -> Result<Vec<Cycle>> {
    if length == 0 || stride == 0 {
        return Err(Error::config("segment length and stride must be positive"));
    }
    let n = record.len();
    if n < length {
        return Err(Error::input(format!(
            "trial of {n} samples is shorter than one {length}-sample segment"
        )));
    }
    Ok((0..=(n - length) / stride)
        .map(|k| stare_cycle(record, k * stride, length))
        .collect())
}

/// One segment centered in the record; used when no peak is found at
/// inference time.
pub fn center_segment(record: &SignalRecord, length: usize) -> Result<Cycle> {
    let n = record.len();
    if n < length {
        return Err(Error::input(format!(
            "record of {n} samples is shorter than one {length}-sample segment"
        )));
    }
    Ok(stare_cycle(record, (n - length) / 2, length))
}

/// Training-time segmentation: Stare trials are tiled, every other class goes
/// through peak detection.
pub fn segment_record(record: &SignalRecord, params: &PeakParams) -> Result<Vec<Cycle>> {
    if record.label == EyeClass::Stare {
        let len = params.window_len();
        stare_segments(record, len, len)
    } else {
        detect_cycles(record, params)
    }
}

// ---------------------------------------------------------------------------
// Cycle dump: one CSV row per cycle. Six metadata columns are followed by the
// horizontal samples `h_0..h_{L-1}` and the vertical samples `v_0..v_{L-1}`.

const CYCLE_META: [&str; 6] = [
    "trial_id",
    "label",
    "peak_index",
    "polarity",
    "peak_channel",
    "peak_amplitude",
];

pub fn write_cycles(path: &Path, cycles: &[Cycle]) -> Result<()> {
    let len = cycles.first().map_or(0, Cycle::len);
    if cycles.iter().any(|c| c.len() != len || c.ch_v.len() != len) {
        return Err(Error::input("cycles have differing lengths"));
    }
    let mut out = CYCLE_META.join(",");
    for i in 0..len {
        let _ = write!(out, ",h_{i}");
    }
    for i in 0..len {
        let _ = write!(out, ",v_{i}");
    }
    out.push('\n');
    for c in cycles {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            c.trial_id,
            c.label,
            c.peak_index_global,
            c.polarity.as_str(),
            c.peak_channel.as_str(),
            fmt_f64(c.peak_amplitude_v)
        );
        for v in c.ch_h.iter().chain(&c.ch_v) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_cycles(path: &Path) -> Result<Vec<Cycle>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::format("empty cycle file"))?
        .split(',')
        .collect();
    if header.len() < CYCLE_META.len() || header[..CYCLE_META.len()] != CYCLE_META {
        return Err(Error::format("cycle file header does not match"));
    }
    let samples = header.len() - CYCLE_META.len();
    if !samples.is_multiple_of(2) {
        return Err(Error::format("odd number of sample columns"));
    }
    let len = samples / 2;
    let mut cycles = Vec::new();
    for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(Error::format(format!(
                "row {row}: {} columns, header has {}",
                cols.len(),
                header.len()
            )));
        }
        let values = cols[6..]
            .iter()
            .map(|s| parse_f64(s, "sample"))
            .collect::<Result<Vec<f64>>>()?;
        cycles.push(Cycle {
            trial_id: cols[0]
                .trim()
                .parse()
                .map_err(|_| Error::format("trial_id"))?,
            label: cols[1].parse()?,
            peak_index_global: cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::format("peak_index"))?,
            polarity: Polarity::parse(cols[3])?,
            peak_channel: Channel::parse(cols[4])?,
            peak_amplitude_v: parse_f64(cols[5], "peak_amplitude")?,
            ch_h: values[..len].to_vec(),
            ch_v: values[len..].to_vec(),
        });
    }
    Ok(cycles)
}
