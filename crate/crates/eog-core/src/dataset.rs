//! Feature datasets: SMOTE balancing with Welch t-test validation, cascade
//! stage views, stratified splitting and standardization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::function::beta::beta_reg;

use crate::class::EyeClass;
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureVector, FEATURE_NAMES, NUM_FEATURES};
use crate::rng;
use crate::segment::Cycle;
use crate::synthgen::{fmt_f64, parse_f64};

const SMOTE_STREAM: u64 = 0x5307E;
const SPLIT_STREAM: u64 = 0x5911;

pub type Row = [f64; NUM_FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Original,
    Synthetic,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "original" => Ok(Origin::Original),
            "synthetic" => Ok(Origin::Synthetic),
            other => Err(Error::format(format!("unknown origin `{other}`"))),
        }
    }
}

/// Rows of 26 features with integer labels indexing `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Row>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub origin: Vec<Origin>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>) -> Self {
        Dataset {
            features: Vec::new(),
            labels: Vec::new(),
            class_names,
            origin: Vec::new(),
        }
    }

    /// An empty dataset over the ten eye classes.
    pub fn ten_class() -> Self {
        Dataset::new(EyeClass::names())
    }

    pub fn from_vectors(vectors: &[FeatureVector]) -> Self {
        let mut d = Dataset::ten_class();
        for v in vectors {
            d.push(v.values, v.label.index(), Origin::Original);
        }
        d
    }

    pub fn push(&mut self, row: Row, label: usize, origin: Origin) {
        self.features.push(row);
        self.labels.push(label);
        self.origin.push(origin);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Row indices of each class, in row order.
    pub fn class_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            rows[l].push(i);
        }
        rows
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            origin: indices.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() || self.origin.len() != self.labels.len() {
            return Err(Error::input(
                "features, labels and origin flags differ in length",
            ));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(Error::input(format!(
                "label {l} outside the {} classes",
                self.num_classes()
            )));
        }
        if let Some(i) = self
            .features
            .iter()
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::input(format!("row {i} has a non-finite feature")));
        }
        Ok(())
    }
}

/// Featurizes every cycle into a ten-class dataset.
pub fn featurize_cycles(cycles: &[Cycle], fs: f64) -> Result<Dataset> {
    let vectors = cycles
        .iter()
        .map(|c| featurize(c, fs))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_vectors(&vectors))
}

// ---------------------------------------------------------------------------
// SMOTE

/// Provenance of one synthetic row: `row = parent + u * (neighbor - parent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteTrace {
    /// Index of the synthetic row in the returned dataset.
    pub row: usize,
    pub parent: usize,
    pub neighbor: usize,
    pub u: f64,
}

fn dist2(a: &Row, b: &Row) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `k` nearest rows of `members` to `members[pos]`, excluding itself; ties
/// resolve to the lower row index.
fn nearest(features: &[Row], members: &[usize], pos: usize, k: usize) -> Vec<usize> {
    let x = &features[members[pos]];
    let mut cand: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != pos)
        .map(|(_, &m)| (dist2(x, &features[m]), m))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.truncate(k);
    cand.into_iter().map(|(_, m)| m).collect()
}

/// SMOTE with provenance of every synthetic row.
///
/// Each class below `target_per_class` receives `target - count` new rows,
/// appended after all existing rows in class order. Parents and neighbors
/// are drawn from the class's original rows only, with one RNG stream per
/// class derived from `seed`.
pub fn smote_traced(
    data: &Dataset,
    target_per_class: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<(Dataset, Vec<SmoteTrace>)> {
    data.validate()?;
    if k_neighbors < 1 {
        return Err(Error::config("SMOTE needs at least one neighbor"));
    }
    let mut out = data.clone();
    let mut trace = Vec::new();
    let rows = data.class_rows();
    for (class, all) in rows.iter().enumerate() {
        let members: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&i| data.origin[i] == Origin::Original)
            .collect();
        let count = all.len();
        if count == 0 {
            continue;
        }
        if count > target_per_class {
            return Err(Error::input(format!(
                "class {} has {count} rows, above the target of {target_per_class}",
                data.class_names[class]
            )));
        }
        if members.len() < 2 {
            return Err(Error::input(format!(
                "class {} needs at least two original rows for SMOTE",
                data.class_names[class]
            )));
        }
        let mut rng = rng::stream(seed, &[SMOTE_STREAM, class as u64]);
        let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; members.len()];
        for _ in count..target_per_class {
            let pos = rng.random_range(0..members.len());
            let nn = neighbors[pos]
                .get_or_insert_with(|| nearest(&data.features, &members, pos, k_neighbors));
            let neighbor = nn[rng.random_range(0..nn.len())];
            let parent = members[pos];
            let u: f64 = rng.random();
            let (x, z) = (&data.features[parent], &data.features[neighbor]);
            let mut row = [0.0; NUM_FEATURES];
            for j in 0..NUM_FEATURES {
                row[j] = x[j] + u * (z[j] - x[j]);
            }
            trace.push(SmoteTrace {
                row: out.len(),
                parent,
                neighbor,
                u,
            });
            out.push(row, class, Origin::Synthetic);
        }
    }
    Ok((out, trace))
}

pub fn smote(
    data: &Dataset,
    target_per_class: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<Dataset> {
    smote_traced(data, target_per_class, k_neighbors, seed).map(|(d, _)| d)
}

// ---------------------------------------------------------------------------
// Welch t-test

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::input("each sample needs at least two values"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::input("samples must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let p = if ma == mb { 1.0 } else { 0.0 };
        let t = if ma == mb {
            0.0
        } else {
            f64::INFINITY.copysign(ma - mb)
        };
        return Ok(TTest { t, df: f64::NAN, p });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassValidation {
    pub class: String,
    /// Per-feature p-values (original vs synthetic rows); empty when the
    /// class has fewer than two synthetic rows.
    pub p_values: Vec<f64>,
    pub mean_p: Option<f64>,
}

impl ClassValidation {
    pub fn passed(&self) -> bool {
        self.mean_p.is_none_or(|p| p > 0.05)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteValidation {
    pub classes: Vec<ClassValidation>,
}

impl SmoteValidation {
    /// Every class with synthetic rows has a mean p-value above 0.05.
    pub fn passed(&self) -> bool {
        self.classes.iter().all(ClassValidation::passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.classes {
            let _ = match c.mean_p {
                Some(p) => writeln!(
                    s,
                    "{:<10} mean p = {p:.4}  {}",
                    c.class,
                    if c.passed() { "pass" } else { "FAIL" }
                ),
                None => writeln!(s, "{:<10} no synthetic rows", c.class),
            };
        }
        let _ = writeln!(s, "gate: {}", if self.passed() { "pass" } else { "FAIL" });
        s
    }
}

/// Compares, per class and feature, original rows against synthetic rows of
/// an augmented dataset.
pub fn validate_smote(augmented: &Dataset) -> Result<SmoteValidation> {
    augmented.validate()?;
    let mut classes = Vec::with_capacity(augmented.num_classes());
    for (class, rows) in augmented.class_rows().iter().enumerate() {
        let (orig, synth): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| augmented.origin[i] == Origin::Original);
        let mut v = ClassValidation {
            class: augmented.class_names[class].clone(),
            p_values: Vec::new(),
            mean_p: None,
        };
        if orig.len() >= 2 && synth.len() >= 2 {
            for j in 0..NUM_FEATURES {
                let a: Vec<f64> = orig.iter().map(|&i| augmented.features[i][j]).collect();
                let b: Vec<f64> = synth.iter().map(|&i| augmented.features[i][j]).collect();
                v.p_values.push(welch_ttest(&a, &b)?.p);
            }
            v.mean_p = Some(v.p_values.iter().sum::<f64>() / NUM_FEATURES as f64);
        }
        classes.push(v);
    }
    Ok(SmoteValidation { classes })
}

// ---------------------------------------------------------------------------
// Cascade stage views

/// Stage-1 outputs. `None` marks the collapsed lateral group.
pub const STAGE1_CLASSES: [Option<EyeClass>; 5] = [
    Some(EyeClass::Up),
    Some(EyeClass::Down),
    Some(EyeClass::Blink),
    Some(EyeClass::Stare),
    None,
];
pub const STAGE1_NAMES: [&str; 5] = ["Up", "Down", "Blink", "Stare", "Lateral"];

/// Stage-2 outputs. `None` marks the collapsed left group.
pub const STAGE2_CLASSES: [Option<EyeClass>; 4] = [
    Some(EyeClass::Right),
    Some(EyeClass::UpRight),
    Some(EyeClass::DownRight),
    None,
];
pub const STAGE2_NAMES: [&str; 4] = ["Right", "UpRight", "DownRight", "LeftGroup"];

pub const STAGE3_CLASSES: [EyeClass; 3] = [EyeClass::Left, EyeClass::UpLeft, EyeClass::DownLeft];
pub const STAGE3_NAMES: [&str; 3] = ["Left", "UpLeft", "DownLeft"];

fn is_left(c: EyeClass) -> bool {
    matches!(c, EyeClass::Left | EyeClass::UpLeft | EyeClass::DownLeft)
}

pub fn stage1_label(c: EyeClass) -> usize {
    STAGE1_CLASSES
        .iter()
        .position(|s| *s == Some(c))
        .unwrap_or(STAGE1_CLASSES.len() - 1)
}

/// `None` for classes stage 2 never sees.
pub fn stage2_label(c: EyeClass) -> Option<usize> {
    if STAGE1_CLASSES.contains(&Some(c)) {
        return None;
    }
    Some(
        STAGE2_CLASSES
            .iter()
            .position(|s| *s == Some(c))
            .unwrap_or(STAGE2_CLASSES.len() - 1),
    )
}

pub fn stage3_label(c: EyeClass) -> Option<usize> {
    STAGE3_CLASSES.iter().position(|s| *s == c)
}

/// Training sets of the three cascade stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDatasets {
    pub cardinal: Dataset,
    pub right: Dataset,
    pub left: Dataset,
}

fn ten_class_of(data: &Dataset, label: usize) -> Result<EyeClass> {
    let name = &data.class_names[label];
    name.parse().map_err(|_| Error::UnknownLabel(name.clone()))
}

/// Remaps a ten-class dataset into the three stage views. Every row lands in
/// `cardinal`; lateral rows also land in `right`, and left-family rows also
/// in `left`.
pub fn segment_dataset(data: &Dataset) -> Result<StageDatasets> {
    data.validate()?;
    let names = |n: &[&str]| n.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut out = StageDatasets {
        cardinal: Dataset::new(names(&STAGE1_NAMES)),
        right: Dataset::new(names(&STAGE2_NAMES)),
        left: Dataset::new(names(&STAGE3_NAMES)),
    };
    for i in 0..data.len() {
        let c = ten_class_of(data, data.labels[i])?;
        let (row, origin) = (data.features[i], data.origin[i]);
        out.cardinal.push(row, stage1_label(c), origin);
        if let Some(l) = stage2_label(c) {
            out.right.push(row, l, origin);
        }
        if is_left(c) {
            out.left
                .push(row, stage3_label(c).expect("left family"), origin);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Splitting and scaling

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    /// Source row indices, ascending.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Training rows taken from a class of `n`: `round(fraction * n)` with halves
/// rounded up, kept within `[1, n - 1]`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n - 1)
}

/// Per-class shuffled split; class proportions are preserved up to the
/// per-class rounding of [`train_count`].
pub fn stratified_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    data.validate()?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(
            "train fraction must lie strictly between 0 and 1",
        ));
    }
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (class, rows) in data.class_rows().into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::input(format!(
                "class {} has a single row and cannot be split",
                data.class_names[class]
            )));
        }
        let mut shuffled = rows;
        shuffled.shuffle(&mut rng::stream(seed, &[SPLIT_STREAM, class as u64]));
        let k = train_count(shuffled.len(), train_fraction);
        train_rows.extend_from_slice(&shuffled[..k]);
        test_rows.extend_from_slice(&shuffled[k..]);
    }
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(Split {
        train: data.subset(&train_rows),
        test: data.subset(&test_rows),
        train_rows,
        test_rows,
    })
}

/// Column statistics of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    /// Population standard deviations; 1 for constant columns.
    pub stds: Vec<f64>,
    /// Columns with (near) zero variance, which scale to 0.
    pub constant: Vec<bool>,
}

impl ScalerParams {
    pub fn transform_row(&self, row: &Row) -> Row {
        let mut out = [0.0; NUM_FEATURES];
        for j in 0..NUM_FEATURES {
            out[j] = if self.constant[j] {
                0.0
            } else {
                (row[j] - self.means[j]) / self.stds[j]
            };
        }
        out
    }
}

pub fn fit_scaler(train: &Dataset) -> Result<ScalerParams> {
    if train.is_empty() {
        return Err(Error::input("cannot fit a scaler on an empty dataset"));
    }
    let n = train.len() as f64;
    let mut means = vec![0.0; NUM_FEATURES];
    let mut stds = vec![0.0; NUM_FEATURES];
    let mut constant = vec![false; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        let m = train.features.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train
            .features
            .iter()
            .map(|r| (r[j] - m).powi(2))
            .sum::<f64>()
            / n;
        let s = var.sqrt();
        means[j] = m;
        if s <= 1e-12 * (1.0 + m.abs()) {
            constant[j] = true;
            stds[j] = 1.0;
        } else {
            stds[j] = s;
        }
    }
    Ok(ScalerParams {
        means,
        stds,
        constant,
    })
}

pub fn apply_scaler(params: &ScalerParams, data: &Dataset) -> Dataset {
    Dataset {
        features: data
            .features
            .iter()
            .map(|r| params.transform_row(r))
            .collect(),
        ..data.clone()
    }
}

// ---------------------------------------------------------------------------
// Feature CSV: the 26 feature columns, then `label` and `origin`.

pub fn write_features(path: &Path, data: &Dataset) -> Result<()> {
    data.validate()?;
    let mut out = FEATURE_NAMES.join(",");
    out.push_str(",label,origin\n");
    for i in 0..data.len() {
        for v in &data.features[i] {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        let _ = writeln!(
            out,
            "{},{}",
            data.class_names[data.labels[i]],
            data.origin[i].as_str()
        );
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a feature CSV over the ten eye classes. The `origin` column is
/// optional and defaults to `original`.
pub fn read_features(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::format("empty feature file"))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.len() < NUM_FEATURES + 1
        || header[..NUM_FEATURES] != FEATURE_NAMES
        || header[NUM_FEATURES] != "label"
    {
        return Err(Error::format(
            "feature file header must list the 26 feature names followed by `label`",
        ));
    }
    let has_origin = match header.get(NUM_FEATURES + 1) {
        Some(&"origin") if header.len() == NUM_FEATURES + 2 => true,
        None => false,
        _ => return Err(Error::format("unexpected columns after `label`")),
    };
    let mut data = Dataset::ten_class();
    for (row, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(Error::format(format!(
                "row {row}: {} columns, header has {}",
                cols.len(),
                header.len()
            )));
        }
        let mut values = [0.0; NUM_FEATURES];
        for (j, v) in values.iter_mut().enumerate() {
            *v = parse_f64(cols[j], FEATURE_NAMES[j])?;
        }
        let label: EyeClass = cols[NUM_FEATURES].parse()?;
        let origin = if has_origin {
            cols[NUM_FEATURES + 1].parse()?
        } else {
            Origin::Original
        };
        data.push(values, label.index(), origin);
    }
    data.validate()
        .map_err(|e| Error::format(format!("feature file: {e}")))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(counts: &[usize]) -> Dataset {
        let mut d = Dataset::ten_class();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let mut row = [0.0; NUM_FEATURES];
                for (j, v) in row.iter_mut().enumerate() {
                    *v = c as f64 * 10.0 + ((i * 31 + j * 7) % 17) as f64 * 0.1;
                }
                d.push(row, c, Origin::Original);
            }
        }
        d
    }

    #[test]
    fn smote_fills_deficits() {
        let d = toy(&[5, 8, 12, 12, 12, 12, 12, 12, 12, 12]);
        let (out, trace) = smote_traced(&d, 12, 5, 1).unwrap();
        assert_eq!(out.class_counts(), vec![12; 10]);
        assert_eq!(trace.len(), 7 + 4);
        assert_eq!(out.features[..d.len()], d.features[..]);
        for t in &trace {
            assert_eq!(out.origin[t.row], Origin::Synthetic);
            assert!((0.0..=1.0).contains(&t.u));
            assert_eq!(out.labels[t.parent], out.labels[t.neighbor]);
            assert_ne!(t.parent, t.neighbor);
            let (x, z, s) = (
                &d.features[t.parent],
                &d.features[t.neighbor],
                &out.features[t.row],
            );
            for j in 0..NUM_FEATURES {
                assert_eq!(s[j], x[j] + t.u * (z[j] - x[j]));
            }
        }
        assert_eq!(smote(&d, 12, 5, 1).unwrap(), out);
        assert_ne!(smote(&d, 12, 5, 2).unwrap(), out);
    }

    #[test]
    fn smote_errors() {
        let d = toy(&[1, 3]);
        assert!(smote(&d, 5, 5, 0).is_err());
        let d = toy(&[3, 3]);
        assert!(smote(&d, 2, 5, 0).is_err());
        assert_eq!(smote(&d, 3, 5, 0).unwrap(), d);
    }

    #[test]
    fn smote_identical_pair() {
        let mut d = Dataset::ten_class();
        d.push([0.5; NUM_FEATURES], 2, Origin::Original);
        d.push([0.5; NUM_FEATURES], 2, Origin::Original);
        let out = smote(&d, 5, 5, 9).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.features.iter().all(|r| *r == [0.5; NUM_FEATURES]));
        let v = validate_smote(&out).unwrap();
        assert_eq!(v.classes[2].mean_p, Some(1.0));
        assert!(v.classes[0].mean_p.is_none());
    }

    #[test]
    fn welch_basics() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = welch_ttest(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert_eq!(welch_ttest(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p, 1.0);
        assert_eq!(welch_ttest(&[1.0, 1.0], &[2.0, 2.0]).unwrap().p, 0.0);
        assert!(welch_ttest(&[1.0], &a).is_err());
        // hand-computed: means 3 and 5, variances 2.5 and 2.5, n 5 and 5
        let b = [3.0, 4.0, 5.0, 6.0, 7.0];
        let r = welch_ttest(&a, &b).unwrap();
        assert!((r.t + 2.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
    }

    #[test]
    fn stage_views_on_balanced_input() {
        let d = toy(&[200; 10]);
        let s = segment_dataset(&d).unwrap();
        assert_eq!(s.cardinal.class_counts(), vec![200, 200, 200, 200, 1200]);
        assert_eq!(s.right.class_counts(), vec![200, 200, 200, 600]);
        assert_eq!(s.left.class_counts(), vec![200, 200, 200]);
        assert_eq!(s.cardinal.len(), d.len());
    }

    #[test]
    fn stage_labels_cover_every_class() {
        for c in EyeClass::ALL {
            let s1 = stage1_label(c);
            match STAGE1_CLASSES[s1] {
                Some(f) => assert_eq!(f, c),
                None => {
                    let s2 = stage2_label(c).unwrap();
                    match STAGE2_CLASSES[s2] {
                        Some(f) => assert_eq!(f, c),
                        None => assert_eq!(STAGE3_CLASSES[stage3_label(c).unwrap()], c),
                    }
                }
            }
        }
    }

    #[test]
    fn split_counts() {
        let d = toy(&[200; 10]);
        let s = stratified_split(&d, 0.8, 3).unwrap();
        assert_eq!(s.train.class_counts(), vec![160; 10]);
        assert_eq!(s.test.class_counts(), vec![40; 10]);
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        let t = stratified_split(&d, 0.8, 4).unwrap();
        assert_ne!(s.train_rows, t.train_rows);
        assert_eq!(train_count(5, 0.5), 3);
        assert_eq!(train_count(2, 0.99), 1);
        assert_eq!(train_count(2, 0.01), 1);
        assert!(stratified_split(&toy(&[1]), 0.8, 0).is_err());
    }

    #[test]
    fn scaler_contract() {
        let d = toy(&[30, 30, 30]);
        let mut d2 = d.clone();
        for r in &mut d2.features {
            r[5] = 7.0;
        }
        let p = fit_scaler(&d2).unwrap();
        let s = apply_scaler(&p, &d2);
        let n = s.len() as f64;
        for j in 0..NUM_FEATURES {
            let m = s.features.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = s.features.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9);
            if j == 5 {
                assert!(s.features.iter().all(|r| r[j] == 0.0));
            } else {
                assert!((v.sqrt() - 1.0).abs() < 1e-9);
            }
        }
        assert!(fit_scaler(&Dataset::ten_class()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = smote(&toy(&[4, 6, 6]), 6, 5, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_features(&path, &d).unwrap();
        assert_eq!(read_features(&path).unwrap(), d);
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_features(&path).is_err());
    }
}
