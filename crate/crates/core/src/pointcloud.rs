//! Sample clouds: synthetic generators, CSV ingestion and count-matrix
//! featurization.

use std::f64::consts::PI;
use std::io::Read;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::{Distribution as _, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// `n` points in `R^d`, optionally tagged with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    labels: Option<Vec<i64>>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        Self::with_labels(points, None)
    }

    pub fn with_labels(points: Array2<f64>, labels: Option<Vec<i64>>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::param("a point cloud needs at least one point and one coordinate"));
        }
        if let Some((idx, _)) = points.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::param(format!(
                "non-finite coordinate at point {}",
                idx / points.ncols()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != points.nrows() {
                return Err(Error::param(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.nrows()
                )));
            }
        }
        Ok(PointCloud { points, labels })
    }

    /// Builds a one-dimensional cloud from scalar samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let points = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .map_err(|e| Error::param(e.to_string()))?;
        Self::new(points)
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Cloud made of the rows listed in `indices` (repetitions allowed).
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: self.points.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Reads headerless numeric CSV rows. With `label_column`, the last column
    /// of every row is parsed as an integer label.
    pub fn read_csv<R: Read>(reader: R, label_column: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (row, record) in rdr.records().enumerate() {
            let line = row + 1;
            let record = record.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { .. } => Error::Parse {
                    line,
                    message: "inconsistent number of columns".into(),
                },
                _ => Error::Csv(e),
            })?;
            let mut cells: Vec<&str> = record.iter().collect();
            if label_column {
                let raw = cells.pop().ok_or_else(|| Error::Parse {
                    line,
                    message: "missing label column".into(),
                })?;
                labels.push(raw.parse::<i64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("label {raw:?} is not an integer"),
                })?);
            }
            if cells.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "row has no coordinates".into(),
                });
            }
            match width {
                None => width = Some(cells.len()),
                Some(w) if w != cells.len() => {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {w} coordinates, found {}", cells.len()),
                    })
                }
                _ => {}
            }
            for cell in cells {
                let v = cell.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("cell {cell:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("cell {cell:?} is not finite"),
                    });
                }
                values.push(v);
            }
        }
        let width = width.ok_or_else(|| Error::Parse {
            line: 0,
            message: "no data rows".into(),
        })?;
        let n = values.len() / width;
        let points = Array2::from_shape_vec((n, width), values).expect("row widths checked");
        Self::with_labels(points, label_column.then_some(labels))
    }
}

/// One isotropic Gaussian component of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    pub sd: f64,
    pub weight: f64,
}

/// Sampling distributions for the synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    GaussianMixture {
        components: Vec<Component>,
    },
    /// `(t^a cos bt, t^a sin bt)` with `t ~ U[t_min, t_max]`, plus independent
    /// exponential noise of mean `beta` on each coordinate.
    Spiral {
        a: f64,
        b: f64,
        #[serde(default)]
        beta: f64,
        t_min: Option<f64>,
        t_max: Option<f64>,
    },
    /// Two uniform segments `{(0, u)}` and `{(separation, u)}`, `0 <= u <= length`.
    ParallelLines {
        #[serde(default = "default_line_length")]
        length: f64,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "half")]
        weight_first: f64,
    },
    /// Point masses on the real line, optionally jittered by a Gaussian.
    TwoPointMasses {
        locations: [f64; 2],
        #[serde(default = "half")]
        weight_first: f64,
        #[serde(default)]
        jitter: f64,
    },
    /// Illustrative ring + central blob + uniform background noise in the plane.
    RingBlobNoise {
        #[serde(default = "default_ring_radius")]
        ring_radius: f64,
        #[serde(default = "default_ring_sd")]
        ring_sd: f64,
        #[serde(default = "default_blob_sd")]
        blob_sd: f64,
        #[serde(default = "default_noise_fraction")]
        noise_fraction: f64,
        #[serde(default = "default_noise_half_width")]
        noise_half_width: f64,
    },
}

fn half() -> f64 {
    0.5
}
fn default_line_length() -> f64 {
    PI
}
fn default_separation() -> f64 {
    1.0
}
fn default_ring_radius() -> f64 {
    2.0
}
fn default_ring_sd() -> f64 {
    0.1
}
fn default_blob_sd() -> f64 {
    0.3
}
fn default_noise_fraction() -> f64 {
    0.1
}
fn default_noise_half_width() -> f64 {
    3.0
}

/// A distribution together with the seed of its sampling stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub distribution: Distribution,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(distribution: Distribution, seed: u64) -> Self {
        GeneratorSpec { distribution, seed }
    }

    /// Equal-weight unit-variance Gaussians at -2 and 2 on the line.
    pub fn two_gaussians(seed: u64) -> Self {
        let comp = |m: f64| Component {
            mean: vec![m],
            sd: 1.0,
            weight: 0.5,
        };
        GeneratorSpec::new(
            Distribution::GaussianMixture {
                components: vec![comp(-2.0), comp(2.0)],
            },
            seed,
        )
    }

    /// The spiral `a = 0.8`, `b = 10` with exponential noise of mean `beta`.
    pub fn spiral(beta: f64, seed: u64) -> Self {
        GeneratorSpec::new(
            Distribution::Spiral {
                a: 0.8,
                b: 10.0,
                beta,
                t_min: None,
                t_max: None,
            },
            seed,
        )
    }
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let probability = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        match self {
            Distribution::GaussianMixture { components } => {
                let first = components
                    .first()
                    .ok_or_else(|| Error::param("mixture needs at least one component"))?;
                let d = first.mean.len();
                if d == 0 {
                    return Err(Error::param("component means must be non-empty"));
                }
                let mut total = 0.0;
                for c in components {
                    if c.mean.len() != d {
                        return Err(Error::param("component means differ in dimension"));
                    }
                    if c.mean.iter().any(|m| !m.is_finite()) {
                        return Err(Error::param("component means must be finite"));
                    }
                    positive("component sd", c.sd)?;
                    if !(c.weight >= 0.0) {
                        return Err(Error::param("component weights must be nonnegative"));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
                }
            }
            Distribution::Spiral {
                a,
                b,
                beta,
                t_min,
                t_max,
            } => {
                positive("spiral b", *b)?;
                if !a.is_finite() {
                    return Err(Error::param("spiral a must be finite"));
                }
                if !(*beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::param("spiral noise mean beta must be >= 0"));
                }
                let (lo, hi) = spiral_range(*b, *t_min, *t_max);
                if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
                    return Err(Error::param(format!("invalid spiral range [{lo}, {hi}]")));
                }
            }
            Distribution::ParallelLines {
                length,
                separation,
                weight_first,
            } => {
                positive("line length", *length)?;
                positive("line separation", *separation)?;
                probability("weight_first", *weight_first)?;
            }
            Distribution::TwoPointMasses {
                locations,
                weight_first,
                jitter,
            } => {
                if locations.iter().any(|l| !l.is_finite()) {
                    return Err(Error::param("point-mass locations must be finite"));
                }
                probability("weight_first", *weight_first)?;
                if !(*jitter >= 0.0 && jitter.is_finite()) {
                    return Err(Error::param("jitter must be >= 0"));
                }
            }
            Distribution::RingBlobNoise {
                ring_radius,
                ring_sd,
                blob_sd,
                noise_fraction,
                noise_half_width,
            } => {
                positive("ring_radius", *ring_radius)?;
                positive("ring_sd", *ring_sd)?;
                positive("blob_sd", *blob_sd)?;
                positive("noise_half_width", *noise_half_width)?;
                probability("noise_fraction", *noise_fraction)?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Distribution::GaussianMixture { components } => components[0].mean.len(),
            Distribution::TwoPointMasses { .. } => 1,
            _ => 2,
        }
    }
}

/// Sampling range of the spiral parameter.
pub fn spiral_range(b: f64, t_min: Option<f64>, t_max: Option<f64>) -> (f64, f64) {
    (
        t_min.unwrap_or(PI / (2.0 * b)),
        t_max.unwrap_or(3.0 * PI / b),
    )
}

/// Point on the spiral `(t^a cos bt, t^a sin bt)`.
pub fn spiral_point(a: f64, b: f64, t: f64) -> [f64; 2] {
    let r = t.powf(a);
    [r * (b * t).cos(), r * (b * t).sin()]
}

fn pick(rng: &mut rng::Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws `n` i.i.d. points from `spec`. Identical specs give identical clouds.
pub fn generate(spec: &GeneratorSpec, n: usize) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::param("sample size must be at least 1"));
    }
    let dist = &spec.distribution;
    dist.validate()?;
    let mut rng = rng::rng_from(spec.seed);
    let d = dist.dim();
    let mut points = Array2::zeros((n, d));
    let mut labels = vec![0i64; n];
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    match dist {
        Distribution::GaussianMixture { components } => {
            let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
            for i in 0..n {
                let c = pick(&mut rng, &weights);
                labels[i] = c as i64;
                let comp = &components[c];
                for k in 0..d {
                    let z: f64 = std_normal.sample(&mut rng);
                    points[[i, k]] = comp.mean[k] + comp.sd * z;
                }
            }
        }
        Distribution::Spiral {
            a,
            b,
            beta,
            t_min,
            t_max,
        } => {
            let (lo, hi) = spiral_range(*b, *t_min, *t_max);
            let noise = (*beta > 0.0).then(|| Exp::new(1.0 / beta).expect("beta > 0"));
            for i in 0..n {
                let t = rng.random_range(lo..=hi);
                let [x, y] = spiral_point(*a, *b, t);
                let (ex, ey) = match &noise {
                    Some(e) => (e.sample(&mut rng), e.sample(&mut rng)),
                    None => (0.0, 0.0),
                };
                points[[i, 0]] = x + ex;
                points[[i, 1]] = y + ey;
            }
        }
        Distribution::ParallelLines {
            length,
            separation,
            weight_first,
        } => {
            for i in 0..n {
                let line = pick(&mut rng, &[*weight_first, 1.0 - weight_first]);
                labels[i] = line as i64;
                points[[i, 0]] = line as f64 * separation;
                points[[i, 1]] = rng.random_range(0.0..=*length);
            }
        }
        Distribution::TwoPointMasses {
            locations,
            weight_first,
            jitter,
        } => {
            for i in 0..n {
                let c = pick(&mut rng, &[*weight_first, 1.0 - weight_first]);
                labels[i] = c as i64;
                let z: f64 = std_normal.sample(&mut rng);
                points[[i, 0]] = locations[c] + jitter * z;
            }
        }
        Distribution::RingBlobNoise {
            ring_radius,
            ring_sd,
            blob_sd,
            noise_fraction,
            noise_half_width,
        } => {
            let body = (1.0 - noise_fraction) / 2.0;
            for i in 0..n {
                let c = pick(&mut rng, &[body, body, *noise_fraction]);
                labels[i] = c as i64;
                let (x, y) = match c {
                    0 => {
                        let theta = rng.random_range(0.0..2.0 * PI);
                        let z: f64 = std_normal.sample(&mut rng);
                        let r = ring_radius + ring_sd * z;
                        (r * theta.cos(), r * theta.sin())
                    }
                    1 => {
                        let zx: f64 = std_normal.sample(&mut rng);
                        let zy: f64 = std_normal.sample(&mut rng);
                        (blob_sd * zx, blob_sd * zy)
                    }
                    _ => (
                        rng.random_range(-noise_half_width..=*noise_half_width),
                        rng.random_range(-noise_half_width..=*noise_half_width),
                    ),
                };
                points[[i, 0]] = x;
                points[[i, 1]] = y;
            }
        }
    }
    let labels = match dist {
        Distribution::Spiral { .. } => None,
        _ => Some(labels),
    };
    PointCloud::with_labels(points, labels)
}

/// Pointwise mutual information of a document-by-word count matrix.
#[derive(Debug, Clone)]
pub struct MutualInformation {
    /// `p x n` matrix; column `y` is the feature vector of word `y`.
    pub values: Array2<f64>,
    /// Cells whose count was zero and whose frequency was floored at `1/(2 total)`.
    pub floored: Array2<bool>,
}

impl MutualInformation {
    /// One point per word (column), with the documents as coordinates.
    pub fn word_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.values.t().to_owned())
    }
}

/// `I(x,y) = log(f(x,y) / (sum_x' f(x',y) * sum_y' f(x,y')))` with `f = counts / total`.
pub fn mutual_information_features(counts: &Array2<u64>) -> Result<MutualInformation> {
    let (p, n) = counts.dim();
    if p == 0 || n == 0 {
        return Err(Error::param("count matrix is empty"));
    }
    for (x, row) in counts.rows().into_iter().enumerate() {
        if row.iter().all(|&c| c == 0) {
            return Err(Error::DegenerateMargin { axis: "row", index: x });
        }
    }
    for (y, col) in counts.columns().into_iter().enumerate() {
        if col.iter().all(|&c| c == 0) {
            return Err(Error::DegenerateMargin {
                axis: "column",
                index: y,
            });
        }
    }
    let total: u64 = counts.iter().sum();
    let total = total as f64;
    let freq = counts.mapv(|c| c as f64 / total);
    let doc_margin: Array1<f64> = freq.sum_axis(Axis(1));
    let word_margin: Array1<f64> = freq.sum_axis(Axis(0));
    let floor = 1.0 / (2.0 * total);
    let floored = counts.mapv(|c| c == 0);
    let values = Array2::from_shape_fn((p, n), |(x, y)| {
        let f = if floored[[x, y]] { floor } else { freq[[x, y]] };
        (f / (word_margin[y] * doc_margin[x])).ln()
    });
    Ok(MutualInformation { values, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn mean(xs: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = xs.collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn two_gaussian_sample_mean_is_near_zero() {
        let cloud = generate(&GeneratorSpec::two_gaussians(11), 1000).unwrap();
        assert_eq!(cloud.dim(), 1);
        let m = mean(cloud.points().iter().copied());
        assert!(m.abs() < 3.0 * (5.0f64).sqrt() / (1000f64).sqrt(), "mean {m}");
    }

    #[test]
    fn mixture_frequencies_match_weights() {
        for seed in 0..5 {
            let cloud = generate(&GeneratorSpec::two_gaussians(seed), 2000).unwrap();
            let ones = cloud.labels().unwrap().iter().filter(|&&l| l == 1).count() as f64;
            let sigma = (2000.0 * 0.25f64).sqrt();
            assert!((ones - 1000.0).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn noiseless_spiral_lies_on_curve() {
        let spec = GeneratorSpec::spiral(0.0, 3);
        let cloud = generate(&spec, 500).unwrap();
        for p in cloud.points().rows() {
            // recover t from the radius, then check the angle
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let t = r.powf(1.0 / 0.8);
            let [x, y] = spiral_point(0.8, 10.0, t);
            assert!((x - p[0]).abs() <= 1e-12 && (y - p[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn point_masses_have_two_support_points() {
        let spec = GeneratorSpec::new(
            Distribution::TwoPointMasses {
                locations: [0.0, 1.0],
                weight_first: 0.5,
                jitter: 0.0,
            },
            5,
        );
        let cloud = generate(&spec, 10).unwrap();
        assert!(cloud.points().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = GeneratorSpec::spiral(0.09, 42);
        assert_eq!(generate(&spec, 300).unwrap(), generate(&spec, 300).unwrap());
        let other = GeneratorSpec::spiral(0.09, 43);
        assert_ne!(generate(&spec, 300).unwrap(), generate(&other, 300).unwrap());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_weights = GeneratorSpec::new(
            Distribution::GaussianMixture {
                components: vec![Component {
                    mean: vec![0.0],
                    sd: 1.0,
                    weight: 0.7,
                }],
            },
            0,
        );
        assert!(matches!(generate(&bad_weights, 5), Err(Error::Parameter(_))));
        let bad_beta = GeneratorSpec::spiral(-0.1, 0);
        assert!(generate(&bad_beta, 5).is_err());
        assert!(generate(&GeneratorSpec::two_gaussians(0), 0).is_err());
    }

    #[test]
    fn mutual_information_uniform_counts_vanish() {
        let counts = Array2::from_elem((3, 4), 7u64);
        let mi = mutual_information_features(&counts).unwrap();
        // f = 1/12, margins 1/4 and 1/3
        let expected = ((1.0 / 12.0) / ((1.0 / 4.0) * (1.0 / 3.0)) as f64).ln();
        for v in mi.values.iter() {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mutual_information_single_cell() {
        let mi = mutual_information_features(&array![[5u64]]).unwrap();
        assert_eq!(mi.values[[0, 0]], 0.0);
    }

    #[test]
    fn mutual_information_identity_counts() {
        let mi = mutual_information_features(&array![[1u64, 0], [0, 1]]).unwrap();
        assert!((mi.values[[0, 0]] - 2f64.ln()).abs() < 1e-15);
        assert!((mi.values[[1, 1]] - 2f64.ln()).abs() < 1e-15);
        assert!(mi.floored[[0, 1]] && mi.floored[[1, 0]]);
        assert!(!mi.floored[[0, 0]]);
        // floor 1/(2*2) against margins 1/2, 1/2
        assert!(mi.values[[0, 1]].abs() < 1e-15);
    }

    #[test]
    fn mutual_information_rejects_empty_margins() {
        let err = mutual_information_features(&array![[1u64, 0], [2, 0]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateMargin { axis: "column", index: 1 }));
    }

    #[test]
    fn csv_round_trip_with_labels() {
        let text = "0.5, 1\n-2,3\n";
        let cloud = PointCloud::read_csv(text.as_bytes(), true).unwrap();
        assert_eq!(cloud.dim(), 1);
        assert_eq!(cloud.labels().unwrap(), &[1, 3]);
        let err = PointCloud::read_csv("1,2\n3,x\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    proptest::proptest! {
        #[test]
        fn mutual_information_is_scale_invariant(
            cells in proptest::collection::vec(1u64..50, 12),
            k in 1u64..20,
        ) {
            let counts = Array2::from_shape_vec((3, 4), cells).unwrap();
            let a = mutual_information_features(&counts).unwrap();
            let b = mutual_information_features(&counts.mapv(|c| c * k)).unwrap();
            proptest::prop_assert_eq!(a.values, b.values);
        }
    }
}
