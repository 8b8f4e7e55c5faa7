use std::fs::File;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde_json::{json, Value};

use sca::bandwidth::{bootstrap_snr, bootstrap_snr_nodal, mst_rule, neighborhood_rule, scaling_threshold};
use sca::coarsegrain::{coarse_chain, kmeans_diffusion, spectral_fidelity, WordsPreset};
use sca::diffusion::{diffusion_distance_direct, diffusion_distance_spectral, embed, eigen_power};
use sca::eigen::{biorthogonality_check, decompose_with, EigenSolver, SpectralDecomposition};
use sca::geodesic::{
    spiral_consistency_experiment, spiral_sensitivity_experiment, ConsistencyConfig, SensitivityConfig,
};
use sca::kernel::build_kernel;
use sca::markov::{build_markov, MarkovModel};
use sca::nodal::{nodal_error, nodal_map, NodalMap};
use sca::nystrom::{extend_embedding, ExtensionQuery};
use sca::oracle::{
    convergence_study, default_dictionary, estimate_loss, evolve_density, extend_to_grid, quadrature_operator,
    reference_eigenfunctions, squared_density_limit, total_variation, Density,
};
use sca::pointcloud::{generate, mutual_information_features, Distribution, GeneratorSpec, PointCloud};
use sca::Error;

use crate::args::*;
use crate::output::{matrix_csv, num, nums, points_csv, Artifacts, Cell, Table};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Eigenvalue above which `lambda_1` signals a numerically disconnected graph.
const DISCONNECTED_LAMBDA: f64 = 1.0 - 1e-10;

pub struct Run {
    pub artifacts: Artifacts,
    /// Reasons a disconnected graph was detected.
    pub disconnected: Vec<String>,
}

impl Run {
    fn new() -> Self {
        Run {
            artifacts: Artifacts::default(),
            disconnected: Vec::new(),
        }
    }

    fn disconnected(&mut self, message: String) {
        self.artifacts.warn(message.clone());
        self.disconnected.push(message);
    }
}

fn param(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::Parameter(msg.into()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::Core(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn load_cloud(input: &InputArgs) -> Result<PointCloud> {
    Ok(PointCloud::read_csv(open(&input.input)?, input.labels)?)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::Io)?;
    toml::from_str(&text).map_err(|e| CliError::Toml(format!("{}: {e}", path.display())))
}

/// Rows of nonnegative integers.
fn read_integer_rows(path: &Path) -> Result<Vec<Vec<i64>>> {
    let cloud = PointCloud::read_csv(open(path)?, false)?;
    let mut rows = Vec::with_capacity(cloud.n());
    for (i, row) in cloud.points().rows().into_iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for &v in row {
            if v.fract() != 0.0 || v.abs() > 9.0e15 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{v} is not an integer"),
                }
                .into());
            }
            out.push(v as i64);
        }
        rows.push(out);
    }
    Ok(rows)
}

fn solver(s: Solver) -> EigenSolver {
    match s {
        Solver::Auto => EigenSolver::Auto,
        Solver::Dense => EigenSolver::Dense,
        Solver::Lanczos => EigenSolver::lanczos(),
    }
}

fn default_grid(rule: Rule) -> Vec<f64> {
    match rule {
        // geometric, 0.001 to 10 with 20 points per decade
        Rule::Neighborhood => (0..=80).map(|i| 1e-3 * 10f64.powf(i as f64 / 20.0)).collect(),
        _ => vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
    }
}

/// Runs a selection rule; the curve goes to `<name>.csv`.
fn run_rule(cloud: &PointCloud, rule: Rule, opts: &RuleOptions, seed: u64, run: &mut Run) -> Result<Option<f64>> {
    let grid = opts.grid.clone().map_or_else(|| default_grid(rule), |g| g.0);
    let a = &mut run.artifacts;
    let selected = match rule {
        Rule::Snr | Rule::SnrNodal => {
            let threshold = match opts.threshold_scale {
                Some(c) => scaling_threshold(c, cloud.n(), cloud.dim()),
                None => opts.threshold,
            };
            let f = if rule == Rule::Snr { bootstrap_snr } else { bootstrap_snr_nodal };
            let curve = f(cloud, opts.ell, &grid, opts.replicates, threshold, seed)?;
            let mut t = Table::new(&["epsilon", "snr", "signal", "noise", "degenerate"]);
            for i in 0..curve.epsilons.len() {
                t.row(&[
                    Cell::F(curve.epsilons[i]),
                    Cell::F(curve.snr[i]),
                    Cell::F(curve.signal[i]),
                    Cell::F(curve.noise[i]),
                    Cell::B(curve.degenerate[i]),
                ]);
            }
            a.add("snr_curve.csv", t.into_bytes());
            for w in &curve.warnings {
                a.warn(w.clone());
            }
            a.summary("threshold", num(threshold));
            a.summary("replicates", json!(curve.replicates));
            a.summary("ell", json!(curve.ell));
            a.summary("snr", nums(curve.snr.iter().copied()));
            curve.selected
        }
        Rule::Neighborhood => {
            let sel = neighborhood_rule(cloud, &grid, opts.neighbors)?;
            let mut t = Table::new(&["epsilon", "median_neighbors"]);
            for (e, m) in sel.epsilons.iter().zip(&sel.medians) {
                t.row(&[Cell::F(*e), Cell::F(*m)]);
            }
            a.add("neighbor_counts.csv", t.into_bytes());
            a.summary("neighbors", json!(sel.k));
            sel.selected
        }
        Rule::Mst => {
            let sel = mst_rule(cloud)?;
            let mut t = Table::new(&["i", "j", "length"]);
            for (i, j, l) in &sel.edges {
                t.row(&[Cell::U(*i as u64), Cell::U(*j as u64), Cell::F(*l)]);
            }
            a.add("mst_edges.csv", t.into_bytes());
            a.summary("longest_edge", num(sel.longest_edge));
            Some(sel.epsilon)
        }
    };
    a.summary("rule", serde_json::to_value(rule).expect("enum serializes"));
    a.summary("selected_epsilon", selected.map_or(Value::Null, num));
    if selected.is_none() {
        a.warn("no bandwidth on the grid satisfies the selection rule");
    }
    Ok(selected)
}

fn resolve_bandwidth(cloud: &PointCloud, bw: &Bandwidth, seed: u64, run: &mut Run) -> Result<f64> {
    match (bw.epsilon, bw.select) {
        (Some(eps), None) => {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(param(format!("bandwidth must be positive, got {eps}")));
            }
            run.artifacts.summary("bandwidth_source", json!("explicit"));
            Ok(eps)
        }
        (None, Some(rule)) => {
            run.artifacts.summary("bandwidth_source", json!("rule"));
            run_rule(cloud, rule, &bw.rule, seed, run)?
                .ok_or_else(|| param("the selection rule did not return a bandwidth"))
        }
        _ => Err(param("give exactly one of --epsilon and --select")),
    }
}

/// Builds the chain, decomposes it and records the invariant checks.
fn fit(cloud: &PointCloud, eps: f64, q: usize, s: Solver, run: &mut Run) -> Result<(MarkovModel, SpectralDecomposition)> {
    let n = cloud.n();
    if q == 0 || q > n - 1 {
        return Err(param(format!("order q must be in 1..={}, got {q}", n - 1)));
    }
    let model = build_markov(&build_kernel(cloud, eps)?)?;
    let dec = decompose_with(&model, q, solver(s))?;
    record_invariants(&model, &dec, &mut run.artifacts);
    let degenerate: Vec<String> = (1..=q).filter(|&l| dec.is_degenerate(l)).map(|l| l.to_string()).collect();
    if !degenerate.is_empty() {
        run.artifacts.warn(format!(
            "degenerate eigenvalues {}; their eigenvectors are not identifiable",
            degenerate.join(",")
        ));
    }
    if dec.eigenvalues[1] >= DISCONNECTED_LAMBDA {
        run.disconnected(format!(
            "lambda_1 = {} at epsilon {eps}: the kernel graph is numerically disconnected",
            dec.eigenvalues[1]
        ));
    }
    run.artifacts.summary("epsilon", num(eps));
    run.artifacts.summary("eigenvalues", nums(dec.eigenvalues.iter().copied()));
    Ok((model, dec))
}

fn record_invariants(model: &MarkovModel, dec: &SpectralDecomposition, a: &mut Artifacts) {
    let a_mat = &model.transition;
    let s = &model.stationary;
    let row = a_mat.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let st = s.dot(a_mat);
    let stationarity = (&st - s).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = (0..=dec.q)
        .map(|l| (dec.inner(dec.psi(l), dec.psi(l)) - 1.0).abs())
        .fold(0.0, f64::max);
    let inv = &mut a.invariants;
    inv.insert("row_stochasticity".into(), num(row));
    inv.insert("stationarity".into(), num(stationarity));
    inv.insert("eigen_residual_max".into(), num(dec.max_residual));
    inv.insert("normalization_deviation".into(), num(norm));
    inv.insert("biorthogonality".into(), num(biorthogonality_check(dec).max()));
}

pub fn generate_cmd(args: &GenerateArgs) -> Result<Run> {
    let mut run = Run::new();
    let seed = args.common.seed;
    let mut spec = match (&args.dist, &args.spec) {
        (_, Some(path)) => read_toml::<GeneratorSpec>(path)?,
        (Some(d), None) => builtin(*d, args.beta, seed),
        (None, None) => return Err(param("give --dist or --spec")),
    };
    spec.seed = seed;
    let cloud = generate(&spec, args.n)?;
    run.artifacts.add("points.csv", points_csv(cloud.points(), cloud.labels()));
    run.artifacts.summary("n", json!(cloud.n()));
    run.artifacts.summary("dim", json!(cloud.dim()));
    run.artifacts.summary("labels", json!(cloud.labels().is_some()));
    run.artifacts.summary("spec", serde_json::to_value(&spec).expect("spec serializes"));
    Ok(run)
}

fn builtin(d: Dist, beta: f64, seed: u64) -> GeneratorSpec {
    match d {
        Dist::TwoGaussians => GeneratorSpec::two_gaussians(seed),
        Dist::ThreeGaussians => {
            let Density::GaussianMixture { components } = Density::three_gaussians() else {
                unreachable!("preset is a mixture")
            };
            GeneratorSpec::new(Distribution::GaussianMixture { components }, seed)
        }
        Dist::Spiral => GeneratorSpec::spiral(beta, seed),
        Dist::ParallelLines => GeneratorSpec::new(
            Distribution::ParallelLines {
                length: std::f64::consts::PI,
                separation: 1.0,
                weight_first: 0.5,
            },
            seed,
        ),
        Dist::TwoPointMasses => GeneratorSpec::new(
            Distribution::TwoPointMasses {
                locations: [0.0, 1.0],
                weight_first: 0.5,
                jitter: 1e-3,
            },
            seed,
        ),
        Dist::RingBlobNoise => GeneratorSpec::new(
            Distribution::RingBlobNoise {
                ring_radius: 2.0,
                ring_sd: 0.1,
                blob_sd: 0.3,
                noise_fraction: 0.1,
                noise_half_width: 3.0,
            },
            seed,
        ),
    }
}

fn eigenvalue_table(dec: &SpectralDecomposition, m: u64) -> Vec<u8> {
    let mut t = Table::new(&["ell", "lambda", "lambda_m"]);
    for (l, &v) in dec.eigenvalues.iter().enumerate() {
        t.row(&[Cell::U(l as u64), Cell::F(v), Cell::F(eigen_power(v, m))]);
    }
    t.into_bytes()
}

pub fn embed_cmd(args: &EmbedArgs) -> Result<Run> {
    let mut run = Run::new();
    let cloud = load_cloud(&args.fit.input)?;
    let f = &args.fit;
    let eps = resolve_bandwidth(&cloud, &f.bandwidth, args.common.seed, &mut run)?;
    let (_, dec) = fit(&cloud, eps, f.q, f.solver, &mut run)?;
    let emb = embed(&dec, f.m, f.q)?;
    run.artifacts.add("embedding.csv", matrix_csv(&emb.coords));
    run.artifacts.add("eigenvalues.csv", eigenvalue_table(&dec, f.m));
    run.artifacts.summary("n", json!(cloud.n()));
    run.artifacts.summary("q", json!(f.q));
    run.artifacts.summary("m", json!(f.m));
    Ok(run)
}

pub fn extend_cmd(args: &ExtendArgs) -> Result<Run> {
    let mut run = Run::new();
    let cloud = load_cloud(&args.fit.input)?;
    let query = PointCloud::read_csv(open(&args.query)?, false)?;
    if query.dim() != cloud.dim() {
        return Err(param(format!(
            "query dimension {} differs from the training dimension {}",
            query.dim(),
            cloud.dim()
        )));
    }
    let f = &args.fit;
    let eps = resolve_bandwidth(&cloud, &f.bandwidth, args.common.seed, &mut run)?;
    let (_, dec) = fit(&cloud, eps, f.q, f.solver, &mut run)?;
    let ext = extend_embedding(&cloud, &dec, f.m, f.q, &ExtensionQuery::from_cloud(&query))?;
    run.artifacts.add("extension.csv", matrix_csv(&ext));
    run.artifacts.add("eigenvalues.csv", eigenvalue_table(&dec, f.m));
    run.artifacts.summary("queries", json!(query.n()));
    Ok(run)
}

pub fn distance_cmd(args: &DistanceArgs) -> Result<Run> {
    let mut run = Run::new();
    let cloud = load_cloud(&args.fit.input)?;
    let pairs = read_integer_rows(&args.pairs)?;
    let n = cloud.n();
    let mut idx = Vec::with_capacity(pairs.len());
    for (line, p) in pairs.iter().enumerate() {
        if p.len() != 2 {
            return Err(Error::Parse {
                line: line + 1,
                message: "expected two indices".into(),
            }
            .into());
        }
        if p.iter().any(|&v| v < 0 || v as usize >= n) {
            return Err(param(format!("pair {p:?} on line {} is outside 0..{n}", line + 1)));
        }
        idx.push((p[0] as usize, p[1] as usize));
    }
    let f = &args.fit;
    let eps = resolve_bandwidth(&cloud, &f.bandwidth, args.common.seed, &mut run)?;
    let (model, dec) = fit(&cloud, eps, f.q, f.solver, &mut run)?;
    let mut t = Table::new(&["i", "j", "distance"]);
    for &(i, j) in &idx {
        let d = match args.method {
            DistanceMethod::Spectral => diffusion_distance_spectral(&dec, f.m, i, j, f.q)?,
            DistanceMethod::Direct => diffusion_distance_direct(&model, f.m, i, j)?,
        };
        t.row(&[Cell::U(i as u64), Cell::U(j as u64), Cell::F(d)]);
    }
    run.artifacts.add("distances.csv", t.into_bytes());
    run.artifacts.summary("pairs", json!(idx.len()));
    run.artifacts
        .summary("method", serde_json::to_value(args.method).expect("enum serializes"));
    Ok(run)
}

pub fn select_cmd(args: &SelectArgs) -> Result<Run> {
    let mut run = Run::new();
    let cloud = load_cloud(&args.input)?;
    run_rule(&cloud, args.rule, &args.options, args.common.seed, &mut run)?;
    run.artifacts.summary("n", json!(cloud.n()));
    Ok(run)
}

pub fn nodal_cmd(args: &NodalArgs) -> Result<Run> {
    let mut run = Run::new();
    let cloud = load_cloud(&args.input)?;
    if args.ells.is_empty() || args.ells.contains(&0) {
        return Err(param("eigenvector indices must be at least 1"));
    }
    let reference = args.reference.as_deref().map(read_integer_rows).transpose()?;
    if let Some(r) = &reference {
        if r.len() != cloud.n() || r.iter().any(|row| row.len() != args.ells.len()) {
            return Err(param("reference needs one row per point and one column per index"));
        }
        if r.iter().flatten().any(|v| !(-1..=1).contains(v)) {
            return Err(param("reference signs must be -1, 0 or 1"));
        }
    }
    let eps = resolve_bandwidth(&cloud, &args.bandwidth, args.common.seed, &mut run)?;
    let q = *args.ells.iter().max().expect("nonempty");
    let (_, dec) = fit(&cloud, eps, q, Solver::Auto, &mut run)?;
    let maps: Vec<NodalMap> = args
        .ells
        .iter()
        .map(|&l| nodal_map(&dec, l))
        .collect::<sca::Result<_>>()?;
    let mut header = vec!["index".to_string()];
    header.extend(args.ells.iter().map(|l| format!("sign_{l}")));
    let mut t = Table::with_columns(header);
    for i in 0..cloud.n() {
        let mut cells = vec![Cell::U(i as u64)];
        cells.extend(maps.iter().map(|m| Cell::I(m.signs[i] as i64)));
        t.row(&cells);
    }
    run.artifacts.add("nodal.csv", t.into_bytes());
    if let Some(r) = reference {
        let mut errors = serde_json::Map::new();
        for (c, m) in maps.iter().enumerate() {
            let signs = r.iter().map(|row| row[c] as i8).collect();
            let reference = NodalMap {
                signs,
                ell: m.ell,
                epsilon: f64::NAN,
            };
            errors.insert(m.ell.to_string(), num(nodal_error(m, &reference)?));
        }
        run.artifacts.summary("nodal_error", Value::Object(errors));
    }
    Ok(run)
}

pub fn spiral_cmd(args: &SpiralArgs) -> Result<Run> {
    let mut run = Run::new();
    let seed = args.common.seed;
    match args.mode {
        SpiralMode::Sensitivity => {
            let cfg = SensitivityConfig {
                a: args.a,
                b: args.b,
                beta: args.beta,
                tau: args.tau.unwrap_or(0.15),
                n: args.n,
                reps: args.reps,
                baseline_reps: args.baseline_reps,
                m: args.m,
                seed,
                t_min: args.t_min,
                t_max: args.t_max,
            };
            let r = spiral_sensitivity_experiment(&cfg)?;
            let mut t = Table::new(&[
                "realization",
                "geodesic",
                "diffusion",
                "geodesic_change",
                "diffusion_change",
                "connected",
            ]);
            for (i, d) in r.realizations.iter().enumerate() {
                t.row(&[
                    Cell::U(i as u64),
                    Cell::F(d.geodesic),
                    Cell::F(d.diffusion),
                    Cell::F((d.geodesic - r.baseline_geodesic) / r.baseline_geodesic),
                    Cell::F((d.diffusion - r.baseline_diffusion) / r.baseline_diffusion),
                    Cell::B(d.connected),
                ]);
            }
            run.artifacts.add("realizations.csv", t.into_bytes());
            let summary = |s: &sca::geodesic::ChangeSummary| {
                json!({
                    "count": s.count,
                    "mean": num(s.mean),
                    "variance": num(s.variance),
                    "modes": nums(s.modes.iter().copied()),
                    "shortcut_fraction": num(s.shortcut_fraction),
                })
            };
            let a = &mut run.artifacts;
            a.summary("baseline_geodesic", num(r.baseline_geodesic));
            a.summary("baseline_diffusion", num(r.baseline_diffusion));
            a.summary("geodesic_change", summary(&r.geodesic_summary));
            a.summary("diffusion_change", summary(&r.diffusion_summary));
            a.summary(
                "variance_ratio",
                num(r.diffusion_summary.variance / r.geodesic_summary.variance),
            );
            a.summary("histogram_bin", num(sca::geodesic::HISTOGRAM_BIN));
            if r.baseline_disconnected > 0 {
                run.disconnected(format!(
                    "{} of {} noiseless realizations were disconnected and excluded",
                    r.baseline_disconnected, cfg.baseline_reps
                ));
            }
            if r.disconnected > 0 {
                run.disconnected(format!(
                    "{} of {} noisy realizations were disconnected and excluded",
                    r.disconnected, cfg.reps
                ));
            }
        }
        SpiralMode::Consistency => {
            let cfg = ConsistencyConfig {
                a: args.a,
                b: args.b,
                beta: args.beta,
                tau: args.tau.unwrap_or(0.1),
                sizes: args.sizes.clone(),
                reps: args.reps,
                seed,
                t_min: args.t_min,
                t_max: args.t_max,
            };
            let r = spiral_consistency_experiment(&cfg)?;
            let mut t = Table::new(&["n", "realization", "distance"]);
            let mut per_size = Vec::new();
            for s in &r.per_size {
                for (i, d) in s.distances.iter().enumerate() {
                    t.row(&[Cell::U(s.n as u64), Cell::U(i as u64), Cell::F(*d)]);
                }
                per_size.push(json!({
                    "n": s.n,
                    "mean": num(s.mean),
                    "connected": s.distances.len(),
                    "disconnected": s.disconnected,
                    "manifold_fraction": num(s.manifold_fraction),
                    "closer_to_manifold": s.closer_to_manifold(r.manifold_distance, r.euclidean_distance),
                }));
                if s.disconnected > 0 {
                    run.disconnected(format!(
                        "n = {}: {} of {} realizations were disconnected and excluded",
                        s.n, s.disconnected, cfg.reps
                    ));
                }
            }
            run.artifacts.add("distances.csv", t.into_bytes());
            run.artifacts.summary("manifold_distance", num(r.manifold_distance));
            run.artifacts.summary("euclidean_distance", num(r.euclidean_distance));
            run.artifacts.summary("per_size", Value::Array(per_size));
        }
    }
    Ok(run)
}

fn read_counts(path: &Path) -> Result<Array2<u64>> {
    let rows = read_integer_rows(path)?;
    let width = rows.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        if let Some(v) = r.iter().find(|v| **v < 0) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("negative count {v}"),
            }
            .into());
        }
        flat.extend(r.iter().map(|v| *v as u64));
    }
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("widths checked on read"))
}

pub fn coarse_cmd(args: &CoarseArgs) -> Result<Run> {
    let mut run = Run::new();
    let cloud = match (&args.input, &args.counts) {
        (Some(p), None) => PointCloud::read_csv(open(p)?, false)?,
        (None, Some(p)) => mutual_information_features(&read_counts(p)?)?.word_cloud()?,
        _ => return Err(param("give exactly one of --input and --counts")),
    };
    let preset = match (&args.preset, &args.preset_file) {
        (Some(Preset::Words), None) => Some(WordsPreset::default()),
        (None, Some(p)) => Some(read_toml::<WordsPreset>(p)?),
        (None, None) => None,
        _ => return Err(param("give at most one preset")),
    };
    let (eps, m, q, k) = match (preset, args.epsilon) {
        (Some(p), None) => {
            run.artifacts
                .summary("preset", serde_json::to_value(p).expect("preset serializes"));
            (p.epsilon, args.m.unwrap_or(p.m), args.q.unwrap_or(p.q), args.k.unwrap_or(p.k))
        }
        (None, Some(e)) => {
            let k = args.k.ok_or_else(|| param("--k is required without a preset"))?;
            (e, args.m.unwrap_or(1), args.q.unwrap_or(4), k)
        }
        _ => return Err(param("give exactly one bandwidth source: --epsilon or a preset")),
    };
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(param(format!("bandwidth must be positive, got {eps}")));
    }
    let (model, dec) = fit(&cloud, eps, q, Solver::Auto, &mut run)?;
    let emb = embed(&dec, m, q)?;
    let quant = kmeans_diffusion(&emb, k, args.common.seed, args.restarts)?;
    let coarse = coarse_chain(&model, &quant, m)?;
    let mut t = Table::new(&["index", "cluster", "representative"]);
    for (i, &c) in quant.assignment.iter().enumerate() {
        t.row(&[Cell::U(i as u64), Cell::U(c as u64), Cell::B(quant.representatives[c] == i)]);
    }
    run.artifacts.add("quantization.csv", t.into_bytes());
    run.artifacts.add("coarse_chain.csv", matrix_csv(&coarse.transition));
    run.artifacts.add("centers.csv", matrix_csv(&quant.centers));
    let sizes = quant.cluster_sizes();
    let mut t = Table::new(&["cluster", "mass", "size", "representative"]);
    for c in 0..k {
        t.row(&[
            Cell::U(c as u64),
            Cell::F(coarse.masses[c]),
            Cell::U(sizes[c] as u64),
            Cell::U(quant.representatives[c] as u64),
        ]);
    }
    run.artifacts.add("clusters.csv", t.into_bytes());
    let a = &mut run.artifacts;
    a.summary("m", json!(m));
    a.summary("q", json!(q));
    a.summary("k", json!(k));
    a.summary("distortion", num(quant.distortion));
    let mass_error = (coarse.masses.sum() - 1.0).abs();
    let row_error = coarse
        .transition
        .rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    a.invariants.insert("coarse_mass_deviation".into(), num(mass_error));
    a.invariants.insert("coarse_row_stochasticity".into(), num(row_error));
    let j = args.fidelity.min(k.saturating_sub(1));
    if j > 0 {
        let gaps = spectral_fidelity(&model, &coarse, j)?;
        a.summary("spectral_fidelity", nums(gaps));
    }
    Ok(run)
}

fn load_density(d: &DensityArgs) -> Result<Density> {
    let density = match (&d.density, &d.density_file) {
        (Some(DensityName::TwoGaussians), None) => Density::two_gaussians(),
        (Some(DensityName::ThreeGaussians), None) => Density::three_gaussians(),
        (Some(DensityName::Uniform), None) => Density::uniform(0.0, 1.0),
        (None, Some(p)) => read_toml::<Density>(p)?,
        _ => return Err(param("give exactly one of --density and --density-file")),
    };
    density.validate()?;
    Ok(density)
}

pub fn oracle_cmd(args: &OracleArgs) -> Result<Run> {
    let mut run = Run::new();
    let density = load_density(&args.density)?;
    let model = quadrature_operator(&density, args.epsilon, args.density.grid_size)?;
    for w in &model.warnings {
        run.artifacts.warn(w.clone());
    }
    let a = &mut run.artifacts;
    a.summary("density", serde_json::to_value(&density).expect("density serializes"));
    a.summary("grid_size", json!(model.len()));
    a.summary("truncated_mass", num(model.truncated_mass));
    a.summary("epsilon", num(args.epsilon));
    match args.mode {
        OracleMode::Eigen => {
            let r = reference_eigenfunctions(&model, args.q)?;
            let mut header = vec!["x".to_string(), "weight".to_string()];
            header.extend((0..=args.q).map(|l| format!("psi_{l}")));
            let mut t = Table::with_columns(header);
            for i in 0..model.len() {
                let mut cells = vec![Cell::F(model.grid[i]), Cell::F(model.weights[i])];
                cells.extend((0..=args.q).map(|l| Cell::F(r.decomposition.psi[[i, l]])));
                t.row(&cells);
            }
            a.add("reference.csv", t.into_bytes());
            a.add("eigenvalues.csv", eigenvalue_table(&r.decomposition, 1));
            a.summary("eigenvalues", nums(r.eigenvalues().iter().copied()));
            a.invariants
                .insert("eigen_residual_max".into(), num(r.decomposition.max_residual));
        }
        OracleMode::Evolve => {
            if args.times.is_empty() {
                return Err(param("give at least one time"));
            }
            let x0 = (0..model.len())
                .min_by(|&i, &j| (model.grid[i] - args.x0).abs().total_cmp(&(model.grid[j] - args.x0).abs()))
                .expect("nonempty grid");
            let limit = squared_density_limit(&model);
            let mut cols = Vec::new();
            let mut per_time = Vec::new();
            for &t in &args.times {
                let e = evolve_density(&model, t, x0)?;
                per_time.push(json!({
                    "t": num(t),
                    "steps": e.m,
                    "modes": e.mode_count(1e-3),
                    "tv_to_limit": num(total_variation(e.probabilities.view(), limit.view())),
                }));
                cols.push(e.density);
            }
            let mut header = vec!["x".to_string(), "limit".to_string()];
            header.extend(args.times.iter().map(|t| format!("t={t}")));
            let mut t = Table::with_columns(header);
            let limit_density: Array1<f64> = &limit / model.spacing;
            for i in 0..model.len() {
                let mut cells = vec![Cell::F(model.grid[i]), Cell::F(limit_density[i])];
                cells.extend(cols.iter().map(|c| Cell::F(c[i])));
                t.row(&cells);
            }
            a.add("evolution.csv", t.into_bytes());
            a.summary("x0", num(model.grid[x0]));
            a.summary("times", Value::Array(per_time));
        }
        OracleMode::Loss => {
            let path = args.input.as_ref().ok_or_else(|| param("loss needs --input"))?;
            let grid = args.grid.as_ref().ok_or_else(|| param("loss needs --grid"))?;
            let cloud = PointCloud::read_csv(open(path)?, false)?;
            if cloud.dim() != 1 {
                return Err(param("loss needs a one-dimensional sample"));
            }
            let reference = reference_eigenfunctions(&model, (args.q.max(40)).min(model.len() - 1))?;
            let dict = default_dictionary(&reference);
            let mut t = Table::new(&["epsilon", "loss_lower_bound", "argmax"]);
            let mut values = Vec::new();
            for &eps in &grid.0 {
                let m = build_markov(&build_kernel(&cloud, eps)?)?;
                let dec = decompose_with(&m, args.q, EigenSolver::Auto)?;
                let est = extend_to_grid(&cloud, &dec, &model)?;
                let l = estimate_loss(&est, &reference, &model, args.t, args.q, &dict)?;
                t.row(&[Cell::F(eps), Cell::F(l.value), Cell::U(l.argmax as u64)]);
                values.push(l.value);
            }
            a.add("loss.csv", t.into_bytes());
            a.summary("loss_lower_bound", nums(values));
            a.summary("dictionary_size", json!(dict.len()));
        }
    }
    Ok(run)
}

pub fn convergence_cmd(args: &ConvergenceArgs) -> Result<Run> {
    let mut run = Run::new();
    let density = load_density(&args.density)?;
    if args.seeds == 0 {
        return Err(param("need at least one seed"));
    }
    let model = quadrature_operator(&density, args.reference_epsilon, args.density.grid_size)?;
    for w in &model.warnings {
        run.artifacts.warn(w.clone());
    }
    let reference = reference_eigenfunctions(&model, args.ell)?;
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|s| args.common.seed + s).collect();
    let study = convergence_study(&density, args.n, &args.grid.0, &seeds, args.ell, &reference)?;
    let mut t = Table::new(&["seed", "epsilon", "error"]);
    for (s, row) in seeds.iter().zip(&study.errors) {
        for (e, v) in args.grid.0.iter().zip(row) {
            t.row(&[Cell::U(*s), Cell::F(*e), Cell::F(*v)]);
        }
    }
    run.artifacts.add("errors.csv", t.into_bytes());
    let mean = study.mean_curve();
    let mut t = Table::new(&["epsilon", "mean_error"]);
    for (e, v) in args.grid.0.iter().zip(&mean) {
        t.row(&[Cell::F(*e), Cell::F(*v)]);
    }
    run.artifacts.add("curve.csv", t.into_bytes());
    let best = study.argmin_for(&(0..seeds.len()).collect::<Vec<_>>());
    let a = &mut run.artifacts;
    a.summary("density", serde_json::to_value(&density).expect("density serializes"));
    a.summary("mean_error", nums(mean));
    a.summary("argmin_epsilon", num(args.grid.0[best]));
    a.summary("reference_eigenvalue", num(reference.eigenvalues()[args.ell]));
    Ok(run)
}
