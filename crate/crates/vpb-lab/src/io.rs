//! Flat key=value configuration files, CSV tables, snapshot dumps and JSON run
//! manifests with SHA-256 checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::limit::ExperimentPlan;
use crate::torus::Torus;
use crate::vpb::{InitialKind, KineticState, Scheme, SimulationConfig};
use crate::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip every double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got `{raw}`", no + 1)))?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate key `{k}`", no + 1)));
        }
    }
    Ok(map)
}

fn render_kv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::validation(key, format!("cannot parse `{v}`"))),
    }
}

fn reject_unknown(map: &BTreeMap<String, String>, known: &[&str]) -> Result<()> {
    match map.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(Error::validation(k, "unknown configuration key")),
        None => Ok(()),
    }
}

pub fn initial_name(k: InitialKind) -> &'static str {
    match k {
        InitialKind::Zero => "zero",
        InitialKind::WellPrepared => "well_prepared",
        InitialKind::KineticPerturbed => "kinetic_perturbed",
        InitialKind::Generic => "generic",
    }
}

pub fn parse_initial(s: &str) -> Result<InitialKind> {
    Ok(match s {
        "zero" => InitialKind::Zero,
        "well_prepared" => InitialKind::WellPrepared,
        "kinetic_perturbed" => InitialKind::KineticPerturbed,
        "generic" => InitialKind::Generic,
        _ => return Err(Error::validation("initial", format!("unknown kind `{s}`"))),
    })
}

pub fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::ExponentialEuler => "exp_euler",
        Scheme::Etd2 => "etd2",
    }
}

pub fn parse_scheme(s: &str) -> Result<Scheme> {
    Ok(match s {
        "exp_euler" => Scheme::ExponentialEuler,
        "etd2" => Scheme::Etd2,
        _ => return Err(Error::validation("scheme", format!("unknown scheme `{s}`"))),
    })
}

const SIM_KEYS: &[&str] =
    &["epsilon", "dim", "modes", "degree", "dt", "T", "z", "eta", "initial", "amplitude", "seed", "nonlinear", "scheme"];

/// Simulation config from a key map; missing keys keep their defaults and `dt`
/// defaults to `min(1e-3, ε²/4)`.
pub fn config_from_kv(map: &BTreeMap<String, String>) -> Result<SimulationConfig> {
    reject_unknown(map, SIM_KEYS)?;
    let mut c = SimulationConfig::default();
    if let Some(v) = get(map, "epsilon")? {
        c.epsilon = v;
        c.dt = crate::vpb::default_dt(v);
    }
    c.dim = get(map, "dim")?.unwrap_or(c.dim);
    c.modes = get(map, "modes")?.unwrap_or(c.modes);
    c.degree = get(map, "degree")?.unwrap_or(c.degree);
    c.dt = get(map, "dt")?.unwrap_or(c.dt);
    c.t_final = get(map, "T")?.unwrap_or(c.t_final);
    c.z = get(map, "z")?.unwrap_or(c.z);
    c.eta = get(map, "eta")?.unwrap_or(c.eta);
    if let Some(s) = map.get("initial") {
        c.initial = parse_initial(s)?;
    }
    c.amplitude = get(map, "amplitude")?.unwrap_or(c.amplitude);
    c.seed = get(map, "seed")?.unwrap_or(c.seed);
    c.nonlinear = get(map, "nonlinear")?.unwrap_or(c.nonlinear);
    if let Some(s) = map.get("scheme") {
        c.scheme = parse_scheme(s)?;
    }
    Ok(c)
}

pub fn config_to_string(c: &SimulationConfig) -> String {
    render_kv(&[
        ("epsilon", fmt_f64(c.epsilon)),
        ("dim", c.dim.to_string()),
        ("modes", c.modes.to_string()),
        ("degree", c.degree.to_string()),
        ("dt", fmt_f64(c.dt)),
        ("T", fmt_f64(c.t_final)),
        ("z", fmt_f64(c.z)),
        ("eta", fmt_f64(c.eta)),
        ("initial", initial_name(c.initial).into()),
        ("amplitude", fmt_f64(c.amplitude)),
        ("seed", c.seed.to_string()),
        ("nonlinear", c.nonlinear.to_string()),
        ("scheme", scheme_name(c.scheme).into()),
    ])
}

pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    config_from_kv(&parse_kv(text)?)
}

const PLAN_KEYS: &[&str] = &[
    "eps_list", "dim", "modes", "degree", "eta", "z", "initial", "amplitude", "seed", "T", "s", "ell", "scheme",
    "fluid_dt",
];

pub fn parse_eps_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::validation("eps_list", format!("cannot parse `{t}`"))))
        .collect()
}

pub fn plan_from_kv(map: &BTreeMap<String, String>) -> Result<ExperimentPlan> {
    reject_unknown(map, PLAN_KEYS)?;
    let mut p = ExperimentPlan::default();
    if let Some(s) = map.get("eps_list") {
        p.epsilons = parse_eps_list(s)?;
    }
    p.dim = get(map, "dim")?.unwrap_or(p.dim);
    p.modes = get(map, "modes")?.unwrap_or(p.modes);
    p.degree = get(map, "degree")?.unwrap_or(p.degree);
    p.eta = get(map, "eta")?.unwrap_or(p.eta);
    p.z = get(map, "z")?.unwrap_or(p.z);
    if let Some(s) = map.get("initial") {
        p.initial = parse_initial(s)?;
    }
    p.amplitude = get(map, "amplitude")?.unwrap_or(p.amplitude);
    p.seed = get(map, "seed")?.unwrap_or(p.seed);
    p.t_final = get(map, "T")?.unwrap_or(p.t_final);
    p.s = get(map, "s")?.unwrap_or(p.s);
    p.ell = get(map, "ell")?.unwrap_or(p.ell);
    if let Some(s) = map.get("scheme") {
        p.scheme = parse_scheme(s)?;
    }
    p.fluid_dt = get(map, "fluid_dt")?.unwrap_or(p.fluid_dt);
    Ok(p)
}

pub fn plan_to_string(p: &ExperimentPlan) -> String {
    render_kv(&[
        ("eps_list", p.epsilons.iter().map(|e| fmt_f64(*e)).collect::<Vec<_>>().join(",")),
        ("dim", p.dim.to_string()),
        ("modes", p.modes.to_string()),
        ("degree", p.degree.to_string()),
        ("eta", fmt_f64(p.eta)),
        ("z", fmt_f64(p.z)),
        ("initial", initial_name(p.initial).into()),
        ("amplitude", fmt_f64(p.amplitude)),
        ("seed", p.seed.to_string()),
        ("T", fmt_f64(p.t_final)),
        ("s", p.s.to_string()),
        ("ell", p.ell.to_string()),
        ("scheme", scheme_name(p.scheme).into()),
        ("fluid_dt", fmt_f64(p.fluid_dt)),
    ])
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

/// Table with a header row and fixed column order; numbers in 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// One CSV cell.
pub enum Cell {
    F(f64),
    I(i64),
    U(usize),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::I(x) => x.to_string(),
            Cell::U(x) => x.to_string(),
            Cell::S(x) => x.clone(),
        }
    }
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells.iter().map(Cell::render).collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        w.write_record(&self.header).map_err(fail)?;
        for r in &self.rows {
            w.write_record(r).map_err(fail)?;
        }
        w.into_inner().map_err(|e| Error::Parse(format!("csv: {e}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let fail = |e: csv::Error| Error::Parse(format!("csv: {e}"));
        let header = r.headers().map_err(fail)?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec.map_err(fail)?.iter().map(String::from).collect());
        }
        Ok(Table { header, rows })
    }

    /// Numeric column by name.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| r[c].parse().map_err(|_| Error::Parse(format!("column `{name}`: bad number `{}`", r[c]))))
            .collect()
    }
}

/// Snapshot dump: one row per (mode, Hermite index), modes in lexicographic
/// order, Hermite flat index ascending, real and imaginary parts side by side.
pub fn snapshot_table(torus: &Torus, state: &KineticState) -> Table {
    let mut t = Table::new(&["t", "mode", "n1", "n2", "alpha", "re", "im"]);
    for (i, g) in state.g.iter().enumerate() {
        let n = torus.mode(i);
        for (a, z) in g.iter().enumerate() {
            t.push(vec![Cell::F(state.t), Cell::U(i), Cell::I(n[0]), Cell::I(n[1]), Cell::U(a), Cell::F(z.re), Cell::F(z.im)]);
        }
    }
    t
}

/// Checksummed output file entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one command invocation, enough to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub ledger: Option<serde_json::Value>,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_s: f64,
    pub workers: usize,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            ledger: None,
            outputs: Vec::new(),
            wall_clock_s: 0.0,
            workers: rayon::current_num_threads(),
        }
    }
}

/// Output directory writer that refuses to overwrite files and records checksums.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    pub files: Vec<OutputFile>,
}

impl OutputDir {
    /// Create `root`; an existing `manifest.json` there is a collision.
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let m = root.join("manifest.json");
        if m.exists() {
            return Err(Error::validation("out-dir", format!("{} already holds a manifest", root.display())));
        }
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        if self.files.iter().any(|f| f.path == name) || path.exists() {
            return Err(Error::validation("out-dir", format!("output path collision: {}", path.display())));
        }
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push(OutputFile { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(path)
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write(name, &table.to_bytes()?)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        self.write(name, &bytes)
    }

    /// Write `manifest.json` listing every file written so far.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = self.files.clone();
        let path = self.root.join("manifest.json");
        let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

/// Recompute checksums of every output listed in a manifest; returns mismatching paths.
pub fn verify_manifest(root: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for f in &manifest.outputs {
        let p = root.join(&f.path);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        if sha256_hex(&bytes) != f.sha256 {
            bad.push(f.path.clone());
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn default_config_round_trips() {
        let c = SimulationConfig::default();
        let text = config_to_string(&c);
        assert_eq!(parse_config(&text).unwrap(), c);
        assert_eq!(config_to_string(&parse_config(&text).unwrap()), text);
    }

    #[test]
    fn comments_and_defaults() {
        let c = parse_config("# smoke\nepsilon = 0.1  # small\n\nT = 2\n").unwrap();
        assert_eq!(c.epsilon, 0.1);
        assert_eq!(c.t_final, 2.0);
        assert_eq!(c.dt, crate::vpb::default_dt(0.1));
    }

    #[test]
    fn bad_input_names_the_field() {
        match parse_config("epsilon = abc") {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "epsilon"),
            other => panic!("{other:?}"),
        }
        match parse_config("colour = red") {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "colour"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("epsilon 0.1"), Err(Error::Parse(_))));
        assert!(matches!(parse_config("T = 1\nT = 2"), Err(Error::Parse(_))));
    }

    #[test]
    fn plan_round_trips() {
        let p = ExperimentPlan::default();
        let text = plan_to_string(&p);
        assert_eq!(plan_from_kv(&parse_kv(&text).unwrap()).unwrap(), p);
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["epsilon", "s"]);
        t.push(vec![Cell::F(0.1), Cell::F(1.0 / 3.0)]);
        let back = Table::parse(std::str::from_utf8(&t.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back.column("s").unwrap()[0], 1.0 / 3.0);
        assert!(back.column("x").is_err());
    }

    #[test]
    fn output_dir_detects_collisions() {
        let dir = std::env::temp_dir().join(format!("vpb-io-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let mut out = OutputDir::create(&dir).unwrap();
        out.write("a.csv", b"x\n1\n").unwrap();
        assert!(out.write("a.csv", b"y").is_err());
        let m = out.finish(RunManifest::new("test", serde_json::json!({}), 1)).unwrap();
        assert!(verify_manifest(&dir, &m).unwrap().is_empty());
        assert!(OutputDir::create(&dir).is_err());
        fs::write(dir.join("a.csv"), b"tampered").unwrap();
        assert_eq!(verify_manifest(&dir, &m).unwrap(), vec!["a.csv".to_string()]);
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn floats_round_trip_through_text(x in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }

        #[test]
        fn configs_round_trip(eps in 1e-3f64..1.0, t in 0.0f64..10.0, z in -1.0f64..1.0, seed in 0u64..1000) {
            let c = SimulationConfig { epsilon: eps, t_final: t, z, seed, dt: eps * 0.01, ..Default::default() };
            prop_assert_eq!(parse_config(&config_to_string(&c)).unwrap(), c);
        }
    }
}
