//! Experiment files, seed-field generators and report emission.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{KTBasis, Preset};
use crate::elimination::EliminationConfig;
use crate::fourier::{FourierError, FourierField, MultiIndex, NormKind, Window};
use crate::renorm::{
    renorm_iterate, IterStatus, OverflowPolicy, RenormConfig, RescaleMode, Trajectory,
};
use crate::resonance::ResonanceParams;
use crate::spectral::{project_stable_unstable, shoot_stable};
use crate::Error;

/// `golden`, `plastic`, or `file:PATH`; an optional power may follow as `golden^2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BasisRef {
    pub source: BasisSource,
    pub power: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BasisSource {
    Preset(Preset),
    File(PathBuf),
}

impl TryFrom<String> for BasisRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<BasisRef> for String {
    fn from(b: BasisRef) -> String {
        let base = match &b.source {
            BasisSource::Preset(Preset::Golden) => "golden".to_string(),
            BasisSource::Preset(Preset::Plastic) => "plastic".to_string(),
            BasisSource::File(p) => format!("file:{}", p.display()),
        };
        if b.power == 1 {
            base
        } else {
            format!("{base}^{}", b.power)
        }
    }
}

impl std::str::FromStr for BasisRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, power) = match s.rsplit_once('^') {
            Some((n, p)) if !n.starts_with("file:") || !p.contains('/') => {
                let p: u32 = p.parse().map_err(|_| format!("bad basis power in {s:?}"))?;
                (n, p)
            }
            _ => (s, 1),
        };
        if power == 0 {
            return Err("basis power must be at least 1".into());
        }
        let source = match name {
            "golden" => BasisSource::Preset(Preset::Golden),
            "plastic" => BasisSource::Preset(Preset::Plastic),
            other => match other.strip_prefix("file:") {
                Some(path) => BasisSource::File(PathBuf::from(path)),
                None => {
                    return Err(format!(
                        "unknown basis {other:?}; use golden, plastic or file:PATH"
                    ))
                }
            },
        };
        Ok(BasisRef { source, power })
    }
}

#[derive(Deserialize)]
struct BasisFile {
    #[serde(rename = "T")]
    t: crate::linalg::IntMatrix,
}

impl BasisRef {
    /// Loads and certifies the basis; file sources are re-certified from `T` alone.
    pub fn load(&self) -> Result<KTBasis, Error> {
        match &self.source {
            BasisSource::Preset(p) => Ok(KTBasis::preset(*p, self.power)?),
            BasisSource::File(path) => {
                let text = read(path)?;
                let parsed: BasisFile = parse_json(&text, path)?;
                Ok(KTBasis::from_matrix_power(parsed.t, self.power)?)
            }
        }
    }
}

/// `"auto"` or an explicit value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::Auto(AutoTag::Auto)
    }
}

impl std::str::FromStr for Sigma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(Sigma::Auto(AutoTag::Auto))
        } else {
            s.parse()
                .map(Sigma::Value)
                .map_err(|_| format!("sigma must be a number or \"auto\", got {s:?}"))
        }
    }
}

/// Configuration keys shared by every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigSpec {
    #[serde(rename = "K")]
    pub k: u32,
    pub rho: f64,
    pub rho_prime: f64,
    pub sigma: Sigma,
    /// Required with an explicit sigma; derived otherwise.
    pub kappa: Option<f64>,
    pub max_iters: usize,
    pub min_rescale: f64,
    pub rescale_mode: RescaleMode,
    pub overflow: OverflowPolicy,
    pub elim: Option<EliminationConfig>,
}

impl Default for ConfigSpec {
    fn default() -> Self {
        Self {
            k: 15,
            rho: 0.6,
            rho_prime: 0.5,
            sigma: Sigma::default(),
            kappa: None,
            max_iters: 10,
            min_rescale: 0.1,
            rescale_mode: RescaleMode::MeanDual,
            overflow: OverflowPolicy::Drop,
            elim: None,
        }
    }
}

impl ConfigSpec {
    pub fn build(&self, basis: KTBasis) -> Result<RenormConfig, Error> {
        let mut cfg = match self.sigma {
            Sigma::Auto(_) => RenormConfig::auto(basis, self.k, self.rho, self.rho_prime)?,
            Sigma::Value(sigma) => {
                let kappa = self.kappa.ok_or_else(|| Error::Config {
                    message: "an explicit sigma needs an explicit kappa".into(),
                    path: Some("config.kappa".into()),
                })?;
                let params = ResonanceParams::new(basis.omega.clone(), sigma, kappa)?;
                RenormConfig::new(basis, params, self.k, self.rho, self.rho_prime)?
            }
        };
        if let Some(e) = &self.elim {
            cfg.elim = EliminationConfig {
                rho: self.rho,
                rho_prime: self.rho_prime,
                ..e.clone()
            };
        }
        cfg.max_iters = self.max_iters;
        cfg.min_rescale = self.min_rescale;
        cfg.rescale_mode = self.rescale_mode;
        cfg.overflow = self.overflow;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: Vec<i32>,
    pub amp: f64,
    /// Coefficient direction; defaults to the first unit vector.
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    /// Phase in units of a full turn.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub count: usize,
    pub amp: f64,
    pub seed: u64,
    /// Largest `‖k‖` drawn; defaults to `min(K, 5)`.
    #[serde(default)]
    pub radius: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenSpec {
    /// 2 ≤ j ≤ d, selecting `ω^(j)`; the real part is used.
    pub j: usize,
    pub amp: f64,
}

/// Perturbation generator: `ω` plus any combination of explicit modes,
/// random modes and constant eigen-directions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldGen {
    pub name: Option<String>,
    /// Load the field from a JSON file instead.
    pub file: Option<String>,
    /// Only `"constant"` (the bare `ω`) is recognised.
    pub preset: Option<String>,
    pub modes: Vec<ModeSpec>,
    pub random: Option<RandomSpec>,
    pub eigen: Vec<EigenSpec>,
    /// Defaults to true; Hermitian partners are added automatically.
    pub real: Option<bool>,
    /// Rescale the perturbation `X − ω` to this `‖·‖'_ρ` norm.
    pub norm_prime: Option<f64>,
    /// Run the stable-manifold shooting with this many target steps first.
    pub shoot: Option<usize>,
}

pub fn generate_field(
    gen: &FieldGen,
    basis: &KTBasis,
    radius: u32,
    rho: f64,
) -> Result<FourierField, Error> {
    let d = basis.d;
    if let Some(path) = &gen.file {
        let text = read(Path::new(path))?;
        let f = FourierField::from_json(&text)?;
        if f.dim() != d || f.trunc_radius() != radius {
            return Err(Error::Config {
                message: format!(
                    "field file {path} has d = {}, K = {}; expected d = {d}, K = {radius}",
                    f.dim(),
                    f.trunc_radius()
                ),
                path: Some("seeds.file".into()),
            });
        }
        return Ok(f);
    }
    if let Some(p) = &gen.preset {
        if p != "constant" {
            return Err(Error::Config {
                message: format!("unknown preset {p:?}"),
                path: Some("seeds.preset".into()),
            });
        }
    }
    let real = gen.real.unwrap_or(true);
    let w = Window::get(d, radius);
    let mut f = FourierField::constant(&basis.omega, radius).with_real(real);

    let add_mode = |f: &mut FourierField, k: &[i32], c: Vec<Complex64>| -> Result<(), Error> {
        let mi = MultiIndex(k.to_vec());
        let q = w.position(k).ok_or(FourierError::ModeOutOfWindow {
            k: mi.clone(),
            radius,
        })?;
        let cur = f.coeff_at(q).to_vec();
        let sum: Vec<Complex64> = cur.iter().zip(&c).map(|(a, b)| a + b).collect();
        f.set_coeff(&mi, &sum)?;
        if real && !mi.is_zero() {
            let neg = mi.neg();
            let nq = w.negation(q);
            let cur = f.coeff_at(nq).to_vec();
            let sum: Vec<Complex64> = cur.iter().zip(&c).map(|(a, b)| a + b.conj()).collect();
            f.set_coeff(&neg, &sum)?;
        }
        Ok(())
    };

    for m in &gen.modes {
        if m.k.len() != d {
            return Err(FourierError::DimensionMismatch {
                expected: d,
                found: m.k.len(),
            }
            .into());
        }
        let dir = match &m.v {
            Some(v) if v.len() == d => v.clone(),
            Some(v) => {
                return Err(FourierError::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                }
                .into())
            }
            None => {
                let mut e = vec![0.0; d];
                e[0] = 1.0;
                e
            }
        };
        let ph = Complex64::cis(2.0 * std::f64::consts::PI * m.phase) * m.amp;
        let c = dir.iter().map(|&x| ph * x).collect();
        add_mode(&mut f, &m.k, c)?;
    }

    if let Some(r) = &gen.random {
        let rad = r.radius.unwrap_or(radius.min(5)).min(radius);
        let w = Window::get(d, rad);
        // One representative per ±k pair when real.
        let candidates: Vec<Vec<i32>> = w
            .positions()
            .filter(|&q| q != w.zero_position() && (!real || q < w.negation(q)))
            .map(|q| w.mode(q).to_vec())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
        for _ in 0..r.count {
            if candidates.is_empty() {
                break;
            }
            let k = &candidates[rng.gen_range(0..candidates.len())];
            let c: Vec<Complex64> = (0..d)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * r.amp)
                .collect();
            add_mode(&mut f, k, c)?;
        }
    }

    for e in &gen.eigen {
        if e.j < 2 || e.j > d {
            return Err(Error::Config {
                message: format!("eigen index j = {} outside 2..={d}", e.j),
                path: Some("seeds.eigen.j".into()),
            });
        }
        let v: Vec<Complex64> = basis.evecs[e.j - 1]
            .iter()
            .map(|z| Complex64::new(z.re * e.amp, 0.0))
            .collect();
        add_mode(&mut f, &vec![0; d], v)?;
    }
    if let Some(target) = gen.norm_prime {
        let omega = FourierField::constant(&basis.omega, radius);
        let pert = f.sub(&omega);
        let n = pert.norm(NormKind::Prime(rho));
        if !(target >= 0.0 && target.is_finite()) || n == 0.0 {
            return Err(Error::Config {
                message: format!("cannot rescale a perturbation of norm {n} to {target}"),
                path: Some("seeds.norm_prime".into()),
            });
        }
        f = omega.add(&pert.scale(target / n)).with_real(real);
    }
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the working directory.
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub basis: BasisRef,
    #[serde(default)]
    pub config: ConfigSpec,
    pub seeds: Vec<FieldGen>,
    pub outputs: OutputSpec,
}

impl ExperimentSpec {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self, Error> {
        parse_json(text, origin)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_json(&read(path)?, path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub name: String,
    pub status: String,
    pub iterations: usize,
    pub final_norm_prime: Option<f64>,
    /// Successive ratios of the unstable (constant) coordinate.
    pub unstable_ratios: Vec<f64>,
    pub shoot_iterations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub basis: String,
    pub sigma: f64,
    pub kappa: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub seeds: Vec<SeedSummary>,
}

impl ExperimentSummary {
    pub fn all_ok(&self) -> bool {
        self.seeds.iter().all(|s| s.error.is_none())
    }
}

/// Writes the iteration CSV for one trajectory.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s =
        String::from("iter,norm_prime,nonconstant_norm,rescale_re,rescale_im,mode_count,status\n");
    let n = traj.reports.len();
    for (i, r) in traj.reports.iter().enumerate() {
        let status = if i + 1 == n {
            traj.status.as_str()
        } else {
            "OK"
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter,
            r.norm_prime,
            r.nonconstant_norm,
            r.rescale.re,
            r.rescale.im,
            r.mode_count,
            status
        ));
    }
    if n == 0 {
        s.push_str(&format!("0,,,,,,{}\n", traj.status.as_str()));
    }
    s
}

/// `⟨v_n, v_{n+1}⟩/⟨v_n, v_n⟩` for the unstable parts `v_n = P^u Rⁿ(X)`.
pub fn unstable_ratios(traj: &Trajectory, basis: &KTBasis) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = traj
        .fields
        .iter()
        .map(|f| {
            let (_, u) = project_stable_unstable(f, basis);
            u.mean().iter().map(|z| z.re).collect()
        })
        .collect();
    parts
        .windows(2)
        .filter_map(|w| {
            let nn: f64 = w[0].iter().map(|x| x * x).sum();
            (nn > 0.0).then(|| w[0].iter().zip(&w[1]).map(|(a, b)| a * b).sum::<f64>() / nn)
        })
        .collect()
}

fn seed_name(gen: &FieldGen, idx: usize) -> String {
    gen.name.clone().unwrap_or_else(|| format!("seed{idx}"))
}

/// Runs every seed, writing `spec.json`, `summary.json` and `<seed>/traj.csv`
/// under the output directory (resolved against `base_dir`).
pub fn run_experiment(spec: &ExperimentSpec, base_dir: &Path) -> Result<ExperimentSummary, Error> {
    let basis = spec.basis.load()?;
    let cfg = spec.config.build(basis.clone())?;
    let out = base_dir.join(&spec.outputs.dir);
    create_dir(&out)?;
    write(&out.join("spec.json"), &to_pretty(spec))?;

    let names: std::collections::BTreeSet<String> = spec
        .seeds
        .iter()
        .enumerate()
        .map(|(i, g)| seed_name(g, i))
        .collect();
    if names.len() != spec.seeds.len() {
        return Err(Error::Config {
            message: "seed names must be unique".into(),
            path: Some("seeds".into()),
        });
    }
    // Generation errors are configuration errors and abort before any work.
    let fields = spec
        .seeds
        .iter()
        .map(|g| generate_field(g, &basis, cfg.k, cfg.rho()))
        .collect::<Result<Vec<_>, _>>()?;

    let results: Vec<(SeedSummary, Option<Trajectory>)> = spec
        .seeds
        .par_iter()
        .zip(fields.par_iter())
        .enumerate()
        .map(|(i, (gen, field))| {
            let name = seed_name(gen, i);
            let mut start = field.clone();
            let mut shoot_iterations = None;
            if let Some(n) = gen.shoot {
                let f = field.sub(&cfg.omega_field()).with_real(field.is_real());
                match shoot_stable(&f, &cfg, n) {
                    Ok(s) => {
                        shoot_iterations = Some(s.iterations);
                        start = s.field;
                    }
                    Err(e) => {
                        return (
                            SeedSummary {
                                name,
                                status: IterStatus::Failed.as_str().into(),
                                iterations: 0,
                                final_norm_prime: None,
                                unstable_ratios: vec![],
                                shoot_iterations: None,
                                error: Some(e.to_string()),
                            },
                            None,
                        )
                    }
                }
            }
            let traj = renorm_iterate(&start, &cfg);
            let summary = SeedSummary {
                name,
                status: traj.status.as_str().into(),
                iterations: traj.reports.len(),
                final_norm_prime: traj.reports.last().map(|r| r.norm_prime),
                unstable_ratios: unstable_ratios(&traj, &basis),
                shoot_iterations,
                error: traj.error.clone(),
            };
            (summary, Some(traj))
        })
        .collect();

    let mut seeds = Vec::new();
    for (summary, traj) in results {
        let dir = out.join(&summary.name);
        create_dir(&dir)?;
        let csv = match &traj {
            Some(t) => trajectory_csv(t),
            None => format!(
                "iter,norm_prime,nonconstant_norm,rescale_re,rescale_im,mode_count,status\n0,,,,,,{}\n",
                summary.status
            ),
        };
        write(&dir.join("traj.csv"), &csv)?;
        if let Some(t) = &traj {
            if let Some(f) = t.final_field() {
                write(&dir.join("final_field.json"), &f.to_json()?)?;
            }
        }
        seeds.push(summary);
    }
    let summary = ExperimentSummary {
        name: spec.name.clone(),
        basis: String::from(spec.basis.clone()),
        sigma: cfg.params.sigma,
        kappa: cfg.params.kappa,
        k: cfg.k,
        seeds,
    };
    write(&out.join("summary.json"), &to_pretty(&summary))?;
    Ok(summary)
}

pub fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialise");
    s.push('\n');
    s
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> Result<T, Error> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        message: format!("{}: {}", origin.display(), e.inner()),
        path: Some(e.path().to_string()),
    })
}

pub fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
