//! Experiment configuration: presets per test case, file/flag overlays, and
//! validation of the parameter combinations each study admits.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::PathBuf;
use survem::vem::StabKind;

/// Mesh family used for a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFamily {
    /// Structured triangulations refined by uniform subdivision.
    Tri,
    /// Centroidal Voronoi polygonal meshes.
    Poly,
}

impl fmt::Display for MeshFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshFamily::Tri => write!(f, "tri"),
            MeshFamily::Poly => write!(f, "poly"),
        }
    }
}

impl std::str::FromStr for MeshFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tri" => Ok(MeshFamily::Tri),
            "poly" => Ok(MeshFamily::Poly),
            other => Err(format!("unknown mesh family `{other}` (expected `tri` or `poly`)")),
        }
    }
}

/// Stabilization selection, including the order-dependent default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabChoice {
    /// Pick per order: diagonal-recipe scaling for k >= 3, identity scaling otherwise.
    Default,
    DofiDofi,
    DRecipe,
}

impl StabChoice {
    pub fn resolve(self, k: usize) -> StabKind {
        match self {
            StabChoice::Default => StabKind::default_for_order(k),
            StabChoice::DofiDofi => StabKind::DofiDofi,
            StabChoice::DRecipe => StabKind::DRecipe,
        }
    }
}

impl fmt::Display for StabChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StabChoice::Default => write!(f, "default"),
            StabChoice::DofiDofi => write!(f, "dofi_dofi"),
            StabChoice::DRecipe => write!(f, "d_recipe"),
        }
    }
}

impl std::str::FromStr for StabChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(StabChoice::Default),
            "dofi_dofi" | "dofi-dofi" => Ok(StabChoice::DofiDofi),
            "d_recipe" | "d-recipe" => Ok(StabChoice::DRecipe),
            other => Err(format!(
                "unknown stabilization `{other}` (expected `default`, `dofi_dofi`, or `d_recipe`)"
            )),
        }
    }
}

/// A partially specified configuration, as read from a TOML file or CLI flags.
/// Unset fields fall back to the test-case preset.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub test_case: Option<u8>,
    pub orders: Option<Vec<usize>>,
    pub mesh_family: Option<MeshFamily>,
    pub levels: Option<usize>,
    pub r: Option<f64>,
    pub a: Option<f64>,
    pub freq: Option<u32>,
    pub stab_kind: Option<StabChoice>,
    pub w_hat: Option<[f64; 2]>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub boundary_nodes: Option<usize>,
    pub fit_window: Option<usize>,
    pub output: Option<PathBuf>,
    pub parallel: Option<bool>,
}

impl PartialConfig {
    /// Merge `over` on top of `self`: fields set in `over` win.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            test_case: over.test_case.or(self.test_case),
            orders: over.orders.or(self.orders),
            mesh_family: over.mesh_family.or(self.mesh_family),
            levels: over.levels.or(self.levels),
            r: over.r.or(self.r),
            a: over.a.or(self.a),
            freq: over.freq.or(self.freq),
            stab_kind: over.stab_kind.or(self.stab_kind),
            w_hat: over.w_hat.or(self.w_hat),
            gamma: over.gamma.or(self.gamma),
            seed: over.seed.or(self.seed),
            boundary_nodes: over.boundary_nodes.or(self.boundary_nodes),
            fit_window: over.fit_window.or(self.fit_window),
            output: over.output.or(self.output),
            parallel: over.parallel.or(self.parallel),
        }
    }
}

/// A fully resolved experiment configuration. Every numerical field has a
/// concrete value; `output` and `parallel` are execution details excluded
/// from the reproducibility hash.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub test_case: u8,
    pub orders: Vec<usize>,
    pub mesh_family: MeshFamily,
    pub levels: usize,
    pub r: f64,
    pub a: f64,
    pub freq: u32,
    pub stab_kind: StabChoice,
    pub w_hat: [f64; 2],
    pub gamma: f64,
    pub seed: u64,
    pub boundary_nodes: usize,
    /// Number of finest levels used for least-squares slope fits in the
    /// plots; 0 fits all levels.
    pub fit_window: usize,
    #[serde(skip)]
    pub output: PathBuf,
    #[serde(skip)]
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Hash of every field that affects the numerical results (the output
    /// directory and the parallel switch do not).
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            use fmt::Write;
            write!(hex, "{byte:02x}").unwrap();
        }
        hex
    }
}

/// A configuration problem: reported on stderr and mapped to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Preset for a test case; the starting layer of the resolution stack.
fn preset(test_case: u8) -> Result<PartialConfig, ConfigError> {
    let base = PartialConfig {
        test_case: Some(test_case),
        orders: Some(vec![1, 2, 3, 4]),
        stab_kind: Some(StabChoice::Default),
        w_hat: Some([0.0, 0.0]),
        gamma: Some(0.0),
        seed: Some(42),
        parallel: Some(false),
        ..PartialConfig::default()
    };
    let preset = match test_case {
        1 => PartialConfig {
            mesh_family: Some(MeshFamily::Tri),
            levels: Some(4),
            r: Some(1.1),
            a: Some(0.0),
            freq: Some(5),
            boundary_nodes: Some(8),
            fit_window: Some(0),
            ..base
        },
        2 => PartialConfig {
            mesh_family: Some(MeshFamily::Poly),
            levels: Some(5),
            r: Some(1.1),
            a: Some(0.0),
            freq: Some(5),
            boundary_nodes: Some(8),
            fit_window: Some(0),
            ..base
        },
        3 => PartialConfig {
            mesh_family: Some(MeshFamily::Tri),
            levels: Some(6),
            r: Some(2.0),
            a: Some(0.5),
            freq: Some(5),
            boundary_nodes: Some(8),
            fit_window: Some(2),
            ..base
        },
        4 => PartialConfig {
            mesh_family: Some(MeshFamily::Poly),
            levels: Some(5),
            r: Some(0.0),
            a: Some(0.0),
            freq: Some(0),
            boundary_nodes: Some(64),
            fit_window: Some(3),
            ..base
        },
        other => return Err(err(format!("unknown test case {other} (expected 1..=4)"))),
    };
    Ok(preset)
}

/// Validate fields the user set explicitly, before presets fill the rest.
/// The hemisphere study fixes its geometry and coefficients internally, so
/// explicit surface parameters there are mistakes rather than choices.
fn validate_explicit(test_case: u8, explicit: &PartialConfig) -> Result<(), ConfigError> {
    if test_case == 4 {
        if explicit.r.is_some() || explicit.a.is_some() || explicit.freq.is_some() {
            return Err(err(
                "test case 4 runs on the sphere through fixed stereographic charts; \
                 `r`, `a`, and `freq` cannot be set",
            ));
        }
        if explicit.w_hat.map_or(false, |w| w != [0.0, 0.0]) || explicit.gamma.map_or(false, |g| g != 0.0) {
            return Err(err(
                "test case 4 solves the Laplace problem; `w_hat` and `gamma` must stay zero",
            ));
        }
        if explicit.mesh_family == Some(MeshFamily::Tri) {
            return Err(err("test case 4 uses the polygonal mesh family only"));
        }
    }
    if test_case == 2 && explicit.mesh_family == Some(MeshFamily::Tri) {
        return Err(err(
            "test case 2 studies boundary resolution on fixed polygonal meshes; \
             `mesh_family` must be `poly`",
        ));
    }
    Ok(())
}

/// Validate the fully resolved configuration.
fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.orders.is_empty() {
        return Err(err("`orders` must list at least one order"));
    }
    for &k in &cfg.orders {
        if !(1..=4).contains(&k) {
            return Err(err(format!("order {k} is out of range (supported: 1..=4)")));
        }
    }
    if cfg.levels == 0 {
        return Err(err("`levels` must be at least 1"));
    }
    if cfg.boundary_nodes < 3 {
        return Err(err("`boundary_nodes` must be at least 3"));
    }
    match cfg.test_case {
        1 => {
            if cfg.a != 0.0 {
                return Err(err("test case 1 uses the surface of revolution; `a` must be 0"));
            }
            const ADMITTED: [f64; 3] = [1.1, 1.01, 1.001];
            if !ADMITTED.contains(&cfg.r) {
                return Err(err(format!(
                    "test case 1 admits r in {{1.1, 1.01, 1.001}}, got {}",
                    cfg.r
                )));
            }
            if cfg.levels > 7 {
                return Err(err("test case 1 supports at most 7 refinement levels"));
            }
        }
        2 => {
            if cfg.a != 0.0 {
                return Err(err("test case 2 uses the surface of revolution; `a` must be 0"));
            }
            if cfg.r <= 1.0 {
                return Err(err("test case 2 requires r > 1"));
            }
        }
        3 => {
            if cfg.r != 2.0 || cfg.freq != 5 {
                return Err(err(format!(
                    "test case 3 fixes r = 2 and freq = 5, got r = {}, freq = {}",
                    cfg.r, cfg.freq
                )));
            }
            if cfg.a != 0.5 && cfg.a != 2.0 {
                return Err(err(format!(
                    "test case 3 admits a in {{0.5, 2.0}}, got {}",
                    cfg.a
                )));
            }
            if cfg.levels > 7 {
                return Err(err("test case 3 supports at most 7 refinement levels"));
            }
        }
        4 => {
            if cfg.levels > 6 {
                return Err(err("test case 4 supports at most 6 refinement levels"));
            }
        }
        other => return Err(err(format!("unknown test case {other} (expected 1..=4)"))),
    }
    Ok(())
}

/// Resolve a configuration: preset for the test case, then the config file,
/// then CLI flags, each layer overriding the previous one.
pub fn resolve(
    file: Option<PartialConfig>,
    flags: PartialConfig,
) -> Result<ExperimentConfig, ConfigError> {
    let explicit = file.unwrap_or_default().overlay(flags);
    let test_case = explicit
        .test_case
        .ok_or_else(|| err("`test_case` is required (set --test-case or a config file)"))?;
    validate_explicit(test_case, &explicit)?;
    let full = preset(test_case)?.overlay(explicit);

    let mesh_family = full.mesh_family.expect("preset sets mesh_family");
    let output = full.output.unwrap_or_else(|| {
        PathBuf::from(format!("survem-out/tc{test_case}-{mesh_family}"))
    });
    let cfg = ExperimentConfig {
        test_case,
        orders: full.orders.expect("preset sets orders"),
        mesh_family,
        levels: full.levels.expect("preset sets levels"),
        r: full.r.expect("preset sets r"),
        a: full.a.expect("preset sets a"),
        freq: full.freq.expect("preset sets freq"),
        stab_kind: full.stab_kind.expect("preset sets stab_kind"),
        w_hat: full.w_hat.expect("preset sets w_hat"),
        gamma: full.gamma.expect("preset sets gamma"),
        seed: full.seed.expect("preset sets seed"),
        boundary_nodes: full.boundary_nodes.expect("preset sets boundary_nodes"),
        fit_window: full.fit_window.expect("preset sets fit_window"),
        output,
        parallel: full.parallel.expect("preset sets parallel"),
    };
    validate(&cfg)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(test_case: u8) -> PartialConfig {
        PartialConfig {
            test_case: Some(test_case),
            ..PartialConfig::default()
        }
    }

    #[test]
    fn presets_fill_every_field() {
        for tc in 1..=4u8 {
            let cfg = resolve(None, flags(tc)).unwrap();
            assert_eq!(cfg.test_case, tc);
            assert_eq!(cfg.orders, vec![1, 2, 3, 4]);
            assert_eq!(cfg.seed, 42);
        }
        let tc1 = resolve(None, flags(1)).unwrap();
        assert_eq!(tc1.mesh_family, MeshFamily::Tri);
        assert_eq!(tc1.levels, 4);
        assert_eq!(tc1.r, 1.1);
        assert_eq!(tc1.fit_window, 0);
        let tc2 = resolve(None, flags(2)).unwrap();
        assert_eq!(tc2.mesh_family, MeshFamily::Poly);
        assert_eq!(tc2.levels, 5);
        assert_eq!(tc2.boundary_nodes, 8);
        let tc3 = resolve(None, flags(3)).unwrap();
        assert_eq!(tc3.r, 2.0);
        assert_eq!(tc3.a, 0.5);
        assert_eq!(tc3.levels, 6);
        assert_eq!(tc3.fit_window, 2);
        let tc4 = resolve(None, flags(4)).unwrap();
        assert_eq!(tc4.mesh_family, MeshFamily::Poly);
        assert_eq!(tc4.boundary_nodes, 64);
        assert_eq!(tc4.fit_window, 3);
    }

    #[test]
    fn flags_override_the_config_file_which_overrides_the_preset() {
        let file = PartialConfig {
            test_case: Some(1),
            r: Some(1.01),
            levels: Some(3),
            ..PartialConfig::default()
        };
        let cli = PartialConfig {
            r: Some(1.001),
            ..PartialConfig::default()
        };
        let cfg = resolve(Some(file), cli).unwrap();
        assert_eq!(cfg.r, 1.001);
        assert_eq!(cfg.levels, 3);
        assert_eq!(cfg.a, 0.0);
    }

    #[test]
    fn each_study_rejects_parameters_outside_its_protocol() {
        let bad_r = PartialConfig { r: Some(1.2), ..flags(1) };
        assert!(resolve(None, bad_r).is_err());

        let bad_a = PartialConfig { a: Some(0.7), ..flags(3) };
        assert!(resolve(None, bad_a).is_err());

        let tri_tc2 = PartialConfig { mesh_family: Some(MeshFamily::Tri), ..flags(2) };
        assert!(resolve(None, tri_tc2).is_err());

        let tc4_r = PartialConfig { r: Some(1.1), ..flags(4) };
        assert!(resolve(None, tc4_r).is_err());

        let tc4_advection = PartialConfig { w_hat: Some([1.0, 0.0]), ..flags(4) };
        assert!(resolve(None, tc4_advection).is_err());

        let bad_order = PartialConfig { orders: Some(vec![5]), ..flags(1) };
        assert!(resolve(None, bad_order).is_err());

        assert!(resolve(None, PartialConfig::default()).is_err());
        assert!(resolve(None, flags(7)).is_err());
    }

    #[test]
    fn the_hash_tracks_numerical_fields_but_not_execution_details() {
        let base = resolve(None, flags(1)).unwrap();
        let mut moved = base.clone();
        moved.output = PathBuf::from("elsewhere");
        moved.parallel = true;
        assert_eq!(base.config_hash(), moved.config_hash());

        let reseeded = resolve(
            None,
            PartialConfig { seed: Some(7), ..flags(1) },
        )
        .unwrap();
        assert_ne!(base.config_hash(), reseeded.config_hash());
        assert_eq!(base.config_hash().len(), 16);
    }

    #[test]
    fn toml_files_round_trip_and_unknown_keys_are_rejected() {
        let text = "test_case = 3\na = 2.0\norders = [3, 4]\nstab_kind = \"d_recipe\"\n";
        let parsed: PartialConfig = toml::from_str(text).unwrap();
        let cfg = resolve(Some(parsed), PartialConfig::default()).unwrap();
        assert_eq!(cfg.a, 2.0);
        assert_eq!(cfg.orders, vec![3, 4]);
        assert_eq!(cfg.stab_kind, StabChoice::DRecipe);

        let bad: Result<PartialConfig, _> = toml::from_str("test_case = 1\nspacing = 0.1\n");
        assert!(bad.is_err());
    }
}
