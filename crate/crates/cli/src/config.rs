//! TOML run configuration. Every field has a default; command-line flags
//! override whatever the file sets.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use topolevel::evolve2d::EvolutionConfig;
use topolevel::evolve3d::Evolution3DConfig;
use topolevel::render3d::Shading;
use topolevel::scenarios::{recon_shading, RECON_BACKGROUND};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub evolve2d: EvolutionConfig,
    pub evolve3d: Evolution3DConfig,
    pub vectorize: VectorizeConfig,
    pub recon3d: ReconConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let recon = topolevel::scenarios::recon_config();
        Self {
            seed: 0,
            evolve2d: EvolutionConfig { color_refit_every: 10, ..EvolutionConfig::default() },
            evolve3d: recon,
            vectorize: VectorizeConfig::default(),
            recon3d: ReconConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorizeConfig {
    /// Polyline simplification tolerance in pixels.
    pub simplify_tol: f64,
    /// Write a composite frame every this many iterations; 0 disables.
    pub frame_every: usize,
}

impl Default for VectorizeConfig {
    fn default() -> Self {
        Self { simplify_tol: 0.25, frame_every: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    /// Grid nodes per axis.
    pub grid: usize,
    /// Rendered image width and height for synthetic views.
    pub res: usize,
    /// Half extent of the cubic grid in world units.
    pub half: f64,
    /// Initial sphere radius as a fraction of `half`.
    pub init_radius: f64,
    /// Write an OBJ snapshot every this many iterations; 0 keeps only the final mesh.
    pub snapshot_every: usize,
    pub background: f64,
    pub shading: Shading,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            res: 64,
            half: 1.0,
            init_radius: 0.72,
            snapshot_every: 0,
            background: RECON_BACKGROUND,
            shading: recon_shading(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let c: RunConfig = toml::from_str("seed = 3\n[evolve2d]\nmax_iters = 7\n[recon3d]\ngrid = 32\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.evolve2d.max_iters, 7);
        assert_eq!(c.evolve2d.dt_cfl, RunConfig::default().evolve2d.dt_cfl);
        assert_eq!(c.recon3d.grid, 32);
        assert_eq!(c.recon3d.res, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[evolve2d]\nspeed = 1\n").is_err());
    }

    #[test]
    fn shading_round_trips() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }
}
