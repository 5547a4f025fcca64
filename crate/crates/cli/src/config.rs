use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stein_scanmatch::fusion::FilterConfig;
use stein_scanmatch::oracle::McConfig;
use stein_scanmatch::scenes::{SceneKind, SceneSpec, TrajectorySpec, Waypoint};
use stein_scanmatch::stein::SolverMode;
use stein_scanmatch::{Error, SolverConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Directory of `<timestamp>.csv` / `.ply` body-frame scans.
    pub scans: Option<PathBuf>,
    /// CSV rows `t,ax,ay,az,gx,gy,gz`.
    pub imu: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub particles: Vec<usize>,
    pub seeds: Vec<u64>,
    pub modes: Vec<SolverMode>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            particles: vec![1, 5, 10, 30],
            seeds: (0..5).collect(),
            modes: vec![SolverMode::Svn, SolverMode::Svgd],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub solver: SolverConfig,
    pub filter: FilterConfig,
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub oracle: McConfig,
    pub ablation: AblationConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            solver: SolverConfig::default(),
            filter: FilterConfig::default(),
            scene: SceneSpec::new(SceneKind::Corridor).with_offset(stein_scanmatch::Twist::from_slice(
                &[0.0, 0.0, 0.02, 0.1, 0.05, 0.0],
            )),
            trajectory: default_trajectory(),
            oracle: McConfig::default(),
            ablation: AblationConfig::default(),
            io: IoConfig::default(),
        }
    }
}

/// Six seconds along the corridor at 1 m/s with a slight turn.
pub fn default_trajectory() -> TrajectorySpec {
    TrajectorySpec {
        waypoints: vec![
            Waypoint {
                time: 0.0,
                rotation: [0.0; 3],
                translation: [-3.0, 0.0, 0.0],
            },
            Waypoint {
                time: 6.0,
                rotation: [0.0, 0.0, 0.1],
                translation: [3.0, 0.2, 0.0],
            },
        ],
        hold: 0.0,
        scan_rate: 5.0,
        imu_rate: 200.0,
        imu_noise: Default::default(),
        resample_scans: true,
        seed: 0,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.solver.validate()?;
        self.filter.validate()?;
        self.scene.validate()?;
        if self.ablation.particles.contains(&0) {
            return Err(Error::InvalidConfig("ablation particle counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = RunConfig::parse("[solver]\nparticle_cuont = 5\n").unwrap_err();
        assert!(err.contains("particle_cuont"), "{err}");
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = RunConfig::parse("seed = 3\n[solver]\nparticle_count = 5\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.solver.particle_count, 5);
        assert_eq!(c.solver.max_iterations, SolverConfig::default().max_iterations);
    }
}
