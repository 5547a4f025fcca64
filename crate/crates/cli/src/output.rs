use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix6;
use serde::Serialize;
use stein_scanmatch::{Error, Pose};

/// `t x y z qx qy qz qw`.
pub fn tum_line(time: f64, pose: &Pose) -> String {
    let q = pose.rotation.to_quaternion();
    let t = pose.translation;
    format!(
        "{:.9} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
        time, t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

pub fn rows(m: &Matrix6<f64>) -> Vec<[f64; 6]> {
    (0..6)
        .map(|i| std::array::from_fn(|j| m[(i, j)]))
        .collect()
}

pub fn matrix_csv(m: &Matrix6<f64>) -> String {
    let mut s = String::new();
    for r in rows(m) {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.9e}")).collect();
        writeln!(s, "{}", cells.join(",")).unwrap();
    }
    s
}

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, Error> {
        fs::create_dir_all(path)?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, body: &str) -> Result<PathBuf, Error> {
        let p = self.path(name);
        fs::write(&p, body)?;
        log::info!("wrote {}", p.display());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Error> {
        let mut body = serde_json::to_string_pretty(value)
            .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))?;
        body.push('\n');
        self.write(name, &body)
    }
}
