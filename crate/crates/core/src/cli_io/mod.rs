//! Configuration, tabular and figure output, manifests, and the command
//! implementations behind the `conelayer` binary.

mod commands;
mod config;
mod manifest;
mod svg;
mod table;

use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::assembly::AssemblyError;
use crate::geometry::GeometryError;

pub use commands::{cmd_bound, cmd_mesh_export, cmd_plot_modes, cmd_solve, cmd_sweep, Outputs};
pub use config::{parse_config_text, parse_angle_values, AngleUnit, Command, RunConfig, KEYS};
pub use manifest::{sha256_hex, FileEntry, Manifest};
pub use svg::{mode_svg, profiles_svg, sweep_svg, Svg};
pub use table::{
    format_float, read_spectrum_csv, read_sweep_csv, spectrum_csv, spectrum_json, spectrum_rows, sweep_csv,
    sweep_rows, SpectrumRow, SweepRow,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {msg}")]
    Format { what: String, msg: String },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Analysis(_) => "analysis",
            CliError::Geometry(_) => "geometry",
            CliError::Assembly(_) => "assembly",
            CliError::Json(_) => "json",
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() }).to_string()
    }
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}
