//! Scenario runner for `rffence`: JSON configs in, CSV tables and PGM
//! heatmaps out.

pub mod config;
pub mod error;
pub mod far;
pub mod heatmap;
pub mod near;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use config::{LoadedScenario, ScenarioKind};
use error::{create_dir, CliError, CliResult};
use output::read_matrix;

#[derive(Debug, Parser)]
#[command(name = "rffence", version, about = "RIS coverage slicing and quiet-zone shaping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and save a beam-steering codebook.
    Codebook {
        #[command(subcommand)]
        action: CodebookCmd,
    },
    /// Far-field slicing.
    Shield {
        #[command(subcommand)]
        action: ShieldCmd,
    },
    /// Near-field quiet zones.
    Quietzone {
        #[command(subcommand)]
        action: QuietzoneCmd,
    },
    /// Render a field heatmap for the scenario.
    Render(Common),
}

#[derive(Debug, Subcommand)]
pub enum CodebookCmd {
    Build(Common),
}

#[derive(Debug, Subcommand)]
pub enum ShieldCmd {
    Run(Common),
    Batch(Common),
    Sweep(Common),
}

#[derive(Debug, Subcommand)]
pub enum QuietzoneCmd {
    Run(Common),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Codebook { action: CodebookCmd::Build(c) }
            | Command::Shield { action: ShieldCmd::Run(c) | ShieldCmd::Batch(c) | ShieldCmd::Sweep(c) }
            | Command::Quietzone { action: QuietzoneCmd::Run(c) }
            | Command::Render(c) => c,
        }
    }
}

fn require_kind(scn: &LoadedScenario, kind: ScenarioKind) -> CliResult<()> {
    if scn.scenario.kind == kind {
        Ok(())
    } else {
        Err(scn.fail("kind", format!("this command needs a {kind:?} scenario")))
    }
}

fn seed(scn: &LoadedScenario, common: &Common) -> CliResult<u64> {
    common
        .seed
        .or(scn.scenario.seed)
        .ok_or_else(|| CliError::config("seed: required for sampled runs (set `seed` or pass --seed)"))
}

/// Runs one command. Thread-pool setup is the caller's business.
pub fn execute(cmd: &Command) -> CliResult<()> {
    let common = cmd.common();
    let scn = LoadedScenario::from_path(&common.config)?;
    let out = create_dir(&common.out)?;
    match cmd {
        Command::Codebook { .. } => {
            require_kind(&scn, ScenarioKind::FarField)?;
            far::cmd_codebook_build(&scn, seed(&scn, common)?, &out)
        }
        Command::Shield { action } => {
            require_kind(&scn, ScenarioKind::FarField)?;
            match action {
                ShieldCmd::Run(_) => far::cmd_shield_run(&scn, &out).map(drop),
                ShieldCmd::Batch(_) => far::cmd_shield_batch(&scn, seed(&scn, common)?, &out).map(drop),
                ShieldCmd::Sweep(_) => far::cmd_shield_sweep(&scn, &out).map(drop),
            }
        }
        Command::Quietzone { .. } => {
            require_kind(&scn, ScenarioKind::QuietZone)?;
            near::cmd_quietzone_run(&scn, &out).map(drop)
        }
        Command::Render(_) => render(&scn, &out),
    }
}

fn render(scn: &LoadedScenario, out: &Path) -> CliResult<()> {
    let phase_file = scn.scenario.render.phase_file.as_deref().map(Path::new);
    let path = out.join("heatmap.pgm");
    match scn.scenario.kind {
        ScenarioKind::FarField => {
            let phase = match phase_file {
                Some(p) => Some(far::phase_from_rows(read_matrix(p)?, p)?),
                None => None,
            };
            far::render_profile(scn, phase, &path)
        }
        ScenarioKind::QuietZone => near::render_slice(scn, phase_file, &path),
    }
}
