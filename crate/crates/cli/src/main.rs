use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command as ClapCommand};
use conelayer::cli_io::{
    cmd_bound, cmd_mesh_export, cmd_plot_modes, cmd_solve, cmd_sweep, parse_config_text, CliError, Command, Manifest,
    Outputs, RunConfig, KEYS,
};

const SUBCOMMANDS: [(&str, &str); 5] = [
    ("solve", "Converged discrete spectrum at one angle"),
    ("sweep", "Eigenvalue branches over a list or range of angles"),
    ("plot-modes", "Contour plots of the eigenfunctions and their axial profiles"),
    ("bound", "Cylinder lower bound on the eigenvalue count below lambda-bar"),
    ("mesh-export", "Mesh and assembled matrices at the starting truncation"),
];

fn cli() -> ClapCommand {
    let mut sub_args: Vec<Arg> = KEYS
        .iter()
        .map(|&k| Arg::new(k).long(k).value_name("VALUE").allow_hyphen_values(true))
        .collect();
    sub_args.push(Arg::new("config").long("config").value_name("FILE").help("key = value file, overridden by flags"));
    sub_args.push(
        Arg::new("manifest")
            .long("manifest")
            .value_name("FILE")
            .help("replay the configuration recorded in a manifest.json"),
    );
    let mut app = ClapCommand::new("conelayer")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Bound states of the Dirichlet Laplacian in a conical layer")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        app = app.subcommand(ClapCommand::new(name).about(about).args(sub_args.clone()));
    }
    app
}

fn pairs(command: Command, m: &ArgMatches) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    if let Some(path) = m.get_one::<String>("manifest") {
        let manifest = Manifest::read(Path::new(path))?;
        if manifest.command != command.as_str() {
            return Err(CliError::usage(format!(
                "manifest records command {:?}, not {:?}",
                manifest.command,
                command.as_str()
            )));
        }
        out.extend(manifest.config);
    }
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Io { path: path.into(), source })?;
        out.extend(parse_config_text(&text)?);
    }
    for &k in KEYS.iter() {
        if let Some(v) = m.get_one::<String>(k) {
            out.push((k.to_string(), v.clone()));
        }
    }
    Ok(out)
}

fn run(name: &str, m: &ArgMatches) -> Result<Outputs, CliError> {
    let command: Command = name.parse()?;
    let cfg = RunConfig::from_pairs(command, &pairs(command, m)?)?;
    match command {
        Command::Solve => cmd_solve(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::PlotModes => cmd_plot_modes(&cfg),
        Command::Bound => cmd_bound(&cfg),
        Command::MeshExport => cmd_mesh_export(&cfg),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(name, sub) {
        Ok(out) => {
            let summary = serde_json::json!({
                "command": name,
                "output": out.dir.display().to_string(),
                "files": out.file_names(),
            });
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
