use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use dse_core::observer::LipschitzConstants;
use dse_core::scenario::{run_scenario, synthesize_gain, ScenarioConfig};
use dse_core::SystemCase;

#[derive(Parser)]
#[command(name = "dse", about = "Power system dynamic state estimation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a JSON config and write artifacts.
    Run {
        config: PathBuf,
    },
    /// Synthesize (or re-verify) an observer gain for a case.
    Gain {
        case: PathBuf,
        /// One-sided Lipschitz constant override.
        #[arg(long)]
        rho: Option<f64>,
        /// Inner-boundedness constant override.
        #[arg(long)]
        mu: Option<f64>,
        /// Inner-boundedness constant override.
        #[arg(long)]
        varphi: Option<f64>,
        /// Output gain file (default: gain.json next to the case).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sampling seed for constant estimation.
        #[arg(long, default_value_t = 4)]
        seed: u64,
    },
    /// Merge summary CSVs from several output directories into one table.
    Compare {
        dirs: Vec<PathBuf>,
    },
    /// Write the built-in synthetic 3-machine case to a file.
    CaseGen {
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = ScenarioConfig::load(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            let outcome = run_scenario(&cfg)?;
            for m in &outcome.metrics {
                println!(
                    "{:<10} final_rel_err={:<12.5} mean_rel_err={:<12.5} det={:.3} fa={:.3} wall={:.3}s{}",
                    m.estimator,
                    m.final_err,
                    m.mean_err,
                    m.detection_rate,
                    m.false_alarm_rate,
                    m.wall_time_s,
                    if m.diverged { " [diverged]" } else { "" }
                );
            }
            println!("artifacts written to {}", cfg.output_dir.display());
        }
        Command::Gain {
            case,
            rho,
            mu,
            varphi,
            out,
            seed,
        } => {
            let sys = SystemCase::load(&case)?;
            let constants = match (rho, mu, varphi) {
                (Some(rho), Some(mu), Some(varphi)) => {
                    Some(LipschitzConstants { rho, mu, varphi })
                }
                (None, None, None) => None,
                _ => bail!("provide either all of --rho/--mu/--varphi or none"),
            };
            let out = out.unwrap_or_else(|| case.with_file_name("gain.json"));
            if out.exists() {
                // Cached gain: load and re-verify instead of re-synthesizing.
                let gain = dse_core::observer::ObserverGain::load(&out)?;
                let split = dse_core::powermodel::split_linear(&sys);
                let c = dse_core::powermodel::jacobian_h(&sys, &sys.x0, &sys.y_post)?;
                gain.verify(&split.a, &c)?;
                println!(
                    "verified cached gain {} (lmi_max_eig = {:.3e})",
                    out.display(),
                    gain.lmi_max_eig
                );
                return Ok(());
            }
            match synthesize_gain(&sys, constants, seed) {
                Ok(gain) => {
                    std::fs::write(&out, gain.to_json())?;
                    println!(
                        "gain written to {} (lmi_max_eig = {:.3e}, rho={}, mu={}, varphi={})",
                        out.display(),
                        gain.lmi_max_eig,
                        gain.constants.rho,
                        gain.constants.mu,
                        gain.constants.varphi
                    );
                }
                Err(e) => bail!("synthesis failed: {e}"),
            }
        }
        Command::Compare { dirs } => {
            println!("estimator,final_rel_err,mean_rel_err,detection_rate,false_alarm_rate,wall_time_s,diverged,source");
            for dir in dirs {
                let path = dir.join("summary.csv");
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                for line in text.lines().skip(1) {
                    println!("{line},{}", dir.display());
                }
            }
        }
        Command::CaseGen { out } => {
            let case = dse_core::casegen::synthetic_three_machine()?;
            std::fs::write(&out, case.to_json())?;
            println!("case written to {}", out.display());
        }
    }
    Ok(())
}
