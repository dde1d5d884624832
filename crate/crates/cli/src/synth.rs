use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use ladg::data::{gen_rotated_moons, gen_shifted_gaussians, GaussianParams, MoonsParams};

use crate::output::{ensure_parent, print_json, usage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Generator {
    Moons,
    Gaussians,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    generator: Generator,
    /// CSV file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_per_domain: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Number of trailing domains held out as OOD.
    #[arg(long)]
    ood_domains: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Moons: rotation angle of each domain in degrees, comma separated.
    #[arg(long, value_delimiter = ',', help_heading = "Moons")]
    angles: Option<Vec<f64>>,
    #[arg(long, help_heading = "Gaussians")]
    n_classes: Option<usize>,
    #[arg(long, help_heading = "Gaussians")]
    n_domains: Option<usize>,
    #[arg(long, help_heading = "Gaussians")]
    input_dim: Option<usize>,
    #[arg(long, help_heading = "Gaussians")]
    class_sep: Option<f64>,
    #[arg(long, help_heading = "Gaussians")]
    domain_shift_scale: Option<f64>,
    /// Domains 2k and 2k+1 share their shifts.
    #[arg(long, help_heading = "Gaussians")]
    collapsed_pairs: bool,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn run(a: Args) -> Result<()> {
    let ds = match a.generator {
        Generator::Moons => {
            let gaussian_only = [
                ("--n-classes", a.n_classes.is_some()),
                ("--n-domains", a.n_domains.is_some()),
                ("--input-dim", a.input_dim.is_some()),
                ("--class-sep", a.class_sep.is_some()),
                ("--domain-shift-scale", a.domain_shift_scale.is_some()),
                ("--collapsed-pairs", a.collapsed_pairs),
            ];
            if let Some((flag, _)) = gaussian_only.iter().find(|(_, given)| *given) {
                return Err(usage(format!("{flag} does not apply to the moons generator")));
            }
            let mut p = MoonsParams {
                seed: a.seed,
                ..Default::default()
            };
            set(&mut p.n_per_domain, a.n_per_domain);
            set(&mut p.noise_sd, a.noise_sd);
            set(&mut p.ood_domains, a.ood_domains);
            set(&mut p.val_fraction, a.val_fraction);
            set(&mut p.angles, a.angles);
            gen_rotated_moons(&p)?
        }
        Generator::Gaussians => {
            if a.angles.is_some() {
                return Err(usage("--angles does not apply to the gaussians generator"));
            }
            let mut p = GaussianParams {
                seed: a.seed,
                collapsed_pairs: a.collapsed_pairs,
                ..Default::default()
            };
            set(&mut p.n_per_domain, a.n_per_domain);
            set(&mut p.noise_sd, a.noise_sd);
            set(&mut p.ood_domains, a.ood_domains);
            set(&mut p.val_fraction, a.val_fraction);
            set(&mut p.n_classes, a.n_classes);
            set(&mut p.n_domains, a.n_domains);
            set(&mut p.input_dim, a.input_dim);
            set(&mut p.class_sep, a.class_sep);
            set(&mut p.domain_shift_scale, a.domain_shift_scale);
            gen_shifted_gaussians(&p)?
        }
    };
    ensure_parent(&a.out)?;
    ds.write_csv(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let summary = serde_json::json!({
        "path": a.out,
        "rows": ds.len(),
        "input_width": ds.input_width(),
        "train_domains": ds.train_domains(),
        "ood_domains": ds.ood_domains(),
        "generator": ds.descriptor,
    });
    print_json(&summary)?;
    Ok(())
}
