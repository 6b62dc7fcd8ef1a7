use clap::Parser;
use medtransport_cli::{run, Flags, RunConfig};

fn main() {
    let flags = Flags::parse();
    let result = RunConfig::resolve(&flags).and_then(|cfg| run(&cfg));
    match result {
        Ok((doc, files)) => {
            if let Some(d) = &doc.data {
                for w in &d.warnings {
                    eprintln!("warning: {w}");
                }
            }
            for g in &doc.effects {
                println!(
                    "W={}: SDE {:.4} [{:.4}, {:.4}]  SIE {:.4} [{:.4}, {:.4}]",
                    g.group_w, g.sde.point, g.sde.ci_low, g.sde.ci_high, g.sie.point, g.sie.ci_low, g.sie.ci_high
                );
            }
            if let Some(s) = &doc.sensitivity {
                for c in &s.crossings {
                    match c.r2_star {
                        Some(r) => println!("W={}: CI contains 0 from R² = {r}", c.group_w),
                        None => println!("W={}: CI excludes 0 over the whole grid", c.group_w),
                    }
                }
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
