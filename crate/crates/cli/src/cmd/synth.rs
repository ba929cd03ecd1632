use ihn_core::datagen::{archive_checksum, write_archive, ImageFormat, SynthSpec, MANIFEST};

use crate::args::{FormatArg, SynthArgs};
use crate::exit::{CliError, CliResult};

pub fn run(a: &SynthArgs) -> CliResult<()> {
    if a.size < 2 {
        return Err(CliError::usage(format!("--size {} is too small", a.size)));
    }
    if !a.rho.is_finite() || a.rho < 0.0 {
        return Err(CliError::usage(format!("--rho must be a finite non-negative number, got {}", a.rho)));
    }
    if !(0.0..1.0).contains(&a.patch_fraction) {
        return Err(CliError::usage(format!("--patch-fraction must lie in [0, 1), got {}", a.patch_fraction)));
    }
    let mut spec = SynthSpec::new(a.variant.into(), a.size, a.rho);
    spec.patch_fraction = a.patch_fraction;
    let pairs = spec.generate_many(a.seed, a.count)?;
    let format = match a.format {
        FormatArg::Pgm => ImageFormat::Pgm,
        FormatArg::Png => ImageFormat::Png,
    };
    write_archive(&a.out, &pairs, format)?;
    println!("manifest={}", a.out.join(MANIFEST).display());
    println!("checksum={}", archive_checksum(&a.out)?);
    Ok(())
}
