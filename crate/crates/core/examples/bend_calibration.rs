//! From a raw ADC count to bending strain, and refitting the calibration
//! polynomial from noisy bench samples.
//!
//! ```text
//! cargo run --example bend_calibration
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tenserecon::sensor::{delta_r_ratio, fit_bending_polynomial, resistance_from_adc, BendCalibration, DividerConfig};

fn main() -> tenserecon::Result<()> {
    let divider = DividerConfig::default();
    let cal = BendCalibration::default();

    // a sensor at rest reads mid-scale against the 5.8 MΩ reference
    let r0 = resistance_from_adc(512, &divider)?;
    println!("adc  resistance (MΩ)  ΔR/R      strain");
    for adc in [512, 560, 640, 760, 900] {
        let r = resistance_from_adc(adc, &divider)?;
        let x = delta_r_ratio(r0, r)?;
        println!("{adc:<4} {:>15.4}  {x:+.4}  {:+.5}", r / 1e6, cal.strain(x)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<(f64, f64)> = (0..200)
        .map(|i| {
            let x = -(i as f64) / 199.0;
            (x, cal.eval(x) + rng.random_range(-0.002..0.002))
        })
        .collect();
    let fit = fit_bending_polynomial(&samples)?;
    println!("\nrefit on 200 noisy samples, R² = {:.6}", fit.r_squared);
    for (i, (got, want)) in fit.calibration.coefficients.iter().zip(cal.coefficients).enumerate() {
        println!("  c{}  {got:+9.4}  (reference {want:+9.4})", 5 - i);
    }
    Ok(())
}
