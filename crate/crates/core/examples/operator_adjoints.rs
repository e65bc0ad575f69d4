//! Forward models and the exact data-step solvers, checked against their
//! slow counterparts.
//!
//! ```text
//! cargo run --release --example operator_adjoints
//! ```

use reld::image::{awgn_corrupt, Image, Shape};
use reld::linop::{gaussian_psf, LinearOperator};
use reld::prox::{prox_cg, prox_deblur_fft, prox_sr_fft, ProxProblem};

fn main() -> reld::Result<()> {
    let shape = Shape::new(32, 32, 3);
    let psf = gaussian_psf(1.5, 9)?;
    println!("psf {}x{}, sum {:.6}", psf.size(), psf.size(), psf.sum());

    let ops = [
        ("blur", LinearOperator::conv(psf.clone(), shape)?),
        ("decimate 2", LinearOperator::decimate(2, shape)?),
        ("blur + decimate 4", LinearOperator::blur_decimate(psf.clone(), 4, shape)?),
    ];
    for (i, (name, op)) in ops.iter().enumerate() {
        let x = awgn_corrupt(&Image::zeros(op.input_shape()), 1.0, 2 * i as u64)?;
        let y = awgn_corrupt(&Image::zeros(op.output_shape()), 1.0, 2 * i as u64 + 1)?;
        let lhs = op.apply(&x)?.dot(&y)?;
        let rhs = x.dot(&op.adjoint(&y)?)?;
        println!(
            "{name:18} {} -> {}  <Ax,y> - <x,A'y> = {:.2e}",
            op.input_shape(),
            op.output_shape(),
            lhs - rhs
        );
    }

    let gray = Shape::gray(32, 32);
    let anchor = awgn_corrupt(&Image::filled(gray, 0.5), 0.1, 7)?;
    for (name, op, factor) in [
        ("deblur", LinearOperator::conv(psf.clone(), gray)?, None),
        ("sr d=2", LinearOperator::blur_decimate(psf.clone(), 2, gray)?, Some(2)),
        ("sr d=4", LinearOperator::blur_decimate(psf.clone(), 4, gray)?, Some(4)),
    ] {
        let b = awgn_corrupt(&op.apply(&anchor)?, 0.05, 9)?;
        let problem = ProxProblem::new(&op, &b, &anchor, 0.3)?;
        let fast = match factor {
            Some(d) => prox_sr_fft(&problem, d)?,
            None => prox_deblur_fft(&problem)?,
        };
        let cg = prox_cg(&problem, 1e-12, 5000)?;
        println!(
            "{name:7} closed form vs CG ({} iterations): rel diff {:.2e}, residual {:.2e}",
            cg.iterations,
            fast.sub(&cg.solution)?.norm() / cg.solution.norm(),
            problem.optimality_residual(&fast)?
        );
    }
    Ok(())
}
