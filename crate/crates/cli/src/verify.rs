//! `fedrot verify`: a fast subset of the acceptance checks.

use std::io::{self, Write};

use fedrot::aggregation::aggregation_error_matrix;
use fedrot::alignment::sample_haar_rotation;
use fedrot::numerics::determinant;
use fedrot::{
    lagrange_error_oracle, procrustes_rotation, run_federation, soft_rotation, AlignmentTarget, FederationConfig,
    LoraAdapter, Matrix, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rotation aligning an `r × d` factor to a reference (`A`-factor form).
pub type ProcrustesFn = fn(&Matrix<f64>, &Matrix<f64>) -> fedrot::Result<Matrix<f64>>;

pub fn library_procrustes(local: &Matrix<f64>, reference: &Matrix<f64>) -> fedrot::Result<Matrix<f64>> {
    Ok(procrustes_rotation(local, reference, AlignmentTarget::FactorA)?.into_matrix())
}

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// `‖Rᵀ·A − A_ref‖_F²` entry by entry.
fn objective(local: &Matrix<f64>, reference: &Matrix<f64>, rot: &Matrix<f64>) -> f64 {
    let r = rot.rows();
    let mut acc = 0.0;
    for j in 0..local.cols() {
        for i in 0..r {
            let moved: f64 = (0..r).map(|k| rot.get(k, i) * local.get(k, j)).sum();
            acc += (moved - reference.get(i, j)).powi(2);
        }
    }
    acc
}

fn grid_minimum(local: &Matrix<f64>, reference: &Matrix<f64>, points: usize) -> f64 {
    (0..points)
        .map(|k| {
            let (s, c) = (std::f64::consts::TAU * k as f64 / points as f64).sin_cos();
            objective(
                local,
                reference,
                &Matrix::from_vec(2, 2, vec![c, -s, s, c]).expect("2x2"),
            )
        })
        .fold(f64::INFINITY, f64::min)
}

fn scalar_toy_ordering() -> Check {
    let reach = |s: Strategy| -> Option<usize> {
        let run = run_federation(&FederationConfig::scalar_toy(s, 1.0, 300)).ok()?;
        // Global loss is (BA − 1)² + 1/6 for targets (0.5, 1, 1.5).
        run.rounds
            .iter()
            .position(|r| (r.loss - 1.0 / 6.0).max(0.0).sqrt() < 0.05)
            .map(|i| i + 1)
    };
    let [fedit, fedrot, ffa, rolora] =
        [Strategy::FedIT, Strategy::FedRot, Strategy::FfaLora, Strategy::RoLora].map(reach);
    let pass = match fedrot {
        Some(rot) => fedit.is_some_and(|f| rot <= f) && ffa.is_none_or(|f| f > rot) && rolora.is_none_or(|r| r > rot),
        None => false,
    };
    Check {
        name: "scalar_toy_ordering",
        pass,
        detail: format!(
            "rounds to |BA-1|<0.05: FedIT {fedit:?}, FedRot {fedrot:?}, FFA-LoRA {ffa:?}, RoLoRA {rolora:?}"
        ),
    }
}

fn lagrange_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let (d_out, d_in) = (rng.random_range(2..8), rng.random_range(2..8));
        let r = rng.random_range(1..=d_out.min(d_in));
        let adapters: Vec<_> = (0..n)
            .map(|_| {
                LoraAdapter::new(
                    Matrix::random_normal(d_out, r, 1.0, &mut rng),
                    Matrix::random_normal(r, d_in, 1.0, &mut rng),
                )
                .expect("conformable")
            })
            .collect();
        let diff = aggregation_error_matrix(&adapters)
            .and_then(|e| e.sub(&lagrange_error_oracle(&adapters)?))
            .map_or(f64::INFINITY, |m| m.frobenius_norm());
        worst = worst.max(diff);
    }
    Check {
        name: "lagrange_identity",
        pass: worst <= 1e-10,
        detail: format!("max Frobenius gap over 200 instances {worst:.2e} (need <= 1e-10)"),
    }
}

fn procrustes_grid(procrustes: ProcrustesFn) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = rng.random_range(2..10);
        let local = Matrix::random_normal(2, d, 1.0, &mut rng);
        let reference = Matrix::random_normal(2, d, 1.0, &mut rng);
        let gap = match procrustes(&local, &reference) {
            Ok(rot) => objective(&local, &reference, &rot) - grid_minimum(&local, &reference, 100_000),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(gap);
    }
    Check {
        name: "procrustes_grid",
        pass: worst <= 1e-6,
        detail: format!("r=2 worst excess over 1e5-point angle grid {worst:.2e} (need <= 1e-6)"),
    }
}

/// Inputs whose unconstrained optimum is a reflection.
fn det_correction(procrustes: ProcrustesFn) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let flip = Matrix::from_diag(&[1.0, -1.0]);
    let (mut worst_det, mut worst_gap) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..20 {
        let local = Matrix::random_normal(2, 6, 1.0, &mut rng);
        let reference = flip.matmul(&local).expect("2x2 by 2x6");
        let (det_err, gap) = match procrustes(&local, &reference) {
            Ok(rot) => (
                determinant(&rot).map_or(f64::INFINITY, |d| (d - 1.0).abs()),
                objective(&local, &reference, &rot) - grid_minimum(&local, &reference, 100_000),
            ),
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };
        worst_det = worst_det.max(det_err);
        worst_gap = worst_gap.max(gap);
    }
    Check {
        name: "det_correction",
        pass: worst_det <= 1e-10 && worst_gap <= 1e-6,
        detail: format!(
            "reflection-optimal inputs: max |det R - 1| {worst_det:.2e}, worst excess over grid {worst_gap:.2e}"
        ),
    }
}

fn soft_rotation_shrinkage() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut violations = 0;
    for _ in 0..1000 {
        let r = rng.random_range(2..=6);
        let lambda = rng.random_range(0.0..=1.0);
        let ok = sample_haar_rotation::<f64, _>(r, &mut rng).and_then(|hard| {
            let soft = soft_rotation(&hard, lambda)?;
            Ok(soft.deviation_from_identity() <= 2.0 * lambda * hard.deviation_from_identity())
        });
        if !matches!(ok, Ok(true)) {
            violations += 1;
        }
    }
    Check {
        name: "soft_rotation_shrinkage",
        pass: violations == 0,
        detail: format!("‖R_soft - I‖ <= 2λ‖R* - I‖ violations {violations}/1000"),
    }
}

pub fn checks(procrustes: ProcrustesFn) -> Vec<Check> {
    vec![
        scalar_toy_ordering(),
        lagrange_identity(),
        procrustes_grid(procrustes),
        det_correction(procrustes),
        soft_rotation_shrinkage(),
    ]
}

/// Runs every check, printing one line each. Returns whether all passed.
pub fn run_verify(procrustes: ProcrustesFn, out: &mut impl Write) -> io::Result<bool> {
    let mut all = true;
    for c in checks(procrustes) {
        writeln!(out, "{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        all &= c.pass;
    }
    Ok(all)
}
