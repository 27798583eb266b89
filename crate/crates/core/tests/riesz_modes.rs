use schatten_lab::discrete_operators::{commutator, riesz_matrix, RieszMode};
use schatten_lab::dyadic_grid::GridWindow;
use schatten_lab::haar_system::SampledFunction;
use schatten_lab::schatten_spectra::operator_norm_estimate;

fn bump_commutator_norm(mode: RieszMode, j: usize) -> f64 {
    let win = GridWindow::unit(2, 64).unwrap();
    let b = SampledFunction::from_fn(&win, |x| (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.02).exp());
    let c = commutator(&b, &riesz_matrix(j, &win, mode).unwrap()).unwrap();
    operator_norm_estimate(&c, 300, 1e-10, 3).unwrap()
}

// The unfiltered periodic multiplier keeps the Nyquist row, whose sign flips
// between neighbouring samples; it is about 30% above the kernel here.
#[test]
fn kernel_and_filtered_multiplier_agree_in_operator_norm() {
    for j in [1, 2] {
        let kernel = bump_commutator_norm(RieszMode::Kernel, j);
        let filtered = bump_commutator_norm(RieszMode::Filtered, j);
        let rel = (kernel - filtered).abs() / filtered;
        assert!(rel <= 0.10, "j={j}: kernel {kernel}, filtered {filtered}, relative gap {rel}");
    }
}
