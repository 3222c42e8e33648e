"""Registry of named checks and the experiment kind that owns each."""

# check name -> (experiment kind, property verified)
CHECKS: dict[str, tuple[str, str]] = {
    "band_max": ("bands", "max p = 3, attained at xi = (0, 0)"),
    "critical_values": ("bands", "critical points of p are the four half-period points with values {1, 3}"),
    "dirac_min": ("bands", "p vanishes at the on-grid Dirac points when 3 | N"),
    "thresholds": ("bands", "threshold set equals {0, +-1, +-3}"),
    "uprime_unitary": ("bands", "U' unitary pointwise"),
    "diagonalization": ("bands", "U'^* H' U' = diag(lam+, lam-) pointwise"),
    "dirac_gap": ("bands", "lam+ at the Dirac points equals the gap g"),
    "bands_off_gap": ("bands", "lam+- = +-p where p >= delta/2"),
    "kappa_profile": ("bands", "0 < E + kappa(E)^2 < delta^2/4 on a dense scan"),
    "projection_identity": ("projections", "chi(H0(xi)) = chi(H'0(xi)) for chi supported in the window"),
    "projection_gap_failure": ("projections", "identity fails for chi supported inside the gap"),
    "projection_g_independence": ("projections", "window projections do not depend on the gap g"),
    "dense_propagator": ("projections", "Chebyshev evolution matches dense diagonalization on L=8 at t=3"),
    "free_window_evolution": ("projections", "e^{-itH0} and e^{-itH'0} agree on window packets"),
    "kernel_ladder": ("pdo", "weighted commutator kernel row/column sums stable across the box ladder"),
    "kernel_envelope": ("pdo", "|K[x,y]| <x-y>^3 bounded and ladder-stable"),
    "schur_dominates": ("pdo", "Schur bound dominates the power-method norm on L=16"),
    "constant_multiplier": ("pdo", "commutator with a constant multiplier vanishes"),
    "telescoping": ("pdo", "lattice-path telescoping bound for <x>^-rho"),
    "multiplier_oracle": ("pdo", "Op(m) equals the Fourier multiplier m(D)"),
    "mourre_positive": ("mourre", "Mourre constant c > 0 on the window"),
    "mourre_refinement": ("mourre", "refined c agrees across N = cfg.N and 3072 within 1e-4 relative"),
    "mourre_g_independence": ("mourre", "c unchanged under g in {0.3, 0.5}"),
    "two_route_commutator": ("mourre", "[H'0, iA] direct vs closed-form multiplier within 1e-9"),
    "conjugate_symmetry": ("mourre", "A symmetric on random pairs within 1e-11"),
    "gradient_fd": ("mourre", "closed-form grad lam+ vs central differences within 1e-6"),
    "commutator_field": ("mourre", "|grad lam|^2 nonnegative, zero at Cr, positive on the window"),
    "projected_commutator": ("mourre", "Pi [H'0, iA] Pi >= c - 0.05 on ran Pi"),
    "perturbed_ladder": ("mourre", "<x>^rho [W, iA] norms ladder-stable for W = V_s, V_l, U'V_lU'^*"),
    "c11_exponent": ("mourre", "dyadic C^{1,1} integrand decays with exponent <= -rho + 0.1"),
    "eigen_count": ("lap", "interior eigenvalue count in the window stabilizes across boxes"),
    "eigen_positive_control": ("lap", "a confining cavity produces a stable nonzero count"),
    "lap_plateau": ("lap", "weighted resolvent norms plateau within 10% over the honest eps range"),
    "lap_pole_control": ("lap", "resolvent norm at a detected eigenvalue grows like 1/eps"),
    "kato_consistent": ("lap", "sup |G delta G^*| finite and below the resolvent sup / pi"),
    "cook_finite": ("cook", "all trace norms finite"),
    "cook_cauchy": ("cook", "Cauchy differences below tolerance at the last sample"),
    "cook_intertwining": ("cook", "intertwining residual decreases beyond t = 20"),
    "cook_isometry": ("cook", "final isometry ratio within 0.02 of 1"),
    "cook_fd": ("cook", "finite-difference derivative matches the Cook integrand within 1e-6"),
    "phase_decay": ("phase", "eikonal residual decays faster than <x>^-(1+eps_r) on the region mask"),
    "phase_trivial": ("phase", "psi vanishes identically when V_l = 0"),
    "b1_ladder": ("b-diagnostics", "<x>^-g chi(H'0) <x>^g ladder-stable"),
    "b2_ladder": ("b-diagnostics", "<x>^g [V_l, chi(H'0) U'^*] U' <x>^g ladder-stable"),
}
