//! Every sampler check from the shared oracle suite as its own test.

mod oracles;

macro_rules! checks {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                match oracles::$name() {
                    Ok(msg) => println!("{}: {msg}", stringify!($name)),
                    Err(msg) => panic!("{}: {msg}", stringify!($name)),
                }
            }
        )*
    };
}

checks!(
    gradient_matches_finite_differences,
    hmc_gaussian_moments,
    mu_precision_example,
    mu_without_samples_is_prior,
    mu_matches_quadrature,
    lambda_prior_when_scores_vanish,
    lambda_scalar_case,
    lambda_matches_dense_solve,
    dl_local_scale_mean,
    dl_exchangeable_weights,
    dl_matches_importance_sampler,
    factor_scores_prior_when_loadings_vanish,
    factor_score_precision_example,
    factor_scores_match_dense_solve,
    random_effect_empty_block,
    random_effect_precision_example,
    random_effects_match_quadrature,
    inclusion_prior_example,
    inclusion_posterior_without_active_slots,
    inclusion_matches_enumeration,
    residual_variance_shape_example,
    residual_variance_zero_residuals,
    residual_variance_matches_quadrature,
    fixed_effect_variance_counts_active_slots,
    beta_vanishes_without_inclusions,
    geweke_factors,
    geweke_no_factors,
);
