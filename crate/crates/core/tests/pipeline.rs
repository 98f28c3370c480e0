use proptest::prelude::*;
use underreport_core::corrupt::{inject_underreporting, split_train_test};
use underreport_core::datamodel::{validate_dataset, GaussianPopulation, UnderReportingConfig};
use underreport_core::estimate::{
    ols_fit, population_biased_params, population_biased_params_normal_equations, MomentSet,
};
use underreport_core::fairness::{excess_curve, mass_balance, mass_balance_slack};
use underreport_core::matrix::Matrix;
use underreport_core::simulate::sample_population;

fn population() -> GaussianPopulation {
    let sigma = Matrix::from_rows(&[[1.0, 0.4], [0.4, 2.0]]).unwrap();
    GaussianPopulation::fully_reported(vec![1.0, -0.5], sigma, 0.3, vec![1.5, -0.7], 0.4).unwrap()
}

#[test]
fn corrupted_fit_tracks_closed_form() {
    let clean = sample_population(&population(), 200_000, 1).unwrap();
    let cfg = UnderReportingConfig {
        feature_index: 0,
        rate_g0: 0.0,
        rate_g1: 0.5,
        seed: 2,
    };
    let d = inject_underreporting(&clean, &cfg).unwrap();
    assert!(validate_dataset(&d).is_empty());
    let fit = ols_fit(&d.x, d.y.as_ref().unwrap()).unwrap();

    // blended reporting rate: 0.6·1 + 0.4·0.5
    let pop = population();
    let moments = MomentSet::new(pop.mu.clone(), pop.sigma.clone(), 0.8, 0).unwrap();
    let expected = population_biased_params(&moments, &pop.true_model()).unwrap();
    assert!((fit.alpha - expected.alpha).abs() < 0.02);
    for k in 0..2 {
        assert!((fit.beta[k] - expected.beta[k]).abs() < 0.02, "{k}: {} vs {}", fit.beta[k], expected.beta[k]);
    }

    let (train, test) = split_train_test(&d, 0.2, 3).unwrap();
    assert_eq!(train.n() + test.n(), d.n());
    let reference = ols_fit(&train.latent_or_observed().clone(), train.y.as_ref().unwrap()).unwrap();
    let corrupted = ols_fit(&train.x, train.y.as_ref().unwrap()).unwrap();
    let a = corrupted.predict_all(&test.x).unwrap();
    let b = reference.predict_all(test.latent_or_observed()).unwrap();
    for r in excess_curve(&a, &b, &test.g, &[0.1, 0.5, 0.9]).unwrap() {
        assert!(mass_balance(&r).abs() <= mass_balance_slack(&r) + 1e-12);
    }
}

proptest! {
    #[test]
    fn closed_form_routes_agree(
        m in 0.05f64..1.0,
        rho in -0.9f64..0.9,
        v2 in 0.2f64..4.0,
        mu in prop::collection::vec(-2.0f64..2.0, 2),
        beta in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let c = rho * v2.sqrt();
        let cov = Matrix::from_rows(&[[1.0, c], [c, v2]]).unwrap();
        let moments = MomentSet::new(mu, cov, m, 0).unwrap();
        let model = underreport_core::datamodel::LinearModel::new(0.5, beta);
        let a = population_biased_params(&moments, &model).unwrap();
        let b = population_biased_params_normal_equations(&moments, &model).unwrap();
        prop_assert!((a.alpha - b.alpha).abs() < 1e-9);
        for k in 0..2 {
            prop_assert!((a.beta[k] - b.beta[k]).abs() < 1e-9);
        }
    }
}
