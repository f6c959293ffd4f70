use odesig_core::datagen::{GeneratorSpec, MissingMode, corrupt_missing, generate, stream_rng};
use odesig_core::diffmath::{Array2, grad_check};
use odesig_core::training::{ModelDims, ModelParams, PreparedSample, TrainConfig, sample_gradient};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        dims: ModelDims {
            filters: 4,
            kernel_size: 4,
            key_dim: 3,
            graph_dim: 3,
            fused_dim: 3,
            latent_dim: 3,
            hidden_dim: 5,
        },
        substeps: 2,
        ..TrainConfig::default()
    }
}

fn tiny_sample(seed: u64) -> PreparedSample {
    let spec = GeneratorSpec {
        n_rois: 2,
        n_samples: 1,
        duration: 6,
        seed,
        ..GeneratorSpec::default()
    };
    let sample = &generate(&spec).unwrap()[0];
    let case = corrupt_missing(
        sample,
        MissingMode::Interpolation,
        1,
        &mut stream_rng(seed, 1),
    )
    .unwrap();
    PreparedSample::new(&case.sample).unwrap()
}

#[test]
fn whole_model_gradient_matches_finite_differences() {
    let config = tiny_config();
    let spatial = Array2::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
    for seed in 0..3 {
        let sample = tiny_sample(seed);
        let params = ModelParams::init(&config.dims, seed).unwrap();
        let eps = Array2::from_fn(2, 3, |i, j| 0.3 * (i as f64) - 0.2 * (j as f64) + 0.1);
        let check = grad_check(
            |theta| {
                let p = params.with_flat(theta)?;
                let g = sample_gradient(&p, &sample, &spatial, &config, Some(&eps))?;
                Ok((g.loss, g.gradient))
            },
            &params.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(
            check.max_rel_error < 1e-4,
            "seed {seed}: rel error {} at {}",
            check.max_rel_error,
            check.worst_index
        );
    }
}
