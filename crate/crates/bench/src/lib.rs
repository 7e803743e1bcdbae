//! Deterministic fixtures shared by the benchmarks.

use mtlqa::data::{domain_labels, generate_synthetic, EncodeOptions, InputPair, SyntheticConfig, Vocab};
use mtlqa::encoder::EncoderConfig;
use mtlqa::model::{ModelSpec, Sample, Task};

/// Encoded question/context samples over the six review domains.
pub fn samples(n_per_domain: usize, max_len: usize) -> (Vec<Sample>, ModelSpec) {
    let exs = generate_synthetic(&SyntheticConfig {
        n_per_domain,
        seed: 11,
        ..SyntheticConfig::default()
    });
    let vocab = Vocab::build(exs.iter().flat_map(|e| [e.question.as_str(), e.context.as_str()]), None);
    let domains = domain_labels(&exs);
    let opts = EncodeOptions {
        max_len,
        ..EncodeOptions::default()
    };
    let samples = exs
        .iter()
        .map(|e| Sample::from_example(e, InputPair::QuestionContext, &vocab, &domains, &opts).unwrap())
        .collect();
    let spec = ModelSpec {
        encoder: EncoderConfig {
            vocab_size: vocab.len(),
            max_seq_len: max_len,
            ..EncoderConfig::default()
        },
        tasks: vec![Task::Qa, Task::Sbj, Task::Dom],
        num_domains: domains.len(),
        ..ModelSpec::default()
    };
    (samples, spec)
}

/// An `n × d` matrix with correlated, non-degenerate columns.
pub fn matrix(n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..d)
                .map(|j| ((i * 7 + j * 13) as f64 * 0.37).sin() + 0.1 * (j as f64) * ((i as f64) * 0.11).cos())
                .collect()
        })
        .collect()
}
