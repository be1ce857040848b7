use derain_core::guidance::PromptMode;
use derain_core::manifest::Manifest;
use derain_core::pipeline::InvertWith;
use derain_core::RunConfig;
use proptest::collection::vec;
use proptest::prelude::*;

pub fn entry() -> impl Strategy<Value = (Vec<usize>, Vec<f32>)> {
    vec(0usize..5, 0..4).prop_flat_map(|dims| {
        let n = dims.iter().product::<usize>();
        (Just(dims), vec(any::<u32>().prop_map(f32::from_bits), n))
    })
}

fn prompt_mode() -> impl Strategy<Value = PromptMode> {
    prop_oneof![
        Just(PromptMode::Simple),
        Just(PromptMode::MeanEmbedding),
        Just(PromptMode::Contextual),
        Just(PromptMode::Implicit),
    ]
}

prop_compose! {
    pub fn manifest()(
        sub in "[a-z-]{1,12}",
        lambda in proptest::option::of(any::<f64>().prop_filter("finite", |v| v.is_finite())),
        t_skip in 0usize..200,
        seed in any::<u64>(),
        mode in prompt_mode(),
        switch in any::<bool>(),
        blocks in proptest::option::of(vec(0usize..30, 0..6)),
        concept_inv in any::<bool>(),
        lr in 1e-6f64..1.0,
        out in "[a-zA-Z0-9_/]{1,20}",
        outputs in vec(("[a-z0-9_./]{1,16}", vec(any::<u8>(), 0..32)), 0..5),
    ) -> Manifest {
        let mut cfg = RunConfig {
            lambda,
            t_skip,
            seed,
            prompt_mode: mode,
            attn_switch: switch,
            blocks,
            invert_with: if concept_inv { InvertWith::Concept } else { InvertWith::Null },
            output: out.into(),
            ..Default::default()
        };
        cfg.train.learning_rate = lr;
        let mut m = Manifest::new(&sub, cfg);
        for (path, bytes) in outputs {
            m.record_output(&path, &bytes);
        }
        m
    }
}
