//! Proptest strategies for protocol messages.

#![allow(dead_code)]

use fedqnn::fednet::Message;
use fedqnn::metrics::ConfusionMatrix;
use fedqnn::{CircuitSpec, Entanglement, TrainingConfig};
use proptest::prelude::*;

pub fn arb_f64() -> impl Strategy<Value = f64> + Clone {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -10.0..10.0f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
    ]
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    let id = "[a-zA-Z0-9_\\-\"\\\\ é]{0,12}";
    let params = proptest::collection::vec(arb_f64(), 0..20);
    prop_oneof![
        id.prop_map(|client_id| Message::Hello {
            protocol_version: 1,
            client_id
        }),
        (2usize..9, 1usize..4, 0u32..100, arb_f64(), any::<bool>()).prop_map(|(n, layers, rounds, lr, shuffle)| {
            let mut training = TrainingConfig::default();
            training.optimizer.learning_rate = lr.abs();
            training.shuffle_each_epoch = shuffle;
            Message::Welcome {
                protocol_version: 1,
                round_total: rounds,
                circuit: CircuitSpec::new(n, layers, Entanglement::Full),
                training,
            }
        }),
        (any::<u32>(), params.clone()).prop_map(|(round, params)| Message::Global { round, params }),
        (any::<u32>(), id, params.clone(), arb_f64(), arb_f64(), any::<u32>()).prop_map(
            |(round, client_id, params, weight, val_accuracy, epochs_run)| Message::Update {
                round,
                client_id,
                params,
                weight,
                val_accuracy,
                epochs_run
            }
        ),
        (any::<u32>(), params).prop_map(|(round, params)| Message::Evaluate { round, params }),
        (any::<u32>(), id, any::<[u32; 4]>()).prop_map(|(round, client_id, c)| Message::Evaluation {
            round,
            client_id,
            confusion: ConfusionMatrix::new(c[0] as u64, c[1] as u64, c[2] as u64, c[3] as u64),
        }),
        ".{0,30}".prop_map(|reason| Message::Done { reason }),
        (id, ".{0,30}").prop_map(|(code, detail)| Message::Error { code, detail }),
    ]
}
