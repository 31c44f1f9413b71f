use privcoll_core::ring::{RingParams, RingTensor};
use privcoll_core::rnn::{BpttSignals, RnnDeltaBundle};
use privcoll_core::tensor::Matrix;
use privcoll_protocol::wire::{
    read_plain_sum, read_share, share_payload, plain_sum_payload, Control, DeltaPayload, IterStats, MsgType, StopReason,
    WireMessage, HEADER_LEN,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |i, j| vals[(i * cols + j) % vals.len()])
}

proptest! {
    #[test]
    fn ring_tensor_frames_are_byte_identical(
        rows in 1usize..20, cols in 1usize..8, words in prop::collection::vec(any::<u64>(), 1..64),
        step in any::<u32>(), it in any::<u32>(), sender in any::<u16>(),
    ) {
        let params = RingParams::default();
        let data: Vec<u64> = (0..rows * cols).map(|i| words[i % words.len()]).collect();
        let t = RingTensor::from_raw(rows, cols, data, params).unwrap();
        let m = WireMessage::new(MsgType::Share, it, sender, share_payload(step, &t));
        let frame = m.encode();
        prop_assert_eq!(frame.len(), HEADER_LEN + 4 + 8 + rows * cols * 8);
        let back = WireMessage::decode(&frame).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.encode(), frame);
        let (s, t2) = read_share::<u64>(&back.payload, params).unwrap();
        prop_assert_eq!(s, step);
        prop_assert_eq!(t2, t);
    }

    #[test]
    fn ring32_tensors_use_four_byte_elements(rows in 1usize..10, cols in 1usize..5, seed in any::<u32>()) {
        let params = RingParams::new(32, 10).unwrap();
        let data: Vec<u32> = (0..rows * cols).map(|i| seed.wrapping_mul(i as u32 + 1)).collect();
        let t = RingTensor::from_raw(rows, cols, data, params).unwrap();
        let p = share_payload(0, &t);
        prop_assert_eq!(p.len(), 4 + 8 + rows * cols * 4);
        prop_assert_eq!(read_share::<u32>(&p, params).unwrap().1, t);
    }

    #[test]
    fn float_payloads_round_trip(rows in 1usize..10, cols in 1usize..6, vals in prop::collection::vec(-1e6f64..1e6, 1..30)) {
        let m = matrix(rows, cols, &vals);
        let (c, back) = read_plain_sum(&plain_sum_payload(2, &m)).unwrap();
        prop_assert_eq!(c, 2);
        prop_assert_eq!(back, m.clone());
        let d = DeltaPayload::Dense(m);
        prop_assert_eq!(DeltaPayload::decode(&d.encode()).unwrap(), d);
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = WireMessage::decode(&bytes);
        let _ = Control::decode(&bytes);
        let _ = DeltaPayload::decode(&bytes);
        let _ = read_share::<u64>(&bytes, RingParams::default());
    }

    #[test]
    fn every_truncation_is_rejected(cut in 0usize..60) {
        let m = WireMessage::new(MsgType::Delta, 1, 0, vec![7; 44]);
        let frame = m.encode();
        prop_assume!(cut < frame.len());
        prop_assert!(WireMessage::decode(&frame[..cut]).is_err());
    }
}

#[test]
fn recurrent_delta_round_trip() {
    let steps = 3;
    let mk = |s: f64| (0..steps).map(|c| matrix(2, 4, &[s, c as f64, -0.5])).collect::<Vec<_>>();
    let bundle = RnnDeltaBundle {
        signals: BpttSignals {
            loss: mk(1.0),
            y_hat: mk(2.0),
            h: mk(3.0),
        },
        v: matrix(4, 2, &[0.25]),
        u: matrix(4, 4, &[0.5, 1.5]),
    };
    let d = DeltaPayload::Recurrent(bundle);
    assert_eq!(DeltaPayload::decode(&d.encode()).unwrap(), d);
}

#[test]
fn control_messages_round_trip() {
    let all = [
        Control::Batch { epoch: 3, indices: vec![5, 1, 9] },
        Control::Stop(StopReason::Converged),
        Control::Stop(StopReason::Exhausted),
        Control::Hello { fingerprint: [4; 32] },
        Control::HelloAck,
        Control::Reject("no".into()),
        Control::Abort("boom".into()),
        Control::Report(vec![IterStats { bytes_sent: 1, share_bytes: 2, messages: 3, compute_ns: 4 }]),
    ];
    for c in all {
        assert_eq!(Control::decode(&c.encode()).unwrap(), c);
    }
}
