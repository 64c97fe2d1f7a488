//! SpikeMessage wire format. All integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     sender worker id (u32)
//! 4       8     window start timestep (u64)
//! 12      4     spike count n (u32)
//! 16      16*n  n x (neuron id u64, timestep u64)
//! ```

use crate::engine::Spike;
use crate::error::{Error, Result};
use crate::model::NeuronId;

pub const HEADER_BYTES: usize = 16;
pub const SPIKE_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeMessage {
    pub sender: u32,
    pub window_start: u64,
    pub spikes: Vec<Spike>,
}

impl SpikeMessage {
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + SPIKE_BYTES * self.spikes.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut buf);
        buf
    }

    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.sender.to_le_bytes());
        buf.extend_from_slice(&self.window_start.to_le_bytes());
        buf.extend_from_slice(&(self.spikes.len() as u32).to_le_bytes());
        for s in &self.spikes {
            buf.extend_from_slice(&s.neuron.0.to_le_bytes());
            buf.extend_from_slice(&s.step.to_le_bytes());
        }
    }

    /// Decode and check a frame received from `expected_sender` for a window
    /// of `window` steps. Errors carry the offending byte offset.
    pub fn decode(bytes: &[u8], expected_sender: u32, window: u64) -> Result<Self> {
        let bad = |offset: usize, reason: String| Error::MalformedFrame {
            sender: expected_sender,
            offset,
            reason,
        };
        if bytes.len() < HEADER_BYTES {
            return Err(bad(bytes.len(), format!("truncated header ({} of {HEADER_BYTES} bytes)", bytes.len())));
        }
        let sender = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let window_start = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if sender != expected_sender {
            return Err(bad(0, format!("sender field says {sender}")));
        }
        let expected_len = HEADER_BYTES + SPIKE_BYTES * count;
        if bytes.len() != expected_len {
            return Err(bad(
                12,
                format!("count {count} implies {expected_len} bytes, frame has {}", bytes.len()),
            ));
        }
        let mut spikes = Vec::with_capacity(count);
        for i in 0..count {
            let at = HEADER_BYTES + SPIKE_BYTES * i;
            let neuron = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            let step = u64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap());
            if step < window_start || step >= window_start + window {
                return Err(bad(
                    at + 8,
                    format!("timestep {step} outside window [{window_start}, {})", window_start + window),
                ));
            }
            spikes.push(Spike {
                step,
                neuron: NeuronId(neuron),
            });
        }
        Ok(Self {
            sender,
            window_start,
            spikes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_message_layout() {
        let m = SpikeMessage {
            sender: 3,
            window_start: 40,
            spikes: vec![],
        };
        let b = m.encode();
        assert_eq!(b, [3, 0, 0, 0, 40, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(SpikeMessage::decode(&b, 3, 10).unwrap(), m);
    }

    #[test]
    fn payload_layout() {
        let m = SpikeMessage {
            sender: 1,
            window_start: 0,
            spikes: vec![Spike {
                step: 2,
                neuron: NeuronId(0x0102),
            }],
        };
        let b = m.encode();
        assert_eq!(b.len(), 32);
        assert_eq!(&b[12..16], &[1, 0, 0, 0]);
        assert_eq!(&b[16..24], &[2, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[24..32], &[2, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn malformed_frames_name_offset() {
        let m = SpikeMessage {
            sender: 2,
            window_start: 10,
            spikes: vec![Spike {
                step: 12,
                neuron: NeuronId(5),
            }],
        };
        let b = m.encode();
        let err = SpikeMessage::decode(&b[..20], 2, 10).unwrap_err();
        assert!(matches!(err, Error::MalformedFrame { sender: 2, offset: 12, .. }));
        let err = SpikeMessage::decode(&b[..5], 2, 10).unwrap_err();
        assert!(matches!(err, Error::MalformedFrame { offset: 5, .. }));
        let err = SpikeMessage::decode(&b, 7, 10).unwrap_err();
        assert!(matches!(err, Error::MalformedFrame { sender: 7, offset: 0, .. }));
        // timestep outside [10, 12)
        let err = SpikeMessage::decode(&b, 2, 2).unwrap_err();
        assert!(matches!(err, Error::MalformedFrame { offset: 24, .. }));
    }

    proptest! {
        #[test]
        fn round_trip(sender in any::<u32>(), start in 0u64..1 << 40, raw in prop::collection::vec((any::<u64>(), 0u64..10), 0..50)) {
            let spikes = raw.into_iter().map(|(n, dt)| Spike { step: start + dt, neuron: NeuronId(n) }).collect();
            let m = SpikeMessage { sender, window_start: start, spikes };
            let b = m.encode();
            prop_assert_eq!(b.len(), m.encoded_len());
            prop_assert_eq!(SpikeMessage::decode(&b, sender, 10).unwrap(), m);
        }
    }
}
