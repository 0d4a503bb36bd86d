//! Physical layer: modulation, AWGN, FEC, and the digital/analog transports.

pub mod channel;
pub mod fec;
pub mod ldpc;
pub mod modulation;
pub mod transport;

pub use channel::{awgn, db_to_linear, eb_n0_db, es_n0_db, ChannelConfig};
pub use fec::{fec_decode, fec_encode, CodedBits, FecChoice, FecScheme};
pub use ldpc::LdpcCode;
pub use modulation::{demodulate, modulate, ModulationScheme, SymbolFrame};
pub use transport::{
    transmit_analog, transmit_digital, AnalogTransmission, ChannelUsage, DigitalOutcome,
    DigitalTransmission,
};
