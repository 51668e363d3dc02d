pub mod codec;
pub mod controller;

pub use codec::{
    decode_eth_flowmod, decode_frame, decode_wss_flowmod, encode_eth_flowmod, encode_frame, encode_wss_flowmod,
    from_hex, to_hex, CodecError, EthFlowMod, Message, WssFlowMod,
};
pub use controller::{replay, Applied, ControlError, Controller, DevicePlan, EthOp, LoggedMessage, OpticalOp, Plant};
