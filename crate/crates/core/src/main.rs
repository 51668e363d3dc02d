use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vonsim::engine::run;
use vonsim::ethernet::MacAddr;
use vonsim::proto::{
    decode_eth_flowmod, decode_frame, decode_wss_flowmod, encode_eth_flowmod, encode_frame, encode_wss_flowmod,
    from_hex, to_hex, EthFlowMod, Message, WssFlowMod,
};
use vonsim::report::{emit_report, summarize};
use vonsim::scenario::{load_scenario, SHIPPED};
use vonsim::spectrum::Frequency;
use vonsim::vbvt::parse_input_port;

#[derive(Parser)]
#[command(name = "vonsim", version, about = "Virtual optical network testbed emulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or shipped scenario name) and write its report.
    Run {
        scenario: String,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Load and check a scenario without running it.
    Validate { scenario: String },
    /// Encode a flow-mod and print it as hex.
    Encode {
        #[command(subcommand)]
        what: EncodeCmd,
    },
    /// Decode hex bytes into a flow-mod.
    Decode {
        #[arg(value_enum)]
        what: DecodeKind,
        /// Hex bytes; spaces are optional.
        hex: Vec<String>,
    },
    /// List the scenarios built into the binary.
    ListScenarios,
}

#[derive(Subcommand)]
enum EncodeCmd {
    Wss(WssArgs),
    Eth(EthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameKind {
    Add,
    Del,
}

#[derive(Args)]
struct WssArgs {
    /// Input port, A-D or 10-13.
    #[arg(long = "in")]
    in_port: String,
    #[arg(long = "out")]
    out_port: u16,
    #[arg(long)]
    center_thz: f64,
    #[arg(long)]
    width_ghz: f64,
    /// Wrap the body in a tagged frame.
    #[arg(long, value_enum)]
    frame: Option<FrameKind>,
}

#[derive(Args)]
struct EthArgs {
    /// Omit to wildcard.
    #[arg(long)]
    in_port: Option<u16>,
    /// Omit to wildcard.
    #[arg(long)]
    dst_mac: Option<MacAddr>,
    #[arg(long = "out")]
    out_port: u16,
    #[arg(long, default_value_t = 0)]
    priority: u16,
    #[arg(long, value_enum)]
    frame: Option<FrameKind>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeKind {
    Wss,
    Eth,
    Frame,
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.cmd {
        Cmd::Run { scenario, out, seed, duration } => {
            let mut scn = load_scenario(&scenario)?;
            if let Some(s) = seed {
                scn = scn.with_seed(s);
            }
            if let Some(d) = duration {
                scn = scn.with_duration(d);
            }
            let report = run(&scn)?;
            emit_report(&report, &out)?;
            let s = summarize(&report);
            println!(
                "{}: {} ticks, {} records, {} decisions, {} messages -> {}",
                s.scenario,
                s.duration,
                s.records,
                report.decisions.len(),
                s.messages,
                out.display()
            );
        }
        Cmd::Validate { scenario } => {
            let scn = load_scenario(&scenario)?;
            println!(
                "{}: ok ({} nodes, {} links, {} services, {} ticks)",
                scn.name,
                scn.nodes.len(),
                scn.links.len(),
                scn.services.len(),
                scn.duration
            );
        }
        Cmd::Encode { what } => {
            let bytes = match what {
                EncodeCmd::Wss(a) => {
                    let m = WssFlowMod {
                        in_port: parse_input_port(&a.in_port)?,
                        out_port: a.out_port,
                        center_freq: u32::try_from(Frequency::from_thz(a.center_thz)?.units())?,
                        filter_width: (a.width_ghz * 1000.0).round() as u32,
                    };
                    match a.frame {
                        None => encode_wss_flowmod(&m)?,
                        Some(FrameKind::Add) => encode_frame(&Message::WssAdd(m))?,
                        Some(FrameKind::Del) => encode_frame(&Message::WssDel(m))?,
                    }
                }
                EncodeCmd::Eth(a) => {
                    let m = EthFlowMod {
                        in_port: a.in_port,
                        dst_mac: a.dst_mac,
                        out_port: a.out_port,
                        priority: a.priority,
                    };
                    match a.frame {
                        None => encode_eth_flowmod(&m),
                        Some(FrameKind::Add) => encode_frame(&Message::EthAdd(m))?,
                        Some(FrameKind::Del) => encode_frame(&Message::EthDel(m))?,
                    }
                }
            };
            println!("{}", to_hex(&bytes));
        }
        Cmd::Decode { what, hex } => {
            let bytes = from_hex(&hex.join(""))?;
            match what {
                DecodeKind::Wss => println!("{}", decode_wss_flowmod(&bytes)?),
                DecodeKind::Eth => println!("{}", decode_eth_flowmod(&bytes)?),
                DecodeKind::Frame => println!("{}", decode_frame(&bytes)?),
            }
        }
        Cmd::ListScenarios => {
            for (name, _) in SHIPPED {
                let scn = load_scenario(name)?;
                println!("{name:<10} {}", scn.description);
            }
        }
    }
    Ok(())
}
