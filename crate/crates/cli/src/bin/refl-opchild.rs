//! Test child for the external operator protocol.
//!
//! Reads float raster records from stdin and answers each with one record on
//! stdout, until stdin closes.
//!
//! ```text
//! refl-opchild echo
//! refl-opchild select FIRST COUNT COLORSPACE   channels [FIRST, FIRST+COUNT)
//! refl-opchild upscale K COLORSPACE            nearest-neighbour K× enlargement
//! refl-opchild wrong-dims                      answers one column short
//! refl-opchild garbage                         answers with a bad magic
//! refl-opchild crash [AFTER]                   exits 3 after AFTER good answers
//! refl-opchild sleep SECONDS                   never answers
//! ```

use std::io::{BufReader, BufWriter, Write};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Duration;

use facerefl::raster::{read_rmap, write_rmap, ColorSpace, RawRaster};

enum Mode {
    Echo,
    Select(usize, usize, ColorSpace),
    Upscale(usize, ColorSpace),
    WrongDims,
    Garbage,
    Crash(usize),
    Sleep(f64),
}

fn arg<T: FromStr>(args: &[String], i: usize, what: &str) -> Result<T, String> {
    args.get(i)
        .ok_or_else(|| format!("missing {what}"))?
        .parse()
        .map_err(|_| format!("bad {what}: {}", args[i]))
}

fn parse(args: &[String]) -> Result<Mode, String> {
    let mode = args.first().map(String::as_str).unwrap_or("echo");
    Ok(match mode {
        "echo" => Mode::Echo,
        "select" => Mode::Select(
            arg(args, 1, "FIRST")?,
            arg(args, 2, "COUNT")?,
            arg(args, 3, "COLORSPACE")?,
        ),
        "upscale" => Mode::Upscale(arg(args, 1, "K")?, arg(args, 2, "COLORSPACE")?),
        "wrong-dims" => Mode::WrongDims,
        "garbage" => Mode::Garbage,
        "crash" => Mode::Crash(if args.len() > 1 { arg(args, 1, "AFTER")? } else { 0 }),
        "sleep" => Mode::Sleep(arg(args, 1, "SECONDS")?),
        other => return Err(format!("unknown mode {other:?}")),
    })
}

fn respond(mode: &Mode, r: RawRaster) -> RawRaster {
    match *mode {
        Mode::Echo | Mode::Crash(_) | Mode::Garbage | Mode::Sleep(_) => r,
        Mode::Select(first, count, colorspace) => RawRaster {
            data: r
                .data
                .chunks_exact(r.channels)
                .flat_map(|t| t[first..first + count].iter().copied())
                .collect(),
            channels: count,
            colorspace,
            ..r
        },
        Mode::Upscale(k, colorspace) => {
            let (w, c) = (r.width * k, r.channels);
            let mut data = Vec::with_capacity(r.data.len() * k * k);
            for y in 0..r.height * k {
                for x in 0..w {
                    let i = (y / k) * r.width + x / k;
                    data.extend_from_slice(&r.data[i * c..(i + 1) * c]);
                }
            }
            RawRaster {
                width: w,
                height: r.height * k,
                data,
                colorspace,
                ..r
            }
        }
        Mode::WrongDims => {
            let w = r.width.saturating_sub(1);
            let data = r
                .data
                .chunks_exact(r.width * r.channels)
                .flat_map(|row| row[..w * r.channels].iter().copied())
                .collect();
            RawRaster { width: w, data, ..r }
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = match parse(&args) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("refl-opchild: {e}");
            return ExitCode::from(2);
        }
    };
    let mut input = BufReader::new(std::io::stdin().lock());
    let mut output = BufWriter::new(std::io::stdout().lock());
    let mut served = 0usize;
    // a read error here is the parent closing stdin
    while let Ok(record) = read_rmap(&mut input) {
        match mode {
            Mode::Crash(after) if served >= after => return ExitCode::from(3),
            Mode::Sleep(s) => std::thread::sleep(Duration::from_secs_f64(s)),
            Mode::Garbage => {
                let _ = output.write_all(b"JUNK0000000000000000").and_then(|_| output.flush());
                continue;
            }
            _ => {}
        }
        let r = respond(&mode, record);
        let ok =
            write_rmap(&mut output, r.width, r.height, r.channels, r.colorspace, &r.data).and_then(|_| output.flush());
        if ok.is_err() {
            break;
        }
        served += 1;
    }
    ExitCode::SUCCESS
}
