//! Operators backed by a child process speaking the float raster format.
//!
//! Each request is one raster record (`RMAP` header plus payload) on the
//! child's stdin; each response is one record on its stdout. Children are
//! persistent: a worker serves patches until it misbehaves, at which point
//! it is killed and a fresh one is spawned for the next request.

use std::io::{BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{finish_output, Contract, OperatorError, Result, TranslationOperator};
use crate::raster::io::{parse_header, write_rmap, RawRaster, RMAP_HEADER_LEN};
use crate::raster::{MapStack, RasterMap};

/// Largest response payload accepted before the header is trusted.
const MAX_RESPONSE_SAMPLES: usize = 1 << 30;

enum Frame {
    Raster(RawRaster),
    Malformed(String),
    Closed,
}

struct Worker {
    child: Child,
    requests: Option<Sender<Vec<u8>>>,
    responses: Receiver<Frame>,
}

fn read_frame(r: &mut impl Read) -> Frame {
    let mut header = [0u8; RMAP_HEADER_LEN];
    let mut got = 0;
    while got < RMAP_HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Frame::Closed,
            Ok(0) => return Frame::Malformed(format!("{got}-byte truncated header")),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(_) => return Frame::Closed,
        }
    }
    let (width, height, channels, colorspace) = match parse_header(&header) {
        Ok(h) => h,
        Err(e) => return Frame::Malformed(e.to_string()),
    };
    let samples = width.saturating_mul(height).saturating_mul(channels);
    if samples > MAX_RESPONSE_SAMPLES {
        return Frame::Malformed(format!("header claiming {width}×{height}×{channels}"));
    }
    let mut bytes = vec![0u8; samples * 4];
    if r.read_exact(&mut bytes).is_err() {
        return Frame::Malformed(format!("truncated {width}×{height}×{channels} payload"));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Frame::Malformed(format!("non-finite sample at index {i}"));
    }
    Frame::Raster(RawRaster {
        width,
        height,
        channels,
        colorspace,
        data,
    })
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Self> {
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| OperatorError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (req_tx, req_rx) = mpsc::channel::<Vec<u8>>();
        let (resp_tx, resp_rx) = mpsc::channel();
        // the writer owns stdin so a child that never reads cannot block us
        thread::spawn(move || {
            let mut stdin = stdin;
            for bytes in req_rx {
                if stdin.write_all(&bytes).and_then(|_| stdin.flush()).is_err() {
                    break;
                }
            }
        });
        thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            loop {
                let frame = read_frame(&mut r);
                let stop = !matches!(frame, Frame::Raster(_));
                if resp_tx.send(frame).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            requests: Some(req_tx),
            responses: resp_rx,
        })
    }

    /// Exit status, waiting briefly for a child that closed its stdout.
    fn status(&mut self, grace: Duration) -> Option<ExitStatus> {
        let start = Instant::now();
        loop {
            if let Ok(Some(s)) = self.child.try_wait() {
                return Some(s);
            }
            if start.elapsed() >= grace {
                return None;
            }
            thread::sleep(Duration::from_millis(5));
        }
    }

    fn kill(mut self) {
        self.requests.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn shutdown(mut self) {
        // closing stdin is the orderly stop signal
        self.requests.take();
        if self.status(Duration::from_secs(2)).is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// A [`TranslationOperator`] that forwards each patch to a child process.
pub struct ExternalOperator {
    contract: Contract,
    command: Vec<String>,
    timeout: Duration,
    whole_image: bool,
    idle: Mutex<Vec<Worker>>,
}

impl ExternalOperator {
    pub fn new(contract: Contract, command: Vec<String>, timeout: Duration) -> Self {
        assert!(!command.is_empty(), "external operator needs a command");
        ExternalOperator {
            contract,
            command,
            timeout,
            whole_image: false,
            idle: Mutex::new(Vec::new()),
        }
    }

    pub fn whole_image(mut self, whole: bool) -> Self {
        self.whole_image = whole;
        self
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn checkout(&self) -> Result<Worker> {
        if let Some(w) = self.idle.lock().expect("worker pool").pop() {
            return Ok(w);
        }
        Worker::spawn(&self.command)
    }

    fn protocol(expected: impl Into<String>, got: impl Into<String>) -> OperatorError {
        OperatorError::Protocol {
            expected: expected.into(),
            got: got.into(),
        }
    }

    fn crash(&self, worker: &mut Worker) -> OperatorError {
        let status = match worker.status(Duration::from_secs(1)) {
            Some(s) => s.to_string(),
            None => "closed output while still running".to_string(),
        };
        OperatorError::Crash {
            command: self.command.join(" "),
            status,
        }
    }

    fn exchange(&self, worker: &mut Worker, input: &MapStack) -> Result<RawRaster> {
        let (w, h) = input.dims();
        let mut bytes = Vec::new();
        write_rmap(
            &mut bytes,
            w,
            h,
            input.channels(),
            input.colorspace(),
            &input.interleaved(),
        )
        .expect("writing to memory");
        let sent = worker.requests.as_ref().is_some_and(|tx| tx.send(bytes).is_ok());
        if !sent {
            return Err(self.crash(worker));
        }
        match worker.responses.recv_timeout(self.timeout) {
            Ok(Frame::Raster(r)) => Ok(r),
            Ok(Frame::Malformed(m)) => Err(Self::protocol("an RMAP response record", m)),
            Ok(Frame::Closed) | Err(RecvTimeoutError::Disconnected) => Err(self.crash(worker)),
            Err(RecvTimeoutError::Timeout) => Err(OperatorError::Timeout {
                command: self.command.join(" "),
                seconds: self.timeout.as_secs_f64(),
            }),
        }
    }

    fn to_map(&self, input: &MapStack, r: RawRaster) -> Result<RasterMap> {
        let c = &self.contract;
        let (w, h) = input.dims();
        let expected = (w * c.scale, h * c.scale, c.output_channels);
        let got = (r.width, r.height, r.channels);
        if got != expected {
            return Err(Self::protocol(
                format!("{}×{}×{}", expected.0, expected.1, expected.2),
                format!("{}×{}×{}", got.0, got.1, got.2),
            ));
        }
        if r.colorspace != c.output_colorspace {
            return Err(Self::protocol(
                format!("colorspace {}", c.output_colorspace),
                format!("colorspace {}", r.colorspace),
            ));
        }
        let k = c.scale;
        let mask = input.mask().map(|m| {
            (0..expected.0 * expected.1)
                .map(|i| m[(i / expected.0) / k * w + (i % expected.0) / k])
                .collect()
        });
        finish_output(c, expected.0, expected.1, r.data, mask)
    }
}

impl TranslationOperator for ExternalOperator {
    fn contract(&self) -> &Contract {
        &self.contract
    }

    fn backend(&self) -> &'static str {
        "external"
    }

    /// A child process gives no determinism guarantee.
    fn deterministic(&self) -> bool {
        false
    }

    fn whole_image(&self) -> bool {
        self.whole_image
    }

    fn apply(&self, input: &MapStack) -> Result<RasterMap> {
        self.contract.check_input(input)?;
        let mut worker = self.checkout()?;
        match self.exchange(&mut worker, input) {
            Ok(raw) => {
                let out = self.to_map(input, raw);
                if out.is_ok() {
                    self.idle.lock().expect("worker pool").push(worker);
                } else {
                    worker.kill();
                }
                out
            }
            Err(e) => {
                worker.kill();
                Err(e)
            }
        }
    }
}

impl Drop for ExternalOperator {
    fn drop(&mut self) {
        let workers = std::mem::take(&mut *self.idle.lock().unwrap_or_else(|e| e.into_inner()));
        for w in workers {
            w.shutdown();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::{apply_tiled, PatchError, Tiling};
    use crate::raster::{stack, ColorSpace, MapKind};

    fn identity_contract() -> Contract {
        Contract {
            name: "identity".into(),
            input: vec!["R".into(), "G".into(), "B".into()],
            output_kind: MapKind::Texture,
            output_channels: 3,
            output_colorspace: ColorSpace::Srgb,
            scale: 1,
        }
    }

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    fn input() -> MapStack {
        stack(vec![crate::assets::skin_albedo(40, 24, 9)
            .retag(MapKind::Texture)
            .unwrap()])
        .unwrap()
    }

    #[test]
    fn cat_echo_is_identity_through_tiles() {
        let op = ExternalOperator::new(identity_contract(), vec!["cat".into()], Duration::from_secs(20));
        let s = input();
        let out = apply_tiled(&s, &Tiling::new(16), 1, |p, _| op.apply(&p)).unwrap();
        for (a, b) in out.data().iter().zip(s.layers()[0].data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn crash_reports_exit_status_and_origin() {
        let op = ExternalOperator::new(identity_contract(), sh("exit 1"), Duration::from_secs(20));
        let err = apply_tiled(&input(), &Tiling::new(16), 1, |p, _| op.apply(&p)).unwrap_err();
        let PatchError::Operator { origin, source } = &err else {
            panic!("{err}")
        };
        assert_eq!(*origin, (0, 0));
        assert!(source.to_string().contains("exit status: 1"), "{source}");
    }

    #[test]
    fn bad_magic_is_a_protocol_error() {
        let script = "head -c 20 >/dev/null; printf 'XXXXXXXXXXXXXXXXXXXXXXXX'; sleep 1";
        let op = ExternalOperator::new(identity_contract(), sh(script), Duration::from_secs(20));
        let err = op.apply(&input()).unwrap_err();
        assert!(matches!(err, OperatorError::Protocol { .. }), "{err}");
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn silent_child_times_out() {
        let op = ExternalOperator::new(identity_contract(), sh("sleep 30"), Duration::from_millis(300));
        let start = Instant::now();
        let err = op.apply(&input()).unwrap_err();
        assert!(matches!(err, OperatorError::Timeout { .. }), "{err}");
        assert!(start.elapsed() < Duration::from_secs(10));
    }
}
