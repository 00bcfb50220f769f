//! External evaluators: a child process answering one JSON line per episode.
//!
//! Request (one line on the child's stdin):
//! `{"type":"episode","heightmap":{"resolution":r,"rows":[[...],...]},"seed":n,"dt":0.005,"horizon":20.0}`
//!
//! Response (one line on the child's stdout):
//! `{"type":"result","penalties":[ang,lin_x,lin_y,contact,stumble],"collision":false,"collision_count":0,"steps":4000}`
//!
//! `rows` holds one array per x-index. Requests are answered in order.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{Map, Value};
use terrain_qd_core::evaluation::{
    EpisodeEvaluator, EpisodeResult, EpisodeSpec, EvaluatorFault, FaultKind, PENALTY_CHANNELS,
};
use terrain_qd_core::Heightmap;

#[derive(Serialize)]
struct HeightmapMessage<'a> {
    resolution: f64,
    rows: Vec<&'a [f64]>,
}

/// JSON of the `heightmap` request field.
pub fn heightmap_json(heightmap: &Heightmap) -> String {
    let rows = (0..heightmap.rows()).map(|i| heightmap.row(i)).collect();
    serde_json::to_string(&HeightmapMessage { resolution: heightmap.resolution_m(), rows }).expect("finite heights")
}

/// One request line, without the trailing newline.
pub fn request_line(heightmap_json: &str, spec: &EpisodeSpec) -> String {
    let num = |v: f64| serde_json::to_string(&v).expect("finite");
    format!(
        r#"{{"type":"episode","heightmap":{heightmap_json},"seed":{},"dt":{},"horizon":{}}}"#,
        spec.seed,
        num(spec.dt),
        num(spec.horizon_s)
    )
}

fn protocol(message: impl Into<String>) -> EvaluatorFault {
    EvaluatorFault::new(FaultKind::Protocol, message)
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value, EvaluatorFault> {
    obj.get(name).ok_or_else(|| protocol(format!("response is missing field `{name}`")))
}

fn count(obj: &Map<String, Value>, name: &str) -> Result<u32, EvaluatorFault> {
    field(obj, name)?
        .as_u64()
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| protocol(format!("field `{name}` must be a non-negative integer")))
}

/// Parses one response line.
pub fn parse_response(line: &str) -> Result<EpisodeResult, EvaluatorFault> {
    let value: Value = serde_json::from_str(line).map_err(|e| protocol(format!("response is not valid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| protocol("response is not a JSON object"))?;
    match field(obj, "type")? {
        Value::String(t) if t == "result" => {}
        other => return Err(protocol(format!("field `type` must be \"result\", got {other}"))),
    }
    let penalties = field(obj, "penalties")?
        .as_array()
        .filter(|a| a.len() == PENALTY_CHANNELS)
        .ok_or_else(|| protocol(format!("field `penalties` must be an array of {PENALTY_CHANNELS} numbers")))?;
    let mut raw_penalties = [0.0; PENALTY_CHANNELS];
    for (k, (dst, v)) in raw_penalties.iter_mut().zip(penalties).enumerate() {
        *dst = v.as_f64().ok_or_else(|| protocol(format!("field `penalties[{k}]` is not a number")))?;
    }
    let collision = field(obj, "collision")?
        .as_bool()
        .ok_or_else(|| protocol("field `collision` must be a boolean"))?;
    Ok(EpisodeResult {
        raw_penalties,
        collision,
        collision_count: count(obj, "collision_count")?,
        steps: count(obj, "steps")?,
    })
}

/// A running evaluator process. After the first fault the session is dead
/// and every later episode fails with the same fault.
pub struct ExternalEvaluator {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<io::Result<String>>,
    timeout: Duration,
    dead: Option<EvaluatorFault>,
}

impl ExternalEvaluator {
    pub fn spawn(command: &[String], timeout: Duration) -> io::Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { stdin: child.stdin.take(), child, lines, timeout, dead: None })
    }

    fn exited_fault(&mut self, what: &str) -> EvaluatorFault {
        let status = match self.child.try_wait() {
            Ok(Some(s)) => s.to_string(),
            _ => match self.child.wait() {
                Ok(s) => s.to_string(),
                Err(e) => e.to_string(),
            },
        };
        EvaluatorFault::new(FaultKind::Exited, format!("evaluator exited ({status}) {what}"))
    }

    fn exchange(&mut self, request: &str) -> Result<EpisodeResult, EvaluatorFault> {
        if let Some(f) = &self.dead {
            return Err(f.clone());
        }
        let r = self.exchange_inner(request);
        if let Err(f) = &r {
            if f.kind != FaultKind::Protocol {
                let _ = self.child.kill();
            }
            self.dead = Some(f.clone());
        }
        r
    }

    fn exchange_inner(&mut self, request: &str) -> Result<EpisodeResult, EvaluatorFault> {
        let stdin = self.stdin.as_mut().expect("stdin open while alive");
        let sent = stdin
            .write_all(request.as_bytes())
            .and_then(|()| stdin.write_all(b"\n"))
            .and_then(|()| stdin.flush());
        if let Err(e) = sent {
            return Err(if e.kind() == io::ErrorKind::BrokenPipe {
                self.exited_fault("before reading the request")
            } else {
                EvaluatorFault::new(FaultKind::Io, format!("writing request: {e}"))
            });
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return parse_response(&line),
                Ok(Err(e)) => return Err(EvaluatorFault::new(FaultKind::Io, format!("reading response: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(EvaluatorFault::new(
                        FaultKind::Timeout,
                        format!("no response within {} s", self.timeout.as_secs_f64()),
                    ))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(self.exited_fault("before responding")),
            }
        }
    }
}

impl EpisodeEvaluator for ExternalEvaluator {
    fn run_episode(&mut self, heightmap: &Heightmap, spec: &EpisodeSpec) -> Result<EpisodeResult, EvaluatorFault> {
        self.exchange(&request_line(&heightmap_json(heightmap), spec))
    }

    fn run_episodes(
        &mut self,
        heightmap: &Heightmap,
        specs: &[EpisodeSpec],
    ) -> Vec<Result<EpisodeResult, EvaluatorFault>> {
        let hm = heightmap_json(heightmap);
        let mut out = Vec::with_capacity(specs.len());
        for spec in specs {
            let r = self.exchange(&request_line(&hm, spec));
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        // Closing stdin asks the child to finish; stragglers are killed.
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
