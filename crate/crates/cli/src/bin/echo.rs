//! Reference external evaluator: answers each episode request with penalties
//! computed from simple heightmap statistics and the seed.
//!
//! Flags for exercising failure handling:
//! `--malformed` omits the `steps` field, `--hang` never answers,
//! `--exit-after N` exits after N answers.

use std::io::{self, BufRead, Write};
use std::time::Duration;

use serde_json::{json, Value};

struct Mode {
    malformed: bool,
    hang: bool,
    exit_after: Option<u64>,
}

fn parse_args() -> Result<Mode, String> {
    let mut mode = Mode { malformed: false, hang: false, exit_after: None };
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--malformed" => mode.malformed = true,
            "--hang" => mode.hang = true,
            "--exit-after" => {
                let n = args.next().ok_or("--exit-after needs a value")?;
                mode.exit_after = Some(n.parse().map_err(|e| format!("--exit-after: {e}"))?);
            }
            other => return Err(format!("unknown argument {other}")),
        }
    }
    Ok(mode)
}

fn respond(request: &Value) -> Result<Value, String> {
    if request["type"] != "episode" {
        return Err("expected an episode request".into());
    }
    let rows: Vec<Vec<f64>> = serde_json::from_value(request["heightmap"]["rows"].clone())
        .map_err(|e| format!("heightmap.rows: {e}"))?;
    let seed = request["seed"].as_u64().ok_or("seed must be an integer")?;
    let dt = request["dt"].as_f64().ok_or("dt must be a number")?;
    let horizon = request["horizon"].as_f64().ok_or("horizon must be a number")?;

    let cells: Vec<f64> = rows.iter().flatten().copied().collect();
    let n = cells.len().max(1) as f64;
    let mean_abs = cells.iter().map(|h| h.abs()).sum::<f64>() / n;
    let (lo, hi) = cells.iter().fold((0.0f64, 0.0f64), |(lo, hi), &h| (lo.min(h), hi.max(h)));
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (j, &h) in row.iter().enumerate() {
            if let Some(next) = rows.get(i + 1).and_then(|r| r.get(j)) {
                dx += (next - h).abs();
            }
            if let Some(next) = row.get(j + 1) {
                dy += (next - h).abs();
            }
        }
    }
    let jitter = (seed % 1000) as f64 * 1e-4;
    Ok(json!({
        "type": "result",
        "penalties": [0.01 + mean_abs + jitter, 0.5 + 10.0 * dx / n, 0.2 + 10.0 * dy / n, hi - lo, jitter],
        "collision": hi - lo > 1.0,
        "collision_count": cells.iter().filter(|h| **h > 0.2).count(),
        "steps": (horizon / dt).round() as u64,
    }))
}

fn main() {
    let mode = match parse_args() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("terrain-qd-echo: {e}");
            std::process::exit(1);
        }
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    let mut answered = 0u64;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if mode.exit_after == Some(answered) {
            std::process::exit(3);
        }
        if mode.hang {
            std::thread::sleep(Duration::from_secs(3600));
        }
        let request: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("terrain-qd-echo: bad request: {e}");
                std::process::exit(1);
            }
        };
        let mut response = match respond(&request) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("terrain-qd-echo: {e}");
                std::process::exit(1);
            }
        };
        if mode.malformed {
            response.as_object_mut().expect("object").remove("steps");
        }
        if writeln!(stdout, "{response}").and_then(|()| stdout.flush()).is_err() {
            break;
        }
        answered += 1;
    }
}
