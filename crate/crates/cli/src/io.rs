//! File formats: genome JSON, archive JSON, heightmap CSV/PGM and the
//! per-elite CSV exports.

use std::fs;
use std::path::Path;

use serde::Serialize;
use terrain_qd_core::descriptors::ratio_descriptors;
use terrain_qd_core::evaluation::PenaltyChannel;
use terrain_qd_core::terrain::MAX_ABS_HEIGHT_M;
use terrain_qd_core::{Archive, ArchiveSnapshot, DescriptorMode, Elite, Heightmap, TerrainGenome};

use crate::error::CliError;

/// Formats a float with the shortest representation that parses back to the
/// same value.
pub fn num(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| if v.is_nan() { "NaN".into() } else { v.to_string() })
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("values serialize");
    text.push('\n');
    write_file(path, text)
}

fn parse_error(text: &str, e: &serde_json::Error) -> String {
    let (line, column) = (e.line(), e.column());
    if line == 0 {
        return e.to_string();
    }
    // Byte offset of the reported position.
    let offset: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum::<usize>() + column.saturating_sub(1);
    format!("parse error at byte offset {offset} (line {line}, column {column}): {e}")
}

/// Reads a genome file: `{"params": [64 numbers]}`.
pub fn read_genome(path: &Path) -> Result<TerrainGenome, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::load(path, e))?;
    parse_genome(&text).map_err(|m| CliError::load(path, m))
}

pub fn parse_genome(text: &str) -> Result<TerrainGenome, String> {
    serde_json::from_str(text).map_err(|e| {
        if e.line() == 0 {
            // Wrong length or non-finite values carry no position; point at
            // the `params` array.
            let offset = text.find("\"params\"").unwrap_or(0);
            format!("invalid genome at byte offset {offset}: {e}")
        } else {
            parse_error(text, &e)
        }
    })
}

pub fn write_genome(path: &Path, genome: &TerrainGenome) -> Result<(), CliError> {
    write_json(path, genome)
}

pub fn read_archive(path: &Path) -> Result<Archive, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::load(path, e))?;
    let snapshot: ArchiveSnapshot = serde_json::from_str(&text).map_err(|e| CliError::load(path, parse_error(&text, &e)))?;
    Archive::from_snapshot(snapshot).map_err(|e| CliError::load(path, e))
}

pub fn archive_json(archive: &Archive) -> String {
    serde_json::to_string_pretty(&archive.to_snapshot()).expect("archive serializes") + "\n"
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<(), CliError> {
    write_file(path, archive_json(archive))
}

/// One line per x-index, comma-separated heights along y.
pub fn heightmap_csv(hm: &Heightmap) -> String {
    let mut out = String::with_capacity(hm.heights().len() * 12);
    for i in 0..hm.rows() {
        let row: Vec<String> = hm.row(i).iter().map(|&h| num(h)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_heightmap_csv(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1)))
                .collect()
        })
        .collect()
}

/// 16-bit binary PGM, one image row per x-index; heights in `[-2, 2]` map
/// affinely onto `[0, 65535]`.
pub fn heightmap_pgm(hm: &Heightmap) -> Vec<u8> {
    let header = format!("P5\n{} {}\n65535\n", hm.cols(), hm.rows());
    let mut out = header.into_bytes();
    out.reserve(hm.heights().len() * 2);
    for &h in hm.heights() {
        out.extend_from_slice(&pgm_level(h).to_be_bytes());
    }
    out
}

pub fn pgm_level(h: f64) -> u16 {
    let t = (h + MAX_ABS_HEIGHT_M) / (2.0 * MAX_ABS_HEIGHT_M);
    (t.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn ratio_names(mode: DescriptorMode) -> Vec<String> {
    let mut names: Vec<String> = PenaltyChannel::ALL.iter().map(|c| c.name().to_string()).collect();
    if mode == DescriptorMode::Anymal {
        names.push("collision_count".into());
    }
    names
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn ratios(elite: &Elite, mode: DescriptorMode) -> Vec<f64> {
    ratio_descriptors(&elite.report, mode).unwrap_or_else(|_| vec![f64::NAN; mode.ratio_dims()])
}

fn to_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// One row per elite: key, bins, collision flag, ratios, fitness terms and
/// the per-channel means and standard deviations.
pub fn summary_csv(archive: &Archive) -> String {
    let mode = archive.mode();
    let dims = mode.ratio_dims();
    let names = ratio_names(mode);
    let mut header = vec!["key".to_string()];
    header.extend((0..dims).map(|k| format!("bin_{}", names[k])));
    header.push("collision".into());
    header.extend(names.iter().map(|n| format!("ratio_{n}")));
    header.extend(["fitness", "mean_term", "std_term", "collision_term"].map(String::from));
    header.extend(names.iter().map(|n| format!("mean_{n}")));
    header.extend(names.iter().map(|n| format!("std_{n}")));
    header.extend(["any_collision", "non_collision_rate", "eval_seed"].map(String::from));
    let rows = archive
        .elites()
        .map(|e| {
            let mut r = vec![e.key.to_string()];
            r.extend(e.key.bins.iter().map(|b| b.to_string()));
            r.push(e.key.collision.map(flag).unwrap_or_default());
            r.extend(ratios(e, mode).into_iter().map(num));
            r.extend([e.fitness.value, e.fitness.mean_term, e.fitness.std_term, e.fitness.collision_term].map(num));
            r.extend(e.report.channel_means(mode).into_iter().map(num));
            r.extend(e.report.channel_stds(mode).into_iter().map(num));
            r.push(flag(e.report.any_collision));
            r.push(num(e.report.non_collision_rate));
            r.push(e.eval_seed.to_string());
            r
        })
        .collect();
    to_csv(header, rows)
}

/// Ratios, collision and fitness per elite, for parallel-coordinates plots.
pub fn parallel_coords_csv(archive: &Archive) -> String {
    let mode = archive.mode();
    let mut header = ratio_names(mode);
    header.extend(["collision", "fitness"].map(String::from));
    let rows = archive
        .elites()
        .map(|e| {
            let mut r: Vec<String> = ratios(e, mode).into_iter().map(num).collect();
            r.push(flag(e.report.any_collision));
            r.push(num(e.fitness.value));
            r
        })
        .collect();
    to_csv(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use terrain_qd_core::terrain::{rasterize, GENOME_LEN};

    #[test]
    fn genome_round_trip() {
        let g = TerrainGenome::new((0..GENOME_LEN).map(|k| (k as f64 / 40.0) - 0.8).collect()).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.starts_with(r#"{"params":["#));
        assert_eq!(parse_genome(&text).unwrap(), g);
    }

    #[test]
    fn genome_errors_name_the_offset() {
        let short = format!(r#"{{"params":[{}]}}"#, vec!["0"; 63].join(","));
        let e = parse_genome(&short).unwrap_err();
        assert!(e.contains("byte offset") && e.contains("64"), "{e}");
        let e = parse_genome("{\"params\": [0, 1,\n x]}").unwrap_err();
        assert!(e.contains("byte offset 19"), "{e}");
    }

    #[test]
    fn csv_heights_parse_back_exactly() {
        let g = TerrainGenome::new((0..GENOME_LEN).map(|k| ((k * 7) % 13) as f64 / 13.0 - 0.4).collect()).unwrap();
        let hm = rasterize(&g, 0.5).unwrap();
        let rows = parse_heightmap_csv(&heightmap_csv(&hm)).unwrap();
        assert_eq!(rows.len(), hm.rows());
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.as_slice(), hm.row(i));
        }
    }

    #[test]
    fn pgm_levels_and_layout() {
        assert_eq!(pgm_level(-2.0), 0);
        assert_eq!(pgm_level(2.0), 65535);
        assert_eq!(pgm_level(0.0), 32768);
        assert_eq!(pgm_level(-5.0), 0);
        let hm = Heightmap::from_fn(2.0, |x, _| if x < 8.0 { -2.0 } else { 2.0 }).unwrap();
        let bytes = heightmap_pgm(&hm);
        let header = b"P5\n4 8\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 2 * 32);
        assert_eq!(&bytes[header.len()..header.len() + 2], &[0, 0]);
        assert_eq!(&bytes[bytes.len() - 2..], &[255, 255]);
    }
}
