//! Shot container writer.
//!
//! Layout: a directory holding `manifest.txt` plus one raw little-endian
//! float32 blob per field. The manifest starts with the kind line, then
//! `meta <key> <value>` lines (width, height, spp first), then
//! `field <name> <dtype> <dims> <file> <offset>` lines. Readers parse meta
//! values as int, then float, then string, so float-typed values must keep
//! a decimal point even when integral.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::render::{ShotData, DESCRIPTOR_CHANNELS, GBUFFER_CHANNELS};

pub const SHOT_KIND: &str = "pixelens-shot v1";

/// Shortest decimal form that still reads back as a float, not an int.
fn fmt_float(v: f64) -> String {
    let mut s = format!("{}", v);
    if !s.contains('.') && !s.contains('e') && !s.contains('E') {
        s.push_str(".0");
    }
    s
}

fn write_raw(dir: &Path, name: &str, data: &[f32]) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(format!("{name}.raw")), bytes)
}

/// Write `shot` as a container directory at `path` (created if missing).
pub fn write_shot(path: &Path, shot: &ShotData) -> std::io::Result<()> {
    fs::create_dir_all(path)?;
    let h = shot.height;
    let w = shot.width;
    let fields: [(&str, &[f32], Vec<usize>); 7] = [
        ("noisy_diffuse", &shot.noisy_diffuse, vec![h, w, 3]),
        ("noisy_specular", &shot.noisy_specular, vec![h, w, 3]),
        ("gbuffer_diffuse", &shot.gbuffer_diffuse, vec![h, w, GBUFFER_CHANNELS]),
        ("gbuffer_specular", &shot.gbuffer_specular, vec![h, w, GBUFFER_CHANNELS]),
        ("descriptors", &shot.descriptors, vec![h, w, shot.spp, DESCRIPTOR_CHANNELS]),
        ("reference_diffuse", &shot.reference_diffuse, vec![h, w, 3]),
        ("reference_specular", &shot.reference_specular, vec![h, w, 3]),
    ];

    let mut lines = vec![SHOT_KIND.to_string()];
    lines.push(format!("meta width {w}"));
    lines.push(format!("meta height {h}"));
    lines.push(format!("meta spp {}", shot.spp));
    lines.push(format!("meta scene_id {}", shot.scene_id));
    lines.push(format!("meta seed {}", shot.seed));
    lines.push(format!("meta ref_spp {}", shot.ref_spp));
    lines.push("meta generator microtracer v1".to_string());
    lines.push(format!("meta depth_scale {}", fmt_float(shot.depth_scale)));

    for (name, data, dims) in &fields {
        let count: usize = dims.iter().product();
        assert_eq!(data.len(), count, "field {name}: bad buffer length");
        let dims_s = dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        lines.push(format!("field {name} float32 {dims_s} {name}.raw 0"));
        write_raw(path, name, data)?;
    }

    let mut f = fs::File::create(path.join("manifest.txt"))?;
    f.write_all(lines.join("\n").as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_meta_keeps_a_decimal_point() {
        assert_eq!(fmt_float(1.0), "1.0");
        assert_eq!(fmt_float(12.25), "12.25");
        assert_eq!(fmt_float(0.5), "0.5");
        assert_eq!(fmt_float(3.0), "3.0");
    }

    #[test]
    fn manifest_lists_every_field() {
        let dir = std::env::temp_dir().join(format!("microtracer_ct_{}", std::process::id()));
        let shot = ShotData {
            width: 2,
            height: 1,
            spp: 1,
            ref_spp: 1,
            seed: 0,
            scene_id: "t".into(),
            depth_scale: 1.0,
            noisy_diffuse: vec![0.0; 6],
            noisy_specular: vec![0.0; 6],
            reference_diffuse: vec![0.0; 6],
            reference_specular: vec![0.0; 6],
            gbuffer_diffuse: vec![0.0; 2 * GBUFFER_CHANNELS],
            gbuffer_specular: vec![0.0; 2 * GBUFFER_CHANNELS],
            descriptors: vec![0.0; 2 * DESCRIPTOR_CHANNELS],
        };
        write_shot(&dir, &shot).unwrap();
        let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
        assert!(manifest.starts_with(SHOT_KIND));
        assert!(manifest.ends_with('\n'));
        for name in [
            "noisy_diffuse",
            "noisy_specular",
            "gbuffer_diffuse",
            "gbuffer_specular",
            "descriptors",
            "reference_diffuse",
            "reference_specular",
        ] {
            assert!(manifest.contains(&format!("field {name} float32")), "{name} missing");
            assert!(dir.join(format!("{name}.raw")).is_file());
        }
        assert!(manifest.contains("meta depth_scale 1.0"));
        assert!(manifest.contains("field descriptors float32 1,2,1,36 descriptors.raw 0"));
        fs::remove_dir_all(&dir).unwrap();
    }
}
