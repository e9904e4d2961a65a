//! ASCII PLY for point clouds and trained scenes.
//!
//! Clouds carry `x y z` (double), `red green blue` (uchar) and a `status`
//! (uchar, 0 tracking, 1 position-only, 2 fill). Scenes carry the stored
//! Gaussian parameters as doubles plus a `comment background r g b` line.

use std::fmt::Write as _;
use std::path::Path;

use densesplat_core::odometry::PointStatus;
use densesplat_core::selection::ColoredPoint;
use densesplat_core::splat::{Gaussian3d, SplatScene};
use densesplat_core::Vec3;

use crate::{Error, Result};

const CLOUD_PROPERTIES: [(&str, &str); 7] = [
    ("double", "x"),
    ("double", "y"),
    ("double", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("uchar", "status"),
];

const SCENE_PROPERTIES: [&str; 14] = [
    "x",
    "y",
    "z",
    "log_scale_0",
    "log_scale_1",
    "log_scale_2",
    "rot_w",
    "rot_x",
    "rot_y",
    "rot_z",
    "opacity_logit",
    "red",
    "green",
    "blue",
];

/// Vertex table of an ASCII PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub properties: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::format(path, format!("missing vertex property '{name}'")))
    }
}

pub fn parse(text: &str, path: &Path) -> Result<Table> {
    let bad = |m: String| Error::format(path, m);
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
        return Err(bad("not a PLY file".into()));
    }
    let mut comments = Vec::new();
    let mut properties = Vec::new();
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    loop {
        let Some((n, line)) = lines.next() else { return Err(bad("header has no end_header".into())) };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(bad(format!("unsupported PLY format '{other}' (only ascii)"))),
            ["comment", ..] => comments.push(line.trim()["comment".len()..].trim().to_string()),
            ["element", "vertex", c] => {
                count = Some(c.parse().map_err(|_| bad(format!("line {}: bad vertex count", n + 1)))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => return Err(bad("list properties are not supported".into())),
            ["property", _, name] if in_vertex => properties.push(name.to_string()),
            ["property", ..] => {}
            [] => {}
            _ => return Err(bad(format!("line {}: unexpected header line", n + 1))),
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let mut rows = Vec::with_capacity(count);
    for (n, line) in lines.by_ref().take(count) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("line {}: expected numbers", n + 1)))?;
        if row.len() != properties.len() {
            return Err(bad(format!("line {}: expected {} values, found {}", n + 1, properties.len(), row.len())));
        }
        rows.push(row);
    }
    if rows.len() != count {
        return Err(bad(format!("header announces {count} vertices, file has {}", rows.len())));
    }
    Ok(Table { comments, properties, rows })
}

fn header(out: &mut String, comments: &[String], count: usize, properties: &[(&str, &str)]) {
    out.push_str("ply\nformat ascii 1.0\n");
    for c in comments {
        writeln!(out, "comment {c}").expect("string write");
    }
    writeln!(out, "element vertex {count}").expect("string write");
    for (ty, name) in properties {
        writeln!(out, "property {ty} {name}").expect("string write");
    }
    out.push_str("end_header\n");
}

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn format_cloud(points: &[ColoredPoint]) -> String {
    let mut s = String::new();
    header(&mut s, &[], points.len(), &CLOUD_PROPERTIES);
    for p in points {
        let [r, g, b] = p.color.map(to_byte);
        writeln!(s, "{} {} {} {r} {g} {b} {}", p.position.x, p.position.y, p.position.z, p.status.code())
            .expect("string write");
    }
    s
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<Vec<ColoredPoint>> {
    let table = parse(text, path)?;
    let col: Vec<usize> =
        CLOUD_PROPERTIES.iter().map(|(_, name)| table.column(name, path)).collect::<Result<_>>()?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let code = r[col[6]];
            let status = (code >= 0.0 && code.fract() == 0.0)
                .then(|| PointStatus::from_code(code as u8))
                .flatten()
                .ok_or_else(|| Error::format(path, format!("vertex {i}: unknown status {code}")))?;
            Ok(ColoredPoint {
                position: Vec3::new(r[col[0]], r[col[1]], r[col[2]]),
                color: [r[col[3]] / 255.0, r[col[4]] / 255.0, r[col[5]] / 255.0],
                status,
            })
        })
        .collect()
}

pub fn format_scene(scene: &SplatScene) -> String {
    let mut s = String::new();
    let [r, g, b] = scene.background;
    let props: Vec<(&str, &str)> = SCENE_PROPERTIES.iter().map(|n| ("double", *n)).collect();
    header(&mut s, &[format!("background {r} {g} {b}")], scene.len(), &props);
    for gaussian in &scene.gaussians {
        let p = gaussian.params();
        let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_scene(text: &str, path: &Path) -> Result<SplatScene> {
    let table = parse(text, path)?;
    let col: Vec<usize> = SCENE_PROPERTIES.iter().map(|n| table.column(n, path)).collect::<Result<_>>()?;
    let mut background = [0.0; 3];
    for c in &table.comments {
        if let Some(rest) = c.strip_prefix("background") {
            let v: Vec<f64> = rest.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            if v.len() != 3 {
                return Err(Error::format(path, "malformed background comment"));
            }
            background = [v[0], v[1], v[2]];
        }
    }
    let mut gaussians = Vec::with_capacity(table.rows.len());
    for (i, r) in table.rows.iter().enumerate() {
        let mut params = [0.0; 14];
        for (k, &c) in col.iter().enumerate() {
            params[k] = r[c];
        }
        let mut g = Gaussian3d::isotropic(Vec3::zeros(), 1.0, 0.5, [0.0; 3]);
        g.set_params(&params);
        if !g.is_finite() {
            return Err(Error::format(path, format!("vertex {i}: non-finite parameters")));
        }
        gaussians.push(g);
    }
    Ok(SplatScene::new(gaussians, background))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<Vec<ColoredPoint>> {
    parse_cloud(&read_text(path)?, path)
}

pub fn write_cloud(path: &Path, points: &[ColoredPoint]) -> Result<()> {
    write_text(path, &format_cloud(points))
}

pub fn read_scene(path: &Path) -> Result<SplatScene> {
    parse_scene(&read_text(path)?, path)
}

pub fn write_scene(path: &Path, scene: &SplatScene) -> Result<()> {
    write_text(path, &format_scene(scene))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("x.ply")
    }

    #[test]
    fn cloud_round_trip() {
        let points = vec![
            ColoredPoint { position: Vec3::new(0.1, -2.0, 1.0 / 3.0), color: [1.0, 0.0, 128.0 / 255.0], status: PointStatus::PoseTracking },
            ColoredPoint { position: Vec3::new(5.0, 6.0, 7.0), color: [0.2, 0.4, 0.6], status: PointStatus::GradientFill },
        ];
        let back = parse_cloud(&format_cloud(&points), p()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&points) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.status, b.status);
            for ch in 0..3 {
                assert!((a.color[ch] - b.color[ch]).abs() <= 0.5 / 255.0);
            }
        }
    }

    #[test]
    fn scene_round_trip_is_exact() {
        let mut g = Gaussian3d::isotropic(Vec3::new(0.3, 0.1, 2.0), 0.05, 0.7, [0.1, 0.2, 0.3]);
        g.rotation = [0.5, 0.5, -0.5, 0.5];
        g.log_scale = Vec3::new(-3.0, -2.5, -1.0 / 7.0);
        let scene = SplatScene::new(vec![g, Gaussian3d::isotropic(Vec3::zeros(), 1.0, 0.5, [1.0; 3])], [0.25, 0.5, 1.0]);
        assert_eq!(parse_scene(&format_scene(&scene), p()).unwrap(), scene);
    }

    #[test]
    fn property_order_follows_the_header() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty uchar status\nproperty uchar red\n\
                    property uchar green\nproperty uchar blue\nproperty float x\nproperty float y\nproperty float z\n\
                    end_header\n1 255 0 0 1 2 3\n";
        let c = parse_cloud(text, p()).unwrap();
        assert_eq!(c[0].status, PointStatus::PositionOnly);
        assert_eq!(c[0].position, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(c[0].color, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(parse("ply\nformat binary_little_endian 1.0\nend_header\n", p()).is_err());
        let truncated = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n";
        assert!(parse(truncated, p()).unwrap_err().to_string().contains("2 vertices"));
        let no_status = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nend_header\n";
        assert!(parse_cloud(no_status, p()).is_err());
    }
}
