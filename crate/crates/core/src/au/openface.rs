//! Per-frame AU tables as written by OpenFace-style extractors.
//!
//! Required columns are `frame` and `face_id`; every `AU<nn>_r` column is
//! read as an intensity. Header names are trimmed and any other column is
//! ignored. Rows are grouped into one track per `face_id`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{is_canonical_au, AUFrame, AUTrack, AuError};

fn table_err(path: &str, message: impl Into<String>) -> AuError {
    AuError::Table {
        path: path.to_string(),
        message: message.into(),
    }
}

pub fn read_openface_csv(path: &Path) -> Result<Vec<AUTrack>, AuError> {
    let file = std::fs::File::open(path)?;
    parse_openface_csv(file, &path.display().to_string())
}

/// `origin` is only used in error messages.
pub fn parse_openface_csv<R: Read>(reader: R, origin: &str) -> Result<Vec<AUTrack>, AuError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| table_err(origin, e.to_string()))?
        .clone();

    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| table_err(origin, format!("missing `{name}` column")))
    };
    let frame_col = column("frame")?;
    let face_col = column("face_id")?;
    let au_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let id = h.strip_suffix("_r")?;
            is_canonical_au(id).then(|| (i, id.to_string()))
        })
        .collect();

    let mut by_face: BTreeMap<String, Vec<AUFrame>> = BTreeMap::new();
    for (row_no, row) in csv.records().enumerate() {
        let line = row_no + 2;
        let row = row.map_err(|e| table_err(origin, format!("line {line}: {e}")))?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let frame_index: u64 = field(frame_col).parse().map_err(|_| {
            table_err(
                origin,
                format!("line {line}: bad frame `{}`", field(frame_col)),
            )
        })?;
        let face = field(face_col).to_string();
        let mut intensities = BTreeMap::new();
        for (i, id) in &au_cols {
            let raw = field(*i);
            let value: f64 = raw
                .parse()
                .map_err(|_| table_err(origin, format!("line {line}: bad {id} value `{raw}`")))?;
            intensities.insert(id.clone(), value);
        }
        let frame = AUFrame {
            frame_index,
            au_intensities: intensities,
        };
        frame.validate()?;
        by_face.entry(face).or_default().push(frame);
    }

    by_face
        .into_iter()
        .map(|(face, mut frames)| {
            frames.sort_by_key(|f| f.frame_index);
            AUTrack::new(face, frames)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
frame, face_id, timestamp, confidence, AU01_r, AU06_r, AU12_r, AU45_c
1, 0, 0.000, 0.98, 0.10, 1.20, 2.00, 0
2, 0, 0.033, 0.98, 0.00, 0.50, 0.40, 1
1, 1, 0.000, 0.91, 1.00, 0.00, 0.00, 0
";

    #[test]
    fn groups_rows_by_face() {
        let tracks = parse_openface_csv(SAMPLE.as_bytes(), "inline").unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].character_id, "0");
        assert_eq!(tracks[0].frames.len(), 2);
        let f = &tracks[0].frames[0];
        assert_eq!(
            f.au_intensities.len(),
            3,
            "AU45_c is a presence column, not read"
        );
        assert_eq!(f.au_intensities["AU06"], 1.2);
    }

    #[test]
    fn missing_required_column() {
        let err = parse_openface_csv("frame, AU01_r\n1, 0.2\n".as_bytes(), "x").unwrap_err();
        assert!(err.to_string().contains("face_id"), "{err}");
    }

    #[test]
    fn duplicate_frame_rejected() {
        let text = "frame,face_id,AU01_r\n3,0,0.1\n3,0,0.2\n";
        assert!(matches!(
            parse_openface_csv(text.as_bytes(), "x"),
            Err(AuError::UnorderedFrames { .. })
        ));
    }

    #[test]
    fn negative_value_rejected() {
        let text = "frame,face_id,AU01_r\n3,0,-0.1\n";
        assert!(matches!(
            parse_openface_csv(text.as_bytes(), "x"),
            Err(AuError::NegativeIntensity { .. })
        ));
    }
}
