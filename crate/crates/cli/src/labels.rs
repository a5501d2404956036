use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelFile {
    Plain(Vec<usize>),
    Sidecar { topics: Vec<usize> },
}

/// Reads class labels from a JSON array or from an object with a `topics`
/// array (the synthetic truth sidecar). With `positive` set, labels become
/// 1 for that class and 0 otherwise.
pub fn load_labels(path: &Path, positive: Option<usize>) -> Result<Vec<usize>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed: LabelFile = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!(
            "{}: expected an array of class ids or an object with \"topics\": {e}",
            path.display()
        ))
    })?;
    let labels = match parsed {
        LabelFile::Plain(v) => v,
        LabelFile::Sidecar { topics } => topics,
    };
    Ok(match positive {
        Some(p) => labels.into_iter().map(|l| usize::from(l == p)).collect(),
        None => labels,
    })
}

/// Labels as booleans; only 0/1 are accepted.
pub(crate) fn binary(labels: &[usize]) -> Result<Vec<bool>, CliError> {
    if labels.iter().any(|&l| l > 1) {
        return Err(CliError::invalid(
            "labels have more than two classes; pick one with --positive-label",
        ));
    }
    Ok(labels.iter().map(|&l| l == 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn plain_and_sidecar_forms() {
        assert_eq!(load_labels(write("[0, 2, 1]").path(), None).unwrap(), vec![0, 2, 1]);
        let side = write(r#"{"config": {"seed": 1}, "topics": [3, 1, 3]}"#);
        assert_eq!(load_labels(side.path(), None).unwrap(), vec![3, 1, 3]);
        assert_eq!(load_labels(side.path(), Some(3)).unwrap(), vec![1, 0, 1]);
    }

    #[test]
    fn malformed_labels() {
        assert!(matches!(
            load_labels(write("[0, -1]").path(), None),
            Err(CliError::Config(_))
        ));
        assert!(matches!(load_labels(write("{").path(), None), Err(CliError::Config(_))));
        assert!(matches!(
            load_labels(Path::new("/nonexistent/labels.json"), None),
            Err(CliError::Io { .. })
        ));
    }

    #[test]
    fn binary_rejects_multiclass() {
        assert_eq!(binary(&[0, 1, 1]).unwrap(), vec![false, true, true]);
        assert!(binary(&[0, 2]).is_err());
    }
}
