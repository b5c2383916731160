//! Dataset manifests: a `path,category` table plus optional declared
//! per-category counts given as `# expect stone=21 cloud=24 fire=17`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::image_id_for;

const EXPECT_DIRECTIVE: &str = "expect";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Stone,
    Cloud,
    Fire,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Stone, Category::Cloud, Category::Fire, Category::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Stone => "stone",
            Category::Cloud => "cloud",
            Category::Fire => "fire",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown category `{s}`")))
    }
}

/// Counts of the reference dataset: 62 images in total.
pub const REFERENCE_COUNTS: [(Category, usize); 3] =
    [(Category::Stone, 21), (Category::Cloud, 24), (Category::Fire, 17)];

pub fn reference_counts() -> BTreeMap<Category, usize> {
    REFERENCE_COUNTS.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub category: Category,
}

impl ManifestEntry {
    pub fn image_id(&self) -> String {
        image_id_for(&self.path)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Empty when the file declares no counts.
    pub declared: BTreeMap<Category, usize>,
}

#[derive(Debug, Deserialize)]
struct Row {
    path: String,
    category: String,
}

fn parse_directive(line: &str, lineno: usize, declared: &mut BTreeMap<Category, usize>) -> Result<()> {
    let body = line.trim_start_matches('#').trim();
    let Some(rest) = body.strip_prefix(EXPECT_DIRECTIVE) else {
        return Ok(());
    };
    if !rest.starts_with(char::is_whitespace) {
        return Ok(());
    }
    for item in rest.split_whitespace() {
        let (cat, n) = item
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("line {lineno}: expected `category=count`, found `{item}`")))?;
        let cat: Category = cat
            .parse()
            .map_err(|e| Error::Validation(format!("line {lineno}: {e}")))?;
        let n: usize = n
            .parse()
            .map_err(|_| Error::Validation(format!("line {lineno}: `{n}` is not a count")))?;
        declared.insert(cat, n);
    }
    Ok(())
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut declared = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim_start().starts_with('#') {
                parse_directive(line.trim_start(), i + 1, &mut declared)?;
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Validation(format!("unreadable header: {e}")))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "category"] {
            return Err(Error::Validation(format!(
                "header must be `path,category`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Validation(format!("line {line}: {e}"))
            })?;
            if row.path.is_empty() {
                return Err(Error::Validation(format!("entry {} has an empty path", entries.len() + 1)));
            }
            let category = row
                .category
                .parse()
                .map_err(|e| Error::Validation(format!("entry `{}`: {e}", row.path)))?;
            let p = PathBuf::from(&row.path);
            let path = if p.is_absolute() { p } else { base.join(p) };
            entries.push(ManifestEntry { path, category });
        }
        Ok(Self { entries, declared })
    }

    /// Serializes with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let mut out = String::new();
        if !self.declared.is_empty() {
            let items: Vec<String> = self.declared.iter().map(|(c, n)| format!("{c}={n}")).collect();
            out.push_str(&format!("# {EXPECT_DIRECTIVE} {}\n", items.join(" ")));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "category"]).expect("in-memory write");
        for e in &self.entries {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            w.write_record([p.to_string_lossy().as_ref(), e.category.as_str()])
                .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8"));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        crate::imaging::write_file(path, self.to_text(base).as_bytes())
    }

    pub fn tallies(&self) -> BTreeMap<Category, usize> {
        let mut t = BTreeMap::new();
        for e in &self.entries {
            *t.entry(e.category).or_insert(0) += 1;
        }
        t
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.entries.iter().any(|e| e.image_id() == id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Finding {
    MissingFile { path: PathBuf },
    Undecodable { path: PathBuf, reason: String },
    CountMismatch { category: Category, declared: usize, found: usize },
    DuplicateId { id: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingFile { path } => write!(f, "missing file: {}", path.display()),
            Finding::Undecodable { path, reason } => write!(f, "undecodable image: {}: {reason}", path.display()),
            Finding::CountMismatch { category, declared, found } => {
                write!(f, "count mismatch: {category} declared {declared}, found {found}")
            }
            Finding::DuplicateId { id } => write!(f, "duplicate image id: {id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub tallies: BTreeMap<Category, usize>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10}{:>8}\n", "category", "images"));
        for (c, n) in &self.tallies {
            out.push_str(&format!("{:<10}{:>8}\n", c.as_str(), n));
        }
        out.push_str(&format!("{:<10}{:>8}\n", "total", self.total));
        if self.is_ok() {
            out.push_str("ok\n");
        } else {
            for f in &self.findings {
                out.push_str(&format!("- {f}\n"));
            }
        }
        out
    }
}

/// Checks files, decodability, id uniqueness and declared counts. Problems
/// become findings; nothing here fails.
pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    use rayon::prelude::*;
    let mut findings: Vec<Finding> = manifest
        .entries
        .par_iter()
        .filter_map(|e| {
            if !e.path.is_file() {
                return Some(Finding::MissingFile { path: e.path.clone() });
            }
            image::open(&e.path).err().map(|err| Finding::Undecodable {
                path: e.path.clone(),
                reason: err.to_string(),
            })
        })
        .collect();

    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for e in &manifest.entries {
        let id = e.image_id();
        if !seen.insert(id.clone()) {
            dup.insert(id);
        }
    }
    findings.extend(dup.into_iter().map(|id| Finding::DuplicateId { id }));

    let tallies = manifest.tallies();
    for (&category, &declared) in &manifest.declared {
        let found = tallies.get(&category).copied().unwrap_or(0);
        if found != declared {
            findings.push(Finding::CountMismatch { category, declared, found });
        }
    }
    ValidationReport {
        total: manifest.entries.len(),
        tallies,
        findings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_and_directives() {
        let text = "# expect stone=2 fire=1\npath,category\na.png,stone\n b.png , Stone\nsub/c.jpg,fire\n# trailing note\n";
        let m = DatasetManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[1].path, Path::new("/data/b.png"));
        assert_eq!(m.entries[2].image_id(), "c");
        assert_eq!(m.declared, BTreeMap::from([(Category::Stone, 2), (Category::Fire, 1)]));
    }

    #[test]
    fn rejects_bad_header_and_category() {
        assert!(DatasetManifest::parse("file,kind\na,stone\n", Path::new(".")).is_err());
        let e = DatasetManifest::parse("path,category\na.png,leaf\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("leaf"));
        assert!(DatasetManifest::parse("# expect stone=x\npath,category\n", Path::new(".")).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = DatasetManifest {
            entries: vec![ManifestEntry { path: "/d/x.png".into(), category: Category::Cloud }],
            declared: BTreeMap::from([(Category::Cloud, 1)]),
        };
        let text = m.to_text(Path::new("/d"));
        assert_eq!(DatasetManifest::parse(&text, Path::new("/d")).unwrap(), m);
    }

    #[test]
    fn missing_files_and_mismatches_are_findings() {
        let m = DatasetManifest {
            entries: vec![
                ManifestEntry { path: "/nonexistent/a.png".into(), category: Category::Stone },
                ManifestEntry { path: "/nonexistent/b/a.png".into(), category: Category::Stone },
            ],
            declared: BTreeMap::from([(Category::Stone, 3), (Category::Fire, 0)]),
        };
        let r = validate_manifest(&m);
        assert!(!r.is_ok());
        assert_eq!(r.findings.iter().filter(|f| matches!(f, Finding::MissingFile { .. })).count(), 2);
        assert!(r.findings.contains(&Finding::DuplicateId { id: "a".into() }));
        assert!(r.findings.contains(&Finding::CountMismatch {
            category: Category::Stone,
            declared: 3,
            found: 2
        }));
        assert!(!r.findings.iter().any(|f| matches!(f, Finding::CountMismatch { category: Category::Fire, .. })));
    }
}
