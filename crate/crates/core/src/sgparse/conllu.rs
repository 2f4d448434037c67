//! CoNLL-U reader.

use crate::error::{Error, Result};

/// One word of a dependency-parsed sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepToken {
    /// 1-based position in the sentence.
    pub index: usize,
    pub surface: String,
    pub lemma: String,
    pub upos: String,
    /// Governor index, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

impl DepToken {
    /// Relation label without its subtype (`acl:relcl` → `acl`).
    pub fn base_rel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or("")
    }

    pub fn is_nominal(&self) -> bool {
        matches!(self.upos.as_str(), "NOUN" | "PROPN")
    }
}

/// Parses a CoNLL-U document into sentences of tokens.
///
/// Multi-word token ranges (`3-4`) and empty nodes (`5.1`) are skipped.
pub fn parse_conllu(document: &str) -> Result<Vec<Vec<DepToken>>> {
    let mut sentences = Vec::new();
    let mut current: Vec<DepToken> = Vec::new();
    let mut first_line = 0;

    for (i, raw) in document.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                check_heads(&current, first_line)?;
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let index: usize = id.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-numeric ID {id:?}"),
        })?;
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-numeric HEAD {:?}", cols[6]),
        })?;
        if current.is_empty() {
            first_line = line_no;
        }
        if index != current.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("token ID {index} out of sequence"),
            });
        }
        current.push(DepToken {
            index,
            surface: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    if !current.is_empty() {
        check_heads(&current, first_line)?;
        sentences.push(current);
    }
    Ok(sentences)
}

fn check_heads(tokens: &[DepToken], first_line: usize) -> Result<()> {
    for (offset, t) in tokens.iter().enumerate() {
        if t.head > tokens.len() {
            return Err(Error::Parse {
                line: first_line + offset,
                message: format!("HEAD {} out of range for {} tokens", t.head, tokens.len()),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SENT: &str = "# text = A man holds a cup\n\
1\tA\ta\tDET\tDT\t_\t2\tdet\t_\t_\n\
2\tman\tman\tNOUN\tNN\t_\t3\tnsubj\t_\t_\n\
3\tholds\thold\tVERB\tVBZ\t_\t0\troot\t_\t_\n\
4\ta\ta\tDET\tDT\t_\t5\tdet\t_\t_\n\
5\tcup\tcup\tNOUN\tNN\t_\t3\tobj\t_\tSpaceAfter=No\n";

    #[test]
    fn parses_one_sentence() {
        let s = parse_conllu(SENT).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].len(), 5);
        assert_eq!(s[0][2].lemma, "hold");
        assert_eq!(s[0][2].head, 0);
        assert_eq!(s[0][4].deprel, "obj");
    }

    #[test]
    fn empty_document() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n# only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn nine_columns_names_the_line() {
        let doc = format!("{SENT}\n1\tA\ta\tDET\tDT\t_\t0\troot\t_\n");
        match parse_conllu(&doc) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_id_and_head() {
        let bad_id = "x\tA\ta\tDET\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(parse_conllu(bad_id), Err(Error::Parse { line: 1, .. })));
        let bad_head = "1\tA\ta\tDET\t_\t_\tq\troot\t_\t_\n";
        assert!(matches!(parse_conllu(bad_head), Err(Error::Parse { line: 1, .. })));
        let out_of_range = "1\tA\ta\tDET\t_\t_\t0\troot\t_\t_\n2\tb\tb\tNOUN\t_\t_\t7\tdep\t_\t_\n";
        assert!(matches!(parse_conllu(out_of_range), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn skips_multiword_ranges_and_empty_nodes() {
        let doc = "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n\
1\tde\tde\tADP\t_\t_\t2\tcase\t_\t_\n\
2\tel\tel\tDET\t_\t_\t0\troot\t_\t_\n\
2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_\n\n\
1\tHi\thi\tINTJ\t_\t_\t0\troot\t_\t_\n";
        let s = parse_conllu(doc).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].len(), 2);
        assert_eq!(s[1][0].lemma, "hi");
    }
}
