use std::fmt;

/// Outcome of one assumption check. Failures carry human-readable findings.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub check: String,
    pub passed: bool,
    pub findings: Vec<String>,
}

impl ValidationReport {
    pub fn new(check: impl Into<String>) -> Self {
        ValidationReport {
            check: check.into(),
            passed: true,
            findings: Vec::new(),
        }
    }

    pub fn fail(&mut self, finding: impl Into<String>) {
        self.passed = false;
        self.findings.push(finding.into());
    }

    pub fn note(&mut self, finding: impl Into<String>) {
        self.findings.push(finding.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {}", self.check)?;
        for finding in &self.findings {
            write!(f, "\n    {finding}")?;
        }
        Ok(())
    }
}
