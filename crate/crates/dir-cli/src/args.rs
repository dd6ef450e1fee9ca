//! Minimal `--flag value` parser. Every command declares its accepted flags;
//! anything else is a usage error.

use std::collections::BTreeMap;

use crate::errors::CliError;

pub struct Args {
    flags: BTreeMap<String, String>,
}

impl Args {
    pub fn parse(argv: &[String], allowed: &[&str]) -> Result<Args, CliError> {
        let mut flags = BTreeMap::new();
        let mut it = argv.iter();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                return Err(CliError::Usage(format!("unexpected argument '{arg}'")));
            };
            if !allowed.contains(&name) {
                return Err(CliError::Usage(format!("unknown flag --{name}")));
            }
            let Some(value) = it.next() else {
                return Err(CliError::Usage(format!("--{name} requires a value")));
            };
            if flags.insert(name.to_string(), value.clone()).is_some() {
                return Err(CliError::Usage(format!("--{name} given twice")));
            }
        }
        Ok(Args { flags })
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.flags.get(name).map(String::as_str)
    }

    pub fn required(&self, name: &str) -> Result<&str, CliError> {
        self.get(name)
            .ok_or_else(|| CliError::Usage(format!("--{name} is required")))
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64, CliError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("--{name} expects a number, got '{v}'"))),
        }
    }

    pub fn usize_or(&self, name: &str, default: usize) -> Result<usize, CliError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("--{name} expects an integer, got '{v}'"))),
        }
    }

    pub fn u64_or(&self, name: &str, default: u64) -> Result<u64, CliError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Usage(format!("--{name} expects an integer, got '{v}'"))),
        }
    }
}
