//! Interactive generator for scenario config files. Prompts are written to
//! the output stream and answers read line by line, so the dialogue can be
//! driven from a terminal or from a scripted answer stream.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use dohcore::client::config::{
    parse_encoding, DEFAULT_BASE_DELAY, DEFAULT_BURST_SIZE, DEFAULT_CHUNK_SIZE,
    DEFAULT_DELAY_VARIANCE,
};
use dohcore::client::{ExfilConfig, TimingPattern};
use dohcore::dohwire::HttpMethod;

const DEFAULT_SERVER: &str = "https://doh.local/dns-query";
const DEFAULT_DOMAIN: &str = "exfill.local";

/// Reads one answer line; `None` means the input ended.
fn read_answer(input: &mut dyn BufRead) -> Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim().to_string()))
}

/// Writes `prompt` without a newline and returns the trimmed answer.
fn ask(input: &mut dyn BufRead, output: &mut dyn Write, prompt: &str) -> Result<String> {
    write!(output, "{prompt}")?;
    output.flush()?;
    read_answer(input)?.context("input ended before the dialogue finished")
}

fn ask_nonempty(input: &mut dyn BufRead, output: &mut dyn Write, prompt: &str) -> Result<String> {
    loop {
        let answer = ask(input, output, prompt)?;
        if !answer.is_empty() {
            return Ok(answer);
        }
    }
}

fn ask_string_default(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    prompt: &str,
    default: &str,
) -> Result<String> {
    let answer = ask(input, output, prompt)?;
    Ok(if answer.is_empty() {
        default.to_string()
    } else {
        answer
    })
}

fn ask_usize(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    prompt: &str,
    default: usize,
) -> Result<usize> {
    loop {
        let answer = ask(input, output, prompt)?;
        if answer.is_empty() {
            return Ok(default);
        }
        match answer.parse::<usize>() {
            Ok(v) if v >= 1 => return Ok(v),
            _ => continue,
        }
    }
}

fn ask_f64(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    prompt: &str,
    default: f64,
) -> Result<f64> {
    loop {
        let answer = ask(input, output, prompt)?;
        if answer.is_empty() {
            return Ok(default);
        }
        match answer.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => return Ok(v),
            _ => continue,
        }
    }
}

fn ask_choice(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    prompt: &str,
    options: &[&str],
    default: &str,
) -> Result<String> {
    loop {
        let answer = ask(input, output, prompt)?.to_ascii_lowercase();
        if answer.is_empty() {
            return Ok(default.to_string());
        }
        if options.contains(&answer.as_str()) {
            return Ok(answer);
        }
    }
}

fn ask_yes_no(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    prompt: &str,
    default: bool,
) -> Result<bool> {
    loop {
        let answer = ask(input, output, prompt)?.to_ascii_lowercase();
        match answer.as_str() {
            "" => return Ok(default),
            "y" | "yes" => return Ok(true),
            "n" | "no" => return Ok(false),
            _ => continue,
        }
    }
}

/// Config file name derived from the config name: lowercased, with runs of
/// non-alphanumeric characters collapsed to single underscores.
pub fn slugify(name: &str) -> String {
    let mut slug = String::new();
    let mut last_was_sep = true;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
            last_was_sep = false;
        } else if !last_was_sep {
            slug.push('_');
            last_was_sep = true;
        }
    }
    while slug.ends_with('_') {
        slug.pop();
    }
    slug
}

/// Runs the configuration dialogue and saves the resulting config file under
/// `out_dir`. Returns the path of the saved file.
pub fn generate_config(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    out_dir: &Path,
    announce_create: bool,
) -> Result<PathBuf> {
    if announce_create {
        writeln!(output, "Creating new DoH evasion configuration")?;
    }
    writeln!(output, "DoH Evasion Configuration Generator")?;
    writeln!(output, "=====")?;
    let name = ask_nonempty(input, output, "Configuration name: ")?;
    let description = ask(input, output, "Description: ")?;
    writeln!(output)?;
    writeln!(output, "Exfiltration configuration:")?;
    let server = ask_string_default(
        input,
        output,
        &format!("DoH Server [{DEFAULT_SERVER}]: "),
        DEFAULT_SERVER,
    )?;
    let domain = ask_string_default(
        input,
        output,
        &format!("Target domain [{DEFAULT_DOMAIN}]: "),
        DEFAULT_DOMAIN,
    )?;
    let chunk_size = ask_usize(
        input,
        output,
        &format!("Chunk size [{DEFAULT_CHUNK_SIZE}]: "),
        DEFAULT_CHUNK_SIZE,
    )?;
    writeln!(output, "Available encoding: base64, hex, base32, custom")?;
    let encoding_name = ask_choice(
        input,
        output,
        "  Selection [base64]: ",
        &["base64", "hex", "base32", "custom"],
        "base64",
    )?;
    writeln!(output, "Timing patterns: regular, random, burst, stealth")?;
    let pattern_name = ask_choice(
        input,
        output,
        "  Selection [regular]: ",
        &["regular", "random", "burst", "stealth"],
        "regular",
    )?;
    let timing_pattern = TimingPattern::parse(&pattern_name)
        .expect("choice prompt only accepts known patterns");
    let base_delay = ask_f64(
        input,
        output,
        &format!("Base delay in seconds [{DEFAULT_BASE_DELAY}]: "),
        DEFAULT_BASE_DELAY,
    )?;
    let burst_size = if timing_pattern == TimingPattern::Burst {
        ask_usize(
            input,
            output,
            &format!("Burst size [{DEFAULT_BURST_SIZE}]: "),
            DEFAULT_BURST_SIZE,
        )?
    } else {
        DEFAULT_BURST_SIZE
    };
    writeln!(output)?;
    writeln!(output, "Evasion options:")?;
    let compression = ask_yes_no(input, output, "Compression [y/N]: ", false)?;
    let encryption = ask_yes_no(input, output, "Encryption [y/N]: ", false)?;
    let encryption_key = if encryption {
        Some(ask_nonempty(input, output, "Encryption key: ")?)
    } else {
        None
    };
    let subdomain_randomization =
        ask_yes_no(input, output, "Subdomain randomization [Y/n]: ", true)?;
    let padding = ask_yes_no(input, output, "Padding [y/N]: ", false)?;
    let domain_rotation = ask_yes_no(input, output, "Domain rotation [y/N]: ", false)?;
    let delay_variance = ask_f64(
        input,
        output,
        &format!("Delay variance [{DEFAULT_DELAY_VARIANCE}]: "),
        DEFAULT_DELAY_VARIANCE,
    )?;
    writeln!(output)?;

    let cfg = ExfilConfig {
        name: name.clone(),
        description,
        doh_servers: vec![server],
        target_domains: vec![domain],
        chunk_size,
        encoding: parse_encoding(&encoding_name).expect("choice prompt only accepts encodings"),
        timing_pattern,
        base_delay,
        delay_variance,
        burst_size,
        compression,
        encryption_key,
        subdomain_randomization,
        padding,
        domain_rotation,
        test_files: Vec::new(),
        max_retries: None,
        http_method: HttpMethod::Post,
        rng_seed: 0,
        notes: String::new(),
    };
    cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;

    let slug = slugify(&name);
    if slug.is_empty() {
        bail!("configuration name has no usable characters");
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(format!("{slug}.json"));
    std::fs::write(&path, cfg.to_json() + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    writeln!(output, "Configuration saved: {}", path.display())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dohcore::codec::Encoding;
    use std::io::BufReader;

    fn run_dialogue(answers: &str, dir: &Path, create: bool) -> (String, PathBuf) {
        let mut input = BufReader::new(answers.as_bytes());
        let mut output = Vec::new();
        let path = generate_config(&mut input, &mut output, dir, create).unwrap();
        (String::from_utf8(output).unwrap(), path)
    }

    #[test]
    fn scripted_dialogue_writes_the_expected_config() {
        let dir = tempfile::tempdir().unwrap();
        let answers = "Test\nTest config\n\n\n14\n\nrandom\n0.4\ny\ny\ntest\n\ny\n\n0.4\n";
        let (transcript, path) = run_dialogue(answers, dir.path(), true);

        assert!(transcript.starts_with(
            "Creating new DoH evasion configuration\nDoH Evasion Configuration Generator\n=====\n"
        ));
        assert!(transcript.contains("Configuration name: "));
        assert!(transcript.contains("\nExfiltration configuration:\n"));
        assert!(transcript.contains("DoH Server [https://doh.local/dns-query]: "));
        assert!(transcript.contains("Target domain [exfill.local]: "));
        assert!(transcript.contains("Chunk size [30]: "));
        assert!(transcript.contains("Available encoding: base64, hex, base32, custom"));
        assert!(transcript.contains("Timing patterns: regular, random, burst, stealth"));
        assert!(transcript.contains("Base delay in seconds [0.2]: "));
        assert!(transcript.contains("\nEvasion options:\n"));
        assert!(transcript.contains("Compression [y/N]: "));
        assert!(transcript.contains("Encryption key: "));
        assert!(transcript.contains("Subdomain randomization [Y/n]: "));
        assert!(transcript.contains("Delay variance [0.1]: "));
        assert!(transcript.ends_with(&format!(
            "Configuration saved: {}\n",
            path.display()
        )));
        assert_eq!(path.file_name().unwrap(), "test.json");

        let cfg = ExfilConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(cfg.name, "Test");
        assert_eq!(cfg.description, "Test config");
        assert_eq!(cfg.doh_servers, ["https://doh.local/dns-query"]);
        assert_eq!(cfg.target_domains, ["exfill.local"]);
        assert_eq!(cfg.chunk_size, 14);
        assert_eq!(cfg.encoding, Encoding::Base64Url);
        assert_eq!(cfg.timing_pattern, TimingPattern::Random);
        assert_eq!(cfg.base_delay, 0.4);
        assert_eq!(cfg.delay_variance, 0.4);
        assert!(cfg.compression);
        assert_eq!(cfg.encryption_key.as_deref(), Some("test"));
        assert!(cfg.subdomain_randomization);
        assert!(cfg.padding);
        assert!(!cfg.domain_rotation);
    }

    #[test]
    fn invalid_answers_reprompt_until_valid() {
        let dir = tempfile::tempdir().unwrap();
        // Bad chunk size twice, bad encoding, bad yes/no answer.
        let answers = "Retry\n\n\n\nzero\n0\n40\nrot13\nhex\n\n\nmaybe\nn\nn\n\nn\nn\n\n";
        let (transcript, path) = run_dialogue(answers, dir.path(), false);

        assert!(!transcript.contains("Creating new DoH evasion configuration"));
        assert_eq!(transcript.matches("Chunk size [30]: ").count(), 3);
        assert_eq!(transcript.matches("  Selection [base64]: ").count(), 2);
        assert_eq!(transcript.matches("Compression [y/N]: ").count(), 2);

        let cfg = ExfilConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(cfg.chunk_size, 40);
        assert_eq!(cfg.encoding, Encoding::Hex);
        assert!(!cfg.compression);
    }

    #[test]
    fn burst_pattern_asks_for_burst_size() {
        let dir = tempfile::tempdir().unwrap();
        let answers = "Burst Test\n\n\n\n\n\nburst\n0.5\n25\nn\nn\n\nn\nn\n\n";
        let (transcript, path) = run_dialogue(answers, dir.path(), false);

        assert!(transcript.contains("Burst size [10]: "));
        assert_eq!(path.file_name().unwrap(), "burst_test.json");
        let cfg = ExfilConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(cfg.timing_pattern, TimingPattern::Burst);
        assert_eq!(cfg.burst_size, 25);
    }

    #[test]
    fn slugs_collapse_awkward_names() {
        assert_eq!(slugify("Test"), "test");
        assert_eq!(slugify("Low Speed"), "low_speed");
        assert_eq!(slugify("  Big -- Burst!! "), "big_burst");
        assert_eq!(slugify("___"), "");
    }

    #[test]
    fn truncated_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut input = BufReader::new("OnlyName\n".as_bytes());
        let mut output = Vec::new();
        assert!(generate_config(&mut input, &mut output, dir.path(), false).is_err());
    }
}
