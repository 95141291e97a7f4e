//! Exact parsing and formatting of the human-readable quantities used in
//! scenario files: durations (`60s`, `1ms`, `250us`), rates (`15Mbps`) and
//! probabilities (`0.3%`, `0.003`).

use crate::model::{Probability, Timestamp};

/// Parse a non-negative decimal and scale it by `10^pow10`, requiring the
/// result to be an integer.
fn scaled_decimal(s: &str, pow10: u32) -> Result<u64, String> {
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    let digits_ok = |d: &str| d.bytes().all(|b| b.is_ascii_digit());
    if (int_part.is_empty() && frac_part.is_empty()) || !digits_ok(int_part) || !digits_ok(frac_part) {
        return Err(format!("`{s}` is not a decimal number"));
    }
    let frac_trimmed = frac_part.trim_end_matches('0');
    if frac_trimmed.len() as u32 > pow10 {
        return Err(format!("`{s}` has more precision than can be represented"));
    }
    let scale = 10u64.pow(pow10);
    let int_val: u64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| format!("`{s}` is out of range"))?
    };
    let frac_val: u64 = if frac_trimmed.is_empty() {
        0
    } else {
        let raw: u64 = frac_trimmed.parse().map_err(|_| format!("`{s}` is out of range"))?;
        raw * 10u64.pow(pow10 - frac_trimmed.len() as u32)
    };
    int_val
        .checked_mul(scale)
        .and_then(|v| v.checked_add(frac_val))
        .ok_or_else(|| format!("`{s}` is out of range"))
}

fn split_unit(s: &str) -> (&str, &str) {
    let idx = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(s.len());
    (s[..idx].trim(), s[idx..].trim())
}

/// `1500us`, `20ms`, `1.5s`, `2m`. A bare number is taken as seconds.
pub fn parse_duration(s: &str) -> Result<Timestamp, String> {
    let (num, unit) = split_unit(s.trim());
    let micros = match unit {
        "us" => scaled_decimal(num, 0)?,
        "ms" => scaled_decimal(num, 3)?,
        "s" | "" => scaled_decimal(num, 6)?,
        "m" | "min" => scaled_decimal(num, 6)?
            .checked_mul(60)
            .ok_or_else(|| format!("`{s}` is out of range"))?,
        other => return Err(format!("unknown time unit `{other}` in `{s}`")),
    };
    Ok(Timestamp::from_micros(micros))
}

/// Seconds with up to microsecond precision, as used for schedule step starts.
pub fn parse_seconds(s: &str) -> Result<Timestamp, String> {
    scaled_decimal(s.trim(), 6).map(Timestamp::from_micros)
}

/// `15Mbps`, `500kbps`, `1Gbps`, `9600bps`. A bare number is bits per second.
pub fn parse_rate(s: &str) -> Result<u64, String> {
    let (num, unit) = split_unit(s.trim());
    let pow = match unit.to_ascii_lowercase().as_str() {
        "" | "bps" => 0,
        "kbps" => 3,
        "mbps" => 6,
        "gbps" => 9,
        _ => return Err(format!("unknown rate unit `{unit}` in `{s}`")),
    };
    scaled_decimal(num, pow)
}

/// `15MB`, `250kB`, `1500B`, in decimal units. A bare number is bytes.
pub fn parse_bytes(s: &str) -> Result<u64, String> {
    let (num, unit) = split_unit(s.trim());
    let pow = match unit {
        "" | "B" => 0,
        "kB" | "KB" => 3,
        "MB" => 6,
        "GB" => 9,
        _ => return Err(format!("unknown size unit `{unit}` in `{s}`")),
    };
    scaled_decimal(num, pow)
}

/// `0.3%` or a fraction such as `0.003`.
pub fn parse_probability(s: &str) -> Result<Probability, String> {
    let s = s.trim();
    let ppm = match s.strip_suffix('%') {
        Some(pct) => scaled_decimal(pct.trim(), 4)?,
        None => scaled_decimal(s, 6)?,
    };
    u32::try_from(ppm)
        .ok()
        .and_then(Probability::from_ppm)
        .ok_or_else(|| format!("probability `{s}` is outside [0, 1]"))
}

pub fn format_rate(bps: u64) -> String {
    if bps.is_multiple_of(1_000_000_000) {
        format!("{}Gbps", bps / 1_000_000_000)
    } else if bps.is_multiple_of(1_000_000) {
        format!("{}Mbps", bps / 1_000_000)
    } else if bps.is_multiple_of(1_000) {
        format!("{}kbps", bps / 1_000)
    } else {
        format!("{bps}bps")
    }
}

pub fn format_duration(t: Timestamp) -> String {
    let us = t.as_micros();
    if us.is_multiple_of(1_000_000) {
        format!("{}s", us / 1_000_000)
    } else if us.is_multiple_of(1_000) {
        format!("{}ms", us / 1_000)
    } else {
        format!("{us}us")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("60s").unwrap(), Timestamp::from_secs(60));
        assert_eq!(parse_duration("1ms").unwrap(), Timestamp::from_millis(1));
        assert_eq!(parse_duration("250us").unwrap(), Timestamp::from_micros(250));
        assert_eq!(parse_duration("1.5s").unwrap(), Timestamp::from_millis(1_500));
        assert_eq!(parse_duration("47.999").unwrap(), Timestamp::from_millis(47_999));
        assert!(parse_duration("1.5us").is_err());
        assert!(parse_duration("5h").is_err());
        assert!(parse_duration("").is_err());
    }

    #[test]
    fn byte_sizes() {
        assert_eq!(parse_bytes("15MB").unwrap(), 15_000_000);
        assert_eq!(parse_bytes("1.5MB").unwrap(), 1_500_000);
        assert_eq!(parse_bytes("1500").unwrap(), 1500);
        assert!(parse_bytes("1.5B").is_err());
        assert!(parse_bytes("3MiB").is_err());
    }

    #[test]
    fn rates() {
        assert_eq!(parse_rate("15Mbps").unwrap(), 15_000_000);
        assert_eq!(parse_rate("0.5 Mbps").unwrap(), 500_000);
        assert_eq!(parse_rate("300Mbps").unwrap(), 300_000_000);
        assert_eq!(parse_rate("1200").unwrap(), 1_200);
        assert!(parse_rate("fast").is_err());
        assert_eq!(format_rate(40_000_000), "40Mbps");
    }

    #[test]
    fn probabilities_are_exact() {
        assert_eq!(parse_probability("0.3%").unwrap().ppm(), 3_000);
        assert_eq!(parse_probability("0.25%").unwrap().ppm(), 2_500);
        assert_eq!(parse_probability("1%").unwrap().ppm(), 10_000);
        assert_eq!(parse_probability("0.01").unwrap().ppm(), 10_000);
        assert_eq!(parse_probability("1").unwrap(), Probability::ONE);
        assert!(parse_probability("1.5").is_err());
        assert!(parse_probability("0.00000001").is_err());
    }
}
