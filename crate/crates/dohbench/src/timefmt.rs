//! Minimal UTC timestamp formatting for log lines and run directory names.

/// Converts days since 1970-01-01 to a civil (year, month, day) date.
fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if month <= 2 { year + 1 } else { year }, month, day)
}

/// Splits an epoch timestamp into (year, month, day, hour, minute, second).
pub fn utc_parts(epoch_seconds: i64) -> (i64, u32, u32, u32, u32, u32) {
    let days = epoch_seconds.div_euclid(86_400);
    let secs = epoch_seconds.rem_euclid(86_400);
    let (year, month, day) = civil_from_days(days);
    let hour = (secs / 3600) as u32;
    let minute = (secs % 3600 / 60) as u32;
    let second = (secs % 60) as u32;
    (year, month, day, hour, minute, second)
}

/// Formats an epoch timestamp as a `run-YYYYMMDD-HHMMSS` directory stamp.
pub fn run_stamp(epoch: f64) -> String {
    let (y, mo, d, h, mi, s) = utc_parts(epoch.floor() as i64);
    format!("{y:04}{mo:02}{d:02}-{h:02}{mi:02}{s:02}")
}

/// Formats an epoch timestamp as `YYYY-MM-DD HH:MM:SS,mmm`.
pub fn log_timestamp(epoch: f64) -> String {
    let whole = epoch.floor();
    let millis = (((epoch - whole) * 1000.0).round() as u32).min(999);
    let (y, mo, d, h, mi, s) = utc_parts(whole as i64);
    format!("{y:04}-{mo:02}-{d:02} {h:02}:{mi:02}:{s:02},{millis:03}")
}

/// Renders one predictor log line: timestamp, level, and message.
///
/// An empty message yields a bare `... - INFO -` separator line.
pub fn info_line(epoch: f64, message: &str) -> String {
    if message.is_empty() {
        format!("{} - INFO -", log_timestamp(epoch))
    } else {
        format!("{} - INFO - {}", log_timestamp(epoch), message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_zero_is_unix_origin() {
        assert_eq!(utc_parts(0), (1970, 1, 1, 0, 0, 0));
    }

    #[test]
    fn known_timestamp_formats() {
        // 2025-08-13 13:16:40 UTC.
        assert_eq!(log_timestamp(1_755_091_000.0), "2025-08-13 13:16:40,000");
        assert_eq!(run_stamp(1_755_091_000.0), "20250813-131640");
    }

    #[test]
    fn millisecond_component_rounds() {
        assert_eq!(log_timestamp(1755091000.2684), "2025-08-13 13:16:40,268");
        assert_eq!(log_timestamp(1755091000.9996), "2025-08-13 13:16:40,999");
    }

    #[test]
    fn leap_day_resolves() {
        // 2024-02-29 00:00:00 UTC.
        assert_eq!(utc_parts(1_709_164_800), (2024, 2, 29, 0, 0, 0));
    }

    #[test]
    fn info_line_with_empty_message_has_no_trailing_space() {
        assert_eq!(info_line(0.0, ""), "1970-01-01 00:00:00,000 - INFO -");
        assert_eq!(
            info_line(0.0, "Features used: 31/31"),
            "1970-01-01 00:00:00,000 - INFO - Features used: 31/31"
        );
    }

    #[test]
    fn civil_conversion_round_trips_across_years() {
        // Spot checks against known dates either side of century boundaries.
        assert_eq!(utc_parts(946_684_800), (2000, 1, 1, 0, 0, 0));
        assert_eq!(utc_parts(4_102_444_799), (2099, 12, 31, 23, 59, 59));
    }
}
