//! Per-packet event logs and their CSV form.
//!
//! Each file starts with the header `event,t_us,seq,size_bytes,dir,rtt_est_us`
//! followed by one row per record, e.g. `AckRecv,2041,0,40,uplink,2041`. The
//! RTT column is empty for every event except `AckRecv`. Lines end in `\n`.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Direction, Timestamp};

pub const LOG_HEADER: &str = "event,t_us,seq,size_bytes,dir,rtt_est_us";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LogEvent {
    DataSent,
    DataRecv,
    AckSent,
    AckRecv,
}

impl LogEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            LogEvent::DataSent => "DataSent",
            LogEvent::DataRecv => "DataRecv",
            LogEvent::AckSent => "AckSent",
            LogEvent::AckRecv => "AckRecv",
        }
    }
}

impl fmt::Display for LogEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DataSent" => Ok(LogEvent::DataSent),
            "DataRecv" => Ok(LogEvent::DataRecv),
            "AckSent" => Ok(LogEvent::AckSent),
            "AckRecv" => Ok(LogEvent::AckRecv),
            other => Err(format!("unknown event `{other}`")),
        }
    }
}

/// One logged packet event. `rtt_est` is set exactly when `event` is `AckRecv`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogRecord {
    pub event: LogEvent,
    pub t: Timestamp,
    pub seq: u64,
    pub size_bytes: u32,
    pub dir: Direction,
    pub rtt_est: Option<Timestamp>,
}

impl LogRecord {
    pub fn new(event: LogEvent, t: Timestamp, seq: u64, size_bytes: u32, dir: Direction) -> Self {
        debug_assert!(event != LogEvent::AckRecv);
        LogRecord {
            event,
            t,
            seq,
            size_bytes,
            dir,
            rtt_est: None,
        }
    }

    pub fn ack_recv(t: Timestamp, seq: u64, size_bytes: u32, dir: Direction, rtt: Timestamp) -> Self {
        LogRecord {
            event: LogEvent::AckRecv,
            t,
            seq,
            size_bytes,
            dir,
            rtt_est: Some(rtt),
        }
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},",
            self.event,
            self.t.as_micros(),
            self.seq,
            self.size_bytes,
            self.dir
        )?;
        if let Some(rtt) = self.rtt_est {
            write!(f, "{}", rtt.as_micros())?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LogParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_log<W: Write>(mut w: W, records: &[LogRecord]) -> io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

pub fn log_to_string(records: &[LogRecord]) -> String {
    let mut buf = Vec::new();
    write_log(&mut buf, records).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("log is ascii")
}

fn parse_row(row: &str) -> Result<LogRecord, String> {
    let cols: Vec<&str> = row.split(',').collect();
    if cols.len() != 6 {
        return Err(format!("expected 6 columns, found {}", cols.len()));
    }
    let num = |s: &str, what: &str| s.parse::<u64>().map_err(|_| format!("bad {what} `{s}`"));
    let event: LogEvent = cols[0].parse()?;
    let rtt_est = if cols[5].is_empty() {
        None
    } else {
        Some(Timestamp::from_micros(num(cols[5], "rtt_est_us")?))
    };
    if rtt_est.is_some() != (event == LogEvent::AckRecv) {
        return Err("rtt_est_us must be present exactly for AckRecv".into());
    }
    Ok(LogRecord {
        event,
        t: Timestamp::from_micros(num(cols[1], "t_us")?),
        seq: num(cols[2], "seq")?,
        size_bytes: u32::try_from(num(cols[3], "size_bytes")?).map_err(|_| "size out of range".to_string())?,
        dir: cols[4].parse()?,
        rtt_est,
    })
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<LogRecord>, LogParseError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if lineno == 1 {
            if line != LOG_HEADER {
                return Err(LogParseError::Malformed {
                    line: 1,
                    message: format!("expected header `{LOG_HEADER}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        out.push(parse_row(&line).map_err(|message| LogParseError::Malformed { line: lineno, message })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_format_is_fixed() {
        let recs = vec![
            LogRecord::new(LogEvent::DataSent, Timestamp::from_micros(10), 0, 1500, Direction::Uplink),
            LogRecord::ack_recv(Timestamp::from_micros(2051), 0, 40, Direction::Uplink, Timestamp::from_micros(2041)),
        ];
        assert_eq!(
            log_to_string(&recs),
            "event,t_us,seq,size_bytes,dir,rtt_est_us\n\
             DataSent,10,0,1500,uplink,\n\
             AckRecv,2051,0,40,uplink,2041\n"
        );
        let back = read_log(log_to_string(&recs).as_bytes()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn rejects_rtt_on_wrong_event() {
        let text = format!("{LOG_HEADER}\nDataRecv,1,2,1500,downlink,7\n");
        let err = read_log(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2"));
    }
}
