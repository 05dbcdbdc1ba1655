//! Topic globs: `*` matches exactly one segment, a trailing `**` matches any
//! (possibly empty) suffix.

use std::fmt;
use std::str::FromStr;

use super::BusError;
use crate::model::StreamId;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Segment {
    Literal(String),
    One,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicPattern {
    text: String,
    segments: Vec<Segment>,
}

impl TopicPattern {
    pub fn parse(text: &str) -> Result<Self, BusError> {
        let bad = |why: &'static str| BusError::BadPattern(text.to_string(), why);
        if text.is_empty() {
            return Err(bad("empty pattern"));
        }
        if text.len() > u16::MAX as usize {
            return Err(bad("longer than 65535 bytes"));
        }
        let parts: Vec<&str> = text.split('/').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let seg = match *part {
                "" => return Err(bad("empty segment")),
                "*" => Segment::One,
                "**" if i + 1 == parts.len() => Segment::Rest,
                "**" => return Err(bad("'**' is only allowed as the last segment")),
                p if p.contains('*') => return Err(bad("'*' must be a whole segment")),
                p => Segment::Literal(p.to_string()),
            };
            segments.push(seg);
        }
        Ok(TopicPattern {
            text: text.to_string(),
            segments,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn matches(&self, topic: &StreamId) -> bool {
        match_segments(&self.segments, topic.segments())
    }

    /// True if the pattern has no wildcards.
    pub fn is_exact(&self) -> bool {
        self.segments.iter().all(|s| matches!(s, Segment::Literal(_)))
    }
}

fn match_segments<'a>(pattern: &[Segment], mut topic: impl Iterator<Item = &'a str>) -> bool {
    for seg in pattern {
        match seg {
            Segment::Rest => return true,
            Segment::One => {
                if topic.next().is_none() {
                    return false;
                }
            }
            Segment::Literal(lit) => match topic.next() {
                Some(t) if t == lit => {}
                _ => return false,
            },
        }
    }
    topic.next().is_none()
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl FromStr for TopicPattern {
    type Err = BusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicPattern::parse(s)
    }
}

pub fn match_topic(pattern: &TopicPattern, topic: &StreamId) -> bool {
    pattern.matches(topic)
}
