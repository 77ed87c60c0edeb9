//! Article designation parsing: Chinese numerals (第一千零四十七条), Arabic
//! forms with thousands separators ("Article 1,047") and bare integers.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized article designation: {0:?}")]
pub struct ParseError(pub String);

fn digit_value(c: char) -> Option<u32> {
    Some(match c {
        '零' | '〇' => 0,
        '一' | '壹' => 1,
        '二' | '两' | '贰' => 2,
        '三' | '叁' => 3,
        '四' | '肆' => 4,
        '五' | '伍' => 5,
        '六' | '陆' => 6,
        '七' | '柒' => 7,
        '八' | '捌' => 8,
        '九' | '玖' => 9,
        _ => return None,
    })
}

fn unit_value(c: char) -> Option<u32> {
    Some(match c {
        '十' | '拾' => 10,
        '百' | '佰' => 100,
        '千' | '仟' => 1000,
        _ => return None,
    })
}

fn ascii_digit(c: char) -> Option<u32> {
    match c {
        '0'..='9' => Some(c as u32 - '0' as u32),
        '０'..='９' => Some(c as u32 - '０' as u32),
        _ => None,
    }
}

/// Decodes a Chinese numeral such as `一千零四十七` or `二十`.
///
/// Positional runs without units (`一〇四七`) are accepted as well.
pub fn parse_chinese_numeral(s: &str) -> Result<u32, ParseError> {
    let err = || ParseError(s.to_string());
    let chars: Vec<char> = s.chars().collect();
    if chars.is_empty() {
        return Err(err());
    }

    if chars.len() > 1 && chars.iter().all(|&c| digit_value(c).is_some()) {
        let mut n: u32 = 0;
        for &c in &chars {
            n = n.checked_mul(10).and_then(|n| n.checked_add(digit_value(c)?)).ok_or_else(err)?;
        }
        return Ok(n);
    }

    let mut total: u64 = 0;
    let mut section: u64 = 0;
    let mut pending: Option<u64> = None;
    // Smallest unit seen in the current section; units must strictly descend.
    let mut last_unit: u64 = 10_000;
    let mut seen_wan = false;

    for &c in &chars {
        if let Some(d) = digit_value(c) {
            if pending.is_some() && d != 0 {
                return Err(err());
            }
            if d == 0 {
                // 零 only separates positions; it never stands in for a digit.
                continue;
            }
            pending = Some(d as u64);
        } else if let Some(u) = unit_value(c) {
            let u = u as u64;
            if u >= last_unit {
                return Err(err());
            }
            let coef = match pending.take() {
                Some(d) => d,
                None if u == 10 && section == 0 && total == 0 => 1,
                None if u == 10 && section == 0 && seen_wan => 1,
                None => return Err(err()),
            };
            section += coef * u;
            last_unit = u;
        } else if c == '万' || c == '萬' {
            if seen_wan {
                return Err(err());
            }
            section += pending.take().unwrap_or(0);
            if section == 0 {
                return Err(err());
            }
            total = section * 10_000;
            section = 0;
            last_unit = 10_000;
            seen_wan = true;
        } else {
            return Err(err());
        }
    }
    section += pending.unwrap_or(0);
    let n = total + section;
    if n == 0 {
        return Err(err());
    }
    u32::try_from(n).map_err(|_| err())
}

/// Renders `n` in the conventional statute form, e.g. `1047` -> `一千零四十七`.
pub fn render_chinese_numeral(n: u32) -> String {
    const DIGITS: [char; 10] = ['零', '一', '二', '三', '四', '五', '六', '七', '八', '九'];
    const UNITS: [&str; 4] = ["", "十", "百", "千"];

    fn section(n: u32, out: &mut String, leading: bool) {
        let mut zero_gap = false;
        let mut started = false;
        for pos in (0..4).rev() {
            let d = (n / 10u32.pow(pos)) % 10;
            if d == 0 {
                if started {
                    zero_gap = true;
                }
                continue;
            }
            if zero_gap || (!started && !leading && pos < 3) {
                out.push('零');
            }
            zero_gap = false;
            // 十 alone (not 一十) only at the very start of the number.
            if !(d == 1 && pos == 1 && !started && leading) {
                out.push(DIGITS[d as usize]);
            }
            out.push_str(UNITS[pos as usize]);
            started = true;
        }
    }

    if n == 0 {
        return "零".to_string();
    }
    let mut out = String::new();
    let high = n / 10_000;
    let low = n % 10_000;
    if high > 0 {
        section(high, &mut out, true);
        out.push('万');
        if low > 0 {
            section(low, &mut out, false);
        }
    } else {
        section(low, &mut out, true);
    }
    out
}

fn parse_arabic(s: &str) -> Option<u32> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let mut digits = String::new();
    let groups: Vec<&str> = s.split([',', '，']).collect();
    if groups.len() > 1 {
        // Thousands separators must delimit groups of exactly three digits.
        let first = groups[0];
        if first.is_empty() || first.chars().count() > 3 {
            return None;
        }
        if groups[1..].iter().any(|g| g.chars().count() != 3) {
            return None;
        }
    }
    for g in groups {
        for c in g.chars() {
            digits.push(char::from_digit(ascii_digit(c)?, 10)?);
        }
    }
    let n: u32 = digits.parse().ok()?;
    (n > 0).then_some(n)
}

/// A parsed article designation: the article number and an optional paragraph (款).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Designation {
    pub article_no: u32,
    pub paragraph_no: Option<u32>,
}

/// A bare number in either script: `1,047`, `１０４７` or `一千零四十七`.
pub fn parse_arabic_or_chinese(s: &str) -> Result<u32, ParseError> {
    parse_arabic(s)
        .or_else(|| parse_chinese_numeral(s.trim()).ok())
        .ok_or_else(|| ParseError(s.to_string()))
}

/// Parses `第一千零四十七条`, `第1047条`, `Article 1,047`, `1047` and the
/// paragraph-qualified variants `第X条第Y款` / `Article X, paragraph Y`.
pub fn parse_designation(designation: &str) -> Result<Designation, ParseError> {
    let err = || ParseError(designation.to_string());
    let s = designation.trim();

    if let Some(rest) = s.strip_prefix('第') {
        let (art, tail) = rest.split_once('条').ok_or_else(err)?;
        let article_no = parse_arabic_or_chinese(art).map_err(|_| err())?;
        let tail = tail.trim();
        let paragraph_no = if tail.is_empty() {
            None
        } else {
            let p = tail.strip_prefix('第').and_then(|t| t.strip_suffix('款')).ok_or_else(err)?;
            Some(parse_arabic_or_chinese(p).map_err(|_| err())?)
        };
        return Ok(Designation { article_no, paragraph_no });
    }

    let lower = s.to_ascii_lowercase();
    let body = lower
        .strip_prefix("article")
        .or_else(|| lower.strip_prefix("art."))
        .unwrap_or(&lower)
        .trim();
    let (art, para) = match body.split_once("paragraph") {
        Some((a, p)) => (a.trim().trim_end_matches([',', '，']).trim(), Some(p.trim())),
        None => (body, None),
    };
    let article_no = parse_arabic(art).ok_or_else(err)?;
    let paragraph_no = match para {
        Some(p) => Some(parse_arabic(p).ok_or_else(err)?),
        None => None,
    };
    Ok(Designation { article_no, paragraph_no })
}

/// Article number of a designation; any paragraph qualifier is ignored.
pub fn parse_article_number(designation: &str) -> Result<u32, ParseError> {
    parse_designation(designation).map(|d| d.article_no)
}
