// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::{AbacError, AttributeValue};
use crate::circuit::{from_bits, to_bits};
use crate::cloudserver::FuncId;

/// Function ids are encoded as a per-rule bitmap, so their width stays small.
pub const MAX_FUNC_ID_WIDTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Subject,
    Resource,
    Environment,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Subject => "subject",
            Category::Resource => "resource",
            Category::Environment => "environment",
        })
    }
}

impl FromStr for Category {
    type Err = AbacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subject" => Ok(Category::Subject),
            "resource" => Ok(Category::Resource),
            "environment" => Ok(Category::Environment),
            other => Err(AbacError::Shape(format!(
                "unknown attribute category `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttributeDef {
    pub name: String,
    pub width: usize,
    pub category: Category,
}

/// Public metadata of a policy rule base: which attributes exist, how wide
/// they are, and how wide function ids are.
///
/// `identity_attribute`, when set, names the subject attribute that the
/// server binds to the requester's verified signing key.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PolicySchema {
    pub attributes: Vec<AttributeDef>,
    pub func_id_width: usize,
    pub identity_attribute: Option<String>,
}

impl PolicySchema {
    pub fn validate(&self) -> Result<(), AbacError> {
        let mut seen = BTreeSet::new();
        for a in &self.attributes {
            if a.width == 0 {
                return Err(AbacError::Shape(format!(
                    "attribute `{}` has zero width",
                    a.name
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(AbacError::Shape(format!(
                    "attribute `{}` declared twice",
                    a.name
                )));
            }
            if a.name.is_empty() || a.name.contains(char::is_whitespace) {
                return Err(AbacError::Shape(format!(
                    "invalid attribute name `{}`",
                    a.name
                )));
            }
        }
        if self.func_id_width == 0 || self.func_id_width > MAX_FUNC_ID_WIDTH {
            return Err(AbacError::Shape(format!(
                "func_id_width must be between 1 and {MAX_FUNC_ID_WIDTH}"
            )));
        }
        if let Some(id) = &self.identity_attribute {
            match self.attribute(id) {
                Some(a) if a.category == Category::Subject => {}
                Some(_) => {
                    return Err(AbacError::Shape(format!(
                        "identity attribute `{id}` is not a subject attribute"
                    )))
                }
                None => return Err(AbacError::UnknownAttribute(id.clone())),
            }
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn request_bits(&self) -> usize {
        self.attributes.iter().map(|a| a.width).sum()
    }

    /// Number of distinct function ids, one permission bit each per rule.
    pub fn func_space(&self) -> usize {
        1 << self.func_id_width
    }

    /// Encoded bits per rule: `[enable, value]` per attribute, then the
    /// permitted-function bitmap.
    pub fn rule_bits(&self) -> usize {
        self.attributes.iter().map(|a| 1 + a.width).sum::<usize>() + self.func_space()
    }

    /// Request bits in schema order. Every schema attribute must be supplied
    /// exactly once with its declared width and category.
    pub fn order_request<'a>(
        &self,
        attrs: &'a [AttributeValue],
    ) -> Result<Vec<&'a AttributeValue>, AbacError> {
        let by_name: BTreeMap<&str, &AttributeValue> =
            attrs.iter().map(|a| (a.name.as_str(), a)).collect();
        if by_name.len() != attrs.len() {
            return Err(AbacError::Shape("duplicate request attribute".into()));
        }
        if let Some(extra) = attrs.iter().find(|a| self.attribute(&a.name).is_none()) {
            return Err(AbacError::UnknownAttribute(extra.name.clone()));
        }
        self.attributes
            .iter()
            .map(|def| {
                let v = by_name.get(def.name.as_str()).ok_or_else(|| {
                    AbacError::Shape(format!("request is missing attribute `{}`", def.name))
                })?;
                if v.bits.len() != def.width || v.category != def.category {
                    return Err(AbacError::Shape(format!(
                        "attribute `{}` must be a {}-bit {} attribute",
                        def.name, def.width, def.category
                    )));
                }
                Ok(*v)
            })
            .collect()
    }
}

/// One rule: a conjunction of equality predicates plus a set of permitted
/// functions. An empty function set permits every function.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PolicyRule {
    pub predicates: Vec<(String, Vec<bool>)>,
    pub permitted_funcs: BTreeSet<FuncId>,
}

impl PolicyRule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn require(mut self, name: &str, bits: Vec<bool>) -> Self {
        self.predicates.push((name.to_string(), bits));
        self
    }

    pub fn require_value(self, name: &str, value: u64, width: usize) -> Self {
        self.require(name, to_bits(value, width))
    }

    pub fn permit(mut self, func: FuncId) -> Self {
        self.permitted_funcs.insert(func);
        self
    }

    pub fn predicate(&self, name: &str) -> Option<&[bool]> {
        self.predicates
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    fn matches(&self, request: &BTreeMap<&str, &[bool]>, func: FuncId) -> bool {
        let attrs_ok = self
            .predicates
            .iter()
            .all(|(name, want)| request.get(name.as_str()) == Some(&want.as_slice()));
        let func_ok = self.permitted_funcs.is_empty() || self.permitted_funcs.contains(&func);
        attrs_ok && func_ok
    }
}

/// The administrator's rule base in plaintext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyRuleBase {
    pub schema: PolicySchema,
    pub rules: Vec<PolicyRule>,
}

impl PolicyRuleBase {
    /// Validates the rules. A rule permitting every function id is stored
    /// with an empty set, the canonical spelling of "any function".
    pub fn new(schema: PolicySchema, mut rules: Vec<PolicyRule>) -> Result<Self, AbacError> {
        if schema.func_id_width <= MAX_FUNC_ID_WIDTH {
            for r in &mut rules {
                // a predicate-free rule keeps its explicit set so it stays non-empty
                if !r.predicates.is_empty()
                    && r.permitted_funcs.len() == schema.func_space()
                    && r.permitted_funcs
                        .iter()
                        .all(|f| f.fits(schema.func_id_width))
                {
                    r.permitted_funcs.clear();
                }
            }
        }
        let prb = Self { schema, rules };
        prb.validate()?;
        Ok(prb)
    }

    pub fn validate(&self) -> Result<(), AbacError> {
        self.schema.validate()?;
        for (i, rule) in self.rules.iter().enumerate() {
            let bad = |msg: String| {
                Err(AbacError::InvalidRule {
                    rule: i,
                    message: msg,
                })
            };
            if rule.predicates.is_empty() && rule.permitted_funcs.is_empty() {
                return bad("rule needs at least one predicate or permitted function".into());
            }
            let mut seen = BTreeSet::new();
            for (name, bits) in &rule.predicates {
                let def = self
                    .schema
                    .attribute(name)
                    .ok_or_else(|| AbacError::UnknownAttribute(name.clone()))?;
                if bits.len() != def.width {
                    return bad(format!(
                        "predicate on `{name}` has {} bits, schema says {}",
                        bits.len(),
                        def.width
                    ));
                }
                if !seen.insert(name) {
                    return bad(format!("two predicates on `{name}`"));
                }
            }
            if let Some(f) = rule
                .permitted_funcs
                .iter()
                .find(|f| !f.fits(self.schema.func_id_width))
            {
                return bad(format!(
                    "func id {f} does not fit in {} bits",
                    self.schema.func_id_width
                ));
            }
        }
        Ok(())
    }

    /// Plaintext policy decision: does any rule grant `func` to this request?
    pub fn permits(&self, request: &[AttributeValue], func: FuncId) -> Result<bool, AbacError> {
        let ordered = self.schema.order_request(request)?;
        let by_name: BTreeMap<&str, &[bool]> = ordered
            .iter()
            .map(|a| (a.name.as_str(), a.bits.as_slice()))
            .collect();
        Ok(self.rules.iter().any(|r| r.matches(&by_name, func)))
    }

    /// Drops every rule whose identity predicate equals `identity`.
    pub fn without_identity(&self, identity: &[bool]) -> Self {
        let Some(id) = &self.schema.identity_attribute else {
            return self.clone();
        };
        let rules = self
            .rules
            .iter()
            .filter(|r| r.predicate(id) != Some(identity))
            .cloned()
            .collect();
        Self {
            schema: self.schema.clone(),
            rules,
        }
    }

    /// Rewrites identity predicates equal to `old` so they require `new`.
    pub fn with_identity_replaced(&self, old: &[bool], new: &[bool]) -> Self {
        let mut out = self.clone();
        if let Some(id) = &self.schema.identity_attribute {
            for rule in &mut out.rules {
                for (name, bits) in &mut rule.predicates {
                    if name == id && bits.as_slice() == old {
                        *bits = new.to_vec();
                    }
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// text format

pub(super) fn write_schema(out: &mut String, schema: &PolicySchema) {
    out.push_str("schema:\n");
    for a in &schema.attributes {
        let _ = writeln!(out, "  {} {} {}", a.name, a.width, a.category);
    }
    let _ = writeln!(out, "funcs: width={}", schema.func_id_width);
    if let Some(id) = &schema.identity_attribute {
        let _ = writeln!(out, "identity: {id}");
    }
}

fn hex_bits(bits: &[bool]) -> String {
    if bits.len() > 64 {
        let bytes: Vec<u8> = bits.chunks(8).rev().map(|c| from_bits(c) as u8).collect();
        return hex::encode(bytes);
    }
    format!("{:x}", from_bits(bits))
}

fn parse_hex_bits(token: &str, width: usize, line: usize) -> Result<Vec<bool>, AbacError> {
    let bad = || AbacError::Parse {
        line,
        message: format!("`{token}` is not a {width}-bit hex value"),
    };
    let digits = token.trim_start_matches("0x");
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let mut bits = Vec::with_capacity(digits.len() * 4);
    for c in digits.chars().rev() {
        let nibble = c.to_digit(16).unwrap() as u64;
        bits.extend(to_bits(nibble, 4));
    }
    if bits[width.min(bits.len())..].iter().any(|&b| b) {
        return Err(bad());
    }
    bits.resize(width, false);
    Ok(bits)
}

/// Schema lines shared by the plaintext and encrypted PRB formats.
pub(super) struct SchemaParser {
    attributes: Vec<AttributeDef>,
    funcs: Option<usize>,
    identity: Option<String>,
}

impl SchemaParser {
    pub(super) fn new() -> Self {
        Self {
            attributes: Vec::new(),
            funcs: None,
            identity: None,
        }
    }

    /// Consumes `line` if it belongs to the schema section.
    pub(super) fn accept(
        &mut self,
        line: &str,
        line_no: usize,
        in_schema: bool,
    ) -> Result<bool, AbacError> {
        let perr = |m: String| AbacError::Parse {
            line: line_no,
            message: m,
        };
        if let Some(rest) = line.strip_prefix("funcs:") {
            let width = rest
                .trim()
                .strip_prefix("width=")
                .and_then(|v| v.parse().ok());
            self.funcs =
                Some(width.ok_or_else(|| perr("funcs line must be `funcs: width=<n>`".into()))?);
            return Ok(true);
        }
        if let Some(rest) = line.strip_prefix("identity:") {
            self.identity = Some(rest.trim().to_string());
            return Ok(true);
        }
        if !in_schema {
            return Ok(false);
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [name, width, category] => {
                let width = width
                    .parse()
                    .map_err(|_| perr(format!("bad width `{width}`")))?;
                let category = category
                    .parse()
                    .map_err(|e: AbacError| perr(e.to_string()))?;
                self.attributes.push(AttributeDef {
                    name: name.to_string(),
                    width,
                    category,
                });
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    pub(super) fn finish(self) -> Result<PolicySchema, AbacError> {
        let func_id_width = self.funcs.ok_or_else(|| AbacError::Parse {
            line: 0,
            message: "missing `funcs:` line".into(),
        })?;
        let schema = PolicySchema {
            attributes: self.attributes,
            func_id_width,
            identity_attribute: self.identity,
        };
        schema.validate()?;
        Ok(schema)
    }
}

impl PolicyRuleBase {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_schema(&mut out, &self.schema);
        for rule in &self.rules {
            out.push_str("rule:\n");
            for (name, bits) in &rule.predicates {
                let _ = writeln!(out, "  predicate {name} = {}", hex_bits(bits));
            }
            for f in &rule.permitted_funcs {
                let _ = writeln!(out, "  permit func {:x}", f.0);
            }
        }
        out
    }

    /// Parses the plaintext PRB format. Predicate values are hex, or `@name`
    /// tokens that `resolve` turns into bits of the requested width.
    pub fn parse_with(
        text: &str,
        resolve: &dyn Fn(&str, usize) -> Option<Vec<bool>>,
    ) -> Result<Self, AbacError> {
        enum Section {
            None,
            Schema,
            Rule,
        }
        let mut section = Section::None;
        let mut schema = SchemaParser::new();
        let mut raw_rules: Vec<Vec<(usize, String)>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "schema:" => section = Section::Schema,
                "rule:" => {
                    section = Section::Rule;
                    raw_rules.push(Vec::new());
                }
                _ => match section {
                    Section::Rule
                        if !line.starts_with("funcs:") && !line.starts_with("identity:") =>
                    {
                        raw_rules
                            .last_mut()
                            .unwrap()
                            .push((line_no, line.to_string()))
                    }
                    _ => {
                        if !schema.accept(line, line_no, matches!(section, Section::Schema))? {
                            return Err(AbacError::Parse {
                                line: line_no,
                                message: format!("unexpected `{line}`"),
                            });
                        }
                    }
                },
            }
        }
        let schema = schema.finish()?;
        let mut rules = Vec::with_capacity(raw_rules.len());
        for raw in raw_rules {
            let mut rule = PolicyRule::new();
            for (line_no, line) in raw {
                let perr = |m: String| AbacError::Parse {
                    line: line_no,
                    message: m,
                };
                if let Some(rest) = line.strip_prefix("predicate ") {
                    let (name, value) = rest
                        .split_once('=')
                        .ok_or_else(|| perr("expected `=`".into()))?;
                    let (name, value) = (name.trim(), value.trim());
                    let def = schema
                        .attribute(name)
                        .ok_or_else(|| AbacError::UnknownAttribute(name.to_string()))?;
                    let bits = match value.strip_prefix('@') {
                        Some(reference) => resolve(reference, def.width)
                            .ok_or_else(|| perr(format!("cannot resolve `@{reference}`")))?,
                        None => parse_hex_bits(value, def.width, line_no)?,
                    };
                    rule.predicates.push((name.to_string(), bits));
                } else if let Some(rest) = line.strip_prefix("permit func ") {
                    let id = u64::from_str_radix(rest.trim().trim_start_matches("0x"), 16)
                        .map_err(|_| perr(format!("bad func id `{rest}`")))?;
                    rule.permitted_funcs.insert(FuncId(id));
                } else {
                    return Err(perr(format!("unexpected `{line}` in rule")));
                }
            }
            rules.push(rule);
        }
        Self::new(schema, rules)
    }

    pub fn parse(text: &str) -> Result<Self, AbacError> {
        Self::parse_with(text, &|_, _| None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn schema() -> PolicySchema {
        PolicySchema {
            attributes: vec![
                AttributeDef {
                    name: "subject.id".into(),
                    width: 4,
                    category: Category::Subject,
                },
                AttributeDef {
                    name: "resource.id".into(),
                    width: 2,
                    category: Category::Resource,
                },
            ],
            func_id_width: 2,
            identity_attribute: Some("subject.id".into()),
        }
    }

    fn request(subject: u64, resource: u64) -> Vec<AttributeValue> {
        vec![
            AttributeValue::from_u64("resource.id", Category::Resource, resource, 2),
            AttributeValue::from_u64("subject.id", Category::Subject, subject, 4),
        ]
    }

    #[test]
    fn rule_permitting_every_func_without_predicates_is_allow_all() {
        let mut rule = PolicyRule::new();
        for f in 0..4 {
            rule = rule.permit(FuncId(f));
        }
        let prb = PolicyRuleBase::new(schema(), vec![rule]).unwrap();
        assert_eq!(prb.rules[0].permitted_funcs.len(), 4);
        assert!(prb.permits(&request(9, 3), FuncId(2)).unwrap());
    }

    #[test]
    fn plaintext_decisions() {
        let prb = PolicyRuleBase::new(
            schema(),
            vec![
                PolicyRule::new()
                    .require_value("subject.id", 5, 4)
                    .permit(FuncId(1)),
                PolicyRule::new().require_value("resource.id", 3, 2),
            ],
        )
        .unwrap();
        assert!(prb.permits(&request(5, 0), FuncId(1)).unwrap());
        assert!(!prb.permits(&request(5, 0), FuncId(2)).unwrap());
        assert!(!prb.permits(&request(6, 0), FuncId(1)).unwrap());
        // second rule: any func on resource 3
        assert!(prb.permits(&request(6, 3), FuncId(2)).unwrap());
        let empty = PolicyRuleBase::new(schema(), vec![]).unwrap();
        assert!(!empty.permits(&request(5, 3), FuncId(1)).unwrap());
    }

    #[test]
    fn request_shape_is_checked() {
        let prb = PolicyRuleBase::new(schema(), vec![]).unwrap();
        let short = vec![AttributeValue::from_u64(
            "subject.id",
            Category::Subject,
            1,
            4,
        )];
        assert!(matches!(
            prb.permits(&short, FuncId(0)),
            Err(AbacError::Shape(_))
        ));
        let mut wide = request(1, 1);
        wide[0] = AttributeValue::from_u64("resource.id", Category::Resource, 1, 3);
        assert!(matches!(
            prb.permits(&wide, FuncId(0)),
            Err(AbacError::Shape(_))
        ));
        let mut extra = request(1, 1);
        extra.push(AttributeValue::from_u64(
            "time",
            Category::Environment,
            1,
            1,
        ));
        assert!(matches!(
            prb.permits(&extra, FuncId(0)),
            Err(AbacError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn invalid_rules_are_rejected() {
        let s = schema();
        let cases = vec![
            PolicyRule::new(),
            PolicyRule::new().require_value("subject.id", 1, 3),
            PolicyRule::new().permit(FuncId(4)),
            PolicyRule::new()
                .require_value("subject.id", 1, 4)
                .require_value("subject.id", 2, 4),
        ];
        for rule in cases {
            assert!(matches!(
                PolicyRuleBase::new(s.clone(), vec![rule]),
                Err(AbacError::InvalidRule { .. })
            ));
        }
        let unknown = PolicyRule::new().require_value("nope", 1, 1);
        assert!(matches!(
            PolicyRuleBase::new(s, vec![unknown]),
            Err(AbacError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn text_round_trip() {
        let prb = PolicyRuleBase::new(
            schema(),
            vec![
                PolicyRule::new()
                    .require_value("subject.id", 0xa, 4)
                    .permit(FuncId(1))
                    .permit(FuncId(3)),
                PolicyRule::new().require_value("resource.id", 2, 2),
            ],
        )
        .unwrap();
        let text = prb.to_text();
        assert!(text.contains("  predicate subject.id = a\n"));
        assert!(text.contains("  permit func 3\n"));
        assert_eq!(PolicyRuleBase::parse(&text).unwrap(), prb);
    }

    #[test]
    fn references_resolve() {
        let text = "schema:\n  subject.id 4 subject\nfuncs: width=2\nrule:\n  predicate subject.id = @carol\n  permit func 2\n";
        let prb = PolicyRuleBase::parse_with(text, &|name, width| {
            (name == "carol").then(|| to_bits(9, width))
        })
        .unwrap();
        assert_eq!(
            prb.rules[0].predicate("subject.id"),
            Some(to_bits(9, 4).as_slice())
        );
        assert!(matches!(
            PolicyRuleBase::parse(text),
            Err(AbacError::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn parse_errors() {
        let bad_value = "schema:\n  a 2 subject\nfuncs: width=1\nrule:\n  predicate a = 7\n";
        assert!(matches!(
            PolicyRuleBase::parse(bad_value),
            Err(AbacError::Parse { line: 5, .. })
        ));
        let no_funcs = "schema:\n  a 2 subject\n";
        assert!(PolicyRuleBase::parse(no_funcs).is_err());
        let junk = "schema:\n  a 2 subject\nfuncs: width=1\nwat\n";
        assert!(matches!(
            PolicyRuleBase::parse(junk),
            Err(AbacError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn full_function_sets_mean_any() {
        let all = (0..4).fold(
            PolicyRule::new().require_value("resource.id", 1, 2),
            |r, f| r.permit(FuncId(f)),
        );
        let prb = PolicyRuleBase::new(schema(), vec![all]).unwrap();
        assert!(prb.rules[0].permitted_funcs.is_empty());
    }

    #[test]
    fn identity_rewrites() {
        let prb = PolicyRuleBase::new(
            schema(),
            vec![
                PolicyRule::new()
                    .require_value("subject.id", 1, 4)
                    .permit(FuncId(1)),
                PolicyRule::new()
                    .require_value("subject.id", 2, 4)
                    .permit(FuncId(1)),
            ],
        )
        .unwrap();
        let revoked = prb.without_identity(&to_bits(1, 4));
        assert_eq!(revoked.rules.len(), 1);
        let rotated = prb.with_identity_replaced(&to_bits(1, 4), &to_bits(7, 4));
        assert_eq!(
            rotated.rules[0].predicate("subject.id"),
            Some(to_bits(7, 4).as_slice())
        );
        assert_eq!(rotated.rules[1], prb.rules[1]);
    }
}
