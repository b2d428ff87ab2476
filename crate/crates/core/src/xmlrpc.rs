//! XML-RPC values, calls, responses and faults.

use std::collections::BTreeMap;
use std::fmt::Write;

use base64::Engine as _;
use quick_xml::escape::{escape, unescape};
use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    String(String),
    Double(f64),
    DateTime(String),
    Base64(Vec<u8>),
    Array(Vec<Value>),
    Struct(BTreeMap<String, Value>),
    Nil,
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            Value::Int(i) => Some(*i != 0),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[Value]> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn get(&self, member: &str) -> Option<&Value> {
        match self {
            Value::Struct(m) => m.get(member),
            _ => None,
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::String(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::String(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("fault {code}: {message}")]
pub struct Fault {
    pub code: i32,
    pub message: String,
}

impl Fault {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed XML-RPC document: {0}")]
pub struct DecodeError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct MethodCall {
    pub method: String,
    pub params: Vec<Value>,
}

// ------------------------------------------------------------- encoding

fn write_value(out: &mut String, v: &Value) {
    out.push_str("<value>");
    match v {
        Value::Int(i) => {
            let _ = write!(out, "<int>{i}</int>");
        }
        Value::Bool(b) => {
            let _ = write!(out, "<boolean>{}</boolean>", u8::from(*b));
        }
        Value::String(s) => {
            let _ = write!(out, "<string>{}</string>", escape(s.as_str()));
        }
        Value::Double(d) => {
            let _ = write!(out, "<double>{d}</double>");
        }
        Value::DateTime(s) => {
            let _ = write!(out, "<dateTime.iso8601>{}</dateTime.iso8601>", escape(s.as_str()));
        }
        Value::Base64(bytes) => {
            let _ = write!(out, "<base64>{}</base64>", base64::engine::general_purpose::STANDARD.encode(bytes));
        }
        Value::Array(items) => {
            out.push_str("<array><data>");
            for item in items {
                write_value(out, item);
            }
            out.push_str("</data></array>");
        }
        Value::Struct(members) => {
            out.push_str("<struct>");
            for (k, v) in members {
                let _ = write!(out, "<member><name>{}</name>", escape(k.as_str()));
                write_value(out, v);
                out.push_str("</member>");
            }
            out.push_str("</struct>");
        }
        Value::Nil => out.push_str("<nil/>"),
    }
    out.push_str("</value>");
}

const DECL: &str = "<?xml version=\"1.0\"?>\n";

pub fn encode_call(method: &str, params: &[Value]) -> String {
    let mut out = format!("{DECL}<methodCall><methodName>{}</methodName><params>", escape(method));
    for p in params {
        out.push_str("<param>");
        write_value(&mut out, p);
        out.push_str("</param>");
    }
    out.push_str("</params></methodCall>\n");
    out
}

pub fn encode_response(result: &Result<Value, Fault>) -> String {
    let mut out = format!("{DECL}<methodResponse>");
    match result {
        Ok(v) => {
            out.push_str("<params><param>");
            write_value(&mut out, v);
            out.push_str("</param></params>");
        }
        Err(f) => {
            let mut members = BTreeMap::new();
            members.insert("faultCode".to_owned(), Value::Int(f.code.into()));
            members.insert("faultString".to_owned(), Value::String(f.message.clone()));
            out.push_str("<fault>");
            write_value(&mut out, &Value::Struct(members));
            out.push_str("</fault>");
        }
    }
    out.push_str("</methodResponse>\n");
    out
}

// ------------------------------------------------------------- decoding

#[derive(Debug, Default)]
struct Element {
    name: String,
    children: Vec<Element>,
    text: String,
}

impl Element {
    fn child(&self, name: &str) -> Option<&Element> {
        self.children.iter().find(|c| c.name == name)
    }

    fn only_child(&self) -> Result<&Element, DecodeError> {
        match self.children.as_slice() {
            [one] => Ok(one),
            _ => Err(DecodeError(format!("<{}> must have exactly one child", self.name))),
        }
    }
}

fn parse_tree(text: &str) -> Result<Element, DecodeError> {
    let err = |e: &dyn std::fmt::Display| DecodeError(e.to_string());
    let mut reader = Reader::from_str(text);
    let mut stack: Vec<Element> = vec![Element::default()];
    loop {
        match reader.read_event().map_err(|e| err(&e))? {
            Event::Start(s) => stack.push(Element { name: s.local_name().as_ref().to_owned(), ..Element::default() }),
            Event::Empty(s) => {
                let el = Element { name: s.local_name().as_ref().to_owned(), ..Element::default() };
                stack.last_mut().expect("root").children.push(el);
            }
            Event::End(_) => {
                let done = stack.pop().expect("balanced by reader");
                stack.last_mut().ok_or_else(|| DecodeError("unbalanced document".into()))?.children.push(done);
            }
            Event::Text(t) => stack.last_mut().expect("root").text.push_str(&t.xml10_content()),
            Event::CData(t) => stack.last_mut().expect("root").text.push_str(&t.xml10_content()),
            Event::GeneralRef(r) => {
                let raw = format!("&{};", r.as_ref());
                let resolved = unescape(&raw).map_err(|e| err(&e))?;
                stack.last_mut().expect("root").text.push_str(&resolved);
            }
            Event::Eof => break,
            _ => {}
        }
    }
    let mut root = stack.pop().filter(|_| stack.is_empty()).ok_or_else(|| DecodeError("unclosed element".into()))?;
    match root.children.len() {
        1 => Ok(root.children.remove(0)),
        _ => Err(DecodeError("expected a single document element".into())),
    }
}

fn parse_value(el: &Element) -> Result<Value, DecodeError> {
    if el.name != "value" {
        return Err(DecodeError(format!("expected <value>, found <{}>", el.name)));
    }
    let Some(typed) = el.children.first() else {
        return Ok(Value::String(el.text.clone()));
    };
    let bad = |what: &str| DecodeError(format!("invalid {what} `{}`", typed.text));
    Ok(match typed.name.as_str() {
        "int" | "i4" | "i8" => Value::Int(typed.text.trim().parse().map_err(|_| bad("int"))?),
        "boolean" => match typed.text.trim() {
            "1" => Value::Bool(true),
            "0" => Value::Bool(false),
            _ => return Err(bad("boolean")),
        },
        "string" => Value::String(typed.text.clone()),
        "double" => Value::Double(typed.text.trim().parse().map_err(|_| bad("double"))?),
        "dateTime.iso8601" => Value::DateTime(typed.text.trim().to_owned()),
        "base64" => Value::Base64(
            base64::engine::general_purpose::STANDARD
                .decode(typed.text.split_whitespace().collect::<String>())
                .map_err(|_| bad("base64"))?,
        ),
        "nil" => Value::Nil,
        "array" => {
            let data = typed.child("data").ok_or_else(|| DecodeError("<array> without <data>".into()))?;
            Value::Array(data.children.iter().map(parse_value).collect::<Result<_, _>>()?)
        }
        "struct" => {
            let mut members = BTreeMap::new();
            for m in &typed.children {
                let name = m.child("name").ok_or_else(|| DecodeError("<member> without <name>".into()))?;
                let value = m.child("value").ok_or_else(|| DecodeError("<member> without <value>".into()))?;
                members.insert(name.text.clone(), parse_value(value)?);
            }
            Value::Struct(members)
        }
        other => return Err(DecodeError(format!("unknown value type <{other}>"))),
    })
}

fn parse_params(el: Option<&Element>) -> Result<Vec<Value>, DecodeError> {
    let Some(params) = el else { return Ok(Vec::new()) };
    params.children.iter().map(|p| parse_value(p.only_child()?)).collect()
}

pub fn decode_call(text: &str) -> Result<MethodCall, DecodeError> {
    let root = parse_tree(text)?;
    if root.name != "methodCall" {
        return Err(DecodeError(format!("expected <methodCall>, found <{}>", root.name)));
    }
    let method =
        root.child("methodName").ok_or_else(|| DecodeError("missing <methodName>".into()))?.text.trim().to_owned();
    Ok(MethodCall { method, params: parse_params(root.child("params"))? })
}

/// The outer error is a transport problem; the inner one a fault the server returned.
pub fn decode_response(text: &str) -> Result<Result<Value, Fault>, DecodeError> {
    let root = parse_tree(text)?;
    if root.name != "methodResponse" {
        return Err(DecodeError(format!("expected <methodResponse>, found <{}>", root.name)));
    }
    if let Some(fault) = root.child("fault") {
        let v = parse_value(fault.only_child()?)?;
        let code = v.get("faultCode").and_then(Value::as_int).unwrap_or(0);
        let message = v.get("faultString").and_then(Value::as_str).unwrap_or_default();
        return Ok(Err(Fault::new(code as i32, message)));
    }
    let mut params = parse_params(root.child("params"))?;
    match params.len() {
        1 => Ok(Ok(params.remove(0))),
        n => Err(DecodeError(format!("response carries {n} params"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Value {
        let mut m = BTreeMap::new();
        m.insert("name".to_owned(), Value::from("api-start"));
        m.insert("pid".to_owned(), Value::Int(4242));
        m.insert("odd <&> text".to_owned(), Value::from("a & b < c \"q\""));
        m.insert("ok".to_owned(), Value::Bool(true));
        m.insert("ratio".to_owned(), Value::Double(0.25));
        m.insert("blob".to_owned(), Value::Base64(vec![0, 1, 2, 255]));
        m.insert("none".to_owned(), Value::Nil);
        Value::Array(vec![Value::Struct(m), Value::Array(vec![]), Value::from("")])
    }

    #[test]
    fn call_round_trip() {
        let text = encode_call("supervisor.startProcess", &[Value::from("api-create"), Value::Bool(true)]);
        let call = decode_call(&text).unwrap();
        assert_eq!(call.method, "supervisor.startProcess");
        assert_eq!(call.params, vec![Value::from("api-create"), Value::Bool(true)]);
    }

    #[test]
    fn response_round_trip() {
        let v = sample();
        assert_eq!(decode_response(&encode_response(&Ok(v.clone()))).unwrap(), Ok(v));
        let f = Fault::new(10, "BAD_NAME: nope");
        assert_eq!(decode_response(&encode_response(&Err(f.clone()))).unwrap(), Err(f));
    }

    #[test]
    fn untyped_values_and_whitespace() {
        let text = "<?xml version='1.0'?>\n<methodCall>\n  <methodName>system.listMethods</methodName>\n  <params>\n    <param><value>plain &amp; simple</value></param>\n    <param><value><i4> 7 </i4></value></param>\n  </params>\n</methodCall>";
        let call = decode_call(text).unwrap();
        assert_eq!(call.params, vec![Value::from("plain & simple"), Value::Int(7)]);
    }

    #[test]
    fn malformed() {
        assert!(decode_call("<methodCall><methodName>x</methodName>").is_err());
        assert!(decode_call("<nope/>").is_err());
        assert!(decode_response("<methodResponse><params></params></methodResponse>").is_err());
        assert!(decode_call("<methodCall><methodName>x</methodName><params><param><value><int>z</int></value></param></params></methodCall>").is_err());
    }
}
