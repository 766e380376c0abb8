use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use ncp::concept_client::{ClientSettings, ConceptClient, ConceptQuery, Endpoint, SYNONYM_SYSTEM_PROMPT};
use ncp::error::Error;
use ncp::lexicon::Level;

/// Serves one canned (status, body) per connection, forwarding each request
/// body to the returned channel.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, mpsc::Receiver<serde_json::Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/complete", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(serde_json::from_slice(&buf).unwrap()).unwrap();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: text/plain\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn client(url: &str, retries: usize) -> ConceptClient {
    let settings = ClientSettings {
        retries,
        timeout: Duration::from_secs(10),
        ..ClientSettings::default()
    };
    ConceptClient::connect(&Endpoint::parse(url).unwrap(), settings).unwrap()
}

#[test]
fn posts_prompt_and_parses_reply() {
    let (url, rx) = serve(vec![(200, "Sure! [Pie, tart, cake]")]);
    let q = ConceptQuery::new("My mom baked a cake.", "cake", Level::Synonym).unwrap();
    let got = client(&url, 0).fetch_concepts(&q).unwrap();
    assert_eq!(got.into_iter().collect::<Vec<_>>(), ["pie", "tart"]);

    let body = rx.recv().unwrap();
    assert_eq!(body["system"], SYNONYM_SYSTEM_PROMPT);
    assert_eq!(body["message"], "Generate contextual synonyms for the word cake in the sentence My mom baked a cake.");
    assert_eq!(body["max_tokens"], 64);
}

#[test]
fn retries_server_errors() {
    let (url, rx) = serve(vec![(503, "busy"), (200, "[dessert]")]);
    let q = ConceptQuery::new("My mom baked a cake.", "cake", Level::Hypernym).unwrap();
    let got = client(&url, 2).fetch_concepts(&q).unwrap();
    assert_eq!(got.into_iter().collect::<Vec<_>>(), ["dessert"]);
    assert_eq!(rx.iter().take(2).count(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, _rx) = serve(vec![(400, "bad request")]);
    let q = ConceptQuery::new("My mom baked a cake.", "cake", Level::Synonym).unwrap();
    match client(&url, 3).fetch_concepts(&q) {
        Err(Error::Transport { attempts, query, .. }) => {
            assert_eq!(attempts, 1);
            assert!(query.contains("cake"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_descriptors_are_config_errors() {
    for d in ["ftp://x", "http://", "replay:", "localhost:8080"] {
        assert!(matches!(Endpoint::parse(d), Err(Error::Config(_))), "{d}");
    }
}
